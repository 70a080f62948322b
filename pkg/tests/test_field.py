import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcdde_lab.field import (
    FieldSignature,
    MlpParams,
    field_eval,
    field_vjp,
    init_params,
    linear_field,
    mlp_apply,
)
from pcdde_lab.tensor import finite_diff_grad


def appendix_params(seed=0, in_dim=2):
    return init_params(FieldSignature(("current", "lag0")[:in_dim], 1), seed=seed)


def test_linear_field_values():
    assert field_eval(linear_field(0.0, 0.0), [[5.0]])[0] == 0.0
    assert field_eval(linear_field(3.0, 0.0), [[2.0]])[0] == 6.0


def test_appendix_field_at_origin_is_zero():
    p = appendix_params()
    assert p.dims == [2, 10, 10, 1]
    assert p.n_params() == 20 + 100 + 10
    assert field_eval(p, [[0.0], [0.0]]).tolist() == [0.0]


def test_linear_field_vjp():
    (gz,), gp = field_vjp(linear_field(3.0, 1.0), [[2.0]], [1.0])
    assert gz.tolist() == [3.0]
    assert gp.weights[0].tolist() == [[2.0]]
    assert gp.biases[0].tolist() == [1.0]
    (gz,), gp = field_vjp(linear_field(3.0, 1.0), [[2.0]], [0.0])
    assert gz.tolist() == [0.0] and gp.flatten().tolist() == [0.0, 0.0]


def test_argument_validation():
    p = appendix_params()
    with pytest.raises(ValueError, match="width"):
        field_eval(p, [[1.0, 2.0], [3.0]])
    sig = FieldSignature(("current", "lag0"), 1)
    with pytest.raises(ValueError):
        field_eval(p, [[1.0]], sig)
    with pytest.raises(ValueError):
        FieldSignature(("current", "current"), 1)
    with pytest.raises(ValueError):
        FieldSignature(("later",), 1)


def test_layer_chaining_and_bias_rules():
    with pytest.raises(ValueError, match="expects"):
        MlpParams([np.ones((3, 2)), np.ones((1, 4))])
    with pytest.raises(ValueError, match="all layers"):
        MlpParams([np.ones((3, 2)), np.ones((1, 3))], [np.zeros(3), None])
    with pytest.raises(ValueError):
        MlpParams([np.ones((1, 1))], activation="sigmoid")


def test_signature_in_dim_counts_arguments():
    assert FieldSignature(("current", "lag0", "lag1"), 3).in_dim == 9
    assert FieldSignature(("lag0", "lag1"), 2).lags == [0, 1]


def test_init_is_deterministic_and_bounded():
    sig = FieldSignature(("current", "lag0"), 2)
    a, b = init_params(sig, seed=4), init_params(sig, seed=4)
    assert np.array_equal(a.flatten(), b.flatten())
    assert not np.array_equal(a.flatten(), init_params(sig, seed=5).flatten())
    for w in a.weights:
        bound = np.sqrt(6.0 / (w.shape[0] + w.shape[1]))
        assert np.all(np.abs(w) <= bound)
    z = init_params(sig, scheme="zeros", biases=True)
    assert np.all(z.flatten() == 0.0) and z.has_bias
    with pytest.raises(ValueError):
        init_params(sig, scheme="normal")


def test_json_roundtrip(tmp_path):
    p = init_params(FieldSignature(("current",), 2), seed=1, biases=True)
    p.save(tmp_path / "p.json")
    q = MlpParams.load(tmp_path / "p.json")
    assert np.array_equal(p.flatten(), q.flatten()) and q.activation == "tanh"
    assert set(p.to_json()) == {"layers", "activation"}
    assert set(p.to_json()["layers"][0]) == {"w", "b"}


@settings(max_examples=40)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["tanh", "identity"]), st.booleans())
def test_field_vjp_matches_finite_differences(seed, act, biases):
    rng = np.random.default_rng(seed)
    sig = FieldSignature(("current", "lag0"), 2)
    p = init_params(sig, seed=seed, biases=biases, activation=act)
    args = [rng.normal(size=2), rng.normal(size=2)]
    ct = rng.normal(size=2)
    gargs, gp = field_vjp(p, args, ct)
    fd_p = finite_diff_grad(lambda th: float(ct @ field_eval(p.with_flat(th), args)), p.flatten())
    fd_x = finite_diff_grad(lambda x: float(ct @ mlp_apply(p, x)), np.concatenate(args))
    np.testing.assert_allclose(gp.flatten(), fd_p, atol=1e-4 * max(1.0, np.abs(fd_p).max()))
    np.testing.assert_allclose(np.concatenate(gargs), fd_x, atol=1e-4 * max(1.0, np.abs(fd_x).max()))
