# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled interval kernels; same contract as ``_pykernels``.

Work arrays are feature-major, ``(features, batch)``, so every inner loop
runs over the batch and vectorizes. One field call on the whole batch is a
handful of tiny GEMMs plus a vectorized tanh.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor
from libc.stdlib cimport malloc, free
from libc.string cimport memcpy, memset
from libc.stdint cimport int64_t

cnp.import_array()

_ACT = {"tanh": 0, "relu": 1, "identity": 2}

cdef enum:
    MAXL = 16

cdef struct Net:
    int L
    int act
    int B
    int dims[MAXL + 1]
    int woff[MAXL]
    int boff[MAXL]
    int hoff[MAXL + 1]
    int hsize          # rows of a per-call activation block (sum of dims[0..L-1])
    int maxdim
    const double* p


cdef int net_init(Net* n, const double* p, object dims, bint has_bias, int act, int B) except -1:
    cdef int L = len(dims) - 1
    cdef int l, pos = 0, hpos = 0
    if L < 1 or L > MAXL:
        raise ValueError(f"MLP depth {L} outside 1..{MAXL}")
    n.L = L
    n.act = act
    n.B = B
    n.p = p
    n.maxdim = 0
    for l in range(L + 1):
        n.dims[l] = dims[l]
        if n.dims[l] > n.maxdim:
            n.maxdim = n.dims[l]
    for l in range(L):
        n.woff[l] = pos
        pos += n.dims[l] * n.dims[l + 1]
        if has_bias:
            n.boff[l] = pos
            pos += n.dims[l + 1]
        else:
            n.boff[l] = -1
        n.hoff[l] = hpos
        hpos += n.dims[l]
    n.hoff[L] = hpos
    n.hsize = hpos
    return pos


cdef inline double fast_tanh(double x) noexcept nogil:
    # exp by range reduction and a degree-13 Taylor polynomial, 2^k from the
    # exponent bits; absolute error stays near 1e-16 and the loop vectorizes
    cdef double y, k, r, p, scale
    cdef int64_t bits
    x = 19.0 if x > 19.0 else x
    x = -19.0 if x < -19.0 else x
    y = 2.0 * x
    k = floor(y * 1.4426950408889634 + 0.5)
    r = (y - k * 0.6931471803691238) - k * 1.9082149292705877e-10
    p = 1.0 + r * (1.0 + r * (0.5 + r * (1.6666666666666666e-01 + r * (4.1666666666666664e-02
        + r * (8.3333333333333332e-03 + r * (1.3888888888888889e-03 + r * (1.9841269841269841e-04
        + r * (2.4801587301587302e-05 + r * (2.7557319223985893e-06 + r * (2.7557319223985888e-07
        + r * (2.5052108385441720e-08 + r * (2.0876756987868100e-09 + r * 1.6059043836821613e-10))))))))))))
    bits = (<int64_t> k + 1023) << 52
    memcpy(&scale, &bits, sizeof(double))
    return 1.0 - 2.0 / (p * scale + 1.0)


cdef void net_forward(const Net* n, double* hs, double* out) noexcept nogil:
    """hs rows [hoff[0], hoff[0]+dims[0]) hold the input; fills hidden rows and out."""
    cdef int l, o, i, b, fan_in, fan_out, B = n.B
    cdef double w, bias
    cdef const double* inp
    cdef double* dst
    cdef double* row
    cdef const double* src
    for l in range(n.L):
        fan_in = n.dims[l]
        fan_out = n.dims[l + 1]
        inp = hs + n.hoff[l] * B
        dst = out if l == n.L - 1 else hs + n.hoff[l + 1] * B
        for o in range(fan_out):
            row = dst + o * B
            bias = n.p[n.boff[l] + o] if n.boff[l] >= 0 else 0.0
            for b in range(B):
                row[b] = bias
            for i in range(fan_in):
                w = n.p[n.woff[l] + o * fan_in + i]
                src = inp + i * B
                for b in range(B):
                    row[b] += w * src[b]
        if l < n.L - 1:
            if n.act == 0:
                for b in range(fan_out * B):
                    dst[b] = fast_tanh(dst[b])
            elif n.act == 1:
                for b in range(fan_out * B):
                    dst[b] = dst[b] if dst[b] > 0.0 else 0.0


cdef void net_backward(const Net* n, const double* hs, const double* gout, double* gp,
                       double* gin, double* w1, double* w2) noexcept nogil:
    """Accumulate batch-summed grads into gp; write the input cotangent (dims[0], B) to gin.

    w1, w2 are (maxdim, B) scratch blocks.
    """
    cdef int l, o, i, b, fan_in, fan_out, B = n.B
    cdef double w, s, hv
    cdef const double* inp
    cdef const double* post
    cdef const double* g
    cdef double* dst
    cdef double* tmp
    memcpy(w1, gout, n.dims[n.L] * B * sizeof(double))
    for l in range(n.L - 1, -1, -1):
        fan_in = n.dims[l]
        fan_out = n.dims[l + 1]
        inp = hs + n.hoff[l] * B
        if l < n.L - 1:
            post = hs + n.hoff[l + 1] * B
            if n.act == 0:
                for b in range(fan_out * B):
                    hv = post[b]
                    w1[b] *= 1.0 - hv * hv
            elif n.act == 1:
                for b in range(fan_out * B):
                    if post[b] <= 0.0:
                        w1[b] = 0.0
        for o in range(fan_out):
            g = w1 + o * B
            for i in range(fan_in):
                s = 0.0
                for b in range(B):
                    s += g[b] * inp[i * B + b]
                gp[n.woff[l] + o * fan_in + i] += s
            if n.boff[l] >= 0:
                s = 0.0
                for b in range(B):
                    s += g[b]
                gp[n.boff[l] + o] += s
        if l == 0:
            dst = gin
        else:
            dst = w2
        memset(dst, 0, fan_in * B * sizeof(double))
        for o in range(fan_out):
            g = w1 + o * B
            for i in range(fan_in):
                w = n.p[n.woff[l] + o * fan_in + i]
                for b in range(B):
                    dst[i * B + b] += w * g[b]
        tmp = w1
        w1 = w2
        w2 = tmp


cdef inline void load_input(const Net* n, double* hs, const double* z, int d,
                            const double* fr, int m, bint has_current) noexcept nogil:
    cdef double* x = hs + n.hoff[0] * n.B
    if has_current:
        memcpy(x, z, d * n.B * sizeof(double))
        if m > 0:
            memcpy(x + d * n.B, fr, m * n.B * sizeof(double))
    else:
        memcpy(x, fr, m * n.B * sizeof(double))


cdef inline void axpy_into(double* y, const double* z, double c, const double* k, int size) noexcept nogil:
    cdef int i
    for i in range(size):
        y[i] = z[i] + c * k[i]


def _param_vector(flat, dims, bint has_bias):
    cdef Net tmp
    cdef cnp.ndarray[cnp.float64_t, ndim=1] p = np.ascontiguousarray(flat, dtype=np.float64)
    cdef int need = net_init(&tmp, <const double*> p.data, dims, has_bias, 0, 1)
    if p.shape[0] != need:
        raise ValueError(f"expected {need} parameters for dims {list(dims)}, got {p.shape[0]}")
    return p


def field_batch(flat, dims, bint has_bias, str activation, x):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] p = _param_vector(flat, dims, has_bias)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] XT = np.ascontiguousarray(np.asarray(x, dtype=np.float64).T)
    cdef int B = XT.shape[1]
    cdef Net n
    net_init(&n, <const double*> p.data, dims, has_bias, _ACT[activation], B)
    if XT.shape[0] != n.dims[0]:
        raise ValueError(f"input width {XT.shape[0]} != {n.dims[0]}")
    cdef cnp.ndarray[cnp.float64_t, ndim=2] outT = np.empty((n.dims[n.L], B))
    cdef double* hs = <double*> malloc(n.hsize * B * sizeof(double))
    try:
        memcpy(hs, <double*> XT.data, n.dims[0] * B * sizeof(double))
        net_forward(&n, hs, <double*> outT.data)
    finally:
        free(hs)
    return outT.T.copy()


def interval_forward(flat, dims, bint has_bias, str activation, z0, frozen, double h,
                     int substeps, str method, bint has_current):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] p = _param_vector(flat, dims, has_bias)
    z0 = np.asarray(z0, dtype=np.float64)
    cdef int B = z0.shape[0], d = z0.shape[1]
    if frozen is None:
        frozen = np.zeros((B, 0))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] FRT = np.ascontiguousarray(np.asarray(frozen, dtype=np.float64).T)
    cdef int m = FRT.shape[0]
    cdef Net n
    net_init(&n, <const double*> p.data, dims, has_bias, _ACT[activation], B)
    if n.dims[0] != (d if has_current else 0) + m or n.dims[n.L] != d:
        raise ValueError(f"field dims {list(dims)} do not fit state width {d} and frozen width {m}")
    cdef bint rk4 = method == "rk4"
    cdef cnp.ndarray[cnp.float64_t, ndim=3] ST = np.empty((substeps + 1, d, B))
    ST[0] = z0.T
    cdef int dB = d * B, j, i
    cdef double* hs = <double*> malloc(n.hsize * B * sizeof(double))
    cdef double* buf = <double*> malloc(5 * dB * sizeof(double))
    cdef double* y = buf
    cdef double* k1 = buf + dB
    cdef double* k2 = buf + 2 * dB
    cdef double* k3 = buf + 3 * dB
    cdef double* k4 = buf + 4 * dB
    cdef double* st = <double*> ST.data
    cdef double* fr = <double*> FRT.data
    cdef double* z
    cdef double* znext
    try:
        with nogil:
            if not has_current:
                load_input(&n, hs, st, d, fr, m, 0)
                net_forward(&n, hs, k1)
                for j in range(1, substeps + 1):
                    axpy_into(st + j * dB, st, j * h, k1, dB)
            else:
                for j in range(substeps):
                    z = st + j * dB
                    znext = z + dB
                    load_input(&n, hs, z, d, fr, m, 1)
                    net_forward(&n, hs, k1)
                    if not rk4:
                        axpy_into(znext, z, h, k1, dB)
                    else:
                        axpy_into(y, z, 0.5 * h, k1, dB)
                        load_input(&n, hs, y, d, fr, m, 1)
                        net_forward(&n, hs, k2)
                        axpy_into(y, z, 0.5 * h, k2, dB)
                        load_input(&n, hs, y, d, fr, m, 1)
                        net_forward(&n, hs, k3)
                        axpy_into(y, z, h, k3, dB)
                        load_input(&n, hs, y, d, fr, m, 1)
                        net_forward(&n, hs, k4)
                        for i in range(dB):
                            znext[i] = z[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    finally:
        free(hs)
        free(buf)
    return np.ascontiguousarray(ST.transpose(0, 2, 1))


cdef void stage_vjp(const Net* n, const double* hs, const double* g, double* gp, double* gin,
                    double* w1, double* w2, double* az, double* gfr, int d, int m,
                    bint has_current) noexcept nogil:
    """Backprop g through one field call; add the z rows to az and frozen rows to gfr."""
    cdef int i, B = n.B
    net_backward(n, hs, g, gp, gin, w1, w2)
    if has_current:
        for i in range(d * B):
            az[i] += gin[i]
        for i in range(m * B):
            gfr[i] += gin[d * B + i]
    else:
        for i in range(m * B):
            gfr[i] += gin[i]


def interval_adjoint(flat, dims, bint has_bias, str activation, states, frozen, double h,
                     str method, bint has_current, a_end, obs=None):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] p = _param_vector(flat, dims, has_bias)
    cdef cnp.ndarray[cnp.float64_t, ndim=3] ST = np.ascontiguousarray(np.asarray(states, dtype=np.float64).transpose(0, 2, 1))
    cdef int S = ST.shape[0] - 1, d = ST.shape[1], B = ST.shape[2]
    if frozen is None:
        frozen = np.zeros((B, 0))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] FRT = np.ascontiguousarray(np.asarray(frozen, dtype=np.float64).T)
    cdef int m = FRT.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] AT = np.array(np.asarray(a_end, dtype=np.float64).T, order="C", copy=True)
    cdef bint have_obs = obs is not None
    cdef cnp.ndarray[cnp.float64_t, ndim=3] OBT
    if have_obs:
        OBT = np.ascontiguousarray(np.asarray(obs, dtype=np.float64).transpose(0, 2, 1))
        if OBT.shape[0] != S + 1 or OBT.shape[1] != d or OBT.shape[2] != B:
            raise ValueError("obs must have shape (substeps + 1, batch, dim)")
    else:
        OBT = np.zeros((1, 1, 1))
    cdef Net n
    cdef int np_ = net_init(&n, <const double*> p.data, dims, has_bias, _ACT[activation], B)
    if n.dims[0] != (d if has_current else 0) + m or n.dims[n.L] != d:
        raise ValueError(f"field dims {list(dims)} do not fit state width {d} and frozen width {m}")
    cdef bint rk4 = method == "rk4"
    cdef cnp.ndarray[cnp.float64_t, ndim=1] GP = np.zeros(np_)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] GFT = np.zeros((max(m, 1), B))
    cdef int dB = d * B, hB = n.hsize * B, j, i
    cdef double* hs = <double*> malloc(4 * hB * sizeof(double))
    cdef double* buf = <double*> malloc((10 * dB + (n.dims[0] + 2 * n.maxdim) * B) * sizeof(double))
    cdef double* a = <double*> AT.data
    cdef double* az = buf
    cdef double* y = buf + dB
    cdef double* k1 = buf + 2 * dB
    cdef double* k2 = buf + 3 * dB
    cdef double* k3 = buf + 4 * dB
    cdef double* k4 = buf + 5 * dB
    cdef double* g1 = buf + 6 * dB
    cdef double* g2 = buf + 7 * dB
    cdef double* g3 = buf + 8 * dB
    cdef double* gin = buf + 10 * dB
    cdef double* w1 = gin + n.dims[0] * B
    cdef double* w2 = w1 + n.maxdim * B
    cdef double* hs1 = hs
    cdef double* hs2 = hs + hB
    cdef double* hs3 = hs + 2 * hB
    cdef double* hs4 = hs + 3 * hB
    cdef double* st = <double*> ST.data
    cdef double* fr = <double*> FRT.data
    cdef double* gfr = <double*> GFT.data
    cdef double* ob = <double*> OBT.data
    cdef double* gp = <double*> GP.data
    cdef double* z
    try:
        with nogil:
            if not has_current:
                memset(g1, 0, dB * sizeof(double))
                for j in range(S - 1, -1, -1):
                    for i in range(dB):
                        g1[i] += h * a[i]
                    if j >= 1 and have_obs:
                        for i in range(dB):
                            a[i] += ob[j * dB + i]
                load_input(&n, hs1, st, d, fr, m, 0)
                net_forward(&n, hs1, k1)
                stage_vjp(&n, hs1, g1, gp, gin, w1, w2, az, gfr, d, m, 0)
            else:
                for j in range(S - 1, -1, -1):
                    z = st + j * dB
                    memcpy(az, a, dB * sizeof(double))
                    load_input(&n, hs1, z, d, fr, m, 1)
                    net_forward(&n, hs1, k1)
                    if not rk4:
                        for i in range(dB):
                            g1[i] = h * a[i]
                        stage_vjp(&n, hs1, g1, gp, gin, w1, w2, az, gfr, d, m, 1)
                    else:
                        axpy_into(y, z, 0.5 * h, k1, dB)
                        load_input(&n, hs2, y, d, fr, m, 1)
                        net_forward(&n, hs2, k2)
                        axpy_into(y, z, 0.5 * h, k2, dB)
                        load_input(&n, hs3, y, d, fr, m, 1)
                        net_forward(&n, hs3, k3)
                        axpy_into(y, z, h, k3, dB)
                        load_input(&n, hs4, y, d, fr, m, 1)
                        net_forward(&n, hs4, k4)
                        # stages 4 -> 1; the z rows of gin are the stage-input cotangent
                        for i in range(dB):
                            g1[i] = (h / 6.0) * a[i]
                        stage_vjp(&n, hs4, g1, gp, gin, w1, w2, az, gfr, d, m, 1)
                        for i in range(dB):
                            g3[i] = (h / 3.0) * a[i] + h * gin[i]
                        stage_vjp(&n, hs3, g3, gp, gin, w1, w2, az, gfr, d, m, 1)
                        for i in range(dB):
                            g2[i] = (h / 3.0) * a[i] + 0.5 * h * gin[i]
                        stage_vjp(&n, hs2, g2, gp, gin, w1, w2, az, gfr, d, m, 1)
                        for i in range(dB):
                            g1[i] = (h / 6.0) * a[i] + 0.5 * h * gin[i]
                        stage_vjp(&n, hs1, g1, gp, gin, w1, w2, az, gfr, d, m, 1)
                    memcpy(a, az, dB * sizeof(double))
                    if j >= 1 and have_obs:
                        for i in range(dB):
                            a[i] += ob[j * dB + i]
    finally:
        free(hs)
        free(buf)
    return AT.T.copy(), GFT[:m].T.copy(), GP
