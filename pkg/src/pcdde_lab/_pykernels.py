"""Pure-numpy interval kernels (fallback for the compiled ``_ckernels``).

Both backends share one contract. The field input is ``concat(z, frozen)``
when ``has_current`` is set, otherwise ``frozen`` alone. Parameters come
in as the flat vector of :meth:`MlpParams.flatten` plus layer ``dims``.
"""
from __future__ import annotations

import numpy as np

_ACT = {"tanh": 0, "relu": 1, "identity": 2}


def _unpack(flat, dims, has_bias):
    ws, bs, pos = [], [], 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        ws.append(flat[pos:pos + fan_in * fan_out].reshape(fan_out, fan_in))
        pos += fan_in * fan_out
        if has_bias:
            bs.append(flat[pos:pos + fan_out])
            pos += fan_out
        else:
            bs.append(None)
    return ws, bs


class _Net:
    def __init__(self, flat, dims, has_bias, activation):
        self.ws, self.bs = _unpack(np.asarray(flat, dtype=np.float64), list(dims), has_bias)
        self.act = _ACT[activation]
        self.has_bias = has_bias

    def forward(self, x):
        hs = [x]
        h = x
        last = len(self.ws) - 1
        for i, (w, b) in enumerate(zip(self.ws, self.bs)):
            h = h @ w.T
            if b is not None:
                h = h + b
            if i < last:
                if self.act == 0:
                    h = np.tanh(h)
                elif self.act == 1:
                    h = np.maximum(h, 0.0)
                hs.append(h)
        return h, hs

    def backward(self, hs, g, gws, gbs):
        """Accumulate parameter grads in place; return input cotangent."""
        for i in range(len(self.ws) - 1, -1, -1):
            if i < len(self.ws) - 1:
                h = hs[i + 1]
                if self.act == 0:
                    g = g * (1.0 - h * h)
                elif self.act == 1:
                    g = g * (h > 0.0)
            gws[i] += g.T @ hs[i]
            if gbs[i] is not None:
                gbs[i] += g.sum(axis=0)
            g = g @ self.ws[i]
        return g

    def zero_grads(self):
        return [np.zeros_like(w) for w in self.ws], [None if b is None else np.zeros_like(b) for b in self.bs]

    def pack(self, gws, gbs):
        parts = []
        for gw, gb in zip(gws, gbs):
            parts.append(gw.reshape(-1))
            if gb is not None:
                parts.append(gb)
        return np.concatenate(parts)


def _inp(z, frozen, has_current):
    if not has_current:
        return frozen
    if frozen is None or frozen.shape[1] == 0:
        return z
    return np.concatenate([z, frozen], axis=1)


def field_batch(flat, dims, has_bias, activation, x):
    return _Net(flat, dims, has_bias, activation).forward(np.asarray(x, dtype=np.float64))[0]


def interval_forward(flat, dims, has_bias, activation, z0, frozen, h, substeps, method, has_current):
    net = _Net(flat, dims, has_bias, activation)
    z = np.array(z0, dtype=np.float64)
    states = np.empty((substeps + 1,) + z.shape)
    states[0] = z
    if not has_current:
        c = net.forward(frozen)[0]
        for j in range(1, substeps + 1):
            states[j] = z + (j * h) * c
        return states
    f = lambda y: net.forward(_inp(y, frozen, True))[0]
    for j in range(substeps):
        if method == "euler":
            z = z + h * f(z)
        else:
            k1 = f(z)
            k2 = f(z + 0.5 * h * k1)
            k3 = f(z + 0.5 * h * k2)
            k4 = f(z + h * k3)
            z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        states[j + 1] = z
    return states


def interval_adjoint(flat, dims, has_bias, activation, states, frozen, h, method, has_current, a_end, obs=None):
    """Reverse sweep over one interval.

    ``obs`` optionally holds loss cotangents for every substep node; only the
    interior nodes ``1..S-1`` are read. Returns ``(a_start, g_frozen, g_flat)``.
    """
    net = _Net(flat, dims, has_bias, activation)
    gws, gbs = net.zero_grads()
    S = states.shape[0] - 1
    d = states.shape[2]
    a = np.array(a_end, dtype=np.float64)
    m = 0 if frozen is None else frozen.shape[1]
    g_frozen = np.zeros((a.shape[0], m))

    if not has_current:
        gc = np.zeros_like(a)
        for j in range(S - 1, -1, -1):
            gc += h * a
            if j >= 1 and obs is not None:
                a = a + obs[j]
        _, hs = net.forward(frozen)
        g_frozen += net.backward(hs, gc, gws, gbs)
        return a, g_frozen, net.pack(gws, gbs)

    def vjp(y, g):
        _, hs = net.forward(_inp(y, frozen, True))
        gx = net.backward(hs, g, gws, gbs)
        g_frozen[:] += gx[:, d:]
        return gx[:, :d]

    for j in range(S - 1, -1, -1):
        z = states[j]
        if method == "euler":
            a = a + vjp(z, h * a)
        else:
            f = lambda y: net.forward(_inp(y, frozen, True))[0]
            k1 = f(z)
            k2 = f(z + 0.5 * h * k1)
            k3 = f(z + 0.5 * h * k2)
            y2 = z + 0.5 * h * k1
            y3 = z + 0.5 * h * k2
            y4 = z + h * k3
            gk1 = (h / 6.0) * a
            gk2 = (h / 3.0) * a
            gk3 = (h / 3.0) * a
            gk4 = (h / 6.0) * a
            gy = vjp(y4, gk4)
            az = a + gy
            gk3 = gk3 + h * gy
            gy = vjp(y3, gk3)
            az = az + gy
            gk2 = gk2 + 0.5 * h * gy
            gy = vjp(y2, gk2)
            az = az + gy
            gk1 = gk1 + 0.5 * h * gy
            a = az + vjp(z, gk1)
        if j >= 1 and obs is not None:
            a = a + obs[j]
    return a, g_frozen, net.pack(gws, gbs)
