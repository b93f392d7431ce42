"""Gated recurrent unit as fused autodiff primitives.

Gate layout inside the ``3*hidden`` columns is ``[reset, update, candidate]``::

    r  = sigmoid(x Wx_r + bx_r + h Wh_r + bh_r)
    u  = sigmoid(x Wx_u + bx_u + h Wh_u + bh_u)
    n  = tanh(x Wx_n + bx_n + r * (h Wh_n + bh_n))
    h' = (1 - u) * n + u * h

With a step mask ``m`` (1 = valid) the carried state is ``m*h' + (1-m)*h``, so a
prefix mask leaves the final state equal to the state at the last valid step.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatch
from .tensor import Tensor, _as_tensor, _sigmoid, grad_enabled

__all__ = ["GruParams", "gru_step", "gru_sequence"]


@dataclass(frozen=True)
class GruParams:
    w_x: Tensor  # (input, 3*hidden)
    w_h: Tensor  # (hidden, 3*hidden)
    b_x: Tensor  # (3*hidden,)
    b_h: Tensor  # (3*hidden,)

    @property
    def hidden_size(self):
        return self.w_h.shape[0]

    @property
    def input_size(self):
        return self.w_x.shape[0]

    def tensors(self):
        return (self.w_x, self.w_h, self.b_x, self.b_h)


def _check(params, x_shape, h_shape):
    hid = params.hidden_size
    if params.w_h.shape != (hid, 3 * hid):
        raise ShapeMismatch(f"w_h must be ({hid}, {3 * hid}), got {params.w_h.shape}")
    if params.b_x.shape != (3 * hid,) or params.b_h.shape != (3 * hid,):
        raise ShapeMismatch("GRU biases must have shape (3*hidden,)")
    if params.w_x.shape[1] != 3 * hid:
        raise ShapeMismatch(f"w_x must have {3 * hid} columns")
    if x_shape[-1] != params.input_size:
        raise ShapeMismatch(f"GRU input width {x_shape[-1]} != {params.input_size}")
    if h_shape[-1] != hid:
        raise ShapeMismatch(f"GRU state width {h_shape[-1]} != {hid}")


def _cell_forward(gx, h, w_h, b_h, hid):
    gh = h @ w_h + b_h
    r = _sigmoid(gx[:, :hid] + gh[:, :hid])
    u = _sigmoid(gx[:, hid:2 * hid] + gh[:, hid:2 * hid])
    n = np.tanh(gx[:, 2 * hid:] + r * gh[:, 2 * hid:])
    h_new = (1.0 - u) * n + u * h
    return h_new, (r, u, n, gh[:, 2 * hid:])


def _cell_backward(dh_new, h, cache, w_h, hid):
    """Return (d gate pre-activations from x, from h, dh through the cell)."""
    r, u, n, ghn = cache
    dn = dh_new * (1.0 - u)
    du = dh_new * (h - n)
    dh = dh_new * u
    dn_pre = dn * (1.0 - n * n)
    dr_pre = dn_pre * ghn * r * (1.0 - r)
    du_pre = du * u * (1.0 - u)
    dgx = np.concatenate([dr_pre, du_pre, dn_pre], axis=1)
    dgh = np.concatenate([dr_pre, du_pre, dn_pre * r], axis=1)
    dh = dh + dgh @ w_h.T
    return dgx, dgh, dh


def gru_step(x, h, params, mask=None):
    """One GRU transition. ``x``: (B, input), ``h``: (B, hidden), ``mask``: (B,) or None."""
    x, h = _as_tensor(x), _as_tensor(h)
    _check(params, x.shape, h.shape)
    hid = params.hidden_size
    w_x, w_h, b_x, b_h = params.tensors()
    gx = x.data @ w_x.data + b_x.data
    h_new, cache = _cell_forward(gx, h.data, w_h.data, b_h.data, hid)
    m = None
    if mask is not None:
        m = np.asarray(mask, dtype=np.float64).reshape(-1, 1)
        out = m * h_new + (1.0 - m) * h.data
    else:
        out = h_new

    def backward(g):
        g_cell = g if m is None else g * m
        dgx, dgh, dh = _cell_backward(g_cell, h.data, cache, w_h.data, hid)
        if m is not None:
            dh = dh + g * (1.0 - m)
        return (
            dgx @ w_x.data.T,
            dh,
            x.data.T @ dgx,
            h.data.T @ dgh,
            dgx.sum(axis=0),
            dgh.sum(axis=0),
        )

    return Tensor._result(out, (x, h, w_x, w_h, b_x, b_h), backward, "gru_step")


def gru_sequence(xs, h0, params, mask=None):
    """Run the GRU over a whole sequence as a single graph node.

    ``xs``: (B, T, input); ``h0``: (B, hidden); ``mask``: (B, T) or None.
    Returns the stacked states (B, T, hidden). Numerically identical to
    unrolling :func:`gru_step` T times; fusing keeps the graph small and lets
    the weight gradients be formed with one matrix product each.
    """
    xs, h0 = _as_tensor(xs), _as_tensor(h0)
    if xs.ndim != 3:
        raise ShapeMismatch(f"gru_sequence expects (B, T, input), got {xs.shape}")
    _check(params, xs.shape, h0.shape)
    bsz, steps, _ = xs.shape
    hid = params.hidden_size
    w_x, w_h, b_x, b_h = params.tensors()
    wh = w_h.data
    m = None
    if mask is not None:
        m = np.ascontiguousarray(np.asarray(mask, dtype=np.float64).T)[:, :, None]  # (T, B, 1)
        full = m.min(axis=(1, 2)) == 1.0
    record = grad_enabled() and any(
        t.requires_grad for t in (xs, h0, w_x, w_h, b_x, b_h))

    # Time-major buffers; gate activations are written in place so the
    # backward pass can reuse them.
    gx_all = np.ascontiguousarray((xs.data @ w_x.data + b_x.data).transpose(1, 0, 2))
    gh_all = np.empty((steps, bsz, 3 * hid))
    ru_all = np.empty((steps, bsz, 2 * hid))
    n_all = np.empty((steps, bsz, hid))
    states = np.empty((steps, bsz, hid))
    h = h0.data
    for t in range(steps):
        gx, gh, ru, n, h_new = gx_all[t], gh_all[t], ru_all[t], n_all[t], states[t]
        np.matmul(h, wh, out=gh)
        gh += b_h.data
        np.add(gx[:, :2 * hid], gh[:, :2 * hid], out=ru)
        ru *= 0.5
        np.tanh(ru, out=ru)
        ru += 1.0
        ru *= 0.5
        np.multiply(ru[:, :hid], gh[:, 2 * hid:], out=n)
        n += gx[:, 2 * hid:]
        np.tanh(n, out=n)
        # h' = n + u * (h - n)
        np.subtract(h, n, out=h_new)
        h_new *= ru[:, hid:]
        h_new += n
        if m is not None and not full[t]:
            h_new -= h
            h_new *= m[t]
            h_new += h
        h = h_new

    out = np.ascontiguousarray(states.transpose(1, 0, 2))
    if not record:
        return Tensor._result(out, (xs, h0, w_x, w_h, b_x, b_h), None, "gru_sequence")

    prev = np.empty((steps, bsz, hid))
    prev[0] = h0.data
    prev[1:] = states[:-1]
    r_all, u_all = ru_all[..., :hid], ru_all[..., hid:]
    one_m_u = 1.0 - u_all
    dn_all = one_m_u * (1.0 - n_all * n_all)       # dh'/d(candidate pre-activation)
    factors = np.empty((steps, bsz, 3, hid))       # dh'/d(gate pre-activations), per gate
    np.multiply(dn_all, gh_all[..., 2 * hid:] * r_all * (1.0 - r_all), out=factors[:, :, 0])
    np.multiply((prev - n_all) * u_all, one_m_u, out=factors[:, :, 1])
    np.multiply(dn_all, r_all, out=factors[:, :, 2])
    u_all = np.ascontiguousarray(u_all)
    del gh_all, ru_all, n_all, one_m_u, r_all

    def backward(g):
        g_tm = g.transpose(1, 0, 2)
        g_cells = np.empty((steps, bsz, hid))
        dgh_all = np.empty((steps, bsz, 3, hid))
        carry = np.zeros((bsz, hid))
        wh_t = np.ascontiguousarray(wh.T)
        for t in range(steps - 1, -1, -1):
            dh_out = g_tm[t] + carry
            g_cell = g_cells[t]
            masked = m is not None and not full[t]
            if masked:
                np.multiply(dh_out, m[t], out=g_cell)
            else:
                g_cell[...] = dh_out
            dgh = dgh_all[t]
            np.multiply(factors[t], g_cell[:, None, :], out=dgh)
            carry = g_cell * u_all[t]
            carry += dgh.reshape(bsz, 3 * hid) @ wh_t
            if masked:
                carry += dh_out * (1.0 - m[t])
        dgx_all = dgh_all.copy()
        np.multiply(g_cells, dn_all, out=dgx_all[:, :, 2])
        flat_gx = dgx_all.reshape(-1, 3 * hid)
        flat_gh = dgh_all.reshape(-1, 3 * hid)
        dxs = None
        if xs.requires_grad:
            dxs = (flat_gx @ w_x.data.T).reshape(steps, bsz, -1).transpose(1, 0, 2)
        x_tm = xs.data.transpose(1, 0, 2).reshape(-1, xs.shape[-1])
        dwx = x_tm.T @ flat_gx
        dwh = prev.reshape(-1, hid).T @ flat_gh
        return dxs, carry, dwx, dwh, flat_gx.sum(axis=0), flat_gh.sum(axis=0)

    return Tensor._result(out, (xs, h0, w_x, w_h, b_x, b_h), backward, "gru_sequence")
