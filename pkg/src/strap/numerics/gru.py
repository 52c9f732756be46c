"""Gated recurrent unit: a composed single cell and a fused multi-step kernel.

Gates (reset applied to the previous state before the candidate's hidden map):

    z  = sigmoid(W_z x + U_z h + b_z)
    r  = sigmoid(W_r x + U_r h + b_r)
    n  = tanh(W_n x + U_n (r * h) + b_n)
    h' = (1 - z) * n + z * h
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy.special import expit

from strap.errors import DimensionError
from strap.numerics.tensor import Tensor, _make, add, linear, mul, sigmoid, sub, tanh


@dataclass
class GruParams:
    W_z: Tensor
    W_r: Tensor
    W_n: Tensor
    U_z: Tensor
    U_r: Tensor
    U_n: Tensor
    b_z: Tensor
    b_r: Tensor
    b_n: Tensor

    @property
    def hidden_dim(self) -> int:
        return self.W_z.shape[0]

    def tensors(self) -> list[Tensor]:
        return [getattr(self, f.name) for f in fields(self)]

    def validate(self) -> None:
        d = self.hidden_dim
        for f in fields(self):
            t = getattr(self, f.name)
            want = (d,) if f.name.startswith("b_") else (d, d)
            if t.shape != want:
                raise DimensionError(f"GRU parameter {f.name} has shape {t.shape}, expected {want}")
            if not np.all(np.isfinite(t.data)):
                raise DimensionError(f"GRU parameter {f.name} has non-finite entries")


def gru_cell_forward(x: Tensor, h_prev: Tensor, p: GruParams) -> Tensor:
    """One GRU step built from primitive ops (differentiable in ``x``, ``h_prev`` and ``p``)."""
    p.validate()
    d = p.hidden_dim
    if x.shape[-1:] != (d,) or h_prev.shape != x.shape:
        raise DimensionError(f"gru_cell_forward: x {x.shape}, h {h_prev.shape}, hidden dim {d}")
    z = sigmoid(add(add(linear(x, p.W_z), linear(h_prev, p.U_z)), p.b_z))
    r = sigmoid(add(add(linear(x, p.W_r), linear(h_prev, p.U_r)), p.b_r))
    n = tanh(add(add(linear(x, p.W_n), linear(mul(r, h_prev), p.U_n)), p.b_n))
    return add(mul(sub(1.0, z), n), mul(z, h_prev))


def gru_sequence(xs: Tensor, lengths: np.ndarray, p: GruParams) -> Tensor:
    """Final hidden state of a zero-initialised GRU over left-padded sequences.

    ``xs`` has shape (n, T, d); row ``i`` holds ``lengths[i]`` real steps in
    its last positions and ignored padding before them. A zero-length row
    returns the zero vector. The whole recurrence is one graph node with a
    hand-written backward pass.
    """
    p.validate()
    d = p.hidden_dim
    if xs.data.ndim != 3 or xs.shape[2] != d:
        raise DimensionError(f"gru_sequence: inputs {xs.shape}, hidden dim {d}")
    n_rows, T, _ = xs.shape
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.shape != (n_rows,) or (n_rows and (lengths.min() < 0 or lengths.max() > T)):
        raise DimensionError(f"gru_sequence: lengths must be {n_rows} values in [0, {T}]")

    order = np.argsort(-lengths, kind="stable")
    sorted_len = lengths[order]
    # rows active at step j are a prefix once sorted by descending length
    active = [int(np.count_nonzero(sorted_len >= T - j)) for j in range(T)]

    W_in = np.concatenate([p.W_z.data, p.W_r.data, p.W_n.data], axis=0)
    b_in = np.concatenate([p.b_z.data, p.b_r.data, p.b_n.data])
    U_zr = np.concatenate([p.U_z.data, p.U_r.data], axis=0)
    U_n = p.U_n.data

    x_sorted = xs.data[order]
    # time-major so each step reads a contiguous block
    gx = np.ascontiguousarray((x_sorted @ W_in.T + b_in).transpose(1, 0, 2))
    h = np.zeros((n_rows, d))
    cache = []
    for j in range(T):
        a = active[j]
        if a == 0:
            cache.append(None)
            continue
        hp = h[:a]
        g = gx[j, :a]
        zr = expit(g[:, : 2 * d] + hp @ U_zr.T)
        z = zr[:, :d]
        r = zr[:, d:]
        rh = r * hp
        cand = np.tanh(g[:, 2 * d :] + rh @ U_n.T)
        new = (1.0 - z) * cand + z * hp
        cache.append((a, hp.copy(), z, r, rh, cand))
        h[:a] = new

    out = np.empty_like(h)
    out[order] = h

    def back(g_out):
        dh = g_out[order].copy()
        dgx = np.zeros_like(gx)
        dU_zr = np.zeros_like(U_zr)
        dU_n = np.zeros_like(U_n)
        for j in reversed(range(T)):
            step = cache[j]
            if step is None:
                continue
            a, hp, z, r, rh, cand = step
            dcur = dh[:a]
            dn = dcur * (1.0 - z)
            dz = dcur * (hp - cand)
            dhp = dcur * z
            da_n = dn * (1.0 - cand * cand)
            da_z = dz * z * (1.0 - z)
            dU_n += da_n.T @ rh
            drh = da_n @ U_n
            dhp = dhp + drh * r
            da_r = drh * hp * r * (1.0 - r)
            da_zr = np.concatenate([da_z, da_r], axis=1)
            dU_zr += da_zr.T @ hp
            dhp = dhp + da_zr @ U_zr
            dgx[j, :a, : 2 * d] = da_zr
            dgx[j, :a, 2 * d :] = da_n
            dh[:a] = dhp
        dgx_rows = dgx.transpose(1, 0, 2)
        flat = dgx_rows.reshape(-1, 3 * d)
        dW_in = flat.T @ x_sorted.reshape(-1, d)
        db_in = flat.sum(axis=0)
        dx = np.empty_like(xs.data)
        dx[order] = dgx_rows @ W_in
        return (
            dx,
            dW_in[:d], dW_in[d : 2 * d], dW_in[2 * d :],
            dU_zr[:d], dU_zr[d:], dU_n,
            db_in[:d], db_in[d : 2 * d], db_in[2 * d :],
        )

    parents = (xs, p.W_z, p.W_r, p.W_n, p.U_z, p.U_r, p.U_n, p.b_z, p.b_r, p.b_n)
    return _make(out, parents, back)
