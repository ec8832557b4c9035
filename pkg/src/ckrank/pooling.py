"""Cosine interaction rows, RBF kernel features, and windowed pooling.

Each query term owns one interaction row against the encoded document, so
everything here is computed per term and never couples terms. Kernel
features summarize a window of cosines as log-sums of Gaussian bumps; the
pooled feature vector for a term is the elementwise max over windows, which
keeps a strong match anywhere in the document visible to the scoring head.

The `*_terms` variants are fused batched ops (one graph node for all query
terms); the scalar/single-row forms are thin compositions kept as a
cross-check surface.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError


def _default_mus():
    return np.array([-0.7, -0.5, -0.3, -0.1, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0])


def _default_sigmas():
    return np.array([0.1] * 9 + [0.001])


@dataclass
class KernelBank:
    """Gaussian kernel means/widths; the last default kernel (mu=1, sigma=1e-3)
    isolates exact matches."""

    mus: np.ndarray = field(default_factory=_default_mus)
    sigmas: np.ndarray = field(default_factory=_default_sigmas)
    eps_log: float = 1e-10

    def __post_init__(self):
        self.mus = np.asarray(self.mus, dtype=np.float64)
        self.sigmas = np.asarray(self.sigmas, dtype=np.float64)
        if self.mus.shape != self.sigmas.shape or self.mus.ndim != 1:
            raise ConfigError("kernel mus and sigmas must be 1-d and equal length")
        if not np.all(np.diff(self.mus) > 0):
            raise ConfigError("kernel mus must be strictly increasing")
        if not np.all(self.sigmas > 0):
            raise ConfigError("kernel sigmas must be positive")
        if self.eps_log <= 0:
            raise ConfigError("eps_log must be positive")

    @property
    def k(self):
        return self.mus.size


@dataclass
class WindowConfig:
    window_len: int = 300
    stride: int = 100

    def __post_init__(self):
        if self.window_len <= 0 or self.stride <= 0:
            raise ConfigError("window_len and stride must be positive")
        if self.stride > self.window_len:
            raise ConfigError(f"stride {self.stride} exceeds window_len "
                              f"{self.window_len}")


def num_windows(n, wcfg):
    """Window count covering n positions; a short tail extends the last window."""
    if n <= wcfg.window_len:
        return 1
    return math.ceil((n - wcfg.window_len) / wcfg.stride) + 1


def empty_features(bank, dtype=None):
    """Feature vector of a window with no real positions: all log(eps_log)."""
    dtype = dtype or T.default_dtype()
    return np.full(bank.k, np.log(bank.eps_log), dtype=dtype)


# -- cosine interaction --------------------------------------------------------


def interaction_rows(q_embs, doc_enc):
    """Cosine of every (query term, document position) pair -> Tensor[t, n].

    Zero-norm vectors on either side produce cosine 0 with zero gradient.
    """
    if q_embs.ndim != 2 or doc_enc.ndim != 2 or q_embs.shape[1] != doc_enc.shape[1]:
        raise ShapeError(f"interaction_rows: incompatible shapes {tuple(q_embs.shape)} "
                         f"vs {tuple(doc_enc.shape)}")
    u, v = q_embs.data, doc_enc.data
    un = np.linalg.norm(u, axis=1)
    vn = np.linalg.norm(v, axis=1)
    u_mask = un > 0
    v_mask = vn > 0
    un_safe = np.where(u_mask, un, 1.0)
    vn_safe = np.where(v_mask, vn, 1.0)
    uh = (u / un_safe[:, None]) * u_mask[:, None]
    vh = (v / vn_safe[:, None]) * v_mask[:, None]
    cos = uh @ vh.T

    def backward(g):
        if q_embs.requires_grad:
            gu = g @ vh
            du = (gu - uh * (gu * uh).sum(axis=1, keepdims=True)) / un_safe[:, None]
            q_embs._accumulate(du * u_mask[:, None])
        if doc_enc.requires_grad:
            gv = g.T @ uh
            dv = (gv - vh * (gv * vh).sum(axis=1, keepdims=True)) / vn_safe[:, None]
            doc_enc._accumulate(dv * v_mask[:, None])

    return T.wrap_op(cos, (q_embs, doc_enc), backward, "interaction_rows")


def interaction_row(q_emb, doc_enc):
    """Cosine row for a single query-term embedding -> Tensor[n]."""
    if q_emb.ndim != 1:
        raise ShapeError(f"interaction_row expects a vector, got {tuple(q_emb.shape)}")
    rows = interaction_rows(T.reshape(q_emb, (1, q_emb.shape[0])), doc_enc)
    return T.reshape(rows, (doc_enc.shape[0],))


# -- kernel features -----------------------------------------------------------


def kernel_features(row, bank):
    """log(eps + sum_j exp(-(row_j - mu)^2 / (2 sigma^2))) per kernel.

    An empty row (zero real positions) yields log(eps) everywhere, the
    padding/no-match convention used throughout scoring.
    """
    if row.ndim != 1:
        raise ShapeError(f"kernel_features expects a vector, got {tuple(row.shape)}")
    r = row.data
    mus = bank.mus.astype(r.dtype)
    inv2s = (1.0 / (2.0 * bank.sigmas ** 2)).astype(r.dtype)
    ex = np.exp(-(r[:, None] - mus) ** 2 * inv2s)        # (w, k)
    denom = bank.eps_log + ex.sum(axis=0)
    data = np.log(denom).astype(r.dtype)

    def backward(g):
        z = g / denom
        drow = (ex * (-(r[:, None] - mus) * 2.0 * inv2s) * z).sum(axis=1)
        row._accumulate(drow)

    return T.wrap_op(data, (row,), backward, "kernel_features")


# -- windowed pooling ----------------------------------------------------------


def windowed_pool_term(row, wcfg, bank):
    """Kernel features per window, elementwise max across windows -> Tensor[k].

    Reference composition over narrow/kernel_features/max; the fused batched
    form below must agree with this exactly.
    """
    if row.ndim != 1:
        raise ShapeError(f"windowed_pool_term expects a vector, got {tuple(row.shape)}")
    n = row.shape[0]
    if n < 1:
        raise ShapeError("windowed_pool_term needs at least one position")
    w = num_windows(n, wcfg)
    if w == 1:
        return kernel_features(row, bank)
    feats = []
    for i in range(w):
        start = i * wcfg.stride
        length = min(wcfg.window_len, n - start)
        feats.append(T.reshape(kernel_features(T.narrow(row, 0, start, length), bank),
                               (1, bank.k)))
    return T.reshape(T.tmax(T.concat(feats, axis=0), axis=0), (bank.k,))


def windowed_pool_terms(rows, wcfg, bank):
    """Fused windowed pooling over all query terms at once -> Tensor[t, k].

    Gradients flow only into the winning window of each (term, kernel) pair;
    overlapping winners accumulate additively.
    """
    if rows.ndim != 2:
        raise ShapeError(f"windowed_pool_terms expects (t, n), got {tuple(rows.shape)}")
    t, n = rows.shape
    if n < 1:
        raise ShapeError("windowed_pool_terms needs at least one position")
    w = num_windows(n, wcfg)
    wlen, stride = wcfg.window_len, wcfg.stride
    padded_len = (w - 1) * stride + wlen
    r = rows.data
    pr = np.zeros((t, padded_len), dtype=r.dtype)
    pr[:, :n] = r
    mask = np.zeros(padded_len, dtype=r.dtype)
    mask[:n] = 1.0
    rw = np.lib.stride_tricks.sliding_window_view(pr, wlen, axis=1)[:, ::stride]
    mw = np.lib.stride_tricks.sliding_window_view(mask, wlen, axis=0)[::stride]
    mus = bank.mus.astype(r.dtype)
    inv2s = (1.0 / (2.0 * bank.sigmas ** 2)).astype(r.dtype)
    ex = np.exp(-(rw[..., None] - mus) ** 2 * inv2s) * mw[None, :, :, None]
    e = ex.sum(axis=2)                                   # (t, w, k)
    f = np.log(bank.eps_log + e)
    arg = f.argmax(axis=1)                               # (t, k)
    data = np.take_along_axis(f, arg[:, None, :], axis=1)[:, 0, :]

    def backward(g):
        e_win = np.take_along_axis(e, arg[:, None, :], axis=1)[:, 0, :]
        z = g / (bank.eps_log + e_win)                   # (t, k)
        idx_t = np.arange(t)[:, None]
        idx_k = np.arange(bank.k)[None, :]
        ex_win = ex[idx_t, arg, :, idx_k]                # (t, k, wlen)
        rw_win = rw[idx_t, arg]                          # (t, k, wlen)
        coef = -(rw_win - mus[None, :, None]) * 2.0 * inv2s[None, :, None]
        dwin = z[:, :, None] * ex_win * coef
        pos = (arg * stride)[:, :, None] + np.arange(wlen)[None, None, :]
        valid = pos < n
        dr = np.zeros_like(r)
        np.add.at(dr, (np.broadcast_to(idx_t[:, :, None], pos.shape),
                       np.minimum(pos, n - 1)), dwin * valid)
        rows._accumulate(dr)

    return T.wrap_op(data, (rows,), backward, "windowed_pool_terms")


# -- scoring head ---------------------------------------------------------------


def latent_term_score(features, head):
    """w . features + b for one term's pooled feature vector."""
    return T.add(T.tsum(T.mul(features, head["w"])), head["b"])


def latent_term_scores(features, head):
    """Batched head over Tensor[t, k] -> Tensor[t]."""
    k = features.shape[1]
    out = T.matmul(features, T.reshape(head["w"], (k, 1)))
    return T.add(T.reshape(out, (features.shape[0],)), head["b"])


def init_head_params(rng, k):
    limit = np.sqrt(6.0 / (k + 1))
    return {
        "w": T.parameter(rng.uniform(-limit, limit, size=k)),
        "b": T.parameter(np.zeros(())),
    }
