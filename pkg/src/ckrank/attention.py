"""Self-attention variants and the convolution-augmented encoder block.

Two attention paths share one interface. The standard path materializes the
full n-by-n attention matrix. The separable path reorders the product: keys
are softmax-normalized across positions and folded into the values first,
giving a d_key-by-d_value summary, so nothing quadratic in sequence length
is ever allocated. The separable path applies no 1/sqrt(d_key) scaling; the
two normalizations already bound the logits.

The encoder block wraps grouped convolution, separable multi-head
attention, and a position-wise feed-forward network, each with residual
connection, dropout, and a trailing layer norm.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError


@dataclass
class AttentionConfig:
    model_dim: int = 256
    num_heads: int = 32
    d_key: int = 8
    d_value: int = 8
    conv_window: int = 31
    conv_groups: int = 32
    dropout_rate: float = 0.2
    num_layers: int = 2

    def __post_init__(self):
        for name in ("model_dim", "num_heads", "d_key", "d_value",
                     "conv_window", "conv_groups", "num_layers"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.model_dim % self.num_heads != 0:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by "
                              f"num_heads {self.num_heads}")
        if self.model_dim % self.conv_groups != 0:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by "
                              f"conv_groups {self.conv_groups}")
        if self.conv_window % 2 != 1:
            raise ConfigError(f"conv_window must be odd, got {self.conv_window}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")


def positional_encoding(n, dim, dtype=None):
    """Sinusoidal position features: sin on even columns, cos on odd."""
    dtype = dtype or T.default_dtype()
    pos = np.arange(n, dtype=np.float64)[:, None]
    idx = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(idx / 2.0) / dim)
    enc = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    return enc.astype(dtype)


def self_attention(q, k, v):
    """Baseline attention: softmax(q kᵀ / sqrt(d_key)) v, with the full
    n-by-n weight matrix held in memory."""
    _check_rows(q, k, v)
    d_key = q.shape[1]
    scores = T.matmul(T.scale(q, 1.0 / np.sqrt(d_key)), T.transpose(k))
    attn = T.softmax(scores, axis=-1)
    return T.matmul(attn, v)


def separable_self_attention(q, k, v):
    """Linear-memory attention: softmax(q, over d_key) @ (softmax(kᵀ, over n) @ v).

    The inner product collapses the sequence axis before anything touches q,
    so peak extra memory is O(n * d_key) + O(d_key * d_value).
    """
    _check_rows(q, k, v)
    phi_q = T.softmax(q, axis=-1)
    phi_kt = T.softmax(T.transpose(k), axis=-1)
    summary = T.matmul(phi_kt, v)
    return T.matmul(phi_q, summary)


def _check_rows(q, k, v):
    if not (q.shape[0] == k.shape[0] == v.shape[0]):
        raise ShapeError(f"attention row counts differ: q {tuple(q.shape)}, "
                         f"k {tuple(k.shape)}, v {tuple(v.shape)}")
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"q and k key dims differ: {q.shape[1]} vs {k.shape[1]}")


def multi_head(x, params, cfg, variant="separable"):
    """Project to per-head q/k/v, attend per head, concatenate, project out."""
    if x.ndim != 2 or x.shape[1] != cfg.model_dim:
        raise ShapeError(f"multi_head expects (n, {cfg.model_dim}) input, "
                         f"got {tuple(x.shape)}")
    if variant not in ("standard", "separable"):
        raise ConfigError(f"unknown attention variant {variant!r}")
    attend = self_attention if variant == "standard" else separable_self_attention
    q = T.linear(x, params["wq"], params["bq"])
    k = T.linear(x, params["wk"], params["bk"])
    v = T.linear(x, params["wv"], params["bv"])
    dk, dv = cfg.d_key, cfg.d_value
    head_outs = []
    for h in range(cfg.num_heads):
        qh = T.narrow(q, 1, h * dk, dk)
        kh = T.narrow(k, 1, h * dk, dk)
        vh = T.narrow(v, 1, h * dv, dv)
        head_outs.append(attend(qh, kh, vh))
    cat = head_outs[0] if len(head_outs) == 1 else T.concat(head_outs, axis=1)
    return T.linear(cat, params["wo"], params["bo"])


def conformer_block(x, params, cfg, training=False, rng=None, variant="separable"):
    """Grouped conv, separable multi-head attention, and FFN sublayers, each
    as residual + dropout + layer norm."""
    p = cfg.dropout_rate

    conv = T.grouped_conv1d(x, params["conv_kernel"], cfg.conv_groups,
                            cfg.conv_window, params["conv_bias"])
    conv = T.dropout(conv, p, training, rng)
    y1 = T.layer_norm(T.add(x, conv), params["ln1_gamma"], params["ln1_beta"])

    attn = multi_head(y1, params, cfg, variant=variant)
    attn = T.dropout(attn, p, training, rng)
    y2 = T.layer_norm(T.add(y1, attn), params["ln2_gamma"], params["ln2_beta"])

    ffn = T.linear(y2, params["ffn_w1"], params["ffn_b1"])
    ffn = T.relu(ffn)
    ffn = T.linear(ffn, params["ffn_w2"], params["ffn_b2"])
    ffn = T.dropout(ffn, p, training, rng)
    return T.layer_norm(T.add(y2, ffn), params["ln3_gamma"], params["ln3_beta"])


def init_block_params(cfg, rng):
    """Fresh parameter dict for one encoder block (Glorot-uniform linears)."""
    m = cfg.model_dim
    cg = m // cfg.conv_groups
    ffn_dim = 2 * m
    proj = cfg.num_heads * cfg.d_key
    vproj = cfg.num_heads * cfg.d_value

    def glorot(fan_in, fan_out, shape):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return T.parameter(rng.uniform(-limit, limit, size=shape))

    return {
        "conv_kernel": glorot(cg * cfg.conv_window, cg,
                              (cfg.conv_groups, cfg.conv_window, cg, cg)),
        "conv_bias": T.parameter(np.zeros(m)),
        "ln1_gamma": T.parameter(np.ones(m)),
        "ln1_beta": T.parameter(np.zeros(m)),
        "wq": glorot(m, proj, (m, proj)),
        "bq": T.parameter(np.zeros(proj)),
        "wk": glorot(m, proj, (m, proj)),
        "bk": T.parameter(np.zeros(proj)),
        "wv": glorot(m, vproj, (m, vproj)),
        "bv": T.parameter(np.zeros(vproj)),
        "wo": glorot(vproj, m, (vproj, m)),
        "bo": T.parameter(np.zeros(m)),
        "ln2_gamma": T.parameter(np.ones(m)),
        "ln2_beta": T.parameter(np.zeros(m)),
        "ffn_w1": glorot(m, ffn_dim, (m, ffn_dim)),
        "ffn_b1": T.parameter(np.zeros(ffn_dim)),
        "ffn_w2": glorot(ffn_dim, m, (ffn_dim, m)),
        "ffn_b2": T.parameter(np.zeros(m)),
        "ln3_gamma": T.parameter(np.ones(m)),
        "ln3_beta": T.parameter(np.zeros(m)),
    }


def peak_activation_elements(n, cfg, variant="separable"):
    """Elements live at the peak of one multi_head forward with the graph
    recorded, mirroring the op sequence above allocation for allocation.

    The standard variant carries a num_heads * n^2 term (scores plus the
    softmax output per head); the separable variant is linear in n.
    """
    h, dk, dv, m = cfg.num_heads, cfg.d_key, cfg.d_value, cfg.model_dim
    proj = 2 * n * h * dk + n * h * dv    # q, k, v projections
    heads_common = 3 * n * dk        # qh, kh, vh slices per head
    concat_out = n * h * dv if h > 1 else 0
    tail = concat_out + n * m        # concat plus output projection
    if variant == "standard":
        per_head = heads_common + n * dk + n * dk + n * n + n * n + n * dv
    elif variant == "separable":
        per_head = heads_common + n * dk + n * dk + n * dk + dk * dv + n * dv
    else:
        raise ConfigError(f"unknown attention variant {variant!r}")
    return proj + h * per_head + tail
