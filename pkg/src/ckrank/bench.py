"""Peak-memory benchmark: standard vs separable attention inside the encoder.

Runs one forward+backward of the two-layer encoder per variant per sequence
length and records the allocator's peak live bytes for the run, which is
exact by construction (every tensor registers its bytes). Absolute numbers
are CPU-allocator artifacts; the reproducible claim is the growth shape:
linear in sequence length for the separable path, quadratic for standard
attention.

The default benchmark model is deliberately small (32-dim, 2 heads) so the
quadratic variant fits in desk-scale RAM at n=4000; the shape of the curves
is what matters, not the absolute megabytes.
"""

import gc
import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttentionConfig, conformer_block, init_block_params, \
    peak_activation_elements
from .memory import tracker

DEFAULT_LENGTHS = (250, 500, 1000, 2000, 4000)


@dataclass
class BenchRecord:
    variant: str
    n: int
    peak_bytes: int
    ms: float
    status: str = "ok"


def bench_attention_config():
    """The benchmark's own encoder settings (documented, not model defaults)."""
    return AttentionConfig(model_dim=32, num_heads=2, d_key=16, d_value=16,
                           conv_window=7, conv_groups=4, dropout_rate=0.0,
                           num_layers=2)


def _estimate_bytes(n, cfg, variant):
    """Crude upper-scale estimate used only to refuse hopeless runs."""
    itemsize = np.dtype(T.default_dtype()).itemsize
    per_layer = peak_activation_elements(n, cfg, variant)
    return per_layer * cfg.num_layers * 3 * itemsize


def bench_memory(lengths=DEFAULT_LENGTHS, config=None, seed=0, max_bytes=None):
    """One BenchRecord per (variant, n); rows that would exceed max_bytes
    (or die with MemoryError) come back with status 'capped'."""
    cfg = config or bench_attention_config()
    rng = np.random.default_rng(seed)
    records = []
    for variant in ("standard", "separable"):
        blocks = [init_block_params(cfg, rng) for _ in range(cfg.num_layers)]
        params = [t for block in blocks for t in block.values()]
        for n in lengths:
            estimate = _estimate_bytes(n, cfg, variant)
            if max_bytes is not None and estimate > max_bytes:
                records.append(BenchRecord(variant, n, estimate, 0.0, "capped"))
                continue
            x = T.constant(rng.normal(size=(n, cfg.model_dim)))
            gc.collect()
            start = time.perf_counter()
            try:
                with tracker.scope() as st:
                    out = x
                    for block in blocks:
                        out = conformer_block(out, block, cfg, training=False,
                                              rng=None, variant=variant)
                    loss = T.tmean(out)
                    T.backward(loss)
                    peak = st.peak_bytes
                status = "ok"
            except MemoryError:
                peak = tracker.peak_bytes
                status = "capped"
            elapsed = (time.perf_counter() - start) * 1000.0
            for p in params:
                p.drop_grad()
            del x
            records.append(BenchRecord(variant, n, int(peak), elapsed, status))
        del blocks, params
        gc.collect()
    return records


def write_bench_csv(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("variant,n,peak_bytes,ms,status\n")
        for r in records:
            fh.write(f"{r.variant},{r.n},{r.peak_bytes},{r.ms:.3f},{r.status}\n")


def _fit(ns, ys, degree):
    coeffs = np.polyfit(ns, ys, degree)
    pred = np.polyval(coeffs, ns)
    residual = float(np.linalg.norm(ys - pred))
    total = float(np.linalg.norm(ys - ys.mean()))
    r2 = 1.0 - (residual / total) ** 2 if total > 0 else 1.0
    return coeffs, residual, r2


def analyze(records):
    """Fit growth curves over the 'ok' rows of a sweep.

    Returns a dict with the separable linear R^2, the standard variant's
    linear/quadratic residual norms, and the peak ratio at the largest
    common length.
    """
    out = {}
    by_variant = {}
    for r in records:
        if r.status == "ok":
            by_variant.setdefault(r.variant, []).append((r.n, r.peak_bytes))
    if len(by_variant.get("separable", ())) >= 2:
        ns, ys = map(np.asarray, zip(*sorted(by_variant["separable"])))
        _, _, r2 = _fit(ns, ys.astype(np.float64), 1)
        out["separable_linear_r2"] = r2
    if len(by_variant.get("standard", ())) >= 3:
        ns, ys = map(np.asarray, zip(*sorted(by_variant["standard"])))
        ys = ys.astype(np.float64)
        _, res_lin, _ = _fit(ns, ys, 1)
        _, res_quad, _ = _fit(ns, ys, 2)
        out["standard_linear_residual"] = res_lin
        out["standard_quadratic_residual"] = res_quad
        out["standard_residual_ratio"] = res_lin / max(res_quad, 1e-12)
    if "separable" in by_variant and "standard" in by_variant:
        sep = dict(by_variant["separable"])
        std = dict(by_variant["standard"])
        common = sorted(set(sep) & set(std))
        if common:
            n_max = common[-1]
            out["peak_ratio_at_max_n"] = std[n_max] / sep[n_max]
            out["max_common_n"] = n_max
    return out
