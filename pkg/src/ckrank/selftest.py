"""Built-in oracle and gradient checks runnable from the command line.

A compact subset of the test suite for installed environments: dense
attention oracles, brute-force matmul/convolution references, finite
difference gradient checks, pooling path equivalence, loss values, metric
fixtures, and the pair-expansion rule. Prints one line per check.
"""

import numpy as np

from . import pooling, tensor as T
from .attention import separable_self_attention, self_attention
from .evalmetrics import ndcg_at_k
from .gradcheck import finite_difference_check
from .train import TrainInstance, expand_pairs, ranknet_loss


def _dense_separable_oracle(q, k, v):
    def softmax(x, axis):
        e = np.exp(x - x.max(axis=axis, keepdims=True))
        return e / e.sum(axis=axis, keepdims=True)
    return softmax(q, -1) @ (softmax(k.T, -1) @ v)


def _standard_oracle(q, k, v):
    s = (q / np.sqrt(q.shape[1])) @ k.T
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return (e / e.sum(axis=-1, keepdims=True)) @ v


def run_selftest(seed=0, verbose=True):
    """Returns True when every check passes."""
    rng = np.random.default_rng(seed)
    checks = []

    def check(name, ok, detail=""):
        checks.append(ok)
        if verbose:
            mark = "ok" if ok else "FAIL"
            print(f"[{mark}] {name}" + (f" ({detail})" if detail else ""))

    with T.precision("float64"):
        worst = 0.0
        for _ in range(20):
            n, dk, dv = rng.integers(1, 33), rng.integers(1, 9), rng.integers(1, 9)
            q = rng.normal(size=(n, dk))
            k = rng.normal(size=(n, dk))
            v = rng.normal(size=(n, dv))
            with T.no_grad():
                got = separable_self_attention(T.constant(q), T.constant(k),
                                               T.constant(v)).data
            worst = max(worst, float(np.abs(got - _dense_separable_oracle(q, k, v)).max()))
        check("separable attention vs dense oracle", worst < 1e-10,
              f"max abs err {worst:.2e}")

        q = rng.normal(size=(6, 4))
        k = rng.normal(size=(6, 4))
        v = rng.normal(size=(6, 3))
        with T.no_grad():
            got = self_attention(T.constant(q), T.constant(k), T.constant(v)).data
        err = float(np.abs(got - _standard_oracle(q, k, v)).max())
        check("standard attention vs dense oracle", err < 1e-10, f"{err:.2e}")

        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        ref = np.zeros((3, 2))
        for i in range(3):
            for j in range(2):
                for kk in range(4):
                    ref[i, j] += a[i, kk] * b[kk, j]
        with T.no_grad():
            got = T.matmul(T.constant(a), T.constant(b)).data
        err = float(np.abs(got - ref).max())
        check("matmul vs triple loop", err < 1e-14, f"{err:.2e}")

        x = T.parameter(rng.normal(size=(5, 6)))
        w = T.parameter(rng.normal(size=(6, 3)) * 0.5)
        mix = T.constant(rng.normal(size=(5, 3)))
        def loss_fn():
            return T.tsum(T.mul(T.softmax(T.relu(T.matmul(x, w)), axis=-1), mix))
        res = finite_difference_check(loss_fn, {"x": x, "w": w})
        check("gradients: matmul+relu+softmax", res.max_rel_err < 1e-3,
              f"rel err {res.max_rel_err:.2e}")

        bank = pooling.KernelBank(np.linspace(-0.8, 0.8, 5), np.full(5, 0.3))
        wcfg = pooling.WindowConfig(5, 2)
        rows = T.parameter(np.clip(rng.normal(size=(3, 11)) * 0.4, -1, 1))
        weights = T.constant(rng.normal(size=(3, 5)))
        def pool_fn():
            return T.tsum(T.mul(pooling.windowed_pool_terms(rows, wcfg, bank),
                                weights))
        res = finite_difference_check(pool_fn, {"rows": rows})
        check("gradients: windowed pooling", res.max_rel_err < 1e-3,
              f"rel err {res.max_rel_err:.2e}")

        with T.no_grad():
            fused = pooling.windowed_pool_terms(rows, wcfg, bank).data
            composed = np.stack([
                pooling.windowed_pool_term(T.constant(rows.data[i]), wcfg, bank).data
                for i in range(rows.shape[0])])
        check("pooling: fused equals composed", float(np.abs(fused - composed).max()) == 0.0)

        with T.no_grad():
            flat = ranknet_loss(T.constant(np.array([1.0, 1.0, 21.0])),
                                T.constant(np.array([1.0, 0.0, 1.0]))).data
        ok = (abs(flat[0] - np.log(2)) < 1e-12 and
              abs(flat[1] - 0.3132616875182228) < 1e-12 and flat[2] < 1e-8)
        check("ranknet loss fixed values", bool(ok))

    ndcg = ndcg_at_k(["d2", "d1"], {"d1": 3, "d2": 1}, 10)
    expected = (1.0 + 7.0 / np.log2(3)) / (7.0 + 1.0 / np.log2(3))
    check("ndcg hand fixture", abs(ndcg - expected) < 1e-12)

    inst = TrainInstance("q", "p", "c", ("n1", "n2"))
    pairs = expand_pairs(inst)
    ok = (len(pairs) == 5 and
          [p.preferred for p in pairs] == ["p", "p", "p", "c", "c"] and
          [p.other for p in pairs] == ["c", "n1", "n2", "n1", "n2"])
    check("pair expansion rule", ok)

    passed = all(checks)
    if verbose:
        print(f"{sum(checks)}/{len(checks)} checks passed")
    return passed
