"""Central finite-difference validation of recorded gradients.

Intended for float64 runs with all stochastic layers disabled; float32
round-off drowns the comparison long before a real gradient bug would.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import backward, no_grad


@dataclass
class GradCheckResult:
    max_rel_err: float
    worst_param: str
    worst_index: int
    analytic: float
    numeric: float
    checked: int

    def __str__(self):
        return (f"max_rel_err={self.max_rel_err:.3e} at {self.worst_param}[{self.worst_index}] "
                f"(analytic={self.analytic:.6e}, numeric={self.numeric:.6e}, "
                f"checked={self.checked} elements)")


def finite_difference_check(fn, params, eps=1e-6, max_elements=None, rng=None,
                            atol=1e-7):
    """Compare recorded gradients of ``fn()`` against central differences.

    fn must rebuild the scalar loss from scratch on every call and be
    deterministic. params is a dict name -> leaf tensor (or a plain list).
    Relative error per element is |a - n| / max(|a|, |n|, 1e-8); the worst
    one over all checked elements is returned. max_elements, if set, caps
    how many elements are probed per parameter (sampled with rng).

    Elements where both gradients are below ``atol`` count as agreeing:
    central differences bottom out at machine-precision noise around 1e-10,
    so a structurally zero gradient can never win a purely relative test.
    """
    if not isinstance(params, dict):
        params = {f"param{i}": p for i, p in enumerate(params)}
    for p in params.values():
        p.drop_grad()

    loss = fn()
    backward(loss)
    analytic = {}
    for name, p in params.items():
        analytic[name] = (p.grad.copy() if p.grad is not None
                          else np.zeros_like(p.data))
        p.drop_grad()

    def value():
        with no_grad():
            return fn().item()

    result = GradCheckResult(0.0, "", -1, 0.0, 0.0, 0)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if max_elements is not None and n > max_elements:
            picker = rng or np.random.default_rng(0)
            indices = picker.choice(n, size=max_elements, replace=False)
        else:
            indices = range(n)
        a_flat = analytic[name].reshape(-1)
        for i in indices:
            saved = flat[i]
            flat[i] = saved + eps
            f_plus = value()
            flat[i] = saved - eps
            f_minus = value()
            flat[i] = saved
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(a_flat[i])
            if max(abs(a), abs(numeric)) <= atol:
                rel = 0.0
            else:
                rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            result.checked += 1
            if rel > result.max_rel_err:
                result.max_rel_err = rel
                result.worst_param = name
                result.worst_index = int(i)
                result.analytic = a
                result.numeric = numeric
    return result
