"""Central finite-difference verification of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    checked: int
    worst: str = ""

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"gradcheck {status}: max rel err {self.max_rel_error:.3e} over {self.checked} entries {self.worst}"


def _rel(a: float, n: float, floor: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def grad_check(f: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
               tol: float = 1e-6, max_entries: int | None = None,
               rng: np.random.Generator | None = None, floor: float = 1e-8) -> GradCheckReport:
    """Compare the analytic gradient of scalar ``f()`` w.r.t. ``inputs`` to central differences.

    ``f`` takes no arguments and reads ``inputs`` by closure; entries are perturbed in
    place. With ``max_entries`` only that many randomly chosen entries are checked
    across all inputs (the full model has too many parameters to sweep).
    """
    for x in inputs:
        x.grad = None
    loss = f()
    backward(loss)
    analytic = [x.grad.copy() if x.grad is not None else np.zeros_like(x.data) for x in inputs]

    entries = [(i, j) for i, x in enumerate(inputs) for j in range(x.size)]
    if max_entries is not None and len(entries) > max_entries:
        rng = rng or np.random.default_rng(0)
        picks = rng.choice(len(entries), size=max_entries, replace=False)
        entries = [entries[k] for k in sorted(picks)]

    worst, worst_where = 0.0, ""
    for i, j in entries:
        data = inputs[i].data
        idx = np.unravel_index(j, data.shape)
        orig = data[idx]
        data[idx] = orig + eps
        up = f().item()
        data[idx] = orig - eps
        down = f().item()
        data[idx] = orig
        numeric = (up - down) / (2 * eps)
        err = _rel(analytic[i].reshape(-1)[j], numeric, floor)
        if err > worst:
            worst = err
            worst_where = f"(input {i}, entry {j}: analytic {analytic[i].reshape(-1)[j]:.6e}, numeric {numeric:.6e})"
    for x in inputs:
        x.grad = None
    return GradCheckReport(worst <= tol, worst, len(entries), worst_where)
