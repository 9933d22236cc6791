"""Central finite-difference verification of analytic gradients.

The loss function must be deterministic (run checks in eval mode, dropout
off).  Large tensors are spot-checked on a seeded coordinate subsample;
small ones are swept exhaustively."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

DEFAULT_STEP = 1e-5


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str
    checked: int
    per_param: dict[str, float] = field(default_factory=dict)

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_err < tol


def _rel_err(a: float, b: float, atol: float) -> float:
    if abs(a) < atol and abs(b) < atol:
        return 0.0
    return abs(a - b) / max(abs(a), abs(b))


def gradient_check(
    loss_fn: Callable[[], float],
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    *,
    step: float = DEFAULT_STEP,
    atol: float | None = None,
    max_checks_per_param: int = 64,
    seed: int = 0,
) -> GradCheckReport:
    """Compare ``grads`` against central differences of ``loss_fn``.

    Perturbs each selected coordinate of each parameter in place (restoring
    it afterwards), so ``loss_fn`` must read the live arrays in ``params``.
    Components where both sides sit below ``atol`` count as matching: the
    central-difference noise floor is eps*|loss|/step, so by default atol
    scales with the loss magnitude (1e-6 * max(1, |loss|)).
    """
    rng = np.random.default_rng(seed)
    if atol is None:
        atol = 1e-6 * max(1.0, abs(loss_fn()))
    max_err = 0.0
    worst = ""
    checked = 0
    per_param: dict[str, float] = {}
    for name, p in params.items():
        g = grads[name]
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        n = flat_p.size
        if n <= max_checks_per_param:
            idx = np.arange(n)
        else:
            idx = rng.choice(n, size=max_checks_per_param, replace=False)
        worst_here = 0.0
        for i in idx:
            orig = flat_p[i]
            flat_p[i] = orig + step
            up = loss_fn()
            flat_p[i] = orig - step
            down = loss_fn()
            flat_p[i] = orig
            fd = (up - down) / (2.0 * step)
            err = _rel_err(fd, float(flat_g[i]), atol)
            worst_here = max(worst_here, err)
            checked += 1
        per_param[name] = worst_here
        if worst_here > max_err:
            max_err = worst_here
            worst = name
    return GradCheckReport(max_rel_err=max_err, worst_param=worst, checked=checked, per_param=per_param)
