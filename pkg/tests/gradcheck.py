"""Central finite-difference checks for ``Value`` graphs, shared by the test files."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from graphtransfer.autograd import Value

# build(x) -> (loss, leaves) where leaves[k] is the Value carrying x[k]
Builder = Callable[[np.ndarray], tuple[Value, list[Value]]]


@dataclass
class GradReport:
    max_rel_err: float
    checked: int
    skipped_kinks: int


def autodiff_grad(build: Builder, x: np.ndarray) -> tuple[float, np.ndarray]:
    loss, leaves = build(x)
    loss.backward()
    return loss.data, np.array([v.grad for v in leaves])


def rel_err(a: float, b: float, floor: float = 1e-3) -> float:
    """Relative error with an absolute floor so vanishing gradients do not blow up."""
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_gradients(build: Builder, x0, h: float = 1e-5, tol: float = 1e-4,
                    scale=None) -> GradReport:
    """Compare autodiff against central differences coordinate by coordinate.

    ``scale[k]`` is the expected ratio autodiff / finite difference; inputs
    that reach the loss only through a reversal layer expect ``-alpha``.
    A coordinate whose one-sided autodiff gradients at ``x -+ h`` jump by a
    discontinuity-scale amount straddles a kink and is skipped.
    """
    x0 = np.asarray(x0, dtype=float)
    _, g = autodiff_grad(build, x0)
    scale = np.ones(len(x0)) if scale is None else np.asarray(scale, dtype=float)
    worst, checked, skipped = 0.0, 0, 0
    for k in range(len(x0)):
        xp, xm = x0.copy(), x0.copy()
        xp[k] += h
        xm[k] -= h
        fd = scale[k] * (build(xp)[0].data - build(xm)[0].data) / (2 * h)
        err = rel_err(g[k], fd)
        if err >= tol:
            gp = autodiff_grad(build, xp)[1][k]
            gm = autodiff_grad(build, xm)[1][k]
            if abs(gp - gm) > 1e-3 * max(1.0, abs(gp), abs(gm)):
                skipped += 1
                continue
        worst = max(worst, err)
        checked += 1
    return GradReport(worst, checked, skipped)
