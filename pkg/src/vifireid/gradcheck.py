"""Central finite-difference verification of autodiff gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import ContractError, Tensor


@dataclass
class GradReport:
    max_rel_error: float
    per_leaf: dict[str, float] = field(default_factory=dict)
    checked: int = 0

    def ok(self, tol: float) -> bool:
        return self.max_rel_error < tol


def _rel_error(analytic: np.ndarray, numeric: np.ndarray, global_scale: float) -> np.ndarray:
    # elements far below the leaf's gradient scale are judged against that
    # scale; leaves whose true gradient is zero (e.g. attention key biases)
    # against a small fraction of the largest gradient on any leaf, so that
    # rounding noise in the differences is not reported as a relative error
    scale = max(np.max(np.abs(numeric)), np.max(np.abs(analytic)), 1e-3 * global_scale, 1e-12)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3 * scale)
    return np.abs(analytic - numeric) / denom


def check_gradients(
    f: Callable[[], Tensor],
    leaves: Sequence[Tensor],
    step: float = 1e-6,
    tol: float | None = None,
    max_per_leaf: int | None = None,
    seed: int = 0,
    names: Sequence[str] | None = None,
) -> GradReport:
    """Compare autodiff gradients of scalar ``f()`` against central differences.

    ``f`` is re-evaluated with each leaf element nudged by +/- ``step``.
    With ``max_per_leaf`` only a random subset of each leaf's elements is
    probed. Raises AssertionError when ``tol`` is given and exceeded.
    """
    out = f()
    if out.data.size != 1:
        raise ContractError(f"check_gradients needs a scalar-valued f, got shape {out.shape}")
    for leaf in leaves:
        leaf.grad = None
    out.backward()

    rng = np.random.default_rng(seed)
    report = GradReport(0.0)
    global_scale = max((float(np.max(np.abs(l.grad))) for l in leaves if l.grad is not None and l.grad.size), default=0.0)
    for li, leaf in enumerate(leaves):
        name = names[li] if names else (leaf.name or f"leaf{li}")
        analytic = np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad
        flat = leaf.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_leaf is not None and flat.size > max_per_leaf:
            idx = np.sort(rng.choice(flat.size, size=max_per_leaf, replace=False))
        numeric = np.empty(idx.size)
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            up = f().item()
            flat[i] = orig - step
            down = f().item()
            flat[i] = orig
            numeric[n] = (up - down) / (2 * step)
        err = _rel_error(analytic.reshape(-1)[idx], numeric, global_scale)
        leaf_err = float(err.max()) if err.size else 0.0
        report.per_leaf[name] = leaf_err
        report.max_rel_error = max(report.max_rel_error, leaf_err)
        report.checked += idx.size
    if tol is not None and not report.ok(tol):
        raise AssertionError(f"gradient check failed: max rel err {report.max_rel_error:.3e} >= {tol}; "
                             f"per leaf {report.per_leaf}")
    return report
