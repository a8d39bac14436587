"""Finite-difference verification of analytic gradients.

`grad_check` compares reverse-mode gradients against central differences,
coordinate by coordinate.  Large tensors are subsampled deterministically:
the coordinates with the largest analytic gradients (where a wrong formula
shows up first) plus a seeded random selection of the rest.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import NonFiniteError, Parameter, Tensor, backward, no_grad

__all__ = ["GradReport", "grad_check"]


@dataclass
class GradReport:
    """Per-parameter maximum relative error between analytic and numeric gradients."""

    eps: float
    tol: float
    per_param: dict[str, float] = field(default_factory=dict)
    checked_coords: dict[str, int] = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        return max(self.per_param.values()) if self.per_param else 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def format(self) -> str:
        width = max((len(n) for n in self.per_param), default=4)
        lines = [
            f"{name:<{width}}  rel_err={err:.3e}  coords={self.checked_coords[name]}"
            for name, err in sorted(self.per_param.items())
        ]
        status = "PASS" if self.passed else "FAIL"
        lines.append(f"{status}: max relative error {self.max_rel_error:.3e} (tol {self.tol:.1e})")
        return "\n".join(lines)


def _relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def _select_coords(grad: np.ndarray, name: str, limit: int, seed: int) -> np.ndarray:
    flat = np.abs(grad.ravel())
    if flat.size <= limit:
        return np.arange(flat.size)
    # Half by gradient magnitude, half seeded-random among the rest.
    n_top = limit // 2
    top = np.argsort(-flat, kind="stable")[:n_top]
    rest = np.setdiff1d(np.arange(flat.size), top, assume_unique=False)
    rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
    sampled = rng.choice(rest, size=limit - n_top, replace=False)
    return np.sort(np.concatenate([top, sampled]))


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_coords_per_param: int = 16,
    seed: int = 0,
) -> GradReport:
    """Compare analytic gradients of `loss_fn` with central differences.

    `loss_fn` must rebuild its graph on every call and be deterministic at
    the probe point.  Parameters are perturbed in place and restored.
    """
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("loss is non-finite at the probe point")
    backward(loss)
    analytic = {p.name: p.grad.copy() for p in params}

    report = GradReport(eps=eps, tol=tol)
    for p in params:
        grad = analytic[p.name]
        coords = _select_coords(grad, p.name, max_coords_per_param, seed)
        flat = p.data.ravel()
        worst = 0.0
        with no_grad():
            for i in coords:
                orig = flat[i]
                flat[i] = orig + eps
                f_plus = loss_fn().item()
                flat[i] = orig - eps
                f_minus = loss_fn().item()
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2.0 * eps)
                worst = max(worst, _relative_error(float(grad.ravel()[i]), numeric))
        report.per_param[p.name] = worst
        report.checked_coords[p.name] = int(coords.size)
    return report
