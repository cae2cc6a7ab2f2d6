"""Constructive Wasserstein lower bounds from Lyapunov growth and tail mass.

The procedure turns two pieces of information about an ergodic process —

* heavy tails of the invariant measure: ``pi(L > s)`` decays slowly for a
  Lipschitz observable ``L``, and
* at most linear growth of the Lyapunov moment along the flow:
  ``E V(X_t) <= b t + V(x0)`` with ``V >= c L^theta`` and
  ``phi(V) >= c L^vartheta`` —

into explicit times ``t_n`` and explicit positive lower bounds on
``W_p(delta_{x0} P_{t_n}, pi)``.  The mechanism: the truncated observable
``f_s = (L - s/2)^+`` has ``p``-th moment at least ``(s/2)^p pi(L > s)``
under ``pi`` but at most ``(2^{theta-p}/c) s^{p-theta} (b t + V(x0))``
under the time-``t`` law, and the difference of the two ``p``-th roots is a
``1/Lip(L)`` multiple of a Wasserstein lower bound.  Qualifying levels
``s_n`` are found by grid search on the inequality

``(s/2)^p pi(L > s) >= 2^p s^{p - vartheta - eps - eps'}``,

and ``t_n`` solves the matching equation
``s^{theta - vartheta - eps - eps'} = (2^{theta-p}/c)(b t + V(x0))``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, DomainError, InsufficientTailError
from .rates import LowerRateParams
from .wasserstein import EmpiricalMeasure

__all__ = [
    "LipschitzFn",
    "LowerBoundCurve",
    "LowerBoundInstance",
    "lower_bound_curve",
    "select_sn",
    "tail_mass",
    "tn_from_sn",
]


@dataclass(frozen=True)
class LipschitzFn:
    """Observable with a recorded Lipschitz constant.

    ``fn`` maps a ``(k, n)`` array of points to ``k`` values.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    lip: float

    def __post_init__(self):
        if not callable(self.fn):
            raise ConfigError("L must be callable on point arrays")
        if not self.lip > 0:
            raise DomainError(f"Lipschitz constant must be positive, got {self.lip}")


@dataclass(frozen=True)
class LowerBoundInstance:
    """Everything the lower-bound construction needs.

    ``pi`` is the (exact-discrete or empirical) invariant measure, ``L`` the
    Lipschitz observable, and ``lyapunov`` is evaluated only at ``x0``.  The
    growth constants assert ``V >= c L^theta`` and ``phi(V) >= c L^vartheta``
    with the exponents carried by ``params``; ``b`` is the constant in the
    moment bound ``E V(X_t) <= b t + V(x0)``.  The premise that
    ``L^{vartheta + eps}`` is not ``pi``-integrable is a declared modeling
    assertion — only the finite grid inequality is ever verified.
    """

    pi: EmpiricalMeasure
    L: LipschitzFn
    lyapunov: object
    c: float
    b: float
    params: LowerRateParams
    x0: np.ndarray

    def __post_init__(self):
        if not isinstance(self.L, LipschitzFn):
            raise ConfigError("L must be a LipschitzFn descriptor")
        if not self.c > 0:
            raise DomainError(f"growth constant c must be positive, got {self.c}")
        if not self.b > 0:
            raise DomainError(f"drift constant b must be positive, got {self.b}")
        x0 = np.asarray(self.x0, dtype=float).ravel()
        x0.flags.writeable = False
        object.__setattr__(self, "x0", x0)

    def v_at_start(self) -> float:
        """``V(x0)``, accepting either a callable or an object with .value."""
        fn = getattr(self.lyapunov, "value", self.lyapunov)
        return float(fn(self.x0))


def _observable(L) -> Callable[[np.ndarray], np.ndarray]:
    return L.fn if isinstance(L, LipschitzFn) else L


def tail_mass(pi: EmpiricalMeasure, L, s: float) -> float:
    """``pi(L > s)`` — exact for discrete measures, a fraction for samples."""
    vals = np.asarray(_observable(L)(pi.points), dtype=float).ravel()
    return float(pi.weights[vals > s].sum())


def _tail_on_grid(pi: EmpiricalMeasure, L, grid: np.ndarray) -> np.ndarray:
    """``pi(L > s)`` for every ``s`` in ``grid`` via a sorted suffix sum."""
    vals = np.asarray(_observable(L)(pi.points), dtype=float).ravel()
    order = np.argsort(vals)
    sorted_vals = vals[order]
    suffix = np.concatenate((np.cumsum(pi.weights[order][::-1])[::-1], [0.0]))
    return suffix[np.searchsorted(sorted_vals, grid, side="right")]


def _qualify(inst: LowerBoundInstance, s_grid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    grid = np.unique(np.asarray(s_grid, dtype=float).ravel())
    if grid.size == 0 or np.any(grid <= 0):
        raise DomainError("s_grid must contain positive levels")
    par = inst.params
    tails = _tail_on_grid(inst.pi, inst.L, grid)
    lhs = (grid / 2.0) ** par.p * tails
    rhs = 2.0**par.p * grid ** (par.p - par.vartheta - par.eps_var - par.eps_small)
    return grid, lhs, rhs


def select_sn(inst: LowerBoundInstance, n_terms: int, s_grid) -> np.ndarray:
    """Smallest ``n_terms`` grid levels satisfying the tail inequality.

    A level qualifies when ``(s/2)^p pi(L > s) >= 2^p s^{p-vartheta-eps-eps'}``.
    Raises :class:`InsufficientTailError` (with a diagnostics dict recording
    the best ratio achieved) when fewer than ``n_terms`` levels qualify.
    """
    if n_terms < 1:
        raise DomainError(f"n_terms must be >= 1, got {n_terms}")
    grid, lhs, rhs = _qualify(inst, s_grid)
    qual = np.flatnonzero(lhs >= rhs)
    if qual.size < n_terms:
        ratio = lhs / rhs
        best = int(np.argmax(ratio))
        raise InsufficientTailError(
            f"only {qual.size} of {grid.size} grid levels satisfy the tail "
            f"inequality; {n_terms} were requested (best ratio "
            f"{ratio[best]:.3e} at s = {grid[best]:.6g})",
            diagnostics={
                "requested": int(n_terms),
                "qualifying": int(qual.size),
                "grid_size": int(grid.size),
                "best_ratio": float(ratio[best]),
                "best_s": float(grid[best]),
            },
        )
    return grid[qual[:n_terms]]


def tn_from_sn(inst: LowerBoundInstance, s: float) -> float:
    """Time matched to level ``s``.

    Solves ``s^{theta-vartheta-eps-eps'} = (2^{theta-p}/c)(b t + V(x0))``:
    ``t = (c s^{theta-vartheta-eps-eps'} 2^{p-theta} - V(x0)) / b``.
    """
    par = inst.params
    delta = par.theta - par.vartheta - par.eps_var - par.eps_small
    t = (inst.c * float(s) ** delta * 2.0 ** (par.p - par.theta) - inst.v_at_start()) / inst.b
    if t < 0:
        raise DomainError(
            f"matched time is negative (t = {t:.6g}): level s = {s:.6g} is too "
            "small relative to the Lyapunov value at the start point"
        )
    return float(t)


@dataclass(frozen=True, eq=False)
class LowerBoundCurve:
    """Qualifying levels with matched times and explicit lower bounds."""

    s: np.ndarray
    t: np.ndarray
    bound: np.ndarray

    def pairs(self) -> list[tuple[float, float]]:
        """The curve as ``(t_n, bound_n)`` tuples."""
        return [(float(a), float(b)) for a, b in zip(self.t, self.bound)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", "s_n", "t_n", "bound"])
            for k in range(self.s.shape[0]):
                writer.writerow(
                    [k + 1, f"{self.s[k]:.17g}", f"{self.t[k]:.17g}", f"{self.bound[k]:.17g}"]
                )


def lower_bound_curve(inst: LowerBoundInstance, n_terms: int, s_grid=None) -> LowerBoundCurve:
    """Explicit finite-``n`` Wasserstein lower bounds.

    For each qualifying level the bound is the difference of the two ``p``-th
    roots divided by ``Lip(L)``:

    ``bound = (1/Lip) [ ((s/2)^p pi(L > s))^{1/p}
    - ((2^{theta-p}/c)(b t + V(x0)))^{1/p} s^{(p-theta)/p} ]``,

    which the qualification inequality keeps at least
    ``s^{(p-vartheta-eps-eps')/p} / Lip`` — strictly positive.  Reported as
    explicit finite-``n`` values rather than a single asymptotic constant.
    """
    if s_grid is None:
        s_grid = np.geomspace(1.0, 1e8, 1600)
    s = select_sn(inst, n_terms, s_grid)
    par = inst.params
    v0 = inst.v_at_start()
    delta = par.theta - par.vartheta - par.eps_var - par.eps_small
    t = (inst.c * s**delta * 2.0 ** (par.p - par.theta) - v0) / inst.b
    if np.any(t < 0):
        raise DomainError(
            "matched times are negative for the smallest qualifying levels; "
            "start the grid at larger s"
        )
    tails = _tail_on_grid(inst.pi, inst.L, s)
    first = ((s / 2.0) ** par.p * tails) ** (1.0 / par.p)
    second = ((2.0 ** (par.theta - par.p) / inst.c) * (inst.b * t + v0)) ** (
        1.0 / par.p
    ) * s ** ((par.p - par.theta) / par.p)
    bound = (first - second) / inst.L.lip
    return LowerBoundCurve(s=s, t=t, bound=bound)
