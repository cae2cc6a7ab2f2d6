"""Rate calculus for subexponential convergence bounds.

The central object is a nondecreasing, concave rate-generating function
``phi : [1, oo) -> (0, oo)``. From it we derive

* ``Phi(t) = int_1^t ds / phi(s)``  (strictly increasing, ``Phi(1) = 0``),
* its inverse ``Phi^{-1}``,
* the rate function ``r(t) = phi(Phi^{-1}(t))``,

and the multiplier families that turn a Lyapunov drift certificate into a decay
bound for Wasserstein distances:

* ``upper_multiplier_w1``:   ``1 ∨ r(t)^{(eta-1)/eta}``,
* ``upper_multiplier_wp``:   ``1 ∨ [ (t^{(eta-p)/p} ∧ t^{(1-p)/p}) · r(t)^{(eta-1)/(p eta)} ]``,
* ``upper_multiplier_wp_linear`` (linear ``phi``, exponential regime): ``1 ∨ t^{eta/p-1}``,

together with ``lower_exponent``, the polynomial decay exponent
``(vartheta - p + eps + eps') / ((theta - vartheta - eps - eps') p)`` of the
matching lower bound along a constructed time sequence.

Multipliers are returned as guaranteed *growth* factors: a bound of the form
``multiplier(t) * W_p <= C * V(x)`` keeps the free constant ``C`` explicit at
the experiment layer.

Conventions
-----------
* ``phi`` specs are immutable; all operations are pure functions, safe under
  concurrent use.
* ``Tabulated`` specs interpolate piecewise-linearly between nodes; concavity
  of the interpolant is equivalent to nonincreasing difference quotients and is
  checked at construction.
* ``Phi`` uses closed forms for the Linear and Power families and adaptive
  quadrature (relative tolerance 1e-10) for tabulated specs.
* ``Phi^{-1}`` uses bisection after geometric bracket expansion (factor 2,
  capped at 2^64); the result satisfies ``|Phi(s) - u| <= 1e-10 * (1 + u)``.

Public API
----------
``LinearPhi``, ``PowerPhi``, ``TabulatedPhi``, ``PhiSpec``,
``UpperRateParams``, ``LowerRateParams``,
``phi_eval``, ``big_phi``, ``big_phi_inv``, ``rate_r``,
``upper_multiplier_w1``, ``upper_multiplier_wp``, ``upper_multiplier_wp_linear``,
``lower_exponent``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.integrate import quad

from .errors import ConfigError, ConvergenceError, DomainError

__all__ = [
    "LinearPhi",
    "PowerPhi",
    "TabulatedPhi",
    "PhiSpec",
    "UpperRateParams",
    "LowerRateParams",
    "phi_eval",
    "big_phi",
    "big_phi_inv",
    "rate_r",
    "upper_multiplier_w1",
    "upper_multiplier_wp",
    "upper_multiplier_wp_linear",
    "lower_exponent",
]

_INV_VALUE_TOL = 1e-10
_BRACKET_CAP = 2.0**64
_QUAD_RTOL = 1e-10


@dataclass(frozen=True)
class LinearPhi:
    """``phi(t) = c_hat * t`` with ``c_hat > 0`` (exponential regime)."""

    c_hat: float

    def __post_init__(self):
        if not (self.c_hat > 0.0 and math.isfinite(self.c_hat)):
            raise ConfigError(f"c_hat must be positive and finite, got {self.c_hat}")


@dataclass(frozen=True)
class PowerPhi:
    """``phi(t) = prefactor * t^kappa`` with ``kappa in (0,1)``, ``prefactor > 0``."""

    kappa: float
    prefactor: float

    def __post_init__(self):
        if not (0.0 < self.kappa < 1.0):
            raise ConfigError(f"kappa must lie in (0,1), got {self.kappa}")
        if not (self.prefactor > 0.0 and math.isfinite(self.prefactor)):
            raise ConfigError(f"prefactor must be positive and finite, got {self.prefactor}")


@dataclass(frozen=True)
class TabulatedPhi:
    """Piecewise-linear ``phi`` between strictly increasing nodes ``grid >= 1``.

    Positivity, monotonicity, and concavity (nonincreasing difference
    quotients) of the interpolant are validated at construction.
    """

    grid: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        grid = tuple(float(g) for g in self.grid)
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        if len(grid) < 2 or len(grid) != len(values):
            raise ConfigError("grid and values must have equal length >= 2")
        if grid[0] < 1.0:
            raise ConfigError(f"grid abscissae must be >= 1, got {grid[0]}")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("grid must be strictly increasing")
        if any(v <= 0.0 for v in values):
            raise ConfigError("phi values must be positive")
        slopes = [
            (values[i + 1] - values[i]) / (grid[i + 1] - grid[i])
            for i in range(len(grid) - 1)
        ]
        if any(s < -1e-12 for s in slopes):
            raise ConfigError("phi must be nondecreasing: found a negative slope")
        if any(b > a + 1e-12 for a, b in zip(slopes, slopes[1:])):
            raise ConfigError("phi must be concave: difference quotients increase")


PhiSpec = Union[LinearPhi, PowerPhi, TabulatedPhi]


@dataclass(frozen=True)
class UpperRateParams:
    """Parameters of the upper-bound multipliers: ``eta >= 1``, ``p in [1, eta]``."""

    eta: float
    p: float
    phi: PhiSpec

    def __post_init__(self):
        if not self.eta >= 1.0:
            raise DomainError(f"eta must be >= 1, got {self.eta}")
        if not (1.0 <= self.p <= self.eta):
            raise DomainError(f"p must lie in [1, eta] = [1, {self.eta}], got {self.p}")


@dataclass(frozen=True)
class LowerRateParams:
    """Exponent bookkeeping for the lower bound.

    Requires ``theta > vartheta >= 1``, ``eps_var in (0, theta - vartheta)``,
    ``eps_small in (0, theta - vartheta - eps_var)``, and ``p in [1, vartheta]``.
    """

    theta: float
    vartheta: float
    eps_var: float
    eps_small: float
    p: float

    def __post_init__(self):
        if not self.vartheta >= 1.0:
            raise DomainError(f"vartheta must be >= 1, got {self.vartheta}")
        if not self.theta > self.vartheta:
            raise DomainError(f"theta must exceed vartheta, got {self.theta} <= {self.vartheta}")
        if not (0.0 < self.eps_var < self.theta - self.vartheta):
            raise DomainError("eps_var must lie in (0, theta - vartheta)")
        if not (0.0 < self.eps_small < self.theta - self.vartheta - self.eps_var):
            raise DomainError("eps_small must lie in (0, theta - vartheta - eps_var)")
        if not (1.0 <= self.p <= self.vartheta):
            raise DomainError(f"p must lie in [1, vartheta], got {self.p}")


def phi_eval(spec: PhiSpec, t: float) -> float:
    """Evaluate ``phi(t)`` for ``t >= 1`` (tabulated specs: within grid range)."""
    t = float(t)
    if t < 1.0:
        raise DomainError(f"phi is defined on [1, oo), got t={t}")
    if isinstance(spec, LinearPhi):
        return spec.c_hat * t
    if isinstance(spec, PowerPhi):
        return spec.prefactor * t**spec.kappa
    if isinstance(spec, TabulatedPhi):
        if t < spec.grid[0] or t > spec.grid[-1]:
            raise DomainError(
                f"t={t} outside tabulated range [{spec.grid[0]}, {spec.grid[-1]}]"
            )
        return float(np.interp(t, spec.grid, spec.values))
    raise ConfigError(f"unknown phi spec {spec!r}")


def big_phi(spec: PhiSpec, t: float) -> float:
    """``Phi(t) = int_1^t ds / phi(s)``; closed form where available."""
    t = float(t)
    if t < 1.0:
        raise DomainError(f"Phi is defined on [1, oo), got t={t}")
    if isinstance(spec, LinearPhi):
        return math.log(t) / spec.c_hat
    if isinstance(spec, PowerPhi):
        return (t ** (1.0 - spec.kappa) - 1.0) / ((1.0 - spec.kappa) * spec.prefactor)
    if isinstance(spec, TabulatedPhi):
        if t > spec.grid[-1]:
            raise DomainError(
                f"t={t} outside tabulated range [{spec.grid[0]}, {spec.grid[-1]}]"
            )
        if t == 1.0:
            return 0.0
        interior = [g for g in spec.grid if 1.0 < g < t]
        val, _ = quad(
            lambda s: 1.0 / phi_eval(spec, s),
            1.0,
            t,
            points=interior or None,
            epsrel=_QUAD_RTOL,
            epsabs=0.0,
            limit=200,
        )
        return val
    raise ConfigError(f"unknown phi spec {spec!r}")


def big_phi_inv(spec: PhiSpec, u: float) -> float:
    """Unique ``s >= 1`` with ``|Phi(s) - u| <= 1e-10 * (1 + u)``.

    Bisection after geometric bracket expansion; raises ``ConvergenceError``
    if the bracket would exceed 2^64 and ``DomainError`` if ``u`` is not
    achievable (negative, or beyond a tabulated spec's range).
    """
    u = float(u)
    if u < 0.0:
        raise DomainError(f"Phi^-1 is defined on [0, oo), got u={u}")
    if u == 0.0:
        return 1.0
    tol = _INV_VALUE_TOL * (1.0 + u)
    if isinstance(spec, TabulatedPhi):
        hi = spec.grid[-1]
        if u > big_phi(spec, hi) + tol:
            raise DomainError(f"u={u} exceeds achievable range Phi({hi})")
    else:
        hi = 2.0
        while big_phi(spec, hi) < u:
            hi *= 2.0
            if hi > _BRACKET_CAP:
                raise ConvergenceError(
                    f"bracket expansion exceeded 2^64 while inverting Phi at u={u}"
                )
    lo = 1.0
    for _ in range(400):
        mid = math.sqrt(lo * hi) if hi / lo > 4.0 else 0.5 * (lo + hi)
        val = big_phi(spec, mid)
        if abs(val - u) <= tol:
            return mid
        if val < u:
            lo = mid
        else:
            hi = mid
    raise ConvergenceError(f"bisection failed to reach tolerance {tol} at u={u}")


def rate_r(spec: PhiSpec, t: float) -> float:
    """``r(t) = phi(Phi^{-1}(t))`` for ``t >= 0``; nondecreasing."""
    t = float(t)
    if t < 0.0:
        raise DomainError(f"r is defined on [0, oo), got t={t}")
    return phi_eval(spec, big_phi_inv(spec, t))


def upper_multiplier_w1(params: UpperRateParams, t: float) -> float:
    """``1 ∨ r(t)^{(eta-1)/eta}``, the guaranteed W_1 growth factor."""
    expo = (params.eta - 1.0) / params.eta
    if expo == 0.0:
        return 1.0
    return max(1.0, rate_r(params.phi, t) ** expo)


def _pow(t: float, a: float) -> float:
    # t**a with the t=0 conventions 0^0 = 1 and 0^{a<0} = +inf
    if t == 0.0:
        if a > 0.0:
            return 0.0
        if a == 0.0:
            return 1.0
        return math.inf
    return t**a


def upper_multiplier_wp(params: UpperRateParams, t: float) -> float:
    """``1 ∨ [ (t^{(eta-p)/p} ∧ t^{(1-p)/p}) · r(t)^{(eta-1)/(p eta)} ]``.

    For linear ``phi`` (exponential regime) use ``upper_multiplier_wp_linear``.
    """
    t = float(t)
    if t < 0.0:
        raise DomainError(f"t must be >= 0, got {t}")
    eta, p = params.eta, params.p
    branch = min(_pow(t, (eta - p) / p), _pow(t, (1.0 - p) / p))
    r_expo = (eta - 1.0) / (p * eta)
    r_factor = 1.0 if r_expo == 0.0 else rate_r(params.phi, t) ** r_expo
    return max(1.0, branch * r_factor)


def upper_multiplier_wp_linear(eta: float, p: float, t: float) -> float:
    """``1 ∨ t^{eta/p - 1}`` (linear ``phi``, exponential regime)."""
    if not (1.0 <= p <= eta):
        raise DomainError(f"need 1 <= p <= eta, got p={p}, eta={eta}")
    t = float(t)
    if t < 0.0:
        raise DomainError(f"t must be >= 0, got {t}")
    return max(1.0, _pow(t, eta / p - 1.0))


def lower_exponent(params: LowerRateParams) -> float:
    """Decay exponent of the lower bound, ``(vartheta-p+eps+eps')/((theta-vartheta-eps-eps')p)``."""
    denom = (params.theta - params.vartheta - params.eps_var - params.eps_small) * params.p
    if denom <= 0.0:
        raise DomainError(f"nonpositive denominator {denom} in lower exponent")
    return (params.vartheta - params.p + params.eps_var + params.eps_small) / denom
