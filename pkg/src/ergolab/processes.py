"""Simulatable Markov process families and their exact reference objects.

The module couples two layers:

* specification types — immutable descriptions of a driving Lévy process
  (:class:`LevyMeasureSpec`: drift, Gaussian part, jump measure kind) and of a
  process (:class:`LangevinTempered`, :class:`OUJump`, :class:`PiecewiseOU`,
  :class:`NonlinearSS`, :class:`BackwardRecurrence`, :class:`GenericIto`);
* numerics — :func:`simulate` (Euler–Maruyama with exact-in-law noise
  increments per step; exact recursion for the discrete-time kinds),
  :func:`sample_stable` (Chambers–Mallows–Stuck), :func:`invariant_exact`
  (backward recurrence chain), :func:`ou_exact_transition` (Gaussian marginal
  of a linear SDE), :func:`piecewise_drift`, and :func:`langevin_coeffs`.

Conventions
-----------
* A ``SymmetricStable(alpha, scale)`` measure has Lévy density
  ``scale^alpha * c_alpha |y|^{-1-alpha}`` with ``c_alpha`` normalized so the
  characteristic exponent is ``|scale * u|^alpha``; step increments over ``dt``
  are then exactly ``dt^{1/alpha} * scale * S`` with ``S`` standard stable.
* ``simulate`` is deterministic given (spec, seed, grid, n_paths): paths are
  sharded into fixed-size blocks, each driven by its own counter-based
  substream keyed on (master seed, block index).
* ``OUJump`` integrates the linear drift and the Gaussian part exactly per
  step (the marginal law of the continuous part is exact on the grid); jump
  increments are added at step ends like for every other continuous kind.
* User-supplied coefficient callables must be batch-aware: they receive an
  ``(m, n)`` array of states and return ``(m, n)`` (drift), ``(m, n, n)`` or a
  constant matrix (diffusion).
"""

from __future__ import annotations

import functools
import hashlib
import math
import struct
from dataclasses import dataclass, fields, is_dataclass
from typing import Callable, Literal, Union

import numpy as np
from scipy.integrate import quad
from scipy.linalg import expm

from .errors import BlowUpError, ConfigError, DomainError

__all__ = [
    "NoJumps",
    "DiscreteJumps",
    "SamplerJumps",
    "CompoundPoisson",
    "SymmetricStable",
    "StableSubordinatorMeasure",
    "LevyMeasureSpec",
    "ThetaClass",
    "ConstantControl",
    "MarkovControl",
    "LangevinTempered",
    "OUJump",
    "PiecewiseOU",
    "NonlinearSS",
    "BackwardRecurrence",
    "GenericIto",
    "ProcessSpec",
    "TrajectoryBatch",
    "simulate",
    "sample_stable",
    "standard_one_sided_stable",
    "invariant_exact",
    "ou_exact_transition",
    "piecewise_drift",
    "langevin_coeffs",
    "spec_fingerprint",
]

_BLOWUP_GUARD = 1e12
_BLOCK_SIZE = 16384


# ---------------------------------------------------------------------------
# Lévy measure specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoJumps:
    """Empty jump measure."""


@dataclass(frozen=True, eq=False)
class DiscreteJumps:
    """Finite-support jump distribution: atoms (k,) or (k, n) with probabilities."""

    atoms: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        probs = np.array(self.probs, dtype=float).ravel()
        if atoms.shape[0] != probs.shape[0] or atoms.shape[0] == 0:
            raise ConfigError("atoms and probs must have equal positive length")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ConfigError("probs must be a probability vector")
        atoms.flags.writeable = False
        probs.flags.writeable = False
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", probs)

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]


@dataclass(frozen=True)
class SamplerJumps:
    """Sampler-backed jump distribution with declared moment classes.

    ``sampler(rng, size)`` must return a ``(size, dim)`` array. ``theta_sup``
    declares the supremum of finite absolute moments; ``exp_rate`` the largest
    ``theta`` with ``E[exp(theta |Y|)] < oo`` (None if no exponential moments).
    """

    sampler: Callable[[np.random.Generator, int], np.ndarray]
    dim: int = 1
    theta_sup: float = math.inf
    exp_rate: float | None = None

    def __post_init__(self):
        if not callable(self.sampler):
            raise ConfigError("sampler must be callable")
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")


@dataclass(frozen=True)
class CompoundPoisson:
    """Compound Poisson jump part: rate * jump distribution."""

    rate: float
    jump_dist: Union[DiscreteJumps, SamplerJumps]

    def __post_init__(self):
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise ConfigError(f"rate must be positive, got {self.rate}")


@dataclass(frozen=True)
class SymmetricStable:
    """Symmetric alpha-stable jump part, isotropic or per-coordinate."""

    alpha: float
    scale: float = 1.0
    structure: Literal["isotropic", "independent"] = "isotropic"

    def __post_init__(self):
        if not (0.0 < self.alpha < 2.0):
            raise ConfigError(f"alpha must lie in (0,2), got {self.alpha}")
        if not self.scale > 0:
            raise ConfigError(f"scale must be positive, got {self.scale}")
        if self.structure not in ("isotropic", "independent"):
            raise ConfigError(f"unknown structure {self.structure!r}")


@dataclass(frozen=True)
class StableSubordinatorMeasure:
    """One-sided alpha-stable jump measure (increments positive), alpha in (0,1)."""

    alpha: float

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ConfigError(f"alpha must lie in (0,1), got {self.alpha}")


JumpKind = Union[NoJumps, CompoundPoisson, SymmetricStable, StableSubordinatorMeasure]


@dataclass(frozen=True)
class ThetaClass:
    """Moment classes of a jump measure: polynomial supremum and exponential rate."""

    theta_sup: float
    exp_rate: float | None


@dataclass(frozen=True, eq=False)
class LevyMeasureSpec:
    """Driving Lévy process: drift ``b_L``, Gaussian ``a_L``, jump part ``kind``."""

    kind: JumpKind = NoJumps()
    b_L: np.ndarray | None = None
    a_L: np.ndarray | None = None

    def __post_init__(self):
        if self.b_L is not None:
            b = np.array(self.b_L, dtype=float).ravel()
            b.flags.writeable = False
            object.__setattr__(self, "b_L", b)
        if self.a_L is not None:
            a = np.atleast_2d(np.array(self.a_L, dtype=float))
            if not np.allclose(a, a.T, atol=1e-12):
                raise ConfigError("a_L must be symmetric")
            if np.linalg.eigvalsh(a)[0] < -1e-12:
                raise ConfigError("a_L must be PSD")
            a.flags.writeable = False
            object.__setattr__(self, "a_L", a)

    def theta_class(self) -> ThetaClass:
        kind = self.kind
        if isinstance(kind, NoJumps):
            return ThetaClass(theta_sup=math.inf, exp_rate=math.inf)
        if isinstance(kind, CompoundPoisson):
            jd = kind.jump_dist
            if isinstance(jd, DiscreteJumps):
                return ThetaClass(theta_sup=math.inf, exp_rate=math.inf)
            return ThetaClass(theta_sup=jd.theta_sup, exp_rate=jd.exp_rate)
        if isinstance(kind, SymmetricStable):
            return ThetaClass(theta_sup=kind.alpha, exp_rate=None)
        if isinstance(kind, StableSubordinatorMeasure):
            return ThetaClass(theta_sup=kind.alpha, exp_rate=None)
        raise ConfigError(f"unknown jump kind {kind!r}")


# ---------------------------------------------------------------------------
# Process specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConstantControl:
    """Fixed allocation vector on the simplex."""

    v: np.ndarray

    def __post_init__(self):
        v = np.array(self.v, dtype=float).ravel()
        if np.any(v < 0) or abs(v.sum() - 1.0) > 1e-12:
            raise ConfigError("control vector must lie on the probability simplex")
        v.flags.writeable = False
        object.__setattr__(self, "v", v)


@dataclass(frozen=True)
class MarkovControl:
    """State-dependent allocation ``v(x)``; only locally Lipschitz maps accepted."""

    fn: Callable[[np.ndarray], np.ndarray]
    locally_lipschitz: bool = True

    def __post_init__(self):
        if not callable(self.fn):
            raise ConfigError("control fn must be callable")
        if not self.locally_lipschitz:
            raise ConfigError(
                "merely measurable Markov controls are rejected: strong-solution "
                "simulation requires a locally Lipschitz control"
            )


@dataclass(frozen=True)
class LangevinTempered:
    """Langevin diffusion with heavy-tailed target ``pi(x) = c |x|^{-1/alpha}``
    outside the unit ball and a C2 radial interior blend; ``sigma = pi^{-beta} I``.
    """

    alpha: float
    beta: float
    dim: int = 1
    interior_profile: str = "c2-blend"

    def __post_init__(self):
        n = self.dim
        if n < 1:
            raise ConfigError("dim must be >= 1")
        if not (0.0 < self.alpha < 1.0 / n):
            raise ConfigError(f"alpha must lie in (0, 1/n) = (0, {1.0 / n}), got {self.alpha}")
        hi = (1.0 + self.alpha * (2.0 - n)) / 2.0
        if not (0.0 <= self.beta <= hi):
            raise ConfigError(f"beta must lie in [0, {hi}], got {self.beta}")
        if self.interior_profile != "c2-blend":
            raise ConfigError(f"unknown interior profile {self.interior_profile!r}")


@dataclass(frozen=True, eq=False)
class OUJump:
    """Linear drift ``Hx`` driven by a Lévy process."""

    H: np.ndarray
    levy: LevyMeasureSpec

    def __post_init__(self):
        h = np.atleast_2d(np.array(self.H, dtype=float))
        if h.shape[0] != h.shape[1]:
            raise ConfigError("H must be square")
        h.flags.writeable = False
        object.__setattr__(self, "H", h)


@dataclass(frozen=True, eq=False)
class PiecewiseOU:
    """Piecewise linear drift ``l - M(x - <e,x>^+ v) - <e,x>^+ Gamma v`` plus noise."""

    l: np.ndarray
    M: np.ndarray
    Gamma: np.ndarray
    control: Union[ConstantControl, MarkovControl]
    sigma: np.ndarray | Callable[[np.ndarray], np.ndarray] | None
    levy: LevyMeasureSpec

    def __post_init__(self):
        l = np.array(self.l, dtype=float).ravel()
        m = np.atleast_2d(np.array(self.M, dtype=float))
        g = np.atleast_2d(np.array(self.Gamma, dtype=float))
        n = l.shape[0]
        if m.shape != (n, n) or g.shape != (n, n):
            raise ConfigError("M and Gamma must be n x n")
        off = m - np.diag(np.diag(m))
        if np.any(off > 1e-12):
            raise ConfigError("M must be an M-matrix: off-diagonal entries <= 0")
        if np.min(np.real(np.linalg.eigvals(m))) <= 0:
            raise ConfigError("M must be a nonsingular M-matrix: eigenvalues in the right half-plane")
        if np.any(np.ones(n) @ m < -1e-12):
            raise ConfigError("e'M must be componentwise nonnegative")
        if np.any(g != np.diag(np.diag(g))) or np.any(np.diag(g) < 0):
            raise ConfigError("Gamma must be a nonnegative diagonal matrix")
        sigma = self.sigma
        if sigma is not None and not callable(sigma):
            sigma = np.atleast_2d(np.array(sigma, dtype=float))
            sigma.flags.writeable = False
        for name, val in (("l", l), ("M", m), ("Gamma", g)):
            val.flags.writeable = False
            object.__setattr__(self, name, val)
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self) -> int:
        return self.l.shape[0]


@dataclass(frozen=True)
class NonlinearSS:
    """Discrete-time recursion ``X_{k+1} = F(X_k) + W_{k+1}`` with growth metadata."""

    F: Callable[[np.ndarray], np.ndarray]
    noise: Callable[[np.random.Generator, int], np.ndarray]
    c_bar: float
    c_tilde: float
    eps_bar: float
    r_bar: float
    dim: int = 1

    def __post_init__(self):
        if not callable(self.F) or not callable(self.noise):
            raise ConfigError("F and noise must be callable")
        for name in ("c_bar", "c_tilde", "eps_bar", "r_bar"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"growth constant {name} must be positive")


@dataclass(frozen=True)
class BackwardRecurrence:
    """Chain on the nonnegative integers: up with probability ``p_i``, else reset to 0.

    ``p_0 = 1``; ``p_i = 1/2`` for ``1 <= i < i0``; ``p_i = 1 - (1+alpha)/i``
    for ``i >= i0`` (reset probability ``(1+alpha)/i``), which produces the
    polynomial invariant tail ``pi(i) ~ C i^{-(1+alpha)}``.
    """

    alpha: float
    i0: int

    def __post_init__(self):
        if not self.alpha > 1.0:
            raise ConfigError(f"alpha must exceed 1, got {self.alpha}")
        if not (isinstance(self.i0, (int, np.integer)) and self.i0 > 1 + self.alpha):
            raise ConfigError(f"i0 must be an integer > 1 + alpha, got {self.i0}")

    def up_prob(self, i: np.ndarray) -> np.ndarray:
        i = np.asarray(i, dtype=float)
        return np.where(
            i == 0,
            1.0,
            np.where(i < self.i0, 0.5, 1.0 - (1.0 + self.alpha) / np.maximum(i, 1.0)),
        )


@dataclass(frozen=True)
class GenericIto:
    """User-specified drift/diffusion plus a driving Lévy spec."""

    b: Callable[[np.ndarray], np.ndarray] | None
    sigma: np.ndarray | Callable[[np.ndarray], np.ndarray] | None
    levy: LevyMeasureSpec
    dim: int = 1


ProcessSpec = Union[
    LangevinTempered, OUJump, PiecewiseOU, NonlinearSS, BackwardRecurrence, GenericIto
]


# ---------------------------------------------------------------------------
# Deterministic fingerprints
# ---------------------------------------------------------------------------


def _fingerprint_parts(obj, out: list[str]) -> None:
    if is_dataclass(obj) and not isinstance(obj, type):
        out.append(type(obj).__name__ + "{")
        for f in fields(obj):
            out.append(f.name + "=")
            _fingerprint_parts(getattr(obj, f.name), out)
        out.append("}")
    elif isinstance(obj, np.ndarray):
        out.append(f"nd{obj.shape}{obj.dtype}:")
        out.append(hashlib.sha256(np.ascontiguousarray(obj).tobytes()).hexdigest()[:16])
    elif callable(obj):
        out.append(f"fn:{getattr(obj, '__module__', '?')}.{getattr(obj, '__qualname__', repr(obj))}")
    elif isinstance(obj, (tuple, list)):
        out.append("[")
        for item in obj:
            _fingerprint_parts(item, out)
        out.append("]")
    else:
        out.append(repr(obj))
    out.append(";")


def spec_fingerprint(spec) -> str:
    """Stable hex digest of a specification tree (arrays by content, fns by name)."""
    parts: list[str] = []
    _fingerprint_parts(spec, parts)
    return hashlib.sha256("".join(parts).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Stable sampling (Chambers–Mallows–Stuck)
# ---------------------------------------------------------------------------


def _cms(alpha: float, skew: float, rng: np.random.Generator, size) -> np.ndarray:
    u = rng.uniform(-math.pi / 2.0, math.pi / 2.0, size)
    w = rng.exponential(1.0, size)
    if alpha == 1.0:
        if skew == 0.0:
            return np.tan(u)
        half_pi = math.pi / 2.0
        return (2.0 / math.pi) * (
            (half_pi + skew * u) * np.tan(u)
            - skew * np.log((half_pi * w * np.cos(u)) / (half_pi + skew * u))
        )
    t = math.tan(math.pi * alpha / 2.0)
    b = math.atan(skew * t) / alpha
    s = (1.0 + skew * skew * t * t) ** (1.0 / (2.0 * alpha))
    return (
        s
        * np.sin(alpha * (u + b))
        / np.cos(u) ** (1.0 / alpha)
        * (np.cos(u - alpha * (u + b)) / w) ** ((1.0 - alpha) / alpha)
    )


def sample_stable(alpha: float, skew: float, scale: float, n: int, seed: int) -> np.ndarray:
    """Stable samples via the Chambers–Mallows–Stuck transform.

    ``alpha = 2`` degenerates to a centered Gaussian with variance
    ``2 * scale**2``; ``alpha = 1, skew = 0`` is Cauchy; ``alpha < 1, skew = 1``
    is spectrally positive (all samples positive).
    """
    if not (0.0 < alpha <= 2.0):
        raise DomainError(f"alpha must lie in (0,2], got {alpha}")
    if not -1.0 <= skew <= 1.0:
        raise DomainError(f"skew must lie in [-1,1], got {skew}")
    if not scale > 0:
        raise DomainError(f"scale must be positive, got {scale}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=[int(seed)])))
    return scale * _cms(alpha, skew, rng, int(n))


def standard_one_sided_stable(alpha: float, rng: np.random.Generator, size) -> np.ndarray:
    """One-sided stable with Laplace transform ``E[exp(-u S)] = exp(-u^alpha)``.

    The raw CMS draw with ``skew = 1`` has Laplace exponent
    ``u^alpha / cos(pi alpha / 2)``; rescaling by ``cos(pi alpha/2)^{1/alpha}``
    normalizes it away.
    """
    if not (0.0 < alpha < 1.0):
        raise DomainError(f"alpha must lie in (0,1), got {alpha}")
    return math.cos(math.pi * alpha / 2.0) ** (1.0 / alpha) * _cms(alpha, 1.0, rng, size)


def _stable_increments(kind: SymmetricStable, dim: int, dt: float, rng, m: int) -> np.ndarray:
    """Exact-in-law increments of the stable part over one step of length dt."""
    amp = dt ** (1.0 / kind.alpha) * kind.scale
    if dim == 1 or kind.structure == "independent":
        return amp * _cms(kind.alpha, 0.0, rng, (m, dim))
    # isotropic: Gaussian subordinated by a one-sided (alpha/2)-stable factor
    lam = standard_one_sided_stable(kind.alpha / 2.0, rng, (m, 1))
    z = rng.standard_normal((m, dim))
    return amp * np.sqrt(2.0 * lam) * z


# ---------------------------------------------------------------------------
# Trajectory container
# ---------------------------------------------------------------------------

_MAGIC = b"ERGB"
_FMT_VERSION = 1


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """Simulated paths: ``paths[i, k, :]`` is path ``i`` at ``times[k]``."""

    times: np.ndarray
    paths: np.ndarray
    spec_hash: str
    seed: int

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        p = np.asarray(self.paths, dtype=float)
        if p.ndim != 3 or p.shape[1] != t.shape[0]:
            raise ConfigError("paths must be (n_paths, n_times, dim) matching times")
        t.flags.writeable = False
        p.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "paths", p)

    @property
    def n_paths(self) -> int:
        return self.paths.shape[0]

    @property
    def dim(self) -> int:
        return self.paths.shape[2]

    def marginal(self, k: int) -> np.ndarray:
        """States of all paths at grid index ``k`` (shape n_paths x dim)."""
        return self.paths[:, k, :]

    def to_binary(self, path) -> None:
        hash_bytes = self.spec_hash.encode()
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(
                struct.pack(
                    "<IqQQQQ",
                    _FMT_VERSION,
                    int(self.seed),
                    self.n_paths,
                    self.times.shape[0],
                    self.dim,
                    len(hash_bytes),
                )
            )
            fh.write(hash_bytes)
            fh.write(self.times.astype("<f8").tobytes())
            fh.write(np.ascontiguousarray(self.paths, dtype="<f8").tobytes())

    @classmethod
    def from_binary(cls, path) -> "TrajectoryBatch":
        with open(path, "rb") as fh:
            if fh.read(4) != _MAGIC:
                raise ConfigError("not a trajectory file")
            version, seed, n_paths, n_times, dim, hash_len = struct.unpack(
                "<IqQQQQ", fh.read(44)
            )
            if version != _FMT_VERSION:
                raise ConfigError(f"unsupported format version {version}")
            spec_hash = fh.read(hash_len).decode()
            times = np.frombuffer(fh.read(8 * n_times), dtype="<f8")
            paths = np.frombuffer(fh.read(8 * n_paths * n_times * dim), dtype="<f8")
        return cls(
            times=times.copy(),
            paths=paths.reshape(n_paths, n_times, dim).copy(),
            spec_hash=spec_hash,
            seed=seed,
        )

    def to_csv(self, path) -> None:
        import csv as _csv

        if self.paths.size > 2_000_000:
            raise ConfigError("CSV export is for small batches; use to_binary")
        with open(path, "w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["path", "time"] + [f"x{i + 1}" for i in range(self.dim)])
            for i in range(self.n_paths):
                for k, t in enumerate(self.times):
                    writer.writerow(
                        [i, repr(float(t))] + [repr(float(v)) for v in self.paths[i, k]]
                    )


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=[int(seed), int(block)]))
    )


def _psd_sqrt_matrix(a: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(a)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def _jump_increment(levy: LevyMeasureSpec, dim: int, dt: float, rng, m: int) -> np.ndarray | None:
    kind = levy.kind
    if isinstance(kind, NoJumps):
        return None
    if isinstance(kind, CompoundPoisson):
        counts = rng.poisson(kind.rate * dt, m)
        total = int(counts.sum())
        inc = np.zeros((m, dim))
        if total > 0:
            jd = kind.jump_dist
            if isinstance(jd, DiscreteJumps):
                picks = rng.choice(jd.atoms.shape[0], size=total, p=jd.probs)
                jumps = jd.atoms[picks]
            else:
                jumps = np.asarray(jd.sampler(rng, total), dtype=float)
                if jumps.ndim == 1:
                    jumps = jumps[:, None]
            idx = np.repeat(np.arange(m), counts)
            np.add.at(inc, idx, jumps)
        return inc
    if isinstance(kind, SymmetricStable):
        return _stable_increments(kind, dim, dt, rng, m)
    if isinstance(kind, StableSubordinatorMeasure):
        if dim != 1:
            raise ConfigError("subordinator jump measures are one-dimensional")
        amp = dt ** (1.0 / kind.alpha)
        return amp * standard_one_sided_stable(kind.alpha, rng, (m, 1))
    raise ConfigError(f"unknown jump kind {kind!r}")


def _sigma_apply(sigma, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Return sigma(x) @ z per path for constant or state-dependent sigma."""
    if callable(sigma):
        mat = np.asarray(sigma(x), dtype=float)
        if mat.ndim == 2:  # diagonal-free shorthand: per-path scalar rows
            return mat * z
        return np.einsum("pij,pj->pi", mat, z)
    return z @ np.asarray(sigma, dtype=float).T


def _spec_dim(spec: ProcessSpec) -> int:
    if isinstance(spec, LangevinTempered):
        return spec.dim
    if isinstance(spec, OUJump):
        return spec.H.shape[0]
    if isinstance(spec, PiecewiseOU):
        return spec.dim
    if isinstance(spec, (NonlinearSS, GenericIto)):
        return spec.dim
    if isinstance(spec, BackwardRecurrence):
        return 1
    raise ConfigError(f"unknown process spec {spec!r}")


def _check_blowup(x: np.ndarray) -> None:
    worst = float(np.max(np.abs(x))) if x.size else 0.0
    if not math.isfinite(worst) or worst > _BLOWUP_GUARD:
        raise BlowUpError(f"state magnitude {worst:.3e} exceeded the overflow guard 1e12")


def _drift_fn(spec: ProcessSpec):
    if isinstance(spec, OUJump):
        return lambda x: x @ spec.H.T
    if isinstance(spec, PiecewiseOU):
        if isinstance(spec.control, ConstantControl):
            v = spec.control.v
            return lambda x: piecewise_drift(spec.l, spec.M, spec.Gamma, v, x)

        def markov_drift(x):
            vx = np.asarray(spec.control.fn(x), dtype=float)
            s = np.clip(x.sum(axis=1), 0.0, None)[:, None]
            return spec.l[None, :] - (x - s * vx) @ spec.M.T - s * (vx @ spec.Gamma.T)

        return markov_drift
    if isinstance(spec, LangevinTempered):
        return lambda x: langevin_coeffs(spec, x)[0]
    if isinstance(spec, GenericIto):
        if spec.b is None:
            return lambda x: np.zeros_like(x)
        return lambda x: np.asarray(spec.b(x), dtype=float)
    raise ConfigError(f"no drift for {spec!r}")


def _sigma_for(spec: ProcessSpec):
    if isinstance(spec, OUJump):
        return None
    if isinstance(spec, (PiecewiseOU, GenericIto)):
        return spec.sigma
    if isinstance(spec, LangevinTempered):
        return lambda x: langevin_coeffs(spec, x)[1]
    raise ConfigError(f"no diffusion for {spec!r}")


def _simulate_discrete(spec, x0, steps_grid, n_paths, seed):
    dim = _spec_dim(spec)
    n_times = len(steps_grid)
    out = np.empty((n_paths, n_times, dim))
    horizon = steps_grid[-1]
    for block, lo in enumerate(range(0, n_paths, _BLOCK_SIZE)):
        hi = min(lo + _BLOCK_SIZE, n_paths)
        m = hi - lo
        rng = _block_rng(seed, block)
        x = np.broadcast_to(np.asarray(x0, dtype=float).ravel(), (m, dim)).copy()
        save = 0
        if steps_grid[0] == 0:
            out[lo:hi, 0] = x
            save = 1
        for step in range(1, horizon + 1):
            if isinstance(spec, BackwardRecurrence):
                p = spec.up_prob(x[:, 0])
                up = rng.uniform(0.0, 1.0, m) < p
                x = np.where(up[:, None], x + 1.0, 0.0)
            else:  # NonlinearSS
                w = np.asarray(spec.noise(rng, m), dtype=float)
                if w.ndim == 1:
                    w = w[:, None]
                x = np.asarray(spec.F(x), dtype=float) + w
                _check_blowup(x)
            if save < n_times and step == steps_grid[save]:
                out[lo:hi, save] = x
                save += 1
    return out


def _ou_step_terms(spec: OUJump, dt: float):
    h = spec.H
    n = h.shape[0]
    prop = expm(h * dt)
    levy = spec.levy
    drift_term = np.zeros(n)
    if levy.b_L is not None:
        # int_0^dt e^{Hs} b_L ds via the augmented exponential
        aug = np.zeros((n + 1, n + 1))
        aug[:n, :n] = h * dt
        aug[:n, n] = levy.b_L * dt
        drift_term = expm(aug)[:n, n]
    noise_sqrt = None
    if levy.a_L is not None and np.any(levy.a_L):
        cov = _ou_covariance(h, levy.a_L, dt)
        noise_sqrt = _psd_sqrt_matrix(cov)
    return prop, drift_term, noise_sqrt


def _simulate_continuous(spec, x0, t_grid, n_paths, seed, max_step):
    dim = _spec_dim(spec)
    n_times = len(t_grid)
    out = np.empty((n_paths, n_times, dim))
    levy = spec.levy if not isinstance(spec, LangevinTempered) else LevyMeasureSpec()
    is_ou = isinstance(spec, OUJump)
    if not is_ou:
        drift = _drift_fn(spec)
        sigma = _sigma_for(spec)
        sqrt_al = None
        if levy.a_L is not None and np.any(levy.a_L):
            sqrt_al = _psd_sqrt_matrix(levy.a_L)
    # per-interval substeps, shared across blocks
    plans = []
    for k in range(n_times - 1):
        span = t_grid[k + 1] - t_grid[k]
        n_sub = max(1, int(math.ceil(span / max_step - 1e-12)))
        plans.append((n_sub, span / n_sub))
    ou_terms = {}
    if is_ou:
        for n_sub, dt in plans:
            if dt not in ou_terms:
                ou_terms[dt] = _ou_step_terms(spec, dt)
    for block, lo in enumerate(range(0, n_paths, _BLOCK_SIZE)):
        hi = min(lo + _BLOCK_SIZE, n_paths)
        m = hi - lo
        rng = _block_rng(seed, block)
        x = np.broadcast_to(np.asarray(x0, dtype=float).ravel(), (m, dim)).copy()
        out[lo:hi, 0] = x
        for k, (n_sub, dt) in enumerate(plans):
            for _ in range(n_sub):
                if is_ou:
                    prop, drift_term, noise_sqrt = ou_terms[dt]
                    x = x @ prop.T + drift_term[None, :]
                    if noise_sqrt is not None:
                        x = x + rng.standard_normal((m, dim)) @ noise_sqrt.T
                else:
                    step = drift(x) * dt
                    if levy.b_L is not None:
                        step = step + levy.b_L[None, :] * dt
                    if sigma is not None:
                        z = rng.standard_normal((m, dim))
                        step = step + _sigma_apply(sigma, x, z) * math.sqrt(dt)
                    if sqrt_al is not None:
                        z2 = rng.standard_normal((m, dim))
                        step = step + (z2 @ sqrt_al.T) * math.sqrt(dt)
                    x = x + step
                jump = _jump_increment(levy, dim, dt, rng, m)
                if jump is not None:
                    x = x + jump
                _check_blowup(x)
            out[lo:hi, k + 1] = x
    return out


def simulate(
    spec: ProcessSpec,
    x0,
    t_grid,
    n_paths: int,
    seed: int,
    max_step: float = 0.01,
) -> TrajectoryBatch:
    """Simulate ``n_paths`` trajectories observed on ``t_grid``.

    Continuous kinds use Euler–Maruyama with exact-in-law noise increments per
    substep (substep length at most ``max_step``); ``OUJump`` integrates its
    linear drift and Gaussian part exactly per substep. ``BackwardRecurrence``
    and ``NonlinearSS`` are exact recursions on integer times. The first grid
    point carries the initial condition.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size < 1 or np.any(np.diff(t) <= 0):
        raise ConfigError("t_grid must be a strictly increasing 1-D grid")
    if n_paths < 1:
        raise ConfigError("n_paths must be positive")
    if isinstance(spec, (BackwardRecurrence, NonlinearSS)):
        steps = np.rint(t).astype(int)
        if np.any(np.abs(t - steps) > 1e-9) or steps[0] < 0:
            raise ConfigError("discrete-time specs require nonnegative integer grid times")
        paths = _simulate_discrete(spec, x0, list(steps), n_paths, seed)
    else:
        if not max_step > 0:
            raise ConfigError("max_step must be positive")
        paths = _simulate_continuous(spec, x0, t, n_paths, seed, max_step)
    return TrajectoryBatch(times=t, paths=paths, spec_hash=spec_fingerprint(spec), seed=seed)


# ---------------------------------------------------------------------------
# Exact objects
# ---------------------------------------------------------------------------


def _recurrence_series(spec: BackwardRecurrence, n_terms: int):
    """Unnormalized masses u_i = prod_{j=1}^{i-1} p_j for i >= 1 (u_1 = 1)."""
    idx = np.arange(1, n_terms, dtype=float)
    p = np.where(idx < spec.i0, 0.5, 1.0 - (1.0 + spec.alpha) / idx)
    u = np.concatenate([[1.0], np.cumprod(p)])  # u[i-1] corresponds to state i
    return u


def invariant_exact(spec: BackwardRecurrence, truncation: int):
    """Exact invariant distribution on {0, ..., truncation}, renormalized.

    Raises :class:`ConfigError` when the truncated tail mass exceeds 1e-12 of
    the total.
    """
    from .wasserstein import EmpiricalMeasure

    if truncation < 2:
        raise ConfigError("truncation must be at least 2")
    n_terms = max(4 * truncation, 2_000_000)
    u = _recurrence_series(spec, n_terms)
    # c = sum_{m>=1} prod_{j=1}^m p_j; since u[i-1] = prod_{j=1}^{i-1} p_j the
    # series terms are u[1], u[2], ...
    series_terms = u[1:]
    c_partial = float(series_terms.sum())
    # tail completion: terms decay like C m^{-(1+alpha)}; complete with the
    # Euler-Maclaurin head of sum_{m > N} C m^{-(1+alpha)}
    last = float(series_terms[-1])
    n_last = float(n_terms - 1)
    s = 1.0 + spec.alpha
    coef = last * n_last**s
    tail = coef * (n_last ** (1.0 - s) / (s - 1.0) - n_last ** (-s) / 2.0)
    c = c_partial + tail
    norm = 2.0 + c
    masses = np.empty(truncation + 1)
    masses[0] = 1.0
    masses[1] = 1.0
    masses[2 : truncation + 1] = u[1:truncation]
    # mass beyond the truncation: exact partial sum plus the same completion
    tail_mass = (float(u[truncation:].sum()) + tail) / norm
    if tail_mass > 1e-12:
        raise ConfigError(
            f"truncation {truncation} leaves tail mass ~{tail_mass:.2e} > 1e-12"
        )
    weights = masses / norm
    weights = weights / weights.sum()
    points = np.arange(truncation + 1, dtype=float)[:, None]
    return EmpiricalMeasure(points=points, weights=weights)


def _ou_covariance(h: np.ndarray, a: np.ndarray, t: float) -> np.ndarray:
    n = h.shape[0]
    if n == 1:
        hh = float(h[0, 0])
        aa = float(a[0, 0])
        if abs(hh) < 1e-300:
            return np.array([[aa * t]])
        return np.array([[aa * (math.exp(2.0 * hh * t) - 1.0) / (2.0 * hh)]])
    # Van Loan block-exponential: exp(t [[-H, a], [0, H']]) yields
    # C(t) = F22' F12 with the blocks below
    blk = np.zeros((2 * n, 2 * n))
    blk[:n, :n] = -h
    blk[:n, n:] = a
    blk[n:, n:] = h.T
    f = expm(blk * t)
    return f[n:, n:].T @ f[:n, n:]


def ou_exact_transition(H, a_L, t: float, x0):
    """Gaussian marginal of ``dX = HX dt + sqrt(a_L) dB``: mean and covariance."""
    h = np.atleast_2d(np.asarray(H, dtype=float))
    a = np.atleast_2d(np.asarray(a_L, dtype=float))
    x0 = np.asarray(x0, dtype=float).ravel()
    if t < 0:
        raise DomainError(f"t must be nonnegative, got {t}")
    if t == 0.0:
        return x0.copy(), np.zeros_like(a)
    mean = expm(h * t) @ x0
    cov = _ou_covariance(h, a, t)
    return mean, cov


def piecewise_drift(l, M, Gamma, v, x) -> np.ndarray:
    """``l - M(x - <e,x>^+ v) - <e,x>^+ Gamma v`` for one state or a batch."""
    l = np.asarray(l, dtype=float).ravel()
    m = np.atleast_2d(np.asarray(M, dtype=float))
    g = np.atleast_2d(np.asarray(Gamma, dtype=float))
    v = np.asarray(v, dtype=float).ravel()
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    s = np.clip(xb.sum(axis=1), 0.0, None)[:, None]
    out = l[None, :] - (xb - s * v[None, :]) @ m.T - s * (g @ v)[None, :]
    return out[0] if single else out


def _langevin_blend_coeffs(alpha: float):
    # interior radial profile q(u), u = |x|^2: the polynomial matching
    # u^{-1/(2 alpha)} at u = 1 to second order; positive on [0, 1]
    k = 1.0 / (2.0 * alpha)
    return k, k * (k + 1.0)


@functools.lru_cache(maxsize=32)
def _langevin_norm_const(spec: LangevinTempered) -> float:
    n = spec.dim
    k, kk = _langevin_blend_coeffs(spec.alpha)
    omega = 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)
    i_ext = omega / (1.0 / spec.alpha - n)

    def q(u):
        return 1.0 - k * (u - 1.0) + 0.5 * kk * (u - 1.0) ** 2

    i_int, _ = quad(lambda r: q(r * r) * r ** (n - 1), 0.0, 1.0, epsrel=1e-12)
    return 1.0 / (i_ext + omega * i_int)


def langevin_density(spec: LangevinTempered, x) -> np.ndarray:
    """Invariant density: ``c |x|^{-1/alpha}`` outside the unit ball, C2 blend inside."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    c = _langevin_norm_const(spec)
    r2 = np.sum(x * x, axis=1)
    k, kk = _langevin_blend_coeffs(spec.alpha)
    inner = 1.0 - k * (r2 - 1.0) + 0.5 * kk * (r2 - 1.0) ** 2
    # clamp before the power: the outer branch is only consulted for r2 >= 1
    outer = np.power(np.maximum(r2, 1.0), -1.0 / (2.0 * spec.alpha))
    return c * np.where(r2 >= 1.0, outer, inner)


def langevin_coeffs(spec: LangevinTempered, x):
    """Drift and diffusion of the Langevin spec: ``b = (1-2 beta)/2 * pi^{-2 beta} grad log pi``,
    ``sigma = pi^{-beta} I`` (returned per point as a scalar multiplier array)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    r2 = np.sum(xb * xb, axis=1)
    k, kk = _langevin_blend_coeffs(spec.alpha)
    pi_vals = langevin_density(spec, xb)
    # grad log pi: outside -(1/alpha) x/|x|^2; inside q'(u) 2x / q(u)
    q = 1.0 - k * (r2 - 1.0) + 0.5 * kk * (r2 - 1.0) ** 2
    qp = -k + kk * (r2 - 1.0)
    inner_factor = 2.0 * qp / q
    outer_factor = -(1.0 / spec.alpha) / np.maximum(r2, 1.0)
    factor = np.where(r2 >= 1.0, outer_factor, inner_factor)
    grad_log = factor[:, None] * xb
    b = 0.5 * (1.0 - 2.0 * spec.beta) * (pi_vals ** (-2.0 * spec.beta))[:, None] * grad_log
    sig = (pi_vals ** (-spec.beta))[:, None] * np.ones_like(xb)
    if single:
        return b[0], sig[0]
    return b, sig
