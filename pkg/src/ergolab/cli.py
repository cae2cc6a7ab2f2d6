"""Experiment driver and command-line interface.

The centerpiece is :func:`run_experiment`: given a JSON-serializable
configuration it simulates a process, measures the Wasserstein distance of
the time-t marginal empirical measure to a reference measure along a time
grid, fits a decay-rate model, and writes the curve plus a machine-readable
summary to disk.  Every random ingredient is derived from the single config
seed, so identical configurations produce byte-identical CSV outputs.

The reference measure is either the exact invariant law (available for the
backward recurrence chain and the scalar Gaussian Ornstein-Uhlenbeck case)
or the empirical measure of an independent long simulation.  Either way a
distance curve bottoms out at a sampling noise floor; the driver therefore
measures that floor directly — as the distance between two independently
generated references — and prints it alongside every fit.

The :func:`main` entry point exposes thin subcommand bindings over the
library modules (``simulate``, ``wdist``, ``driftcheck``, ``couple``,
``lower``, ``subordinate``, ``ratefit``).  Exit codes: 0 on success, 2 for
configuration/validation errors, 3 for numerical or data failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .coupling import (
    DissipativityParams,
    NotFound,
    contraction_estimate,
    find_q,
    prop35_cp,
    synchronous_pair_sim,
)
from .errors import (
    ConfigError,
    DegenerateDataError,
    DomainError,
    ErgoLabError,
    InsufficientPathsError,
    NotDissipativeError,
    SizeError,
)
from .lowerbound import LipschitzFn, LowerBoundInstance, lower_bound_curve
from .lyapunov import (
    ExpNorm,
    GeneratorSpec,
    PolyNorm,
    PolyNormPlusOne,
    QuadForm,
    drift_check,
)
from .processes import (
    BackwardRecurrence,
    CompoundPoisson,
    ConstantControl,
    DiscreteJumps,
    LangevinTempered,
    LevyMeasureSpec,
    NoJumps,
    OUJump,
    PiecewiseOU,
    StableSubordinatorMeasure,
    SymmetricStable,
    invariant_exact,
    langevin_coeffs,
    simulate,
)
from .rates import LinearPhi, LowerRateParams, PowerPhi
from .subordination import (
    DriftOnly,
    Exponential,
    GammaSub,
    Polynomial,
    StableSub,
    SubordinatorSpec,
    subordinate_rate,
)
from .wasserstein import EmpiricalMeasure, sinkhorn_annealed, w_1d, w_exact_lp

__all__ = [
    "DistanceSpec",
    "ReferenceSpec",
    "ExperimentConfig",
    "RateFit",
    "fit_rate",
    "parse_experiment_config",
    "config_to_dict",
    "config_hash",
    "distance_between",
    "run_experiment",
    "main",
]

_MAX_TRUNCATION = 2**22


# ---------------------------------------------------------------------------
# configuration objects
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DistanceSpec:
    """Which Wasserstein estimator measures the curve."""

    kind: str
    epsilon: float | None = None

    def __post_init__(self):
        if self.kind not in ("w1d", "exact_lp", "sinkhorn"):
            raise ConfigError(f"unknown distance kind {self.kind!r}")
        if self.kind == "sinkhorn":
            if self.epsilon is None:
                raise ConfigError("sinkhorn distance requires an epsilon")
            if not (isinstance(self.epsilon, (int, float)) and self.epsilon > 0):
                raise DomainError(f"epsilon must be positive, got {self.epsilon}")
        elif self.epsilon is not None:
            raise ConfigError(f"distance {self.kind!r} takes no epsilon")


@dataclass(frozen=True)
class ReferenceSpec:
    """How the reference (target) measure is constructed.

    ``exact_invariant`` uses a closed form: the exact truncated invariant law
    for the backward recurrence chain, or a quantile-midpoint discretization
    of the invariant Gaussian for a scalar linear diffusion.
    ``long_run_empirical`` burns an independent simulation to ``t_burn`` and
    uses its terminal empirical measure.
    """

    kind: str
    t_burn: float | None = None
    quantile_points: int = 65536

    def __post_init__(self):
        if self.kind not in ("exact_invariant", "long_run_empirical"):
            raise ConfigError(f"unknown reference kind {self.kind!r}")
        if self.kind == "long_run_empirical":
            if self.t_burn is None:
                raise ConfigError("long_run_empirical requires t_burn")
            if not self.t_burn > 0:
                raise DomainError(f"t_burn must be positive, got {self.t_burn}")
        else:
            if self.t_burn is not None:
                raise ConfigError("exact_invariant takes no t_burn")
            if not (isinstance(self.quantile_points, int) and self.quantile_points >= 2):
                raise DomainError(
                    f"quantile_points must be an integer >= 2, got {self.quantile_points}"
                )


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Fully resolved experiment description (see :func:`parse_experiment_config`)."""

    process: object
    x0: tuple
    t_grid: tuple
    n_paths: int
    seed: int
    distance: DistanceSpec
    p: float
    reference: ReferenceSpec
    rate_model: str
    outputs: str | None = None
    bracket: tuple | None = None
    bracket_params: dict | None = None
    max_step: float = 0.01


@dataclass(frozen=True, eq=False)
class RateFit:
    """Least-squares decay fit with optional theoretical exponent bracket."""

    model: str
    rate: float
    intercept: float
    r_squared: float
    residuals: np.ndarray
    bracket: tuple | None = None
    bracket_params: dict | None = None


# ---------------------------------------------------------------------------
# rate fitting
# ---------------------------------------------------------------------------


def fit_rate(times, values, model, bracket=None, bracket_params=None) -> RateFit:
    """Fit ``values ~ intercept * t^rate`` or ``intercept * exp(-rate t)``.

    Least squares in the transformed domain (log-log for ``polynomial``,
    semi-log for ``exponential``).  Requires at least four strictly positive
    finite values; raises :class:`DegenerateDataError` when the values span
    less than one decade (polynomial) or one e-fold (exponential), since the
    data then cannot identify the model against a constant.
    """
    if model not in ("polynomial", "exponential"):
        raise ConfigError(f"unknown rate model {model!r}")
    if bracket is None and bracket_params is not None:
        raise ConfigError("bracket_params supplied without a bracket")
    if bracket is not None:
        lo, hi = (float(bracket[0]), float(bracket[1]))
        if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
            raise DomainError(f"bracket must be an ordered finite pair, got {bracket}")
        bracket = (lo, hi)
    t = np.asarray(times, dtype=float).ravel()
    v = np.asarray(values, dtype=float).ravel()
    if t.shape != v.shape:
        raise DomainError(f"times and values disagree in length: {t.shape} vs {v.shape}")
    if t.size < 4:
        raise DomainError(f"need at least 4 points to fit a rate, got {t.size}")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
        raise DomainError("times and values must be finite")
    if np.any(v <= 0):
        raise DomainError("values must be strictly positive")
    if np.any(np.diff(t) <= 0):
        raise DomainError("times must be strictly increasing")
    span = float(v.max() / v.min())
    if model == "polynomial":
        if np.any(t <= 0):
            raise DomainError("polynomial fits need strictly positive times")
        if span < 10.0:
            raise DegenerateDataError(
                f"values span a factor of {span:.3g} < 10; a power law is not "
                "identifiable over less than a decade"
            )
        x = np.log(t)
    else:
        if span < math.e:
            raise DegenerateDataError(
                f"values span a factor of {span:.3g} < e; an exponential is not "
                "identifiable over less than one e-fold"
            )
        x = t
    y = np.log(v)
    slope, c0 = np.polyfit(x, y, 1)
    resid = y - (slope * x + c0)
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot > 0.0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        r2 = 1.0 if ss_res < 1e-24 else 0.0
    r2 = min(1.0, max(0.0, r2))
    rate = float(slope) if model == "polynomial" else float(-slope)
    return RateFit(
        model=model,
        rate=rate,
        intercept=float(np.exp(c0)),
        r_squared=r2,
        residuals=resid,
        bracket=bracket,
        bracket_params=bracket_params,
    )


# ---------------------------------------------------------------------------
# schema helpers
# ---------------------------------------------------------------------------


def _require_keys(data: dict, required: set, optional: set, label: str) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"{label} must be a JSON object, got {type(data).__name__}")
    keys = set(data)
    missing = required - keys
    if missing:
        raise ConfigError(f"{label} is missing required keys: {sorted(missing)}")
    unknown = keys - required - optional
    if unknown:
        raise ConfigError(f"{label} has unknown keys: {sorted(unknown)}")


def _as_int(value, label: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{label} must be an integer, got {value!r}")
    return value


def _as_float(value, label: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{label} must be a number, got {value!r}")
    return float(value)


def _vector(value, label: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ConfigError(f"{label} must be a flat non-empty list of numbers")
    return arr


def _matrix(value, label: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim != 2:
        raise ConfigError(f"{label} must be a nested list forming a matrix")
    return arr


def _resolve_grid(obj, default_kind: str) -> np.ndarray:
    """A time grid given either explicitly or as start/stop/points."""
    if isinstance(obj, dict):
        _require_keys(obj, {"start", "stop", "points"}, {"kind"}, "t_grid")
        start = _as_float(obj["start"], "t_grid.start")
        stop = _as_float(obj["stop"], "t_grid.stop")
        points = _as_int(obj["points"], "t_grid.points")
        kind = obj.get("kind", default_kind)
        if kind not in ("geometric", "arithmetic"):
            raise ConfigError(f"unknown grid kind {kind!r}")
        if points < 2:
            raise DomainError(f"t_grid.points must be >= 2, got {points}")
        if not start < stop:
            raise DomainError(f"t_grid needs start < stop, got [{start}, {stop}]")
        if kind == "geometric":
            if not start > 0:
                raise DomainError("a geometric grid needs a positive start")
            return np.geomspace(start, stop, points)
        return np.linspace(start, stop, points)
    grid = _vector(obj, "t_grid")
    if np.any(grid < 0):
        raise DomainError("grid times must be nonnegative")
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        raise DomainError("grid times must be strictly increasing")
    return grid


# ---------------------------------------------------------------------------
# process (de)serialization
# ---------------------------------------------------------------------------


def _parse_jumps(data: dict):
    kind = data.get("kind")
    if kind == "none":
        _require_keys(data, {"kind"}, set(), "levy.jumps")
        return NoJumps()
    if kind == "compound_poisson":
        _require_keys(data, {"kind", "rate", "atoms", "probs"}, set(), "levy.jumps")
        dist = DiscreteJumps(atoms=np.asarray(data["atoms"], dtype=float),
                             probs=np.asarray(data["probs"], dtype=float))
        return CompoundPoisson(rate=_as_float(data["rate"], "jumps.rate"), jump_dist=dist)
    if kind == "symmetric_stable":
        _require_keys(data, {"kind", "alpha"}, {"scale", "structure"}, "levy.jumps")
        return SymmetricStable(
            alpha=_as_float(data["alpha"], "jumps.alpha"),
            scale=_as_float(data.get("scale", 1.0), "jumps.scale"),
            structure=data.get("structure", "isotropic"),
        )
    if kind == "stable_subordinator":
        _require_keys(data, {"kind", "alpha"}, set(), "levy.jumps")
        return StableSubordinatorMeasure(alpha=_as_float(data["alpha"], "jumps.alpha"))
    raise ConfigError(f"unknown jump kind {kind!r}")


def _parse_levy(data) -> LevyMeasureSpec:
    if data is None:
        data = {}
    _require_keys(data, set(), {"b_L", "a_L", "jumps"}, "levy")
    b_l = data.get("b_L")
    a_l = data.get("a_L")
    jumps = data.get("jumps")
    return LevyMeasureSpec(
        kind=NoJumps() if jumps is None else _parse_jumps(jumps),
        b_L=None if b_l is None else _vector(b_l, "levy.b_L"),
        a_L=None if a_l is None else _matrix(a_l, "levy.a_L"),
    )


def parse_process(data: dict):
    """Build a process specification from its JSON form."""
    if not isinstance(data, dict) or "family" not in data:
        raise ConfigError("process must be an object with a 'family' key")
    family = data["family"]
    if family == "ou_jump":
        _require_keys(data, {"family", "H"}, {"levy"}, "process")
        return OUJump(H=_matrix(data["H"], "process.H"), levy=_parse_levy(data.get("levy")))
    if family == "piecewise_ou":
        _require_keys(data, {"family", "l", "M", "Gamma", "v"}, {"sigma", "levy"}, "process")
        sigma = data.get("sigma")
        return PiecewiseOU(
            l=_vector(data["l"], "process.l"),
            M=_matrix(data["M"], "process.M"),
            Gamma=_matrix(data["Gamma"], "process.Gamma"),
            control=ConstantControl(_vector(data["v"], "process.v")),
            sigma=None if sigma is None else _matrix(sigma, "process.sigma"),
            levy=_parse_levy(data.get("levy")),
        )
    if family == "backward_recurrence":
        _require_keys(data, {"family", "alpha", "i0"}, set(), "process")
        return BackwardRecurrence(
            alpha=_as_float(data["alpha"], "process.alpha"),
            i0=_as_int(data["i0"], "process.i0"),
        )
    if family == "langevin":
        _require_keys(data, {"family", "alpha", "beta"}, {"dim"}, "process")
        return LangevinTempered(
            alpha=_as_float(data["alpha"], "process.alpha"),
            beta=_as_float(data["beta"], "process.beta"),
            dim=_as_int(data.get("dim", 1), "process.dim"),
        )
    raise ConfigError(f"unknown process family {family!r}")


def _jumps_to_dict(kind) -> dict:
    if isinstance(kind, NoJumps):
        return {"kind": "none"}
    if isinstance(kind, CompoundPoisson):
        if not isinstance(kind.jump_dist, DiscreteJumps):
            raise ConfigError("only discrete compound-Poisson jumps are serializable")
        return {
            "kind": "compound_poisson",
            "rate": kind.rate,
            "atoms": kind.jump_dist.atoms.tolist(),
            "probs": kind.jump_dist.probs.tolist(),
        }
    if isinstance(kind, SymmetricStable):
        return {
            "kind": "symmetric_stable",
            "alpha": kind.alpha,
            "scale": kind.scale,
            "structure": kind.structure,
        }
    if isinstance(kind, StableSubordinatorMeasure):
        return {"kind": "stable_subordinator", "alpha": kind.alpha}
    raise ConfigError(f"jump kind {type(kind).__name__} is not serializable")


def _levy_to_dict(levy: LevyMeasureSpec) -> dict:
    return {
        "b_L": None if levy.b_L is None else levy.b_L.tolist(),
        "a_L": None if levy.a_L is None else levy.a_L.tolist(),
        "jumps": _jumps_to_dict(levy.kind),
    }


def process_to_dict(spec) -> dict:
    """The canonical JSON form of a process specification."""
    if isinstance(spec, OUJump):
        return {"family": "ou_jump", "H": spec.H.tolist(), "levy": _levy_to_dict(spec.levy)}
    if isinstance(spec, PiecewiseOU):
        if not isinstance(spec.control, ConstantControl):
            raise ConfigError("only constant controls are serializable")
        if spec.sigma is not None and callable(spec.sigma):
            raise ConfigError("state-dependent sigma is not serializable")
        return {
            "family": "piecewise_ou",
            "l": spec.l.tolist(),
            "M": spec.M.tolist(),
            "Gamma": spec.Gamma.tolist(),
            "v": spec.control.v.tolist(),
            "sigma": None if spec.sigma is None else np.asarray(spec.sigma).tolist(),
            "levy": _levy_to_dict(spec.levy),
        }
    if isinstance(spec, BackwardRecurrence):
        return {"family": "backward_recurrence", "alpha": spec.alpha, "i0": spec.i0}
    if isinstance(spec, LangevinTempered):
        return {
            "family": "langevin",
            "alpha": spec.alpha,
            "beta": spec.beta,
            "dim": spec.dim,
        }
    raise ConfigError(f"process {type(spec).__name__} is not serializable")


# ---------------------------------------------------------------------------
# experiment config parsing
# ---------------------------------------------------------------------------


def _ou_gaussian_params(spec) -> tuple[float, float] | None:
    """(|h|, a) when the invariant law is a known scalar centered Gaussian."""
    if not isinstance(spec, OUJump):
        return None
    if spec.H.shape != (1, 1):
        return None
    levy = spec.levy
    if not isinstance(levy.kind, NoJumps) or levy.a_L is None:
        return None
    if levy.b_L is not None and np.any(levy.b_L != 0.0):
        return None
    h = float(spec.H[0, 0])
    a = float(levy.a_L[0, 0])
    if h >= 0 or a <= 0:
        return None
    return -h, a


def _supports_exact_invariant(spec) -> bool:
    return isinstance(spec, BackwardRecurrence) or _ou_gaussian_params(spec) is not None


def _parse_distance(data) -> DistanceSpec:
    _require_keys(data, {"kind"}, {"epsilon"}, "distance")
    eps = data.get("epsilon")
    return DistanceSpec(kind=data["kind"], epsilon=None if eps is None else _as_float(eps, "epsilon"))


def _parse_reference(data) -> ReferenceSpec:
    _require_keys(data, {"kind"}, {"t_burn", "quantile_points"}, "reference")
    kind = data.get("kind")
    if kind == "exact_invariant" and "t_burn" in data and data["t_burn"] is not None:
        raise ConfigError("exact_invariant takes no t_burn")
    if kind == "long_run_empirical" and "quantile_points" in data:
        raise ConfigError("long_run_empirical takes no quantile_points")
    t_burn = data.get("t_burn")
    kwargs = {}
    if "quantile_points" in data:
        kwargs["quantile_points"] = _as_int(data["quantile_points"], "quantile_points")
    return ReferenceSpec(
        kind=kind,
        t_burn=None if t_burn is None else _as_float(t_burn, "t_burn"),
        **kwargs,
    )


_EXPERIMENT_REQUIRED = {
    "process",
    "x0",
    "t_grid",
    "n_paths",
    "seed",
    "distance",
    "p",
    "reference",
    "rate_model",
}
_EXPERIMENT_OPTIONAL = {"outputs", "bracket", "bracket_params", "max_step"}


def parse_experiment_config(data: dict) -> ExperimentConfig:
    """Validate a JSON experiment description into an :class:`ExperimentConfig`."""
    _require_keys(data, _EXPERIMENT_REQUIRED, _EXPERIMENT_OPTIONAL, "experiment config")
    rate_model = data["rate_model"]
    if rate_model not in ("polynomial", "exponential"):
        raise ConfigError(f"unknown rate model {rate_model!r}")
    process = parse_process(data["process"])
    x0 = _vector(data["x0"], "x0")
    default_kind = "geometric" if rate_model == "polynomial" else "arithmetic"
    t_grid = _resolve_grid(data["t_grid"], default_kind)
    if rate_model == "polynomial" and np.any(t_grid <= 0):
        raise ConfigError("a polynomial rate model requires strictly positive grid times")
    n_paths = _as_int(data["n_paths"], "n_paths")
    if n_paths < 1:
        raise DomainError(f"n_paths must be >= 1, got {n_paths}")
    seed = _as_int(data["seed"], "seed")
    distance = _parse_distance(data["distance"])
    p = _as_float(data["p"], "p")
    if not p >= 1.0:
        raise DomainError(f"p must be >= 1, got {p}")
    reference = _parse_reference(data["reference"])
    if reference.kind == "exact_invariant" and not _supports_exact_invariant(process):
        raise ConfigError(
            "reference 'exact_invariant' requires a process with a known invariant "
            "law (backward recurrence chain, or scalar Gaussian linear diffusion); "
            "use 'long_run_empirical' instead"
        )
    outputs = data.get("outputs")
    if outputs is not None and not isinstance(outputs, str):
        raise ConfigError("outputs must be a directory path string")
    bracket = data.get("bracket")
    if bracket is not None:
        if not (isinstance(bracket, (list, tuple)) and len(bracket) == 2):
            raise ConfigError("bracket must be a [lower_exponent, upper_exponent] pair")
        lo, hi = _as_float(bracket[0], "bracket[0]"), _as_float(bracket[1], "bracket[1]")
        if not lo <= hi:
            raise DomainError(f"bracket must be ordered, got {bracket}")
        bracket = (lo, hi)
    bracket_params = data.get("bracket_params")
    if bracket_params is not None:
        if bracket is None:
            raise ConfigError("bracket_params supplied without a bracket")
        if not isinstance(bracket_params, dict):
            raise ConfigError("bracket_params must be an object")
    max_step = _as_float(data.get("max_step", 0.01), "max_step")
    if not max_step > 0:
        raise DomainError(f"max_step must be positive, got {max_step}")
    return ExperimentConfig(
        process=process,
        x0=tuple(float(v) for v in x0),
        t_grid=tuple(float(v) for v in t_grid),
        n_paths=n_paths,
        seed=seed,
        distance=distance,
        p=p,
        reference=reference,
        rate_model=rate_model,
        outputs=outputs,
        bracket=bracket,
        bracket_params=bracket_params,
        max_step=max_step,
    )


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """The canonical JSON form: parse -> serialize -> parse is the identity."""
    dist = {"kind": cfg.distance.kind}
    if cfg.distance.kind == "sinkhorn":
        dist["epsilon"] = cfg.distance.epsilon
    if cfg.reference.kind == "exact_invariant":
        ref = {"kind": "exact_invariant", "quantile_points": cfg.reference.quantile_points}
    else:
        ref = {"kind": "long_run_empirical", "t_burn": cfg.reference.t_burn}
    return {
        "process": process_to_dict(cfg.process),
        "x0": list(cfg.x0),
        "t_grid": list(cfg.t_grid),
        "n_paths": cfg.n_paths,
        "seed": cfg.seed,
        "distance": dist,
        "p": cfg.p,
        "reference": ref,
        "rate_model": cfg.rate_model,
        "outputs": cfg.outputs,
        "bracket": None if cfg.bracket is None else list(cfg.bracket),
        "bracket_params": cfg.bracket_params,
        "max_step": cfg.max_step,
    }


def config_hash(cfg: ExperimentConfig) -> str:
    """Hash of the experiment content (the output destination is excluded)."""
    payload = config_to_dict(cfg)
    payload.pop("outputs")
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# experiment execution
# ---------------------------------------------------------------------------


def _derive_seed(seed: int, tag: str) -> int:
    digest = hashlib.sha256(f"{seed}|{tag}".encode()).hexdigest()
    return int(digest[:16], 16)


def distance_between(dist: DistanceSpec, mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float) -> float:
    """Dispatch to the estimator selected by ``dist``."""
    if dist.kind == "w1d":
        return w_1d(mu, nu, p)
    if dist.kind == "exact_lp":
        return w_exact_lp(mu, nu, p).distance
    res = sinkhorn_annealed(mu, nu, p, dist.epsilon, max_iter=20000, tol=2e-4)
    return float(res.cost ** (1.0 / p))


def _chain_invariant(spec: BackwardRecurrence) -> EmpiricalMeasure:
    truncation = 1024
    while True:
        try:
            return invariant_exact(spec, truncation)
        except ConfigError:
            if truncation >= _MAX_TRUNCATION:
                raise
            truncation *= 2


def _build_reference(cfg: ExperimentConfig) -> EmpiricalMeasure:
    ref = cfg.reference
    if ref.kind == "exact_invariant":
        if isinstance(cfg.process, BackwardRecurrence):
            return _chain_invariant(cfg.process)
        h_abs, a = _ou_gaussian_params(cfg.process)
        k = ref.quantile_points
        from scipy import stats

        scale = math.sqrt(a / (2.0 * h_abs))
        quantiles = stats.norm.ppf((np.arange(k) + 0.5) / k, loc=0.0, scale=scale)
        return EmpiricalMeasure(points=quantiles[:, None], weights=np.full(k, 1.0 / k))
    burn_grid = np.array([0.0, ref.t_burn])
    batch = simulate(
        cfg.process,
        np.array(cfg.x0),
        burn_grid,
        cfg.n_paths,
        _derive_seed(cfg.seed, "reference"),
        max_step=cfg.max_step,
    )
    return EmpiricalMeasure.from_samples(batch.paths[:, -1, :])


def _noise_floor(cfg: ExperimentConfig, ref: EmpiricalMeasure) -> float:
    """The same-estimator distance between two independent references.

    For a long-run reference this is literally the distance between two
    independent long simulations; for an exact reference it is the distance
    between an ``n_paths``-sample redraw of the invariant law and the law
    itself — the value at which a perfectly converged curve bottoms out.
    """
    if cfg.reference.kind == "long_run_empirical":
        batch = simulate(
            cfg.process,
            np.array(cfg.x0),
            np.array([0.0, cfg.reference.t_burn]),
            cfg.n_paths,
            _derive_seed(cfg.seed, "noise-floor"),
            max_step=cfg.max_step,
        )
        other = EmpiricalMeasure.from_samples(batch.paths[:, -1, :])
    else:
        rng = np.random.default_rng(_derive_seed(cfg.seed, "noise-floor"))
        idx = rng.choice(ref.points.shape[0], size=cfg.n_paths, p=ref.weights)
        other = EmpiricalMeasure.from_samples(ref.points[idx])
    return distance_between(cfg.distance, other, ref, cfg.p)


def _measure_curve(cfg: ExperimentConfig, ref: EmpiricalMeasure) -> np.ndarray:
    grid = np.array(cfg.t_grid)
    offset = 0
    if grid[0] > 0.0:
        grid = np.concatenate(([0.0], grid))
        offset = 1
    batch = simulate(
        cfg.process,
        np.array(cfg.x0),
        grid,
        cfg.n_paths,
        cfg.seed,
        max_step=cfg.max_step,
    )
    dists = np.empty(len(cfg.t_grid))
    for j in range(len(cfg.t_grid)):
        emp = EmpiricalMeasure.from_samples(batch.paths[:, j + offset, :])
        dists[j] = distance_between(cfg.distance, emp, ref, cfg.p)
    return dists


def _experiment_curve(cfg: ExperimentConfig) -> tuple[np.ndarray, np.ndarray, float]:
    ref = _build_reference(cfg)
    floor = _noise_floor(cfg, ref)
    dists = _measure_curve(cfg, ref)
    return np.array(cfg.t_grid), dists, floor


def _write_distances(path: Path, times: np.ndarray, dists: np.ndarray) -> None:
    lines = ["time,distance"]
    lines += [f"{t:.17g},{d:.17g}" for t, d in zip(times, dists)]
    path.write_text("\n".join(lines) + "\n")


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> RateFit:
    """Measure a distance-to-reference curve, fit its decay, write artifacts.

    Writes ``distances.csv`` (before fitting, so the measured curve survives
    a failed fit) and ``summary.json`` into ``out_dir`` (or ``cfg.outputs``);
    identical configurations produce byte-identical CSVs.  Returns the
    :class:`RateFit`; the noise floor is printed and recorded in the summary.
    """
    start = time.perf_counter()
    times, dists, floor = _experiment_curve(cfg)
    target = out_dir if out_dir is not None else cfg.outputs
    out = None
    if target is not None:
        out = Path(target)
        out.mkdir(parents=True, exist_ok=True)
        _write_distances(out / "distances.csv", times, dists)
    print(f"noise floor ({cfg.reference.kind}, p={cfg.p:g}) = {floor:.6g}")
    fit = fit_rate(times, dists, cfg.rate_model, bracket=cfg.bracket, bracket_params=cfg.bracket_params)
    print(
        f"fit[{fit.model}] rate = {fit.rate:.6g}  intercept = {fit.intercept:.6g}  "
        f"r2 = {fit.r_squared:.6g}"
    )
    if out is not None:
        summary = {
            "config_hash": config_hash(cfg),
            "fit": {
                "model": fit.model,
                "rate": fit.rate,
                "intercept": fit.intercept,
                "r_squared": fit.r_squared,
            },
            "bracket": None
            if fit.bracket is None
            else {
                "lower_exponent": fit.bracket[0],
                "upper_exponent": fit.bracket[1],
                "params": fit.bracket_params,
            },
            "noise_floor": floor,
            "runtime_s": time.perf_counter() - start,
        }
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return fit


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------


def _load_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a JSON object")
    return data


def _override_seed(data: dict, seed) -> dict:
    if seed is None:
        return data
    merged = dict(data)
    merged["seed"] = seed
    return merged


def _cmd_simulate(data: dict, out: Path, seed) -> int:
    data = _override_seed(data, seed)
    _require_keys(
        data, {"process", "x0", "t_grid", "n_paths", "seed"}, {"max_step"}, "simulate config"
    )
    spec = parse_process(data["process"])
    grid = _resolve_grid(data["t_grid"], "arithmetic")
    n_paths = _as_int(data["n_paths"], "n_paths")
    max_step = _as_float(data.get("max_step", 0.01), "max_step")
    batch = simulate(
        spec,
        _vector(data["x0"], "x0"),
        grid,
        n_paths,
        _as_int(data["seed"], "seed"),
        max_step=max_step,
    )
    dest = out / "trajectories.csv"
    batch.to_csv(dest)
    print(f"simulated {n_paths} paths at {grid.size} grid times -> {dest}")
    return 0


def _cmd_wdist(data: dict, out: Path, seed) -> int:
    data = _override_seed(data, seed)
    payload = dict(data)
    payload.setdefault("rate_model", "exponential")
    cfg = parse_experiment_config(payload)
    times, dists, floor = _experiment_curve(cfg)
    _write_distances(out / "wdist.csv", times, dists)
    for t, d in zip(times, dists):
        print(f"t = {t:g}: distance = {d:.6g}")
    print(f"noise floor ({cfg.reference.kind}, p={cfg.p:g}) = {floor:.6g}")
    return 0


def _cmd_ratefit(data: dict, out: Path, seed) -> int:
    _require_keys(
        data, {"times", "values", "model"}, {"bracket", "bracket_params"}, "ratefit config"
    )
    bracket = data.get("bracket")
    fit = fit_rate(
        data["times"],
        data["values"],
        data["model"],
        bracket=None if bracket is None else tuple(bracket),
        bracket_params=data.get("bracket_params"),
    )
    result = {
        "model": fit.model,
        "rate": fit.rate,
        "intercept": fit.intercept,
        "r_squared": fit.r_squared,
        "bracket": None if fit.bracket is None else list(fit.bracket),
        "bracket_params": fit.bracket_params,
    }
    (out / "ratefit.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    print(
        f"fit[{fit.model}] rate = {fit.rate:.6g}  intercept = {fit.intercept:.6g}  "
        f"r2 = {fit.r_squared:.6g}"
    )
    print("noise floor: not applicable (externally supplied values)")
    return 0


def _parse_lyapunov(data: dict, dim: int):
    _require_keys(data, {"family"}, {"theta", "zeta", "Q"}, "lyapunov")
    q_mat = np.asarray(data["Q"], dtype=float) if "Q" in data else np.eye(dim)
    qf = QuadForm(q_mat)
    family = data["family"]
    if family == "poly":
        return PolyNorm(qf, _as_float(data["theta"], "lyapunov.theta"))
    if family == "poly_plus_one":
        return PolyNormPlusOne(qf, _as_float(data["theta"], "lyapunov.theta"))
    if family == "exp":
        return ExpNorm(qf, _as_float(data["zeta"], "lyapunov.zeta"))
    raise ConfigError(f"unknown lyapunov family {family!r}")


def _parse_phi(data: dict):
    _require_keys(data, {"family"}, {"kappa", "prefactor", "c_hat"}, "phi")
    family = data["family"]
    if family == "power":
        return PowerPhi(
            kappa=_as_float(data["kappa"], "phi.kappa"),
            prefactor=_as_float(data.get("prefactor", 1.0), "phi.prefactor"),
        )
    if family == "linear":
        return LinearPhi(c_hat=_as_float(data["c_hat"], "phi.c_hat"))
    raise ConfigError(f"unknown phi family {family!r}")


def _generator_for(spec) -> GeneratorSpec:
    if isinstance(spec, LangevinTempered):
        def drift(x):
            return langevin_coeffs(spec, x)[0]

        def diffusion(x):
            sig = langevin_coeffs(spec, x)[1]
            return np.diag(np.atleast_1d(sig) ** 2)

        return GeneratorSpec(b=drift, a=diffusion)
    if isinstance(spec, OUJump):
        return GeneratorSpec(b=lambda x: spec.H @ x, a=None, levy=spec.levy)
    raise ConfigError(
        f"driftcheck supports the langevin and ou_jump families, got {type(spec).__name__}"
    )


def _cmd_driftcheck(data: dict, out: Path, seed) -> int:
    data = _override_seed(data, seed) if "seed" in data or seed is not None else data
    _require_keys(
        data,
        {"process", "lyapunov", "phi", "grid", "ball_radius"},
        {"jump_mc_samples", "seed"},
        "driftcheck config",
    )
    spec = parse_process(data["process"])
    gen = _generator_for(spec)
    dim = getattr(spec, "dim", None) or spec.H.shape[0]
    fn = _parse_lyapunov(data["lyapunov"], dim)
    phi = _parse_phi(data["phi"])
    grid_obj = data["grid"]
    if isinstance(grid_obj, dict):
        _require_keys(grid_obj, {"lo", "hi", "points"}, set(), "grid")
        grid = np.linspace(
            _as_float(grid_obj["lo"], "grid.lo"),
            _as_float(grid_obj["hi"], "grid.hi"),
            _as_int(grid_obj["points"], "grid.points"),
        )
    else:
        grid = np.asarray(grid_obj, dtype=float)
    report = drift_check(
        gen,
        fn,
        phi,
        grid,
        ball_radius=_as_float(data["ball_radius"], "ball_radius"),
        jump_mc_samples=_as_int(data.get("jump_mc_samples", 20000), "jump_mc_samples"),
        seed=_as_int(data.get("seed", 0), "seed"),
    )
    report.to_csv(out / "driftcheck.csv")
    print(
        f"b = {report.b:.6g}; worst margin outside ball = {report.worst_margin:.6g} "
        f"({'certified' if report.worst_margin >= 0 else 'violated'})"
    )
    return 0


def _cmd_couple(data: dict, out: Path, seed) -> int:
    data = _override_seed(data, seed)
    _require_keys(
        data,
        {"process", "x", "y", "t_grid", "n_paths", "seed", "p"},
        {"max_step", "n_boot", "certificate"},
        "couple config",
    )
    spec = parse_process(data["process"])
    p = _as_float(data["p"], "p")
    run_seed = _as_int(data["seed"], "seed")
    pairs = synchronous_pair_sim(
        spec,
        _vector(data["x"], "x"),
        _vector(data["y"], "y"),
        _resolve_grid(data["t_grid"], "arithmetic"),
        _as_int(data["n_paths"], "n_paths"),
        run_seed,
        max_step=_as_float(data.get("max_step", 0.01), "max_step"),
    )
    params = None
    cert = data.get("certificate")
    if cert is not None:
        if not isinstance(spec, PiecewiseOU):
            raise ConfigError("contraction certificates apply to the piecewise_ou family")
        _require_keys(cert, {"lip_sqrtq_sigma"}, {"Q"}, "certificate")
        if "Q" in cert:
            q = QuadForm(_matrix(cert["Q"], "certificate.Q"))
        else:
            q = find_q(spec.M, spec.Gamma, spec.control.v)
            if isinstance(q, NotFound):
                raise NotDissipativeError(
                    f"no diagonal quadratic form certifies dissipativity: {q.reason}"
                )
        c_p = prop35_cp(
            spec.M,
            spec.Gamma,
            spec.control.v,
            q,
            _as_float(cert["lip_sqrtq_sigma"], "lip_sqrtq_sigma"),
            p,
        )
        if c_p <= 0:
            raise NotDissipativeError(
                f"certificate constant c(p) = {c_p:.6g} is not positive; the "
                "synchronous coupling has no guaranteed contraction at this order"
            )
        params = DissipativityParams(q=q, p=p, c_p=c_p)
        print(f"c(p) = {c_p:.6g} at p = {p:g}")
    report = contraction_estimate(
        pairs,
        p,
        params=params,
        n_boot=_as_int(data.get("n_boot", 200), "n_boot"),
        seed=_derive_seed(run_seed, "bootstrap"),
    )
    report.to_csv(out / "couple.csv")
    print(
        f"fitted decay rate = {report.fitted_rate:.6g}; envelope violations = "
        f"{report.violations}"
    )
    return 0


def _cmd_lower(data: dict, out: Path, seed) -> int:
    _require_keys(
        data,
        {"process", "params", "c", "b", "x0", "n_terms", "s_grid"},
        {"truncation", "lipschitz", "lyapunov_exponent"},
        "lower config",
    )
    spec = parse_process(data["process"])
    if not isinstance(spec, BackwardRecurrence):
        raise ConfigError("the lower-bound construction applies to backward_recurrence")
    trunc = data.get("truncation", "auto")
    if trunc == "auto":
        pi = _chain_invariant(spec)
    else:
        pi = invariant_exact(spec, _as_int(trunc, "truncation"))
    par = data["params"]
    _require_keys(
        par, {"theta", "vartheta", "eps_var", "eps_small", "p"}, set(), "lower params"
    )
    params = LowerRateParams(
        theta=_as_float(par["theta"], "theta"),
        vartheta=_as_float(par["vartheta"], "vartheta"),
        eps_var=_as_float(par["eps_var"], "eps_var"),
        eps_small=_as_float(par["eps_small"], "eps_small"),
        p=_as_float(par["p"], "p"),
    )
    theta_v = _as_float(data.get("lyapunov_exponent", params.theta), "lyapunov_exponent")
    lip = _as_float(data.get("lipschitz", 1.0), "lipschitz")
    inst = LowerBoundInstance(
        pi=pi,
        L=LipschitzFn(fn=lambda pts: np.abs(np.asarray(pts, dtype=float)[:, 0]), lip=lip),
        lyapunov=lambda x: 1.0 + float(np.abs(np.asarray(x, dtype=float).ravel()[0])) ** theta_v,
        c=_as_float(data["c"], "c"),
        b=_as_float(data["b"], "b"),
        params=params,
        x0=_vector(data["x0"], "x0"),
    )
    s_obj = data["s_grid"]
    if isinstance(s_obj, dict):
        _require_keys(s_obj, {"min", "max", "points"}, set(), "s_grid")
        s_grid = np.geomspace(
            _as_float(s_obj["min"], "s_grid.min"),
            _as_float(s_obj["max"], "s_grid.max"),
            _as_int(s_obj["points"], "s_grid.points"),
        )
    else:
        s_grid = _vector(s_obj, "s_grid")
    curve = lower_bound_curve(inst, _as_int(data["n_terms"], "n_terms"), s_grid=s_grid)
    curve.to_csv(out / "lower.csv")
    print(
        f"{curve.s.size} qualifying levels; matched times in "
        f"[{curve.t.min():.6g}, {curve.t.max():.6g}]"
    )
    return 0


def _cmd_subordinate(data: dict, out: Path, seed) -> int:
    data = _override_seed(data, seed)
    _require_keys(
        data, {"rate", "p", "subordinator", "t", "n_mc", "seed"}, {"b_s"}, "subordinate config"
    )
    rate_obj = data["rate"]
    _require_keys(rate_obj, {"kind"}, {"gamma", "exponent", "scale"}, "rate")
    if rate_obj["kind"] == "exponential":
        r = Exponential(
            gamma=_as_float(rate_obj["gamma"], "rate.gamma"),
            scale=_as_float(rate_obj.get("scale", 1.0), "rate.scale"),
        )
    elif rate_obj["kind"] == "polynomial":
        r = Polynomial(
            exponent=_as_float(rate_obj["exponent"], "rate.exponent"),
            scale=_as_float(rate_obj.get("scale", 1.0), "rate.scale"),
        )
    else:
        raise ConfigError(f"unknown rate kind {rate_obj['kind']!r}")
    sub_obj = data["subordinator"]
    _require_keys(sub_obj, {"kind"}, {"alpha", "a", "b_hat"}, "subordinator")
    if sub_obj["kind"] == "stable":
        kind = StableSub(alpha=_as_float(sub_obj["alpha"], "subordinator.alpha"))
    elif sub_obj["kind"] == "gamma":
        kind = GammaSub(
            a=_as_float(sub_obj["a"], "subordinator.a"),
            b_hat=_as_float(sub_obj["b_hat"], "subordinator.b_hat"),
        )
    elif sub_obj["kind"] == "drift_only":
        kind = DriftOnly()
    else:
        raise ConfigError(f"unknown subordinator kind {sub_obj['kind']!r}")
    spec = SubordinatorSpec(kind=kind, b_S=_as_float(data.get("b_s", 0.0), "b_s"))
    p = _as_float(data["p"], "p")
    n_mc = _as_int(data["n_mc"], "n_mc")
    run_seed = _as_int(data["seed"], "seed")
    times = _vector(data["t"], "t")
    lines = ["t,value,ci_lo,ci_hi,se"]
    for k, t in enumerate(times):
        est = subordinate_rate(r, p, spec, float(t), n_mc, _derive_seed(run_seed, f"subordinate-{k}"))
        lines.append(
            f"{t:.17g},{est.value:.17g},{est.ci_lo:.17g},{est.ci_hi:.17g},{est.se:.17g}"
        )
        print(f"t = {t:g}: r_psi = {est.value:.6g}  [{est.ci_lo:.6g}, {est.ci_hi:.6g}]")
    (out / "subordinate.csv").write_text("\n".join(lines) + "\n")
    return 0


def _cmd_experiment(data: dict, out: Path, seed) -> int:
    data = _override_seed(data, seed)
    cfg = parse_experiment_config(data)
    run_experiment(cfg, out_dir=out)
    return 0


_HANDLERS = {
    "simulate": (_cmd_simulate, "simulate trajectories and write them as CSV"),
    "wdist": (_cmd_wdist, "measure a distance-to-reference curve (no fit)"),
    "experiment": (_cmd_experiment, "full experiment: curve, fit, summary"),
    "driftcheck": (_cmd_driftcheck, "certify a drift inequality on a grid"),
    "couple": (_cmd_couple, "synchronous-coupling contraction estimate"),
    "lower": (_cmd_lower, "explicit Wasserstein lower-bound curve"),
    "subordinate": (_cmd_subordinate, "Monte Carlo time-changed rate profile"),
    "ratefit": (_cmd_ratefit, "fit a decay model to external (t, value) data"),
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ergolab",
        description="Numerical laboratory for Markov-process convergence rates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, desc) in _HANDLERS.items():
        sp = sub.add_parser(name, help=desc)
        sp.add_argument("--config", required=True, help="path to a JSON configuration file")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out-dir", default=".", help="directory for output artifacts")
        sp.add_argument(
            "--threads",
            type=int,
            default=1,
            help="reserved for future parallel backends (currently single-threaded)",
        )
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    handler, _ = _HANDLERS[args.command]
    try:
        data = _load_config(args.config)
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        return handler(data, out, args.seed)
    except (ConfigError, DomainError, SizeError, InsufficientPathsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ErgoLabError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
