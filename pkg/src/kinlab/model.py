"""Microscopic model definition: state space, jump kernels, initial data.

Entities carry a combined label e = (species j, micro-state u) flattened
species-major into one axis of size M * |grid|.  All integrals of the
continuous theory become quadrature sums with per-point weights, so every
identity downstream is exact finite algebra.
"""

from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .sectors import SectorFunction, SequenceState, integrate_env_slots

__all__ = [
    "ConfigError",
    "ValidationError",
    "MicroGrid",
    "ModelSpec",
    "KernelReport",
    "CorrelationProfile",
    "ExperimentConfig",
    "builtin_kernel",
    "validate_kernel",
    "load_model",
    "load_model_file",
    "build_initial_state",
    "tiny_model",
]

KERNEL_TOL = 1e-12


class ConfigError(ValueError):
    """Malformed configuration document."""


class ValidationError(ValueError):
    """A model invariant is violated; message names the offending key."""


@dataclass(frozen=True)
class MicroGrid:
    """Finite micro-state grid with positive quadrature weights."""

    points: tuple
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(self.points) < 1:
            raise ValidationError("grid: at least one point required")
        if w.shape != (len(self.points),):
            raise ValidationError("grid: weights must match points")
        if not np.all(w > 0):
            raise ValidationError("grid: weights must be positive")
        w.setflags(write=False)
        object.__setattr__(self, "points", tuple(self.points))
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.points)


def builtin_kernel(name: str, n_args: int, n_states: int, weights: np.ndarray) -> np.ndarray:
    """Named transition kernels A(v; u_1..u_m), target axis first.

    'uniform' spreads mass evenly over the weighted grid; 'copy' moves the
    jumping entity onto the state of the last argument (the catalyst for
    pair and interaction kernels, itself for one-body kernels).
    """
    total = float(np.sum(weights))
    shape = (n_states,) * (1 + n_args)
    if name == "uniform":
        return np.full(shape, 1.0 / total)
    if name == "copy":
        kern = np.zeros(shape)
        idx = np.arange(n_states)
        if n_args == 1:
            kern[idx, idx] = 1.0 / weights
        elif n_args == 2:
            for cat in idx:
                kern[cat, :, cat] = 1.0 / weights[cat]
        else:
            raise ConfigError(f"copy kernel undefined for {n_args} arguments")
        return kern
    raise ConfigError(f"unknown kernel built-in {name!r}")


@dataclass(frozen=True)
class KernelReport:
    passed: bool
    max_deviation: float


def _kernel_row_masses(kernel: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return np.tensordot(weights, kernel, axes=([0], [0]))


def validate_kernel(kernel: np.ndarray, grid: MicroGrid, m: int = 1) -> KernelReport:
    """Check the normalization sum_v w(v) A(v; args) = 1 for every argument tuple."""
    n = m * len(grid)
    if kernel.shape[0] != n:
        raise ValidationError("kernel: shape mismatch against grid")
    weights = np.tile(grid.weights, m)
    masses = _kernel_row_masses(kernel, weights)
    dev = float(np.max(np.abs(masses - 1.0))) if masses.size else 0.0
    return KernelReport(passed=dev <= KERNEL_TOL, max_deviation=dev)


@dataclass(frozen=True)
class ModelSpec:
    """Rates a^[m], transition kernels A^[m], coupling eps, truncation cap.

    Rates are nonnegative arrays over their argument tuples, kernels are
    nonnegative arrays over (target, arguments) normalized against the
    quadrature weights.
    """

    m: int
    grid: MicroGrid
    eps: float
    rate_tracer: np.ndarray = field(repr=False)
    rate_env1: np.ndarray = field(repr=False)
    rate_env2: np.ndarray = field(repr=False)
    rate_int: np.ndarray = field(repr=False)
    kernel_tracer: np.ndarray = field(repr=False)
    kernel_env1: np.ndarray = field(repr=False)
    kernel_env2: np.ndarray = field(repr=False)
    kernel_int: np.ndarray = field(repr=False)
    n_max: int = 2

    def __post_init__(self):
        if self.m < 1:
            raise ValidationError("m: species count must be >= 1")
        if self.n_max < 0:
            raise ValidationError("n_max: must be >= 0")
        if not self.eps >= 0:
            raise ValidationError("eps: coupling must be >= 0")
        n = self.n_states
        rate_shapes = {
            "rate_tracer": (n,),
            "rate_env1": (n,),
            "rate_env2": (n, n),
            "rate_int": (n, n),
        }
        for key, shape in rate_shapes.items():
            arr = np.asarray(getattr(self, key), dtype=float)
            if arr.shape != shape:
                raise ValidationError(f"{key}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{key}: rate positivity (non-finite entry)")
            if np.any(arr < 0):
                raise ValidationError(f"{key}: rate positivity")
            arr.setflags(write=False)
            object.__setattr__(self, key, arr)
        kernel_args = {
            "kernel_tracer": 1,
            "kernel_env1": 1,
            "kernel_env2": 2,
            "kernel_int": 2,
        }
        for key, n_args in kernel_args.items():
            arr = np.asarray(getattr(self, key), dtype=float)
            if arr.shape != (n,) * (1 + n_args):
                raise ValidationError(f"{key}: expected {1 + n_args} axes of size {n}")
            if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                raise ValidationError(f"{key}: kernel positivity")
            report = validate_kernel(arr, self.grid, self.m)
            if not report.passed:
                raise ValidationError(
                    f"{key}: kernel normalization (max deviation {report.max_deviation:.3e})"
                )
            arr.setflags(write=False)
            object.__setattr__(self, key, arr)

    @property
    def n_states(self) -> int:
        return self.m * len(self.grid)

    @property
    def weights(self) -> np.ndarray:
        """Quadrature weight per combined (species, micro) state."""
        return np.tile(self.grid.weights, self.m)

    @property
    def key(self) -> str:
        """Stable content hash, used for caching and result metadata."""
        h = hashlib.sha256()
        h.update(f"{self.m}|{self.eps!r}|{self.n_max}".encode())
        h.update(np.asarray(self.grid.weights).tobytes())
        for arr in (
            self.rate_tracer, self.rate_env1, self.rate_env2, self.rate_int,
            self.kernel_tracer, self.kernel_env1, self.kernel_env2, self.kernel_int,
        ):
            h.update(np.asarray(arr).tobytes())
        return h.hexdigest()[:16]

    def with_eps(self, eps: float) -> "ModelSpec":
        return ModelSpec(
            m=self.m, grid=self.grid, eps=eps,
            rate_tracer=self.rate_tracer, rate_env1=self.rate_env1,
            rate_env2=self.rate_env2, rate_int=self.rate_int,
            kernel_tracer=self.kernel_tracer, kernel_env1=self.kernel_env1,
            kernel_env2=self.kernel_env2, kernel_int=self.kernel_int,
            n_max=self.n_max,
        )


@dataclass(frozen=True)
class CorrelationProfile:
    """Initial data: tracer distribution, environment marginals, correlations.

    g[n] is the tracer-environment correlation function on 1+n slots
    (g[0] identically 1); env_reduced[n] is the n-entity environment
    reduced distribution (env_reduced[0] is the scalar 1).
    """

    tracer0: np.ndarray = field(repr=False)
    env_reduced: tuple = field(repr=False)
    g: tuple = field(repr=False)

    def __post_init__(self):
        tr = np.asarray(self.tracer0, dtype=float)
        if np.any(tr < 0):
            raise ValidationError("tracer0: entries must be >= 0")
        tr.setflags(write=False)
        object.__setattr__(self, "tracer0", tr)
        env = tuple(np.asarray(a, dtype=float) for a in self.env_reduced)
        gs = tuple(np.asarray(a, dtype=float) for a in self.g)
        if len(env) != len(gs):
            raise ValidationError("profile: g and env_reduced must cover the same arities")
        if not np.allclose(gs[0], 1.0, atol=1e-15):
            raise ValidationError("g: g_(1+0) must be identically 1")
        for n, (e, gg) in enumerate(zip(env, gs)):
            if e.ndim != n or gg.ndim != n + 1:
                raise ValidationError(f"profile: arity mismatch at n={n}")
            if not (np.all(np.isfinite(e)) and np.all(np.isfinite(gg))):
                raise ValidationError(f"profile: non-finite data at n={n}")
            e.setflags(write=False)
            gg.setflags(write=False)
        object.__setattr__(self, "env_reduced", env)
        object.__setattr__(self, "g", gs)

    @property
    def n_max(self) -> int:
        return len(self.g) - 1

    @property
    def key(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.tracer0).tobytes())
        for arr in self.g:
            h.update(b"g")
            h.update(np.asarray(arr).tobytes())
        for arr in self.env_reduced:
            h.update(b"e")
            h.update(np.asarray(arr).tobytes())
        return h.hexdigest()[:16]

    def validate_normalization(self, weights: np.ndarray, tol: float = 1e-12):
        mass = float(np.dot(weights, self.tracer0))
        if abs(mass - 1.0) > tol:
            raise ValidationError(f"tracer0: normalization (mass {mass!r})")

    def chain_sector(self, n: int) -> np.ndarray:
        """The correlated initial sector g_(1+n) * F0_(0+n) * F0_(1+0)."""
        shape_env = self.env_reduced[n]
        env_full = shape_env if n > 0 else np.asarray(1.0)
        out = self.g[n] * self.tracer0.reshape((-1,) + (1,) * n)
        if n > 0:
            out = out * env_full[np.newaxis, ...]
        return out

    def chain_sequence(self, n_max: int | None = None) -> SequenceState:
        """The correlated reduced sequence (tracer, g*F_env*F_tracer, ...)."""
        cap = self.n_max if n_max is None else min(n_max, self.n_max)
        secs = [SectorFunction(n, self.chain_sector(n)) for n in range(cap + 1)]
        return SequenceState(tuple(secs), kind="distribution")

    @staticmethod
    def factorized(model: ModelSpec, tracer0, env1, g_pair: np.ndarray | None = None,
                   n_max: int | None = None) -> "CorrelationProfile":
        """Profile with product environment marginals and optional pair correlation.

        g_pair, when given, sets g_(1+1); higher correlation functions stay 1.
        """
        cap = model.n_max if n_max is None else n_max
        tracer0 = np.asarray(tracer0, dtype=float)
        env1 = np.asarray(env1, dtype=float)
        n = model.n_states
        env_reduced = [np.asarray(1.0)]
        gs = [np.ones(n)]
        for k in range(1, cap + 1):
            prod = env1
            for _ in range(k - 1):
                prod = np.multiply.outer(prod, env1)
            env_reduced.append(prod)
            if k == 1 and g_pair is not None:
                gs.append(np.asarray(g_pair, dtype=float))
            else:
                gs.append(np.ones((n,) * (k + 1)))
        return CorrelationProfile(tracer0=tracer0, env_reduced=tuple(env_reduced), g=tuple(gs))


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec
    profile: CorrelationProfile
    activity: float
    t_max: float
    dt: float
    series_order: int
    mc_trajectories: int
    seed: int
    out_dir: str
    out_format: str

    def __post_init__(self):
        if not self.t_max > 0:
            raise ValidationError("t_max: must be > 0")
        if not self.dt > 0:
            raise ValidationError("dt: must be > 0")
        if self.series_order < 0:
            raise ValidationError("series_order: must be >= 0")
        if self.mc_trajectories < 0:
            raise ValidationError("mc_trajectories: must be >= 0")
        if self.series_order > self.model.n_max:
            raise ValidationError("series_order: must not exceed n_max")
        if not self.activity > 0:
            raise ValidationError("activity: must be > 0")
        if self.out_format not in ("csv", "json"):
            raise ValidationError("format: must be csv or json")

    @property
    def key(self) -> str:
        h = hashlib.sha256()
        h.update(self.model.key.encode())
        h.update(np.asarray(self.profile.tracer0).tobytes())
        for arr in self.profile.g:
            h.update(np.asarray(arr).tobytes())
        for arr in self.profile.env_reduced:
            h.update(np.asarray(arr).tobytes())
        h.update(
            f"{self.activity!r}|{self.t_max!r}|{self.dt!r}|{self.series_order}"
            f"|{self.mc_trajectories}|{self.seed}".encode()
        )
        return h.hexdigest()[:16]


def _parse_floats(text: str) -> np.ndarray:
    try:
        return np.array([float(tok) for tok in text.replace(",", " ").split()])
    except ValueError as exc:
        raise ConfigError(f"could not parse numeric list {text!r}") from exc


def _parse_rate(value: str, shape: tuple) -> np.ndarray:
    value = value.strip()
    if value.startswith("constant:"):
        return np.full(shape, float(value.split(":", 1)[1]))
    flat = _parse_floats(value)
    if flat.size == 1:
        return np.full(shape, float(flat[0]))
    if flat.size != int(np.prod(shape)):
        raise ConfigError(f"rate table has {flat.size} entries, expected {int(np.prod(shape))}")
    return flat.reshape(shape)


def _parse_kernel(value: str, n_args: int, n_states: int, weights: np.ndarray) -> np.ndarray:
    value = value.strip()
    if value in ("uniform", "copy"):
        return builtin_kernel(value, n_args, n_states, weights)
    if value.startswith("constant:"):
        return np.full((n_states,) * (1 + n_args), float(value.split(":", 1)[1]))
    flat = _parse_floats(value)
    want = n_states ** (1 + n_args)
    if flat.size != want:
        raise ConfigError(f"kernel table has {flat.size} entries, expected {want}")
    # human layout: one row per argument tuple, columns over targets
    rows = flat.reshape((n_states,) * n_args + (n_states,))
    return np.moveaxis(rows, -1, 0)


def load_model(config_text: str) -> ExperimentConfig:
    """Parse and validate an experiment configuration document.

    Sections [model], [initial], [run], [output]; see README for keys.
    Raises ConfigError on malformed documents and ValidationError with the
    offending key when an invariant fails.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(config_text)
    except configparser.Error as exc:
        raise ConfigError(f"parse error: {exc}") from exc
    for section in ("model", "initial", "run"):
        if section not in parser:
            raise ConfigError(f"missing section [{section}]")
    sec_m = parser["model"]
    sec_i = parser["initial"]
    sec_r = parser["run"]
    sec_o = parser["output"] if "output" in parser else {}

    try:
        m = sec_m.getint("m", fallback=sec_m.getint("species_count", fallback=1))
        n_points = sec_m.getint("grid_points")
        if n_points is None:
            raise ConfigError("missing key grid_points")
        weights_text = sec_m.get("grid_weights", fallback=None)
        weights = _parse_floats(weights_text) if weights_text else np.ones(n_points)
        grid = MicroGrid(points=tuple(range(n_points)), weights=weights)
        n_states = m * n_points
        eps = sec_m.getfloat("eps", fallback=0.0)
        n_max = sec_m.getint("n_max", fallback=2)
        model = ModelSpec(
            m=m, grid=grid, eps=eps, n_max=n_max,
            rate_tracer=_parse_rate(sec_m.get("rate_tracer", "1.0"), (n_states,)),
            rate_env1=_parse_rate(sec_m.get("rate_env1", "1.0"), (n_states,)),
            rate_env2=_parse_rate(sec_m.get("rate_env2", "1.0"), (n_states, n_states)),
            rate_int=_parse_rate(sec_m.get("rate_int", "1.0"), (n_states, n_states)),
            kernel_tracer=_parse_kernel(sec_m.get("kernel_tracer", "uniform"), 1, n_states, np.tile(weights, m)),
            kernel_env1=_parse_kernel(sec_m.get("kernel_env1", "uniform"), 1, n_states, np.tile(weights, m)),
            kernel_env2=_parse_kernel(sec_m.get("kernel_env2", "uniform"), 2, n_states, np.tile(weights, m)),
            kernel_int=_parse_kernel(sec_m.get("kernel_int", "uniform"), 2, n_states, np.tile(weights, m)),
        )
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc

    w = model.weights
    tracer_text = sec_i.get("tracer0", "uniform").strip()
    if tracer_text == "uniform":
        tracer0 = np.full(n_states, 1.0 / np.sum(w))
    else:
        tracer0 = _parse_floats(tracer_text)
    env_text = sec_i.get("env1", "uniform").strip()
    if env_text == "uniform":
        env1 = np.full(n_states, 1.0 / np.sum(w))
    else:
        env1 = _parse_floats(env_text)
    g_text = sec_i.get("g", "chaos").strip()
    g_pair = None
    if g_text.startswith("sigma:"):
        gamma = float(g_text.split(":", 1)[1])
        sigma = np.array([1.0 if i % 2 == 0 else -1.0 for i in range(n_states)])
        g_pair = 1.0 + gamma * np.multiply.outer(sigma, sigma)
    elif g_text != "chaos":
        flat = _parse_floats(g_text)
        if flat.size != n_states * n_states:
            raise ConfigError("g: inline table must cover the (tracer, env) pair sector")
        g_pair = flat.reshape(n_states, n_states)
    # carry correlation sectors beyond n_max so state functionals stay in range
    profile = CorrelationProfile.factorized(model, tracer0, env1, g_pair=g_pair,
                                            n_max=model.n_max + 2)
    profile.validate_normalization(w)

    config = ExperimentConfig(
        model=model,
        profile=profile,
        activity=sec_i.getfloat("activity", fallback=1.0),
        t_max=sec_r.getfloat("t_max", fallback=1.0),
        dt=sec_r.getfloat("dt", fallback=1e-3),
        series_order=sec_r.getint("series_order", fallback=min(1, n_max)),
        mc_trajectories=sec_r.getint("mc_trajectories", fallback=0),
        seed=sec_r.getint("seed", fallback=0),
        out_dir=sec_o.get("dir", "results") if sec_o else "results",
        out_format=sec_o.get("format", "csv") if sec_o else "csv",
    )
    return config


def load_model_file(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return load_model(fh.read())


def build_initial_state(profile: CorrelationProfile, model: ModelSpec,
                        z: float = 1.0) -> tuple[SequenceState, SequenceState]:
    """Construct the full ensemble D(0) and its reduced sequence.

    D_(1+n) = z^n * g_(1+n) * F0_(0+n) * F0_(1+0), zero above n_max; the
    reduced sectors are then computed exactly from D(0) by the truncated
    reduction sums, so the pair is self-consistent by construction.
    """
    if z <= 0:
        raise ValidationError("activity: z must be > 0")
    if profile.n_max < model.n_max:
        raise ValidationError("profile: fewer correlation sectors than model n_max")
    w = model.weights
    full = []
    for n in range(model.n_max + 1):
        full.append(SectorFunction(n, (z ** n) * profile.chain_sector(n)))
    ensemble = SequenceState(tuple(full), kind="distribution")
    norm = ensemble.partition_norm(w)
    if norm <= 0:
        raise ValidationError("ensemble: zero partition norm")
    reduced = []
    for s in range(model.n_max + 1):
        acc = np.zeros((model.n_states,) * (1 + s))
        for n in range(model.n_max - s + 1):
            acc += integrate_env_slots(full[s + n].data, w, s) / math.factorial(n)
        reduced.append(SectorFunction(s, acc / norm))
    return ensemble, SequenceState(tuple(reduced), kind="distribution")


def tiny_model(eps: float = 0.0, n_max: int = 2, kernel_int: str = "uniform",
               rate_env2: float = 1.0) -> ModelSpec:
    """The two-state reference model: one species, unit weights, unit rates."""
    grid = MicroGrid(points=(0, 1), weights=np.ones(2))
    n = 2
    w = np.ones(2)
    return ModelSpec(
        m=1, grid=grid, eps=eps, n_max=n_max,
        rate_tracer=np.ones(n), rate_env1=np.ones(n),
        rate_env2=np.full((n, n), rate_env2), rate_int=np.ones((n, n)),
        kernel_tracer=builtin_kernel("uniform", 1, n, w),
        kernel_env1=builtin_kernel("uniform", 1, n, w),
        kernel_env2=builtin_kernel("uniform", 2, n, w),
        kernel_int=builtin_kernel(kernel_int, 2, n, w),
    )
