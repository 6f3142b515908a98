"""The state picture: correlated reduced distributions and the kinetic equation.

The tracer's reduced distribution is a series over environment-particle
number whose generating operators are dual-semigroup cumulants dressed with
the initial correlations; the state functionals rebuild higher sectors from
the tracer distribution alone, and the generalized Fokker-Planck right-hand
side closes the evolution with a collision integral over the pair functional.

Two routes compute the state functionals:

* 'scattering' follows the generating-operator expansion literally
  (scattering cumulants, inverse one-entity semigroups, dissection sums);
* 'resolvent' reconstructs the initial tracer data by inverting the
  truncated series map and re-expands the correlated sectors, which makes
  the kinetic-equation identity exact at matched truncation order.

The duality test selects the shipped defaults; both routes stay available.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .combinatorics import cumulant_matrix, enumerate_dissections
from .hierarchy import dual_bbgky_solution
from .model import CorrelationProfile, ModelSpec
from .operators import TRACER, one_slot_term, workspace_for
from .sectors import (
    SectorFunction,
    SequenceState,
    embed_env_vector,
    embed_with_slots,
    integrate_env_slots,
    sector_inner,
)

__all__ = [
    "TracerDistribution",
    "DualityReport",
    "KineticEngine",
    "engine_for",
    "scattering_cumulant",
    "generating_V",
    "reduced_distribution",
    "state_functional",
    "duality_check",
    "fp_rhs",
    "integrate_fp",
    "DEFAULT_VARIANT",
    "DEFAULT_HOSTS",
]

log = logging.getLogger(__name__)

# Frozen by the duality acceptance test; see README and tests/test_kinetic.py.
# Variant A attaches free-evolved one-entity environment factors to the
# functional input; hosts 'both' lets the subtraction terms of the
# generating operators anchor on the tracer as well as environment slots.
DEFAULT_VARIANT = "A"
DEFAULT_HOSTS = "both"

RENORM_TOL = 1e-12


@dataclass(frozen=True)
class TracerDistribution:
    """Tracer reduced distribution at one instant."""

    values: np.ndarray = field(repr=False)
    t: float = 0.0
    mass_drift: float = 0.0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class DualityReport:
    t: float
    order: int
    eps: float
    lhs: float
    rhs: float

    @property
    def abs_residual(self) -> float:
        return abs(self.lhs - self.rhs)

    @property
    def rel_residual(self) -> float:
        scale = max(abs(self.lhs), abs(self.rhs), 1e-300)
        return self.abs_residual / scale


class KineticEngine:
    """Operator factory bound to one (model, profile) pair.

    Time-dependent operators are memoized by t; the cache is read-mostly
    and safe to share once warm.
    """

    def __init__(self, model: ModelSpec, profile: CorrelationProfile):
        if profile.n_max < model.n_max:
            raise ValueError("profile carries fewer correlation sectors than the model n_max")
        self.model = model
        self.profile = profile
        self.ws = workspace_for(model)
        self._scatter_cache: dict = {}
        self._v_cache: dict = {}
        self._series_cache: dict = {}
        self._rhs_cache: dict = {}

    # -- building blocks ---------------------------------------------------

    def _one_slot_inverse(self, sector: int, slot: int, t: float) -> np.ndarray:
        return self.ws.semigroup(sector, frozenset({slot}), -t, "dual")

    def _g_embedded(self, cluster_slots, single_slots, sector: int) -> np.ndarray:
        """Correlation factor for a scattering cumulant on the working sector.

        Tracer-anchored clusters multiply by g on their slots; clusters
        anchored at an environment entity carry no correlation data.
        """
        cluster = tuple(cluster_slots)
        singles = tuple(single_slots)
        n = self.model.n_states
        if TRACER not in cluster:
            return np.ones((n,) * (sector + 1))
        env_slots = tuple(sl for sl in cluster if sl != TRACER) + singles
        g = self.profile.g[len(env_slots)]
        return embed_with_slots(g, sector, env_slots)

    def scattering_op(self, t: float, cluster_slots, single_slots, sector: int) -> np.ndarray:
        """Scattering cumulant on the (1+sector)-slot space.

        Dual cumulant of the cluster and singles, composed with
        multiplication by the initial correlation on those slots and the
        inverse free one-entity evolutions of every participating slot.
        """
        cluster = frozenset(cluster_slots)
        singles = tuple(sorted(single_slots))
        key = (float(t), cluster, singles, sector)
        cached = self._scatter_cache.get(key)
        if cached is not None:
            return cached
        labels = [cluster] + [frozenset({j}) for j in singles]
        op = cumulant_matrix(self.model, t, labels, sector, "dual")
        gfac = self._g_embedded(cluster, singles, sector)
        op = op @ np.diag(gfac.reshape(-1))
        for slot in sorted(cluster | set(singles)):
            op = op @ self._one_slot_inverse(sector, slot, t)
        self._scatter_cache[key] = op
        return op

    def _host_slots(self, upper: int, hosts: str):
        env = list(range(1, upper + 1))
        if hosts == "env":
            return env
        if hosts == "tracer":
            return [TRACER]
        if hosts == "both":
            return [TRACER] + env
        raise ValueError(f"unknown host policy {hosts!r}")

    def generating_op(self, t: float, s: int, n: int, hosts: str = DEFAULT_HOSTS) -> np.ndarray:
        """Generating operator of order 1+n for the (1+s)-sector functional.

        n = 0 is the plain scattering cumulant; n >= 1 subtracts products of
        lower scattering cumulants over dissections of the peeled slots,
        each block anchored at a distinct lower slot.
        """
        key = (float(t), s, n, hosts)
        cached = self._v_cache.get(key)
        if cached is not None:
            return cached
        sector = s + n
        dim = self.model.n_states ** (sector + 1)
        cluster = tuple(range(0, s + 1))
        if n == 0:
            out = self.scattering_op(t, cluster, (), sector)
            self._v_cache[key] = out
            return out
        total = np.zeros((dim, dim))
        for k in range(0, n + 1):
            for comps in _compositions_up_to(n, k):
                peeled = sum(comps)
                rem = n - peeled
                lead = self.scattering_op(t, cluster, tuple(range(s + 1, s + rem + 1)), sector)
                term = lead
                prefix = 0
                ok = True
                for nj in comps:
                    prefix += nj
                    r_j = s + n - prefix
                    z_j = list(range(r_j + 1, r_j + nj + 1))
                    stage = self._stage_factor(t, z_j, r_j, sector, hosts)
                    if stage is None:
                        ok = False
                        break
                    term = term @ stage
                if not ok:
                    continue
                total += ((-1.0) ** k / math.factorial(rem)) * term
        out = math.factorial(n) * total
        self._v_cache[key] = out
        return out

    def _stage_factor(self, t: float, z_slots, r_j: int, sector: int, hosts: str):
        """Sum over dissections of the peeled slots, each block on its own host."""
        dim = self.model.n_states ** (sector + 1)
        host_pool = self._host_slots(r_j, hosts)
        acc = np.zeros((dim, dim))
        found = False
        for blocks in enumerate_dissections(z_slots, max_parts=r_j):
            if len(blocks) > len(host_pool):
                continue
            for assign in itertools.permutations(host_pool, len(blocks)):
                prod = np.eye(dim)
                coeff = 1.0 / math.factorial(len(blocks))
                for host, block in zip(assign, blocks):
                    coeff /= math.factorial(len(block))
                    prod = prod @ self.scattering_op(t, (host,), tuple(block), sector)
                acc += coeff * prod
                found = True
        return acc if found else None

    # -- tracer series -------------------------------------------------------

    def series_term_matrix(self, t: float, n: int) -> np.ndarray:
        """Matrix on tracer space for the order-n term of the distribution series."""
        key = (float(t), n)
        cached = self._series_cache.get(key)
        if cached is not None:
            return cached
        model = self.model
        n_states = model.n_states
        labels = [frozenset({TRACER})] + [frozenset({j}) for j in range(1, n + 1)]
        op = cumulant_matrix(model, t, labels, n, "dual")
        g = self.profile.g[n]
        env = self.profile.env_reduced[n]
        dress = g.copy()
        if n > 0:
            dress = dress * env[np.newaxis, ...]
        cols = []
        for b in range(n_states):
            basis = np.zeros(n_states)
            basis[b] = 1.0
            vec = dress * embed_with_slots(basis, n, ())
            out = (op @ vec.reshape(-1)).reshape(vec.shape)
            cols.append(integrate_env_slots(out, model.weights, 0))
        mat = np.stack(cols, axis=1) / math.factorial(n)
        self._series_cache[key] = mat
        return mat

    def series_matrix(self, t: float, order: int) -> np.ndarray:
        """F0 -> F_(1+0)(t) at the given truncation order."""
        return sum(self.series_term_matrix(t, n) for n in range(order + 1))

    def reduced_distribution(self, t: float, order: int) -> TracerDistribution:
        if order > self.model.n_max:
            raise ValueError("series order exceeds n_max")
        vals = self.series_matrix(t, order) @ self.profile.tracer0
        mass = float(np.dot(self.model.weights, vals))
        drift = mass - 1.0
        if abs(drift) > RENORM_TOL:
            log.info("tracer mass drift %.3e at t=%s (order %d); renormalizing", drift, t, order)
            vals = vals / mass
        return TracerDistribution(values=vals, t=t, mass_drift=drift)

    def free_env_marginal(self, t: float) -> np.ndarray:
        """One-entity environment distribution under its free evolution."""
        return _expm_one_env(self, t) @ self.profile.env_reduced[1]

    # -- state functionals ---------------------------------------------------

    def functional_input(self, F1: np.ndarray, t: float, sector: int, variant: str) -> np.ndarray:
        """Tracer-environment product the generating operators act on."""
        out = embed_with_slots(np.asarray(F1, dtype=float), sector, ())
        if variant == "A":
            f_t = self.free_env_marginal(t)
            for i in range(1, sector + 1):
                out = out * embed_env_vector(f_t, sector, i)
        elif variant != "B":
            raise ValueError(f"unknown variant {variant!r}")
        return out

    def state_functional(self, t: float, F1: np.ndarray, s: int, order: int,
                         variant: str = DEFAULT_VARIANT, hosts: str = DEFAULT_HOSTS,
                         route: str = "scattering", recon_order: int | None = None) -> SectorFunction:
        """Correlated (1+s)-sector functional of the tracer distribution."""
        if s < 0:
            raise ValueError("s must be >= 0")
        model = self.model
        if s + order > self.profile.n_max:
            raise ValueError(
                f"cap exceeded: functional needs correlation sectors up to {s + order}, "
                f"profile carries {self.profile.n_max}"
            )
        shape = (model.n_states,) * (s + 1)
        if route == "resolvent":
            k_rec = order if recon_order is None else recon_order
            f0 = np.linalg.solve(self.series_matrix(t, k_rec), np.asarray(F1, dtype=float))
            acc = np.zeros(shape)
            for n in range(order + 1):
                acc += self._correlated_sector_term(t, s, n, f0)
            return SectorFunction(s, acc)
        if route != "scattering":
            raise ValueError(f"unknown route {route!r}")
        acc = np.zeros(shape)
        for n in range(order + 1):
            sector = s + n
            op = self.generating_op(t, s, n, hosts=hosts)
            vec = self.functional_input(F1, t, sector, variant)
            out = (op @ vec.reshape(-1)).reshape((model.n_states,) * (sector + 1))
            acc += integrate_env_slots(out, model.weights, s) / math.factorial(n)
        return SectorFunction(s, acc)

    def _correlated_sector_term(self, t: float, s: int, n: int, f0: np.ndarray) -> np.ndarray:
        """Order-n term of the correlated (1+s)-sector series from initial data f0."""
        model = self.model
        sector = s + n
        cluster = frozenset(range(0, s + 1))
        labels = [cluster] + [frozenset({j}) for j in range(s + 1, sector + 1)]
        op = cumulant_matrix(model, t, labels, sector, "dual")
        g = self.profile.g[sector]
        env = self.profile.env_reduced[sector]
        dress = g * env[np.newaxis, ...] if sector > 0 else g
        vec = dress * embed_with_slots(np.asarray(f0, dtype=float), sector, ())
        out = (op @ vec.reshape(-1)).reshape(vec.shape)
        return integrate_env_slots(out, model.weights, s) / math.factorial(n)

    # -- kinetic equation ------------------------------------------------------

    def collision_matrix(self, F2_matrix: np.ndarray) -> np.ndarray:
        """Explicit gain/loss collision integral as a matrix on the tracer.

        F2_matrix maps a tracer vector to the flattened pair sector; the
        returned matrix is the composition with the integrated interaction
        operator, so its columns all carry zero total mass.
        """
        model = self.model
        n = model.n_states
        w = model.weights
        a = model.rate_int
        A = model.kernel_int
        # coll[u] = sum_u1 w1 ( sum_v w_v a(v,u1) A(u;v,u1) F2(v,u1) - a(u,u1) F2(u,u1) )
        gain = np.einsum("z,v,vz,uvz->uvz", w, w, a, A)
        loss_diag = a * w[np.newaxis, :]
        coll = gain.reshape(n, n * n).copy()
        for u in range(n):
            coll[u, u * n:(u + 1) * n] -= loss_diag[u]
        return coll @ F2_matrix

    def rhs_matrix(self, t: float, order: int, route: str = "resolvent",
                   variant: str = DEFAULT_VARIANT, hosts: str = DEFAULT_HOSTS) -> np.ndarray:
        """Kinetic right-hand side as a matrix on the tracer distribution.

        Free tracer flow plus eps times the collision integral over the
        pair functional at order-1 lower truncation; with the resolvent
        route the identity d/dt F(t) = rhs(F(t)) is exact on the series
        trajectory at matched order.
        """
        key = (float(t), order, route, variant, hosts)
        cached = self._rhs_cache.get(key)
        if cached is not None:
            return cached
        model = self.model
        n = model.n_states
        free = one_slot_term(model, 0, TRACER, "dual")
        out = free.copy()
        if order >= 1 and model.eps > 0:
            cols = []
            for b in range(n):
                basis = np.zeros(n)
                basis[b] = 1.0
                f2 = self.state_functional(t, basis, 1, order - 1, variant=variant,
                                           hosts=hosts, route=route, recon_order=order)
                cols.append(f2.flat)
            F2_matrix = np.stack(cols, axis=1)
            out = out + model.eps * self.collision_matrix(F2_matrix)
        self._rhs_cache[key] = out
        return out

    def fp_rhs(self, F1: np.ndarray, t: float, order: int, route: str = "resolvent",
               variant: str = DEFAULT_VARIANT, hosts: str = DEFAULT_HOSTS) -> np.ndarray:
        return self.rhs_matrix(t, order, route=route, variant=variant, hosts=hosts) @ np.asarray(F1, dtype=float)

    def integrate_fp(self, f0: np.ndarray, t_max: float, dt: float, order: int,
                     route: str = "resolvent") -> list:
        """Classical four-stage Runge-Kutta trajectory of the kinetic equation.

        The non-Markovian right-hand side depends on absolute time through
        the cumulant operators, so stage operators are rebuilt per step and
        memoized by t.  Steps with mass drift beyond 1e-6 are rejected.
        """
        if dt <= 0:
            raise ValueError("dt must be > 0")
        w = self.model.weights
        steps = int(round(t_max / dt))
        f = np.asarray(f0, dtype=float).copy()
        out = [TracerDistribution(values=f.copy(), t=0.0, mass_drift=0.0)]
        t = 0.0
        for _ in range(steps):
            k1 = self.fp_rhs(f, t, order, route=route)
            k2 = self.fp_rhs(f + 0.5 * dt * k1, t + 0.5 * dt, order, route=route)
            k3 = self.fp_rhs(f + 0.5 * dt * k2, t + 0.5 * dt, order, route=route)
            k4 = self.fp_rhs(f + dt * k3, t + dt, order, route=route)
            f_new = f + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            drift = float(np.dot(w, f_new)) - 1.0
            if abs(drift) > 1e-6:
                raise RuntimeError(
                    f"kinetic step rejected at t={t + dt:.6f}: mass drift {drift:.3e} "
                    "(dt too large or series inconsistency)"
                )
            t += dt
            f = f_new
            out.append(TracerDistribution(values=f.copy(), t=t, mass_drift=drift))
        return out

    # -- duality -----------------------------------------------------------------

    def duality_check(self, initial_reduced: SequenceState, t: float, order: int,
                      f1_order: int | None = None, variant: str = DEFAULT_VARIANT,
                      hosts: str = DEFAULT_HOSTS, route: str = "scattering") -> DualityReport:
        """Compare both pictures of the mean-value functional.

        Left: evolve the reduced observables by the hierarchy solution and
        pair against the correlated initial sequence.  Right: pair the
        initial observables against the tracer-distribution series and the
        state functionals built from it.
        """
        model = self.model
        w = model.weights
        n_max = model.n_max
        if initial_reduced.n_max < n_max:
            raise ValueError("observable sequence shorter than n_max")
        chain = self.profile.chain_sequence(n_max)
        lhs = 0.0
        for s in range(n_max + 1):
            b_t = dual_bbgky_solution(model, initial_reduced, t, s)
            lhs += sector_inner(b_t.data, chain[s].data, w) / math.factorial(s)
        k_f1 = n_max if f1_order is None else f1_order
        f1 = self.reduced_distribution(t, k_f1)
        rhs = sector_inner(initial_reduced[0].data, f1.values, w)
        for s in range(1, n_max + 1):
            if np.max(np.abs(initial_reduced[s].data)) == 0.0:
                continue
            f_s = self.state_functional(t, f1.values, s, order, variant=variant,
                                        hosts=hosts, route=route, recon_order=k_f1)
            rhs += sector_inner(initial_reduced[s].data, f_s.data, w) / math.factorial(s)
        return DualityReport(t=t, order=order, eps=model.eps, lhs=lhs, rhs=rhs)


def _compositions_up_to(total: int, k: int):
    """Ordered tuples of k positive integers with sum <= total."""
    if k == 0:
        yield ()
        return
    for first in range(1, total - k + 2):
        for rest in _compositions_up_to(total - first, k - 1):
            yield (first,) + rest


def _expm_one_env(engine: KineticEngine, t: float) -> np.ndarray:
    """Free one-entity environment dual semigroup on the single-slot space."""
    ws = engine.ws
    # reuse the workspace cache through a one-slot sector: slot 1 of arity 1,
    # then restrict to the environment block
    mat = ws.semigroup(1, frozenset({1}), t, "dual")
    n = engine.model.n_states
    # slot-1 action of I (x) v: extract v from rows with tracer index 0
    return mat.reshape(n, n, n, n)[0, :, 0, :]


_engines: dict = {}


def engine_for(model: ModelSpec, profile: CorrelationProfile) -> KineticEngine:
    key = (model.key, profile.key)
    eng = _engines.get(key)
    if eng is None:
        eng = KineticEngine(model, profile)
        _engines[key] = eng
    return eng


# -- module-level facade -------------------------------------------------------


def scattering_cumulant(model: ModelSpec, profile: CorrelationProfile, t: float,
                        s: int, n: int) -> np.ndarray:
    """Scattering cumulant of order 1+n for the (1+s)-cluster, on 1+s+n slots."""
    if s + n > 4 or s + n > profile.n_max:
        raise ValueError("cap exceeded")
    eng = engine_for(model, profile)
    return eng.scattering_op(t, tuple(range(s + 1)), tuple(range(s + 1, s + n + 1)), s + n)


def generating_V(model: ModelSpec, profile: CorrelationProfile, t: float, s: int, n: int,
                 hosts: str = DEFAULT_HOSTS) -> np.ndarray:
    if n > 3:
        raise ValueError("generating operators capped at order 4")
    return engine_for(model, profile).generating_op(t, s, n, hosts=hosts)


def reduced_distribution(model: ModelSpec, profile: CorrelationProfile, t: float,
                         order: int) -> TracerDistribution:
    return engine_for(model, profile).reduced_distribution(t, order)


def state_functional(model: ModelSpec, profile: CorrelationProfile, t: float,
                     F1: TracerDistribution, s: int, order: int, **kwargs) -> SectorFunction:
    if s < 1:
        raise ValueError("state functionals start at the (1+1)-sector")
    if s + order > 4:
        raise ValueError("cap exceeded: desk-scale functionals stop at s + K = 4")
    vals = F1.values if isinstance(F1, TracerDistribution) else np.asarray(F1, dtype=float)
    return engine_for(model, profile).state_functional(t, vals, s, order, **kwargs)


def duality_check(model: ModelSpec, profile: CorrelationProfile,
                  initial_reduced: SequenceState, t: float, order: int,
                  **kwargs) -> DualityReport:
    return engine_for(model, profile).duality_check(initial_reduced, t, order, **kwargs)


def fp_rhs(model: ModelSpec, profile: CorrelationProfile, F1, t: float, order: int,
           **kwargs) -> np.ndarray:
    vals = F1.values if isinstance(F1, TracerDistribution) else np.asarray(F1, dtype=float)
    return engine_for(model, profile).fp_rhs(vals, t, order, **kwargs)


def integrate_fp(model: ModelSpec, profile: CorrelationProfile, f0, t_max: float,
                 dt: float, order: int, **kwargs) -> list:
    return engine_for(model, profile).integrate_fp(np.asarray(f0, dtype=float),
                                                   t_max, dt, order, **kwargs)
