"""The observable picture: reduced observables and the dual hierarchy.

Everything here is cross-checked against the brute-force oracle
`evolve_full`, which evolves whole sequences sector-by-sector with the
full-sector generator; the reduced machinery has to reproduce its mean
values exactly at truncation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .combinatorics import cumulant_matrix
from .model import ModelSpec
from .operators import TRACER, env_pair_term, interaction_term, workspace_for
from .sectors import (
    SectorFunction,
    SequenceState,
    embed_env_vector,
    embed_with_slots,
    integrate_env_slots,
    sector_inner,
    sector_mass,
)

__all__ = [
    "ObservableSeq",
    "additive_observable",
    "additive_reduced_initial",
    "evolve_full",
    "reduce_observable",
    "reduce_state",
    "mean_value_full",
    "mean_value_reduced",
    "dual_bbgky_solution",
    "dual_bbgky_rhs",
    "additive_solution",
]


@dataclass(frozen=True)
class ObservableSeq(SequenceState):
    """Sequence of observables with a structural flag.

    flag 'additive' asserts the reduced shape (O_(1+0), O_(0+1), 0, ...);
    'k-ary' and 'general' carry no extra constraint.
    """

    flag: str = "general"

    def __post_init__(self):
        super().__post_init__()
        if self.flag not in ("additive", "k-ary", "general"):
            raise ValueError(f"unknown observable flag {self.flag!r}")
        if self.flag == "additive":
            for sec in self.sectors[2:]:
                if np.max(np.abs(sec.data)) > 0:
                    raise ValueError("additive flag requires zero sectors above arity 1")


def additive_observable(o_tracer: np.ndarray, o_env: np.ndarray, n_max: int) -> ObservableSeq:
    """Full additive observable O_(1+n) = O_(1+0)(u) + sum_j O_(0+1)(u_j)."""
    secs = []
    for n in range(n_max + 1):
        data = embed_with_slots(np.asarray(o_tracer, dtype=float), n, ())
        for j in range(1, n + 1):
            data = data + embed_env_vector(np.asarray(o_env, dtype=float), n, j)
        secs.append(SectorFunction(n, data))
    return ObservableSeq(tuple(secs), kind="observable", flag="general")


def additive_reduced_initial(o_tracer: np.ndarray, o_env: np.ndarray, n_max: int) -> ObservableSeq:
    """Reduced image of an additive observable: (O_(1+0), O_(0+1), 0, ...)."""
    n = np.asarray(o_tracer).shape[0]
    secs = [SectorFunction(0, np.asarray(o_tracer, dtype=float))]
    if n_max >= 1:
        secs.append(SectorFunction(1, embed_env_vector(np.asarray(o_env, dtype=float), 1, 1)))
    for s in range(2, n_max + 1):
        secs.append(SectorFunction(s, np.zeros((n,) * (s + 1))))
    return ObservableSeq(tuple(secs), kind="observable", flag="additive")


def evolve_full(model: ModelSpec, seq: SequenceState, t: float, direction: str) -> SequenceState:
    """Brute-force oracle: e^(t Lambda) sector-by-sector with the full generator.

    direction 'forward' evolves observables, 'dual' evolves distributions.
    """
    ws = workspace_for(model)
    out = []
    for s, sec in enumerate(seq.sectors):
        mat = ws.semigroup(s, frozenset(range(s + 1)), t, direction)
        out.append(SectorFunction(s, (mat @ sec.flat).reshape(sec.data.shape)))
    if isinstance(seq, ObservableSeq):
        return ObservableSeq(tuple(out), kind=seq.kind, flag="general")
    return SequenceState(tuple(out), kind=seq.kind)


def reduce_observable(obs: SequenceState, s: int) -> SectorFunction:
    """Inclusion-exclusion reduction B_(1+s) of an observable sequence.

    B_(1+s) = sum_{n<=s} (-1)^n/n! sum over distinct j_1..j_n of
    O_(1+s-n) with those environment arguments deleted.
    """
    if s > obs.n_max:
        raise ValueError("sector not available")
    env = list(range(1, s + 1))
    acc = np.zeros_like(obs[s].data)
    for n in range(0, s + 1):
        for removed in itertools.combinations(env, n):
            kept = tuple(j for j in env if j not in removed)
            small = obs[s - n].data
            acc += (-1.0) ** n * embed_with_slots(small, s, kept)
    return SectorFunction(s, acc)


def reduce_state(ensemble: SequenceState, model: ModelSpec, s: int) -> SectorFunction:
    """Grand-canonical marginal F_(1+s) of the truncated ensemble."""
    w = model.weights
    norm = ensemble.partition_norm(w)
    if norm <= 0:
        raise ValueError("zero partition norm")
    acc = np.zeros((model.n_states,) * (s + 1))
    for n in range(0, ensemble.n_max - s + 1):
        acc += integrate_env_slots(ensemble[s + n].data, w, s) / math.factorial(n)
    return SectorFunction(s, acc / norm)


def mean_value_full(obs: SequenceState, ensemble: SequenceState, model: ModelSpec) -> float:
    """<O>(t) = (I, D)^(-1) sum_s (1/s!) <O_(1+s), D_(1+s)> (weighted sums)."""
    w = model.weights
    norm = ensemble.partition_norm(w)
    if norm <= 0:
        raise ValueError("zero partition norm")
    total = 0.0
    for s in range(min(obs.n_max, ensemble.n_max) + 1):
        total += sector_inner(obs[s].data, ensemble[s].data, w) / math.factorial(s)
    return total / norm


def mean_value_reduced(reduced_obs: SequenceState, reduced_state: SequenceState,
                       model: ModelSpec) -> float:
    """(B, F) = sum_s (1/s!) <B_(1+s), F_(1+s)>."""
    w = model.weights
    total = 0.0
    for s in range(min(reduced_obs.n_max, reduced_state.n_max) + 1):
        total += sector_inner(reduced_obs[s].data, reduced_state[s].data, w) / math.factorial(s)
    return total


def dual_bbgky_solution(model: ModelSpec, initial: SequenceState, t: float, s: int) -> SectorFunction:
    """Cumulant-expansion solution of the dual hierarchy on sector s.

    B_(1+s)(t) = sum_{n<=s} sum over n-subsets X of the environment slots of
    A_(1+n)(t, {tracer, Y\\X}, X) applied to the initial (1+s-n)-sector
    embedded on the complement slots.
    """
    if s > initial.n_max:
        raise ValueError("initial data missing for sector")
    env = list(range(1, s + 1))
    dim_shape = (model.n_states,) * (s + 1)
    acc = np.zeros(dim_shape)
    for n in range(0, s + 1):
        for removed in itertools.combinations(env, n):
            kept = tuple(j for j in env if j not in removed)
            merged = frozenset({TRACER} | set(kept))
            labels = [merged] + [frozenset({j}) for j in removed]
            op = cumulant_matrix(model, t, labels, s, "forward")
            vec = embed_with_slots(initial[s - n].data, s, kept).reshape(-1)
            acc += (op @ vec).reshape(dim_shape)
    return SectorFunction(s, acc)


def dual_bbgky_rhs(model: ModelSpec, current: SequenceState, s: int) -> SectorFunction:
    """Right-hand side of the dual hierarchy at sector s.

    The homogeneous part is the full-sector generator; the inhomogeneous
    terms lift (1+s-1)-sector functions by slot embedding: the tracer
    coupling enters with the eps prefactor, the environment pair terms sum
    over ordered pairs and both choices of deleted argument.
    """
    ws = workspace_for(model)
    gen = ws.generator(s, frozenset(range(s + 1)), "forward")
    shape = (model.n_states,) * (s + 1)
    acc = (gen.matrix @ current[s].flat).reshape(shape)
    if s >= 1:
        env = list(range(1, s + 1))
        lower = current[s - 1].data
        for j in env:
            kept = tuple(i for i in env if i != j)
            lifted = embed_with_slots(lower, s, kept).reshape(-1)
            acc += model.eps * (interaction_term(model, s, j, "forward") @ lifted).reshape(shape)
        for j1 in env:
            for j2 in env:
                if j1 == j2:
                    continue
                pair_op = env_pair_term(model, s, j1, j2, "forward")
                for i in (j1, j2):
                    kept = tuple(k for k in env if k != i)
                    lifted = embed_with_slots(lower, s, kept).reshape(-1)
                    acc += (pair_op @ lifted).reshape(shape)
    return SectorFunction(s, acc)


def additive_solution(model: ModelSpec, o_tracer: np.ndarray, o_env: np.ndarray,
                      t: float, s: int) -> SectorFunction:
    """Closed form of the hierarchy solution for additive initial data.

    B_(1+s)(t) = A_(1+s)(t, tracer, 1..s) O_(1+0)
               + sum_j A_s(t, {tracer, j}, remaining) O_(0+1)(u_j).
    """
    n = model.n_states
    shape = (n,) * (s + 1)
    env = list(range(1, s + 1))
    labels = [frozenset({TRACER})] + [frozenset({j}) for j in env]
    op = cumulant_matrix(model, t, labels, s, "forward")
    vec = embed_with_slots(np.asarray(o_tracer, dtype=float), s, ()).reshape(-1)
    acc = (op @ vec).reshape(shape)
    for j in env:
        rest = [frozenset({k}) for k in env if k != j]
        labels = [frozenset({TRACER, j})] + rest
        op = cumulant_matrix(model, t, labels, s, "forward")
        vec = embed_env_vector(np.asarray(o_env, dtype=float), s, j).reshape(-1)
        acc += (op @ vec).reshape(shape)
    return SectorFunction(s, acc)
