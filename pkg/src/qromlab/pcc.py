"""Sparse-and-light state predicates and the compatibility search.

Two purified oracle states are compatible when some full function table
carries mass in both of them.  The interesting question is whether every
pair of states that are individually sparse (few disturbed cells) and
light (no cell disturbed much) stays compatible; this module provides the
predicates, an exact compatibility test by enumeration, and a seeded
random search for violating pairs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .circuits import light_random_ops, ops_to_json, run_purified
from .errors import DomainError
from .oracle import (
    OracleSpec,
    all_weights,
    computational_support,
    fourier_support_size,
    init_purified,
    spec_of,
)
from .protocol import Protocol, run_conditioned
from .qstate import QuantumState

SUPPORT_THRESHOLD = 1e-12


@dataclass(frozen=True)
class GoodStateReport:
    sparsity: int
    max_weight: float
    is_d_sparse: bool
    is_delta_light: bool

    @property
    def good(self) -> bool:
        return self.is_d_sparse and self.is_delta_light

    def to_json(self) -> dict:
        return asdict(self)


def is_goodstate(state: QuantumState, delta: float, d: int) -> GoodStateReport:
    """Measure sparsity and lightness of a purified oracle state.

    Sparsity counts the most disturbed cells any mass-carrying basis
    state exhibits; lightness bounds the per-cell disturbance.  Cells a
    learner already extracted are classical bookkeeping and count for
    neither (their weight is spent).
    """
    if not 0 < delta <= 1:
        raise DomainError(f"lightness bound must be in (0,1], got {delta}")
    if d < 0:
        raise DomainError(f"sparsity bound must be nonnegative, got {d}")
    sparsity = fourier_support_size(state, threshold=SUPPORT_THRESHOLD)
    weights = all_weights(state)
    max_weight = float(weights.max()) if len(weights) else 0.0
    return GoodStateReport(
        sparsity=sparsity,
        max_weight=max_weight,
        is_d_sparse=sparsity <= d,
        is_delta_light=max_weight <= delta,
    )


def compatible(phi: QuantumState, psi: QuantumState) -> bool:
    """Exact test for a shared mass-carrying function table."""
    if spec_of(phi) != spec_of(psi):
        raise DomainError("states talk to different oracles")
    supp = computational_support(phi, threshold=SUPPORT_THRESHOLD)
    return bool(supp & computational_support(psi, threshold=SUPPORT_THRESHOLD))


def support_overlap_margin(phi: QuantumState, psi: QuantumState) -> float:
    """Size of the shared support relative to the number of tables."""
    spec = spec_of(phi)
    if spec != spec_of(psi):
        raise DomainError("states talk to different oracles")
    inter = computational_support(phi, threshold=SUPPORT_THRESHOLD) & computational_support(
        psi, threshold=SUPPORT_THRESHOLD
    )
    return len(inter) / spec.function_count()


@dataclass
class SearchHit:
    """An incompatible pair of goodstates, with the circuits that made it."""

    trial: int
    ops_a: list
    ops_b: list
    state_a: QuantumState
    state_b: QuantumState
    report_a: GoodStateReport
    report_b: GoodStateReport

    def to_json(self) -> dict:
        return {
            "trial": self.trial,
            "ops_a": ops_to_json(self.ops_a),
            "ops_b": ops_to_json(self.ops_b),
            "state_a": self.state_a.dump(),
            "state_b": self.state_b.dump(),
            "report_a": self.report_a.to_json(),
            "report_b": self.report_b.to_json(),
        }


@dataclass
class SearchResult:
    hit: SearchHit | None
    trials: int
    goodstate_pairs: int
    min_margin: float | None

    def to_json(self) -> dict:
        return {
            "hit": None if self.hit is None else self.hit.to_json(),
            "trials": self.trials,
            "goodstate_pairs": self.goodstate_pairs,
            "min_margin": self.min_margin,
        }


def search_counterexample(
    spec: OracleSpec, delta: float, d: int, trials: int, seed: int
) -> SearchResult:
    """Randomized hunt for an incompatible pair of sparse-and-light states.

    Each trial draws two independent circuits of at most ``d`` queries,
    biased toward light oracle disturbance, runs them against fresh
    purified oracles, keeps the pair only when both ends pass the
    goodstate filter, and tests compatibility exactly.  Returns on the
    first hit; a hit at sensible parameters would be a finding worth
    writing up, so the hit carries everything needed to replay it.
    """
    if trials < 1:
        raise DomainError(f"need at least one trial, got {trials}")
    if not 0 < delta <= 1:
        raise DomainError(f"lightness bound must be in (0,1], got {delta}")
    if d < 0:
        raise DomainError(f"sparsity bound must be nonnegative, got {d}")
    rng = np.random.default_rng(seed)
    goodstate_pairs = 0
    min_margin: float | None = None
    for trial in range(trials):
        ops_a = light_random_ops(spec, rng, d, delta)
        ops_b = light_random_ops(spec, rng, d, delta)
        phi = run_purified(spec, ops_a)
        psi = run_purified(spec, ops_b)
        report_a = is_goodstate(phi, delta, d)
        report_b = is_goodstate(psi, delta, d)
        if not (report_a.good and report_b.good):
            continue
        goodstate_pairs += 1
        margin = support_overlap_margin(phi, psi)
        if min_margin is None or margin < min_margin:
            min_margin = margin
        if margin == 0.0:
            return SearchResult(
                hit=SearchHit(trial, ops_a, ops_b, phi, psi, report_a, report_b),
                trials=trial + 1,
                goodstate_pairs=goodstate_pairs,
                min_margin=0.0,
            )
    return SearchResult(hit=None, trials=trials, goodstate_pairs=goodstate_pairs,
                        min_margin=min_margin)


def pin_cell(state: QuantumState, spec: OracleSpec, x: int, value: int) -> QuantumState:
    """Force cell ``x`` to the computational value ``value``, keeping it live.

    The cell stays a quantum register (weight 1 - 1/|Y|), unlike a
    learner extraction which turns it classical.  Assumes the cell is
    still in the flat state.
    """
    q = spec.group.order
    if not 0 <= value < q:
        raise DomainError(f"value {value} outside the oracle range (order {q})")
    fourier = spec.group.fourier_matrix
    swap = np.eye(q, dtype=np.complex128)
    if value:
        swap[[0, value]] = swap[[value, 0]]
    # first column is the Fourier-coordinate vector of |value>
    pin = fourier.conj().T @ swap
    return state.apply_unitary(pin, [spec.cell_name(x)])


def collapsed_pair_fixture(spec: OracleSpec | None = None):
    """Two states pinning cell 0 to different values: never compatible.

    Both are 1-sparse but carry weight 1 - 1/|Y| on the pinned cell, so
    they only pass the goodstate filter once the lightness bound reaches
    that level; at strict bounds the filter rejects them, which is the
    whole point of having one.
    """
    if spec is None:
        from .algebra import cyclic

        spec = OracleSpec(2, cyclic(2))
    base = init_purified(spec, [])
    phi = pin_cell(base, spec, 0, 0)
    psi = pin_cell(base, spec, 0, 1)
    return phi, psi


def check_attack_dump(dump: dict) -> dict:
    """Recompute the compatibility facts for a dumped attack run.

    The dump names the protocol, the transcript, and the learner's
    simulated state.  The checker rebuilds the transcript-conditioned
    state independently and reports whether the pair is compatible and
    whether each side passes the goodstate filter at the dumped bounds.
    A dump that is both all-good and incompatible would be a violation
    of the compatibility conjecture at those parameters.
    """
    p = Protocol.from_json(dump["protocol"])
    transcript = tuple(int(t) for t in dump["transcript"])
    real, _ = run_conditioned(p, transcript)
    sim = QuantumState.load(dump["simulated_state"])
    delta = float(dump["delta"])
    d = int(dump["d"])
    report_real = is_goodstate(real, delta, d)
    report_sim = is_goodstate(sim, delta, d)
    comp = compatible(real, sim)
    margin = support_overlap_margin(real, sim)
    out = {
        "compatible": comp,
        "margin": margin,
        "real": report_real.to_json(),
        "simulated": report_sim.to_json(),
        "both_goodstates": report_real.good and report_sim.good,
        "contradicts_conjecture": report_real.good and report_sim.good and not comp,
    }
    if "table" in dump:
        table = tuple(int(v) for v in dump["table"])
        supp_real = computational_support(real, threshold=SUPPORT_THRESHOLD)
        supp_sim = computational_support(sim, threshold=SUPPORT_THRESHOLD)
        out["table_in_both_supports"] = table in supp_real and table in supp_sim
    return out
