"""Heavy-query learner: turn a transcript into a simulated protocol state.

The eavesdropper cannot run the parties' circuits against the real
oracle, but she can run them against her own purified oracle register,
conditioned on the transcript she observed.  Whenever some domain point
carries noticeable weight in that simulation she queries the real oracle
there classically and projects her simulation onto the answer.  The loop
stops when no point reaches the threshold; a cap turns runaway loops
into an explicit abort instead.

Everything here is deterministic given the protocol, transcript, oracle
table and threshold: weights are computed exactly from the dense state
and ties are broken by taking the smallest domain point.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DomainError
from .oracle import PartialOracle, all_weights, project_partial
from .protocol import Protocol, run_conditioned
from .qstate import QuantumState


@dataclass
class LearnerOutcome:
    simulated_state: QuantumState
    learned: PartialOracle
    queries_made: int
    aborted: bool
    max_residual_weight: float

    def to_json(self) -> dict:
        return {
            "L": self.learned.to_json(),
            "queries": self.queries_made,
            "aborted": self.aborted,
            "max_residual_weight": self.max_residual_weight,
        }


def find_heavy(state: QuantumState, eps: float, exclude=frozenset()) -> int | None:
    """Smallest domain point outside ``exclude`` with weight at least eps.

    Weight exactly equal to the threshold counts as heavy.
    """
    if not 0 < eps < 1:
        raise DomainError(f"threshold must be in (0,1), got {eps}")
    weights = all_weights(state)
    for x in range(len(weights)):
        if x in exclude:
            continue
        if weights[x] >= eps:
            return x
    return None


def learn(
    p: Protocol,
    transcript,
    eps: float,
    table,
    cap: int | None = None,
) -> LearnerOutcome:
    """Simulate the protocol on transcript ``transcript`` and learn heavy points.

    ``table`` is the real oracle; it is only ever read at the points the
    loop decides to query, so the number of classical queries equals the
    size of the learned partial oracle.  ``cap`` bounds that size; when
    yet another point is heavy at the cap the outcome is marked aborted.
    ``cap=None`` means unbounded (the loop always terminates because each
    projection removes the learned cell's weight for good).
    """
    if not 0 < eps < 1:
        raise DomainError(f"threshold must be in (0,1), got {eps}")
    table = tuple(int(v) for v in table)
    if len(table) != p.domain_size:
        raise DomainError(f"oracle table has {len(table)} entries, domain is {p.domain_size}")
    if cap is not None and cap < 1:
        raise DomainError(f"cap must be at least 1, got {cap}")

    state, _ = run_conditioned(p, transcript)
    learned = PartialOracle(())
    aborted = False
    while True:
        x = find_heavy(state, eps, exclude=set(learned.domain))
        if x is None:
            break
        if cap is not None and len(learned) >= cap:
            aborted = True
            break
        y = table[x]
        state, _ = project_partial(state, PartialOracle(((x, y),)))
        learned = learned.extended(x, y)

    residual = 0.0
    weights = all_weights(state)
    for x in range(len(weights)):
        if x not in learned.domain:
            residual = max(residual, float(weights[x]))
    return LearnerOutcome(
        simulated_state=state,
        learned=learned,
        queries_made=len(learned),
        aborted=aborted,
        max_residual_weight=residual,
    )
