"""Two-party protocol descriptions and their execution engines.

A protocol is a register declaration plus a list of rounds.  Every round
is a straight-line program of unitaries and oracle queries; adaptivity
enters only through classical message registers, which are postselected
when announced and can be read as controls afterwards.  The shape is the
one the attack machinery expects: classical messages in both directions,
then exactly one quantum message from Bob to Alice, with Bob's key fixed
before that message leaves his lab and Alice's key produced by a final
map on her side plus the received message.

The same description runs in two ways: against the purified oracle
register (one joint pure state including the H cells) or against a fixed
table, where a query is just a permutation.  Agreement of the two routes
is what the oracle-model tests pin down.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from . import oracle as qoracle
from .algebra import GroupSpec, cyclic
from .errors import DomainError, ProtocolShapeError, UnsupportedProtocolError
from .oracle import OracleSpec
from .qstate import (
    DEFAULT_AMPLITUDE_CAP,
    KIND_MESSAGE,
    KIND_WORK,
    DensityOperator,
    QuantumState,
    Register,
    RegisterLayout,
    canonical_phase,
)

ROLE_ALICE = "A"
ROLE_BOB = "B"
ROLE_TRANSCRIPT = "T"
ROLE_MESSAGE = "M"
_ROLES = (ROLE_ALICE, ROLE_BOB, ROLE_TRANSCRIPT, ROLE_MESSAGE)

KEY_ABORT = 2  # key register value encoding the bottom output

_CELL_PATTERN = re.compile(r"^H\d+$")
_PRODUCT_TOL = 1e-9
_BRANCH_TOL = 1e-12


@dataclass(frozen=True)
class ProtocolRegister:
    name: str
    dim: int
    role: str

    def __post_init__(self) -> None:
        if self.role not in _ROLES:
            raise ProtocolShapeError(f"unknown register role {self.role!r}")
        if _CELL_PATTERN.match(self.name):
            raise ProtocolShapeError(
                f"register name {self.name!r} collides with oracle cell names"
            )
        object.__setattr__(self, "dim", int(self.dim))


@dataclass(frozen=True)
class Gate:
    """A named unitary from the builtin library, or an explicit matrix."""

    name: str
    targets: tuple[str, ...]
    matrix: tuple | None = None
    perm: tuple[int, ...] | None = None
    group: tuple[int, ...] | None = None

    def to_json(self) -> dict:
        data: dict = {"op": "unitary", "name": self.name, "targets": list(self.targets)}
        if self.matrix is not None:
            data["matrix"] = [[[z.real, z.imag] for z in row] for row in np.asarray(self.matrix)]
        if self.perm is not None:
            data["perm"] = list(self.perm)
        if self.group is not None:
            data["group"] = list(self.group)
        return data


@dataclass(frozen=True)
class Query:
    y_reg: str
    x_reg: str | None = None
    x_const: int | None = None

    def __post_init__(self) -> None:
        if (self.x_reg is None) == (self.x_const is None):
            raise ProtocolShapeError("query needs exactly one of x_reg / x_const")

    def to_json(self) -> dict:
        data: dict = {"op": "query", "y": self.y_reg}
        if self.x_reg is not None:
            data["x_reg"] = self.x_reg
        else:
            data["x_const"] = self.x_const
        return data


def instruction_from_json(data) -> "Gate | Query":
    if data["op"] == "query":
        return Query(
            y_reg=str(data["y"]),
            x_reg=data.get("x_reg"),
            x_const=None if data.get("x_const") is None else int(data["x_const"]),
        )
    if data["op"] != "unitary":
        raise ProtocolShapeError(f"unknown instruction op {data['op']!r}")
    matrix = None
    if "matrix" in data:
        matrix = tuple(
            tuple(complex(re, im) for re, im in row) for row in data["matrix"]
        )
    perm = tuple(int(i) for i in data["perm"]) if "perm" in data else None
    group = tuple(int(q) for q in data["group"]) if "group" in data else None
    return Gate(
        name=str(data["name"]),
        targets=tuple(str(t) for t in data["targets"]),
        matrix=matrix,
        perm=perm,
        group=group,
    )


def matrix_gate(matrix, targets) -> Gate:
    m = np.asarray(matrix, dtype=np.complex128)
    return Gate("matrix", tuple(targets), matrix=tuple(tuple(row) for row in m))


def permutation_gate(perm, targets) -> Gate:
    return Gate("permutation", tuple(targets), perm=tuple(int(i) for i in perm))


def fourier_gate(target: str, group: GroupSpec | None = None) -> Gate:
    return Gate("fourier", (target,), group=None if group is None else group.factors)


def hadamard_gate(target: str) -> Gate:
    return Gate("hadamard", (target,))


def controlled_add_gate(src: str, dst: str, group: GroupSpec | None = None) -> Gate:
    return Gate(
        "controlled-add", (src, dst), group=None if group is None else group.factors
    )


def function_permutation(dims, fn) -> np.ndarray:
    """Permutation on a product space from a reversible tuple function."""
    dims = tuple(int(d) for d in dims)
    total = math.prod(dims)
    perm = np.empty(total, dtype=np.int64)
    for j, digits in enumerate(np.ndindex(*dims)):
        out = tuple(int(v) for v in fn(*digits))
        if len(out) != len(dims) or any(not 0 <= v < d for v, d in zip(out, dims)):
            raise DomainError(f"function output {out} outside register dims {dims}")
        perm[j] = int(np.ravel_multi_index(out, dims))
    if sorted(perm.tolist()) != list(range(total)):
        raise DomainError("function is not reversible on the given dims")
    return perm


@dataclass(frozen=True)
class Step:
    party: str
    program: tuple
    message: str | None = None
    message_kind: str = "classical"


@dataclass(frozen=True)
class Protocol:
    name: str
    group: GroupSpec
    domain_size: int
    registers: tuple[ProtocolRegister, ...]
    rounds: tuple[Step, ...]
    final_a_program: tuple
    key_reg_a: str
    key_reg_b: str
    ensemble_regs: tuple[str, ...]
    query_budget: int
    alice_no_final_query: bool
    amplitude_cap: int = DEFAULT_AMPLITUDE_CAP

    # -- structure helpers ----------------------------------------------

    def oracle_spec(self) -> OracleSpec:
        return OracleSpec(self.domain_size, self.group)

    def register(self, name: str) -> ProtocolRegister:
        for r in self.registers:
            if r.name == name:
                return r
        raise ProtocolShapeError(f"protocol has no register {name!r}")

    def reg_dims(self) -> dict[str, int]:
        return {r.name: r.dim for r in self.registers}

    def message_reg(self) -> str:
        for r in self.registers:
            if r.role == ROLE_MESSAGE:
                return r.name
        raise ProtocolShapeError("protocol declares no quantum message register")

    def regs_with_role(self, *roles) -> list[str]:
        return [r.name for r in self.registers if r.role in roles]

    def alice_side(self) -> list[str]:
        return self.regs_with_role(ROLE_ALICE, ROLE_TRANSCRIPT)

    def classical_messages(self) -> list[str]:
        return [s.message for s in self.rounds if s.message and s.message_kind == "classical"]

    def queries_by_party(self) -> dict[str, int]:
        counts = {"A": 0, "B": 0}
        for step in self.rounds:
            counts[step.party] += sum(1 for i in step.program if isinstance(i, Query))
        counts["A"] += sum(1 for i in self.final_a_program if isinstance(i, Query))
        return counts

    # -- serialization ----------------------------------------------------

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "group": self.group.to_json(),
            "domain_size": self.domain_size,
            "registers": [[r.name, r.dim, r.role] for r in self.registers],
            "rounds": [
                {
                    "party": s.party,
                    "program": [i.to_json() for i in s.program],
                    "message": s.message,
                    "message_kind": s.message_kind,
                }
                for s in self.rounds
            ],
            "final_a": {
                "program": [i.to_json() for i in self.final_a_program],
                "key_reg": self.key_reg_a,
            },
            "final_b": {"key_reg": self.key_reg_b},
            "ensemble_regs": list(self.ensemble_regs),
            "query_budget": self.query_budget,
            "alice_no_final_query": self.alice_no_final_query,
        }

    @classmethod
    def from_json(cls, data) -> "Protocol":
        return cls(
            name=str(data["name"]),
            group=GroupSpec.from_json(data["group"]),
            domain_size=int(data["domain_size"]),
            registers=tuple(
                ProtocolRegister(str(n), int(d), str(role))
                for n, d, role in data["registers"]
            ),
            rounds=tuple(
                Step(
                    party=str(s["party"]),
                    program=tuple(instruction_from_json(i) for i in s["program"]),
                    message=s.get("message"),
                    message_kind=s.get("message_kind", "classical"),
                )
                for s in data["rounds"]
            ),
            final_a_program=tuple(
                instruction_from_json(i) for i in data["final_a"]["program"]
            ),
            key_reg_a=str(data["final_a"]["key_reg"]),
            key_reg_b=str(data["final_b"]["key_reg"]),
            ensemble_regs=tuple(str(r) for r in data["ensemble_regs"]),
            query_budget=int(data["query_budget"]),
            alice_no_final_query=bool(data["alice_no_final_query"]),
        )


# -- validation -----------------------------------------------------------


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)
    notices: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _program_targets(instr) -> list[str]:
    if isinstance(instr, Gate):
        return list(instr.targets)
    regs = [instr.y_reg]
    if instr.x_reg is not None:
        regs.append(instr.x_reg)
    return regs


def validate(p: Protocol) -> ValidationReport:
    """Structural checks; violations break the shape, notices inform."""
    rep = ValidationReport()
    names = [r.name for r in p.registers]
    if len(set(names)) != len(names):
        rep.violations.append(f"duplicate register names: {names}")
        return rep
    dims = p.reg_dims()
    roles = {r.name: r.role for r in p.registers}

    quantum_msg = [r.name for r in p.registers if r.role == ROLE_MESSAGE]
    if len(quantum_msg) != 1:
        rep.violations.append(
            f"CC1QM shape: exactly one quantum message register required, got {quantum_msg}"
        )
        return rep
    m_reg = quantum_msg[0]

    if not p.rounds:
        rep.violations.append("CC1QM shape: protocol has no rounds")
        return rep
    if p.rounds[0].party != ROLE_ALICE:
        rep.violations.append("CC1QM shape: the first round must be Alice's")
    quantum_steps = [i for i, s in enumerate(p.rounds) if s.message_kind == "quantum"]
    if quantum_steps != [len(p.rounds) - 1]:
        rep.violations.append(
            "CC1QM shape: exactly one quantum message allowed, and only as the last round"
        )
    last = p.rounds[-1]
    if last.party != ROLE_BOB or last.message != m_reg or last.message_kind != "quantum":
        rep.violations.append(
            "CC1QM shape: the last round must be Bob sending the quantum message register"
        )

    seen_msgs = set()
    for i, step in enumerate(p.rounds):
        if step.party not in (ROLE_ALICE, ROLE_BOB):
            rep.violations.append(f"round {i}: unknown party {step.party!r}")
            continue
        if step.message is not None and step.message_kind == "classical":
            if step.message not in dims or roles[step.message] != ROLE_TRANSCRIPT:
                rep.violations.append(
                    f"round {i}: classical message {step.message!r} is not a transcript register"
                )
            elif step.message in seen_msgs:
                rep.violations.append(
                    f"round {i}: transcript register {step.message!r} announced twice"
                )
            seen_msgs.add(step.message)
        allowed = {ROLE_TRANSCRIPT}
        allowed.add(ROLE_ALICE if step.party == ROLE_ALICE else ROLE_BOB)
        if step.party == ROLE_BOB:
            allowed.add(ROLE_MESSAGE)
        _check_program(p, step.program, f"round {i}", allowed, dims, roles, rep)

    final_allowed = {ROLE_ALICE, ROLE_TRANSCRIPT, ROLE_MESSAGE}
    _check_program(p, p.final_a_program, "final map", final_allowed, dims, roles, rep)

    final_queries = sum(1 for i in p.final_a_program if isinstance(i, Query))
    if p.alice_no_final_query and final_queries:
        rep.violations.append("alice-final-query: flag set but the final map queries the oracle")
    if not p.alice_no_final_query:
        if final_queries:
            rep.notices.append(
                "alice-final-query: the final map queries the oracle; the active attack "
                "does not cover this protocol"
            )
        else:
            rep.notices.append("alice-final-query flag unset but the final map makes no query")

    counts = p.queries_by_party()
    for party, count in counts.items():
        if count > p.query_budget:
            rep.violations.append(
                f"query budget: party {party} makes {count} queries, budget is {p.query_budget}"
            )

    for key_reg, role in ((p.key_reg_a, ROLE_ALICE), (p.key_reg_b, ROLE_BOB)):
        if key_reg not in dims or roles[key_reg] != role or dims[key_reg] not in (2, 3):
            rep.violations.append(
                f"key register {key_reg!r} must be a dim-2 or dim-3 register of role {role}"
            )
    for r in p.ensemble_regs:
        if r not in dims or roles[r] != ROLE_BOB:
            rep.violations.append(f"ensemble register {r!r} must belong to Bob")

    total = math.prod(dims.values()) * p.group.order**p.domain_size
    if total > p.amplitude_cap:
        rep.violations.append(
            f"purified layout needs {total} amplitudes, cap is {p.amplitude_cap}"
        )
    return rep


def _check_program(p, program, where, allowed_roles, dims, roles, rep) -> None:
    for instr in program:
        for t in _program_targets(instr):
            if t not in dims:
                rep.violations.append(f"{where}: unknown register {t!r}")
            elif roles[t] not in allowed_roles:
                rep.violations.append(
                    f"{where}: register {t!r} (role {roles[t]}) is not accessible here"
                )
        if isinstance(instr, Query):
            if instr.y_reg in dims and dims[instr.y_reg] != p.group.order:
                rep.violations.append(
                    f"{where}: query output register {instr.y_reg!r} has the wrong dimension"
                )
            if instr.x_reg is not None and instr.x_reg in dims:
                if dims[instr.x_reg] > p.domain_size:
                    rep.violations.append(
                        f"{where}: address register {instr.x_reg!r} exceeds the domain"
                    )
            if instr.x_const is not None and not 0 <= instr.x_const < p.domain_size:
                rep.violations.append(f"{where}: query address {instr.x_const} out of range")


# -- instruction application ----------------------------------------------


def _resolve_gate(gate: Gate, dims: dict[str, int]):
    tdims = tuple(dims[t] for t in gate.targets)
    if gate.name == "hadamard":
        if tdims != (2,):
            raise ProtocolShapeError("hadamard acts on a single dim-2 register")
        return "matrix", np.array([[1, 1], [1, -1]], dtype=np.complex128) / np.sqrt(2)
    if gate.name == "fourier":
        if len(tdims) != 1:
            raise ProtocolShapeError("fourier acts on a single register")
        g = GroupSpec(gate.group) if gate.group else cyclic(tdims[0])
        if g.order != tdims[0]:
            raise ProtocolShapeError("fourier group order does not match the register")
        return "matrix", g.fourier_matrix
    if gate.name == "permutation":
        if gate.perm is None:
            raise ProtocolShapeError("permutation gate needs a perm table")
        return "perm", np.asarray(gate.perm, dtype=np.int64)
    if gate.name == "controlled-add":
        if len(tdims) != 2:
            raise ProtocolShapeError("controlled-add acts on (source, destination)")
        src_dim, dst_dim = tdims
        g = GroupSpec(gate.group) if gate.group else cyclic(dst_dim)
        if g.order != dst_dim:
            raise ProtocolShapeError("controlled-add group order does not match destination")
        perm = function_permutation(
            (src_dim, dst_dim), lambda a, b: (a, g.add(b, a % dst_dim))
        )
        return "perm", perm
    if gate.name == "matrix":
        if gate.matrix is None:
            raise ProtocolShapeError("matrix gate needs an explicit matrix")
        return "matrix", np.asarray(gate.matrix, dtype=np.complex128)
    raise ProtocolShapeError(f"unknown builtin unitary {gate.name!r}")


def _apply_perm_with_fixed(state: QuantumState, perm: np.ndarray, targets, dims):
    """Apply a basis permutation, reading frozen registers as constants.

    A frozen register may steer the permutation but never move: images
    must keep its value, otherwise the instruction is rejected.
    """
    fixed_pos = {i: state.fixed[t] for i, t in enumerate(targets) if t in state.fixed}
    if not fixed_pos:
        return state.permute_basis(perm, targets)
    live_pos = [i for i in range(len(targets)) if i not in fixed_pos]
    live_dims = tuple(dims[i] for i in live_pos)
    if not live_pos:
        digits = tuple(fixed_pos[i] for i in range(len(targets)))
        j = int(np.ravel_multi_index(digits, dims))
        if int(perm[j]) != j:
            raise UnsupportedProtocolError("permutation moves a frozen register")
        return state
    total_live = math.prod(live_dims)
    restricted = np.empty(total_live, dtype=np.int64)
    for jl, live_digits in enumerate(np.ndindex(*live_dims)):
        digits = [0] * len(targets)
        for pos, v in fixed_pos.items():
            digits[pos] = v
        for pos, v in zip(live_pos, live_digits):
            digits[pos] = v
        j = int(np.ravel_multi_index(digits, dims))
        image = np.unravel_index(int(perm[j]), dims)
        for pos, v in fixed_pos.items():
            if int(image[pos]) != v:
                raise UnsupportedProtocolError("permutation moves a frozen register")
        restricted[jl] = int(
            np.ravel_multi_index(tuple(int(image[pos]) for pos in live_pos), live_dims)
        )
    return state.permute_basis(restricted, [targets[i] for i in live_pos])


def apply_instruction(
    state: QuantumState,
    instr,
    p: Protocol,
    table=None,
    remap: dict[str, str] | None = None,
    inverse: bool = False,
) -> QuantumState:
    """Run one instruction on a state, purified (table=None) or concrete.

    ``remap`` renames protocol registers to state registers before
    application; the attack uses it to bind the protocol's message
    register to the intercepted one.
    """
    remap = remap or {}
    dims = p.reg_dims()

    if isinstance(instr, Gate):
        targets = [remap.get(t, t) for t in instr.targets]
        tdims = tuple(dims[t] for t in instr.targets)
        kind, obj = _resolve_gate(instr, dims)
        if kind == "matrix":
            if inverse:
                obj = obj.conj().T
            return state.apply_unitary(obj, targets)
        perm = obj
        if inverse:
            perm = np.argsort(perm)
        return _apply_perm_with_fixed(state, perm, targets, tdims)

    if not isinstance(instr, Query):
        raise ProtocolShapeError(f"unknown instruction {instr!r}")

    y = remap.get(instr.y_reg, instr.y_reg)
    x_reg = None if instr.x_reg is None else remap.get(instr.x_reg, instr.x_reg)

    if table is None:
        return qoracle.oracle_query(
            state, y, x_reg=x_reg, x_const=instr.x_const, inverse=inverse
        )

    group = p.group
    if x_reg is not None and not state.is_fixed(x_reg):
        x_dim = state.layout.dim(x_reg)
        perm = qoracle.standard_query_permutation(group, table, x_dim)
        if inverse:
            perm = np.argsort(perm)
        return state.permute_basis(perm, [x_reg, y])
    x = instr.x_const if x_reg is None else state.fixed[x_reg]
    perm = qoracle.constant_add_permutation(group, table[int(x)])
    if inverse:
        perm = np.argsort(perm)
    return state.permute_basis(perm, [y])


def apply_program(state, program, p, table=None, remap=None, inverse=False):
    instrs = list(program)
    if inverse:
        instrs = instrs[::-1]
    for instr in instrs:
        state = apply_instruction(state, instr, p, table=table, remap=remap, inverse=inverse)
    return state


# -- execution --------------------------------------------------------------


@dataclass
class EnsembleComponent:
    weight: float
    vector: np.ndarray
    values: tuple[int, ...]


@dataclass
class ExecutionTrace:
    transcript: tuple[int, ...]
    transcript_probs: tuple[float, ...]
    k_B: int
    k_B_prob: float
    ensemble: list[EnsembleComponent]
    k_A: int | None = None
    alice_state: QuantumState | None = None
    pre_message_state: QuantumState | None = None
    final_state: QuantumState | None = None
    round_states: list[QuantumState] = field(default_factory=list)


def _initial_state(p: Protocol, purified: bool) -> QuantumState:
    regs = [
        Register(r.name, r.dim, KIND_MESSAGE if r.role in (ROLE_TRANSCRIPT, ROLE_MESSAGE) else KIND_WORK)
        for r in p.registers
    ]
    if purified:
        return qoracle.init_purified(p.oracle_spec(), regs, amplitude_cap=p.amplitude_cap)
    return QuantumState.zero(RegisterLayout(regs, amplitude_cap=p.amplitude_cap))


def _sample(rng: np.random.Generator, probs: np.ndarray) -> int:
    probs = np.clip(np.asarray(probs, dtype=float), 0.0, None)
    probs = probs / probs.sum()
    return int(rng.choice(len(probs), p=probs))


def _run_rounds(p, table, rng=None, forced_transcript=None, keep_round_states=False):
    state = _initial_state(p, purified=table is None)
    transcript: list[int] = []
    probs: list[float] = []
    round_states: list[QuantumState] = []
    for step in p.rounds:
        state = apply_program(state, step.program, p, table=table)
        if step.message is not None and step.message_kind == "classical":
            if forced_transcript is not None:
                sym = int(forced_transcript[len(transcript)])
            else:
                sym = _sample(rng, state.probabilities(step.message))
            state, prob = state.postselect(step.message, sym)
            transcript.append(sym)
            probs.append(prob)
        if keep_round_states:
            round_states.append(state.copy())
    return state, tuple(transcript), tuple(probs), round_states


def message_ensemble(state: QuantumState, p: Protocol) -> list[EnsembleComponent]:
    """Decompose the outgoing message by measuring Bob's ensemble registers.

    Every branch must leave the message register in a pure state that is
    in a product with the rest of the system; protocols are required to
    be written so this holds (pick ensemble registers that purify the
    message).
    """
    m_reg = p.message_reg()
    layout = state.layout
    m_ax = layout.axis(m_reg)
    ens_axes = [layout.axis(r) for r in p.ensemble_regs]
    amps = state.amps
    components: list[EnsembleComponent] = []
    ens_dims = tuple(layout.dims[a] for a in ens_axes)
    for values in np.ndindex(*ens_dims) if ens_axes else [()]:
        slicer = [slice(None)] * amps.ndim
        for a, v in zip(ens_axes, values):
            slicer[a] = v
        sub = amps[tuple(slicer)]
        q = float(np.sum(np.abs(sub) ** 2))
        if q < _BRANCH_TOL:
            continue
        new_m = m_ax - sum(1 for a in ens_axes if a < m_ax)
        mat = np.moveaxis(sub, new_m, 0).reshape(layout.dims[m_ax], -1)
        u, s, _ = np.linalg.svd(mat, full_matrices=False)
        if len(s) > 1 and s[1] > _PRODUCT_TOL * s[0]:
            raise UnsupportedProtocolError(
                "message register is not pure given the ensemble registers "
                f"(second singular value {s[1]:.3e})"
            )
        components.append(
            EnsembleComponent(
                weight=q,
                vector=canonical_phase(u[:, 0]),
                values=tuple(int(v) for v in values),
            )
        )
    total = sum(c.weight for c in components)
    for c in components:
        c.weight /= total
    return components


def _finish(p, state, table, rng, honest, keep_round_states, transcript, probs, round_states):
    kb_probs = state.probabilities(p.key_reg_b)
    k_B = _sample(rng, kb_probs)
    state, kb_prob = state.postselect(p.key_reg_b, k_B)
    ensemble = message_ensemble(state, p)
    trace = ExecutionTrace(
        transcript=transcript,
        transcript_probs=probs,
        k_B=k_B,
        k_B_prob=kb_prob,
        ensemble=ensemble,
        pre_message_state=state,
        round_states=round_states if keep_round_states else [],
    )
    if honest:
        final = apply_program(state, p.final_a_program, p, table=table)
        trace.final_state = final
        trace.k_A = _sample(rng, key_distribution(final, p.key_reg_a))
    if table is not None:
        trace.alice_state = extract_alice_state(state, p)
    return trace


def key_distribution(state: QuantumState, key_reg: str) -> np.ndarray:
    """Probabilities of {0, 1, bottom} for a 2- or 3-valued key register."""
    probs = state.probabilities(key_reg)
    out = np.zeros(3)
    out[: len(probs)] = probs
    return out


def extract_alice_state(state: QuantumState, p: Protocol) -> QuantumState:
    """Alice's side of a fixed-oracle run as a pure state.

    Given the transcript and the table, the two labs must sit in a
    product state; anything else means the protocol sneaks correlations
    outside the model and is rejected.
    """
    side = [n for n in p.alice_side() if not state.is_fixed(n)]
    axes = [state.layout.axis(n) for n in side]
    da = math.prod(state.layout.dims[a] for a in axes)
    moved = np.moveaxis(state.amps, axes, range(len(axes))).reshape(da, -1)
    u, s, _ = np.linalg.svd(moved, full_matrices=False)
    if len(s) > 1 and s[1] > _PRODUCT_TOL * s[0]:
        raise UnsupportedProtocolError(
            f"Alice's conditioned state is not pure (second singular value {s[1]:.3e})"
        )
    regs = [Register(n, state.layout.dim(n), state.layout.register(n).kind) for n in side]
    layout = RegisterLayout(regs, amplitude_cap=state.layout.amplitude_cap)
    return QuantumState.from_vector(layout, canonical_phase(u[:, 0]))


def run_purified(p: Protocol, seed=None, honest: bool = True, keep_round_states: bool = False) -> ExecutionTrace:
    """Sample one purified execution: every party plus the oracle in one state."""
    rng = _as_rng(seed)
    state, transcript, probs, round_states = _run_rounds(
        p, None, rng=rng, keep_round_states=keep_round_states
    )
    return _finish(p, state, None, rng, honest, keep_round_states, transcript, probs, round_states)


def run_concrete(p: Protocol, table, seed=None, honest: bool = True, keep_round_states: bool = False) -> ExecutionTrace:
    """Sample one run against a fixed oracle table."""
    rng = _as_rng(seed)
    table = tuple(int(v) for v in table)
    if len(table) != p.domain_size or any(not 0 <= v < p.group.order for v in table):
        raise DomainError("oracle table does not match the protocol's domain and range")
    state, transcript, probs, round_states = _run_rounds(
        p, table, rng=rng, keep_round_states=keep_round_states
    )
    return _finish(p, state, table, rng, honest, keep_round_states, transcript, probs, round_states)


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def run_conditioned(p: Protocol, transcript, table=None) -> tuple[QuantumState, float]:
    """Run all rounds with the classical messages forced to ``transcript``.

    Returns the joint state just before Bob's key measurement together
    with the probability of that transcript.  A transcript the protocol
    cannot produce raises ZeroProbabilityError.
    """
    transcript = tuple(int(v) for v in transcript)
    expected = len(p.classical_messages())
    if len(transcript) != expected:
        raise DomainError(f"transcript has {len(transcript)} symbols, protocol sends {expected}")
    state, _, probs, _ = _run_rounds(p, table, forced_transcript=transcript)
    return state, float(math.prod(probs))


# -- exhaustive enumeration -------------------------------------------------


@dataclass
class Branch:
    transcript: tuple[int, ...]
    probability: float
    state: QuantumState
    round_states: list[QuantumState]


def enumerate_branches(p: Protocol, table=None, keep_round_states: bool = False) -> list[Branch]:
    """All transcript branches with their probabilities and final states."""

    out: list[Branch] = []

    def rec(state, round_idx, transcript, prob, round_states):
        if round_idx == len(p.rounds):
            out.append(Branch(tuple(transcript), prob, state, list(round_states)))
            return
        step = p.rounds[round_idx]
        state = apply_program(state, step.program, p, table=table)
        if step.message is not None and step.message_kind == "classical":
            probs = state.probabilities(step.message)
            for sym in range(len(probs)):
                if probs[sym] < _BRANCH_TOL:
                    continue
                conditioned, pr = state.postselect(step.message, sym)
                rs = round_states + [conditioned] if keep_round_states else round_states
                rec(conditioned, round_idx + 1, transcript + [sym], prob * pr, rs)
        else:
            rs = round_states + [state] if keep_round_states else round_states
            rec(state, round_idx + 1, transcript, prob, rs)

    rec(_initial_state(p, purified=table is None), 0, [], 1.0, [])
    return out


def joint_distribution(p: Protocol, table=None) -> dict:
    """Exact distribution over (transcript, k_B, k_A)."""
    dist: dict = {}
    for branch in enumerate_branches(p, table=table):
        kb_probs = branch.state.probabilities(p.key_reg_b)
        for k_B in range(len(kb_probs)):
            if kb_probs[k_B] < _BRANCH_TOL:
                continue
            conditioned, pr_b = branch.state.postselect(p.key_reg_b, k_B)
            final = apply_program(conditioned, p.final_a_program, p, table=table)
            ka_probs = key_distribution(final, p.key_reg_a)
            for k_A in range(3):
                w = branch.probability * pr_b * float(ka_probs[k_A])
                if w < _BRANCH_TOL:
                    continue
                key = (branch.transcript, k_B, k_A)
                dist[key] = dist.get(key, 0.0) + w
    return dist


def averaged_concrete_distribution(p: Protocol) -> dict:
    """joint_distribution averaged uniformly over every oracle table."""
    spec = p.oracle_spec()
    total: dict = {}
    count = 0
    for table in spec.all_tables():
        for key, w in joint_distribution(p, table=table).items():
            total[key] = total.get(key, 0.0) + w
        count += 1
    return {k: v / count for k, v in total.items()}


def distribution_tv(a: dict, b: dict) -> float:
    keys = set(a) | set(b)
    return 0.5 * sum(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in keys)


# -- Alice's final map on a delivered message -------------------------------


def alice_final(p: Protocol, alice_state: QuantumState, message, table=None) -> np.ndarray:
    """Distribution over Alice's key {0, 1, bottom} given a delivered message.

    ``message`` is a vector or a density operator on the message register.
    Oracle queries in the final map run against ``table``; protocols whose
    final map needs the oracle must get one.
    """
    m_reg = p.message_reg()
    m_dim = p.register(m_reg).dim
    if isinstance(message, DensityOperator):
        dist = np.zeros(3)
        for prob, vec in message.eig_ensemble():
            dist += prob * alice_final(p, alice_state, vec, table=table)
        return dist
    vec = np.asarray(message, dtype=np.complex128).reshape(-1)
    if vec.shape[0] != m_dim:
        raise DomainError(f"message vector has length {len(vec)}, register wants {m_dim}")
    has_query = any(isinstance(i, Query) for i in p.final_a_program)
    if has_query and table is None:
        raise UnsupportedProtocolError("final map queries the oracle but no table was given")
    state = alice_state.attach_register(Register(m_reg, m_dim, KIND_MESSAGE), vector=vec)
    state = apply_program(state, p.final_a_program, p, table=table)
    return key_distribution(state, p.key_reg_a)
