"""Purified random-oracle register and partial-oracle projections.

The oracle for h: X -> Y is a row of cells H0..H{N-1}, one |Y|-dimensional
register per domain point, initialized to the uniform superposition over
all function tables.  Cells are stored in the Fourier basis, where that
initial state is the all-zeros basis vector and a query only touches the
cell it addresses.  Converting a cell to the computational basis means
applying the group's Fourier matrix to that axis.

A learned cell is projected onto a computational value and then sliced
out of the dense array; its value is kept in ``state.fixed``.  Weights of
learned cells are 0 by definition and the Fourier support is counted over
the remaining cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .algebra import GroupSpec
from .errors import (
    CapacityError,
    DimensionMismatchError,
    DomainError,
    LayoutError,
    ZeroProbabilityError,
)
from .qstate import (
    DEFAULT_AMPLITUDE_CAP,
    KIND_ORACLE,
    QuantumState,
    Register,
    RegisterLayout,
)

SUPPORT_TOL = 1e-12
MAX_SUPPORT_FUNCTIONS = 2**16


@dataclass(frozen=True)
class OracleSpec:
    """Domain size N and range group Y of the random oracle."""

    domain_size: int
    group: GroupSpec

    def __post_init__(self) -> None:
        if int(self.domain_size) < 1:
            raise DomainError("oracle domain must have at least one point")
        object.__setattr__(self, "domain_size", int(self.domain_size))

    def cell_name(self, x: int) -> str:
        x = int(x)
        if not 0 <= x < self.domain_size:
            raise DomainError(f"domain point {x} out of range")
        return f"H{x}"

    def cell_names(self) -> list[str]:
        return [f"H{x}" for x in range(self.domain_size)]

    def registers(self) -> list[Register]:
        return [Register(n, self.group.order, KIND_ORACLE) for n in self.cell_names()]

    def function_count(self) -> int:
        return self.group.order**self.domain_size

    def sample_table(self, rng: np.random.Generator) -> tuple[int, ...]:
        return tuple(int(v) for v in rng.integers(0, self.group.order, self.domain_size))

    def all_tables(self):
        """Iterate every function table h as a tuple of range indices."""
        n, q = self.domain_size, self.group.order
        for idx in range(q**n):
            digits = []
            for _ in range(n):
                digits.append(idx % q)
                idx //= q
            yield tuple(reversed(digits))

    def to_json(self) -> dict:
        return {"domain_size": self.domain_size, "group": self.group.to_json()}

    @classmethod
    def from_json(cls, data) -> "OracleSpec":
        return cls(int(data["domain_size"]), GroupSpec.from_json(data["group"]))


@dataclass(frozen=True)
class PartialOracle:
    """Finite list of (domain point, range value) constraints."""

    pairs: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        pairs = tuple((int(x), int(y)) for x, y in self.pairs)
        xs = [x for x, _ in pairs]
        if len(set(xs)) != len(xs):
            raise DomainError(f"repeated domain points in partial oracle: {xs}")
        object.__setattr__(self, "pairs", pairs)

    @property
    def domain(self) -> tuple[int, ...]:
        return tuple(x for x, _ in self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    def value(self, x: int) -> int:
        for px, py in self.pairs:
            if px == x:
                return py
        raise DomainError(f"{x} not in partial oracle domain")

    def extended(self, x: int, y: int) -> "PartialOracle":
        return PartialOracle(self.pairs + ((int(x), int(y)),))

    def to_json(self) -> list[list[int]]:
        return [[x, y] for x, y in self.pairs]

    @classmethod
    def from_json(cls, data) -> "PartialOracle":
        return cls(tuple((int(x), int(y)) for x, y in data))


def spec_of(state: QuantumState) -> OracleSpec:
    layout = state.layout
    if layout.group is None or layout.domain_size is None:
        raise LayoutError("state layout carries no oracle metadata")
    return OracleSpec(layout.domain_size, layout.group)


def init_purified(
    spec: OracleSpec,
    extra_registers=(),
    amplitude_cap: int = DEFAULT_AMPLITUDE_CAP,
) -> QuantumState:
    """Uniform-over-all-tables oracle state, with optional work registers in front.

    In the Fourier encoding the uniform superposition is a single basis
    vector, so this is the all-zeros state.
    """
    regs = list(extra_registers) + spec.registers()
    layout = RegisterLayout(regs, group=spec.group, domain_size=spec.domain_size,
                            amplitude_cap=amplitude_cap)
    return QuantumState.zero(layout)


def _shift_gather(group: GroupSpec, inverse: bool) -> np.ndarray:
    """gather[yhat, b] = source index in the cell axis for output index b."""
    add = group.add_table
    n = group.order
    out = np.empty((n, n), dtype=np.int64)
    for yhat in range(n):
        for b in range(n):
            src = add[b, yhat] if not inverse else group.sub(b, yhat)
            out[yhat, b] = src
    return out


def _apply_shift(amps: np.ndarray, y_ax: int, cell_ax: int, gather: np.ndarray) -> np.ndarray:
    n = gather.shape[0]
    moved = np.moveaxis(amps, (y_ax, cell_ax), (0, 1))
    rows = np.arange(n).reshape(n, 1)
    shifted = moved[rows, gather]
    return np.moveaxis(shifted, (0, 1), (y_ax, cell_ax))


def oracle_query(
    state: QuantumState,
    y_reg: str,
    x_reg: str | None = None,
    x_const: int | None = None,
    inverse: bool = False,
) -> QuantumState:
    """One oracle call: |x>|y> -> |x>|y + h(x)> against the purified oracle.

    The address is either a live register (``x_reg``) or a constant
    (``x_const``).  An address register may have dimension smaller than
    the domain; it then reaches only an initial segment of it.  Learned
    cells participate as the classical constants they collapsed to.
    ``inverse`` applies the adjoint (y -> y - h(x)).
    """
    spec = spec_of(state)
    group = spec.group
    if (x_reg is None) == (x_const is None):
        raise DomainError("exactly one of x_reg / x_const must be given")
    if x_reg is not None and state.is_fixed(x_reg):
        return oracle_query(state, y_reg, x_const=state.fixed[x_reg], inverse=inverse)
    if state.layout.dim(y_reg) != group.order:
        raise DimensionMismatchError(
            f"query output register {y_reg!r} must have dimension {group.order}"
        )

    fourier = group.fourier_matrix
    gather = _shift_gather(group, inverse)
    chars = group.character_table

    # Work in the Fourier picture of the y register: analysis in, synthesis out.
    work = state.apply_unitary(fourier.conj().T, [y_reg])
    y_ax = work.layout.axis(y_reg)
    amps = work.amps

    if x_const is not None:
        x = int(x_const)
        if not 0 <= x < spec.domain_size:
            raise DomainError(f"x_const {x} outside the oracle domain")
        cell = spec.cell_name(x)
        if cell in work.fixed:
            phases = chars[:, work.fixed[cell]]
            if inverse:
                phases = phases.conj()
            out = work.phase_by_value(y_reg, phases).amps
        else:
            out = _apply_shift(amps, y_ax, work.layout.axis(cell), gather)
    else:
        x_dim = work.layout.dim(x_reg)
        if x_dim > spec.domain_size:
            raise DimensionMismatchError(
                f"address register {x_reg!r} has dimension {x_dim} > domain {spec.domain_size}"
            )
        x_ax = work.layout.axis(x_reg)
        out = np.empty_like(amps)
        idx = [slice(None)] * amps.ndim
        for x in range(x_dim):
            idx[x_ax] = x
            sl = tuple(idx)
            sub = amps[sl]
            cell = spec.cell_name(x)
            # Axis bookkeeping: slicing removed x_ax, shifting later axes down.
            def shifted_axis(a: int) -> int:
                return a - 1 if a > x_ax else a
            if cell in work.fixed:
                phases = chars[:, work.fixed[cell]]
                if inverse:
                    phases = phases.conj()
                shape = [1] * sub.ndim
                shape[shifted_axis(y_ax)] = group.order
                out[sl] = sub * phases.reshape(shape)
            else:
                cell_ax = work.layout.axis(cell)
                out[sl] = _apply_shift(sub, shifted_axis(y_ax), shifted_axis(cell_ax), gather)

    result = QuantumState(work.layout, out, dict(work.fixed))
    return result.apply_unitary(fourier, [y_reg])


def weight(state: QuantumState, x: int) -> float:
    """Probability mass on non-trivial Fourier components of cell x.

    Learned (collapsed) cells weigh 0.
    """
    spec = spec_of(state)
    cell = spec.cell_name(x)
    if cell in state.fixed:
        return 0.0
    ax = state.layout.axis(cell)
    slicer = [slice(None)] * state.amps.ndim
    slicer[ax] = 0
    flat_mass = float(np.sum(np.abs(state.amps[tuple(slicer)]) ** 2))
    total = float(np.sum(np.abs(state.amps) ** 2))
    if total <= 0:
        raise ZeroProbabilityError("state has zero norm")
    return max(0.0, 1.0 - flat_mass / total)


def all_weights(state: QuantumState) -> np.ndarray:
    spec = spec_of(state)
    return np.array([weight(state, x) for x in range(spec.domain_size)])


def fourier_support_size(state: QuantumState, threshold: float = SUPPORT_TOL) -> int:
    """Largest number of non-flat cells over basis states carrying mass.

    Each oracle query can grow this by at most one; projecting a partial
    oracle never grows it (the projected cells leave the count).
    """
    spec = spec_of(state)
    live = [n for n in spec.cell_names() if n not in state.fixed]
    if not live:
        return 0
    axes = tuple(state.layout.axis(n) for n in live)
    other = tuple(a for a in range(state.amps.ndim) if a not in axes)
    p = np.abs(state.amps) ** 2
    mask = p > threshold
    if other:
        mask = mask.any(axis=other)
    if not mask.any():
        return 0
    counts = np.zeros(mask.shape, dtype=np.int64)
    for i in range(mask.ndim):
        dim = mask.shape[i]
        shape = [1] * mask.ndim
        shape[i] = dim
        counts = counts + (np.arange(dim) != 0).astype(np.int64).reshape(shape)
    return int(counts[mask].max())


def project_partial(state: QuantumState, partial: PartialOracle) -> tuple[QuantumState, float]:
    """Condition the oracle on agreeing with a partial function.

    Each constrained cell is rotated to the computational basis, projected
    onto its value, renormalized and sliced out of the dense array.
    Returns the conditioned state and the total branch probability.
    Contradicting an already-collapsed cell is a zero-probability branch.
    """
    spec = spec_of(state)
    fourier = spec.group.fourier_matrix
    prob = 1.0
    current = state
    for x, y in sorted(partial.pairs):
        if not 0 <= y < spec.group.order:
            raise DomainError(f"range value {y} outside the group")
        cell = spec.cell_name(x)
        if cell in current.fixed:
            if current.fixed[cell] != y:
                raise ZeroProbabilityError(
                    f"cell {cell} already collapsed to {current.fixed[cell]}, asked for {y}"
                )
            continue
        rotated = current.apply_unitary(fourier, [cell])
        current, p = rotated.collapse_register(cell, y)
        prob *= p
    return current, prob


def computational_support(
    state: QuantumState,
    threshold: float = SUPPORT_TOL,
    max_functions: int = MAX_SUPPORT_FUNCTIONS,
) -> set[tuple[int, ...]]:
    """Set of full function tables carrying probability mass.

    Collapsed cells contribute their frozen value to every table.  The
    enumeration is capped; use it only at desk scale.
    """
    spec = spec_of(state)
    if spec.function_count() > max_functions:
        raise CapacityError(
            f"{spec.function_count()} candidate tables exceed the cap {max_functions}"
        )
    fourier = spec.group.fourier_matrix
    live = [n for n in spec.cell_names() if n not in state.fixed]
    rotated = state
    for cell in live:
        rotated = rotated.apply_unitary(fourier, [cell])
    if not live:
        table = tuple(state.fixed[spec.cell_name(x)] for x in range(spec.domain_size))
        return {table}
    # Oracle cells sit last and in domain order, so after summing out the
    # other axes the remaining axes are the live cells in ascending x.
    axes = tuple(rotated.layout.axis(n) for n in live)
    other = tuple(a for a in range(rotated.amps.ndim) if a not in axes)
    p = np.abs(rotated.amps) ** 2
    if other:
        p = p.sum(axis=other)

    support = set()
    live_points = [int(n[1:]) for n in live]
    for coords in np.argwhere(p > threshold):
        table = [0] * spec.domain_size
        for point, value in zip(live_points, coords):
            table[point] = int(value)
        for x in range(spec.domain_size):
            cell = spec.cell_name(x)
            if cell in state.fixed:
                table[x] = state.fixed[cell]
        support.add(tuple(table))
    return support


def standard_query_permutation(group: GroupSpec, h, x_dim: int) -> np.ndarray:
    """Permutation realizing |x>|y> -> |x>|y + h(x)> for a fixed table."""
    n = group.order
    perm = np.empty(x_dim * n, dtype=np.int64)
    for x in range(x_dim):
        hx = int(h[x])
        for y in range(n):
            perm[x * n + y] = x * n + group.add(y, hx)
    return perm


def constant_add_permutation(group: GroupSpec, value: int) -> np.ndarray:
    return group.add_table[:, int(value)].copy()
