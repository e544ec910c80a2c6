"""Dense pure-state engine over named registers.

Amplitudes are stored as a complex128 ndarray shaped by the register
dimensions in declaration order.  Oracle-cell registers always come last
in the layout, so truncating a learned cell is a contiguous slice.
Registers that have been truncated away live on in ``fixed`` with the
basis value they were frozen at.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .algebra import GroupSpec
from .errors import (
    CapacityError,
    DimensionMismatchError,
    LayoutError,
    NonUnitaryError,
    ZeroProbabilityError,
)

DEFAULT_AMPLITUDE_CAP = 2**24
UNITARY_TOL = 1e-10
ZERO_PROB_TOL = 1e-12
DUMP_AMP_TOL = 1e-12

KIND_WORK = "work"
KIND_ORACLE = "oracle"
KIND_MESSAGE = "message"
_KINDS = (KIND_WORK, KIND_ORACLE, KIND_MESSAGE)


@dataclass(frozen=True)
class Register:
    name: str
    dim: int
    kind: str = KIND_WORK

    def __post_init__(self) -> None:
        if not self.name:
            raise LayoutError("register name must be non-empty")
        if int(self.dim) < 2:
            raise LayoutError(f"register {self.name!r} needs dimension >= 2, got {self.dim}")
        if self.kind not in _KINDS:
            raise LayoutError(f"unknown register kind {self.kind!r}")
        object.__setattr__(self, "dim", int(self.dim))


class RegisterLayout:
    """Ordered collection of named registers plus optional oracle metadata.

    ``group`` and ``domain_size`` describe the oracle range and domain when
    the layout carries oracle cells; they stay None for purely classical
    layouts (fixed-oracle runs).
    """

    def __init__(
        self,
        registers,
        group: GroupSpec | None = None,
        domain_size: int | None = None,
        amplitude_cap: int = DEFAULT_AMPLITUDE_CAP,
    ):
        registers = tuple(registers)
        if not registers:
            raise LayoutError("zero-register layouts are not allowed")
        names = [r.name for r in registers]
        if len(set(names)) != len(names):
            raise LayoutError(f"duplicate register names in {names}")
        seen_oracle = False
        for r in registers:
            if r.kind == KIND_ORACLE:
                seen_oracle = True
            elif seen_oracle:
                raise LayoutError("oracle cells must come after all other registers")
        self.registers = registers
        self.group = group
        self.domain_size = domain_size
        self.amplitude_cap = int(amplitude_cap)
        self._index = {r.name: i for i, r in enumerate(registers)}
        total = math.prod(r.dim for r in registers)
        if total > self.amplitude_cap:
            raise CapacityError(
                f"layout needs {total} amplitudes, cap is {self.amplitude_cap}"
            )
        self.total_dim = total

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(r.dim for r in self.registers)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(r.name for r in self.registers)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def axis(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise LayoutError(f"no register named {name!r}") from None

    def register(self, name: str) -> Register:
        return self.registers[self.axis(name)]

    def dim(self, name: str) -> int:
        return self.register(name).dim

    def drop(self, name: str) -> "RegisterLayout":
        kept = [r for r in self.registers if r.name != name]
        return RegisterLayout(kept, self.group, self.domain_size, self.amplitude_cap)

    def insert_before_oracle(self, reg: Register) -> "RegisterLayout":
        """New layout with ``reg`` appended after the last non-oracle register."""
        pos = len(self.registers)
        for i, r in enumerate(self.registers):
            if r.kind == KIND_ORACLE:
                pos = i
                break
        regs = list(self.registers)
        regs.insert(pos, reg)
        return RegisterLayout(regs, self.group, self.domain_size, self.amplitude_cap)

    def to_json(self):
        meta = {
            "registers": [[r.name, r.dim, r.kind] for r in self.registers],
            "amplitude_cap": self.amplitude_cap,
        }
        if self.group is not None:
            meta["group"] = self.group.to_json()
        if self.domain_size is not None:
            meta["domain_size"] = self.domain_size
        return meta

    @classmethod
    def from_json(cls, data) -> "RegisterLayout":
        regs = [Register(str(n), int(d), str(k)) for n, d, k in data["registers"]]
        group = GroupSpec.from_json(data["group"]) if "group" in data else None
        return cls(
            regs,
            group=group,
            domain_size=data.get("domain_size"),
            amplitude_cap=data.get("amplitude_cap", DEFAULT_AMPLITUDE_CAP),
        )


def _as_unitary(u: np.ndarray, dim: int) -> np.ndarray:
    u = np.asarray(u, dtype=np.complex128)
    if u.shape != (dim, dim):
        raise DimensionMismatchError(f"matrix shape {u.shape} does not act on dimension {dim}")
    err = np.abs(u @ u.conj().T - np.eye(dim)).max()
    if err > UNITARY_TOL:
        raise NonUnitaryError(f"matrix deviates from unitarity by {err:.3e}")
    return u


@dataclass
class QuantumState:
    """Normalized pure state over a RegisterLayout.

    ``fixed`` maps names of truncated registers to the basis value they
    were frozen at when they were sliced out of the dense array.
    """

    layout: RegisterLayout
    amps: np.ndarray
    fixed: dict[str, int] = field(default_factory=dict)

    @classmethod
    def zero(cls, layout: RegisterLayout) -> "QuantumState":
        amps = np.zeros(layout.dims, dtype=np.complex128)
        amps[(0,) * len(layout.dims)] = 1.0
        return cls(layout, amps)

    @classmethod
    def from_vector(cls, layout: RegisterLayout, vector, fixed=None) -> "QuantumState":
        amps = np.asarray(vector, dtype=np.complex128).reshape(layout.dims)
        s = cls(layout, amps.copy(), dict(fixed or {}))
        n = s.norm()
        if abs(n - 1.0) > 1e-9:
            raise DimensionMismatchError(f"state vector must be normalized, got norm {n}")
        return s

    # -- basic queries -------------------------------------------------

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amps) ** 2)))

    def vector(self) -> np.ndarray:
        return self.amps.reshape(-1)

    def copy(self) -> "QuantumState":
        return QuantumState(self.layout, self.amps.copy(), dict(self.fixed))

    def is_fixed(self, name: str) -> bool:
        return name in self.fixed

    def probabilities(self, name: str) -> np.ndarray:
        """Marginal Born probabilities of one register in its stored basis."""
        if name in self.fixed:
            raise LayoutError(f"register {name!r} was truncated; its value is fixed")
        ax = self.layout.axis(name)
        p = np.abs(self.amps) ** 2
        axes = tuple(i for i in range(p.ndim) if i != ax)
        probs = p.sum(axis=axes)
        total = probs.sum()
        if total <= 0:
            raise ZeroProbabilityError("state has zero norm")
        return probs / total

    # -- evolution -----------------------------------------------------

    def apply_unitary(self, u: np.ndarray, targets) -> "QuantumState":
        targets = list(targets)
        for t in targets:
            if t in self.fixed:
                raise LayoutError(f"cannot apply a matrix to truncated register {t!r}")
        axes = [self.layout.axis(t) for t in targets]
        dims = [self.layout.dims[a] for a in axes]
        block = math.prod(dims)
        u = _as_unitary(u, block)
        moved = np.moveaxis(self.amps, axes, range(len(axes)))
        shape = moved.shape
        out = (u @ moved.reshape(block, -1)).reshape(shape)
        out = np.moveaxis(out, range(len(axes)), axes)
        return QuantumState(self.layout, out, dict(self.fixed))

    def permute_basis(self, perm: np.ndarray, targets) -> "QuantumState":
        """Relabel joint basis states of ``targets``: |j> -> |perm[j]>."""
        targets = list(targets)
        for t in targets:
            if t in self.fixed:
                raise LayoutError(f"cannot permute truncated register {t!r}")
        axes = [self.layout.axis(t) for t in targets]
        dims = [self.layout.dims[a] for a in axes]
        block = math.prod(dims)
        perm = np.asarray(perm, dtype=np.int64)
        if perm.shape != (block,) or sorted(perm.tolist()) != list(range(block)):
            raise DimensionMismatchError("not a permutation of the joint target space")
        moved = np.moveaxis(self.amps, axes, range(len(axes)))
        shape = moved.shape
        flat = moved.reshape(block, -1)
        out = np.empty_like(flat)
        out[perm] = flat
        out = np.moveaxis(out.reshape(shape), range(len(axes)), axes)
        return QuantumState(self.layout, out, dict(self.fixed))

    def phase_by_value(self, name: str, phases: np.ndarray) -> "QuantumState":
        """Multiply each basis slice of one register by a unit phase."""
        ax = self.layout.axis(name)
        phases = np.asarray(phases, dtype=np.complex128)
        if phases.shape != (self.layout.dims[ax],):
            raise DimensionMismatchError("phase vector length mismatch")
        if np.abs(np.abs(phases) - 1.0).max() > UNITARY_TOL:
            raise NonUnitaryError("phases must have unit modulus")
        shape = [1] * self.amps.ndim
        shape[ax] = len(phases)
        return QuantumState(self.layout, self.amps * phases.reshape(shape), dict(self.fixed))

    # -- measurement ---------------------------------------------------

    def postselect(self, name: str, value: int) -> tuple["QuantumState", float]:
        """Project one register onto a stored-basis value and renormalize.

        Returns the conditioned state and the branch probability.  Raises
        ZeroProbabilityError when the branch carries less than 1e-12 of
        the probability mass.
        """
        ax = self.layout.axis(name)
        dim = self.layout.dims[ax]
        value = int(value)
        if not 0 <= value < dim:
            raise DimensionMismatchError(f"value {value} out of range for {name!r}")
        slicer = [slice(None)] * self.amps.ndim
        slicer[ax] = value
        branch = self.amps[tuple(slicer)]
        prob = float(np.sum(np.abs(branch) ** 2))
        if prob < ZERO_PROB_TOL:
            raise ZeroProbabilityError(
                f"branch {name}={value} has probability {prob:.3e}"
            )
        out = np.zeros_like(self.amps)
        out[tuple(slicer)] = branch / math.sqrt(prob)
        return QuantumState(self.layout, out, dict(self.fixed)), prob

    def collapse_register(self, name: str, value: int) -> tuple["QuantumState", float]:
        """Postselect and then slice the register out of the dense array."""
        conditioned, prob = self.postselect(name, value)
        ax = self.layout.axis(name)
        slicer = [slice(None)] * conditioned.amps.ndim
        slicer[ax] = int(value)
        amps = conditioned.amps[tuple(slicer)]
        fixed = dict(self.fixed)
        fixed[name] = int(value)
        return QuantumState(self.layout.drop(name), amps.copy(), fixed), prob

    def attach_register(self, reg: Register, vector=None, basis_value: int | None = None) -> "QuantumState":
        """Tensor a fresh register in a product state onto this state.

        The register is inserted just before the oracle block so oracle
        cells stay last.  Exactly one of ``vector``/``basis_value`` picks
        the register's state; default is |0>.
        """
        if reg.name in self.layout or reg.name in self.fixed:
            raise LayoutError(f"register {reg.name!r} already present")
        if vector is None:
            v = np.zeros(reg.dim, dtype=np.complex128)
            v[basis_value or 0] = 1.0
        else:
            v = np.asarray(vector, dtype=np.complex128).reshape(reg.dim)
            n = np.linalg.norm(v)
            if abs(n - 1.0) > 1e-9:
                raise DimensionMismatchError("attached vector must be normalized")
        layout = self.layout.insert_before_oracle(reg)
        pos = layout.axis(reg.name)
        amps = np.tensordot(self.amps, v, axes=0)  # appends the new axis last
        amps = np.moveaxis(amps, -1, pos)
        return QuantumState(layout, amps, dict(self.fixed))

    def attach_fixed(self, name: str, value: int) -> "QuantumState":
        """Record a register that exists only as a frozen classical value."""
        if name in self.layout or name in self.fixed:
            raise LayoutError(f"register {name!r} already present")
        fixed = dict(self.fixed)
        fixed[name] = int(value)
        return QuantumState(self.layout, self.amps, fixed)

    def rename_register(self, old: str, new: str) -> "QuantumState":
        if old in self.fixed:
            fixed = dict(self.fixed)
            fixed[new] = fixed.pop(old)
            return QuantumState(self.layout, self.amps, fixed)
        ax = self.layout.axis(old)
        regs = list(self.layout.registers)
        r = regs[ax]
        regs[ax] = Register(new, r.dim, r.kind)
        layout = RegisterLayout(regs, self.layout.group, self.layout.domain_size,
                                self.layout.amplitude_cap)
        return QuantumState(layout, self.amps, dict(self.fixed))

    # -- reductions ----------------------------------------------------

    def partial_trace(self, keep, kept_cap: int = 4096) -> "DensityOperator":
        keep = list(keep)
        axes = [self.layout.axis(k) for k in keep]
        kept_dim = math.prod(self.layout.dims[a] for a in axes)
        if kept_dim > kept_cap:
            raise CapacityError(f"kept dimension {kept_dim} exceeds cap {kept_cap}")
        moved = np.moveaxis(self.amps, axes, range(len(axes)))
        mat = moved.reshape(kept_dim, -1)
        rho = mat @ mat.conj().T
        regs = [self.layout.register(k) for k in keep]
        return DensityOperator(regs, rho)

    def schmidt_spectrum(self, part_a) -> np.ndarray:
        """Singular values across the cut (part_a : everything else)."""
        part_a = [p for p in part_a if p not in self.fixed]
        axes = [self.layout.axis(p) for p in part_a]
        if not axes or len(axes) == len(self.layout.dims):
            return np.array([self.norm()])
        da = math.prod(self.layout.dims[a] for a in axes)
        moved = np.moveaxis(self.amps, axes, range(len(axes)))
        return np.linalg.svd(moved.reshape(da, -1), compute_uv=False)

    def schmidt_rank(self, part_a, tol: float = 1e-9) -> int:
        sv = self.schmidt_spectrum(part_a)
        return int(np.sum(sv > tol))

    # -- serialization -------------------------------------------------

    def dump(self) -> dict:
        flat = self.vector()
        entries = []
        for i in np.nonzero(np.abs(flat) > DUMP_AMP_TOL)[0]:
            a = flat[i]
            entries.append({"basis_index": int(i), "re": float(a.real), "im": float(a.imag)})
        return {"layout": self.layout.to_json(), "fixed": dict(self.fixed), "amps": entries}

    @classmethod
    def load(cls, data) -> "QuantumState":
        layout = RegisterLayout.from_json(data["layout"])
        flat = np.zeros(layout.total_dim, dtype=np.complex128)
        for e in data["amps"]:
            flat[int(e["basis_index"])] = complex(float(e["re"]), float(e["im"]))
        fixed = {str(k): int(v) for k, v in data.get("fixed", {}).items()}
        return cls(layout, flat.reshape(layout.dims), fixed)


class DensityOperator:
    """Mixed state over a list of registers, stored as a dense matrix."""

    def __init__(self, registers, matrix: np.ndarray, check: bool = True):
        self.registers = tuple(registers)
        dim = math.prod(r.dim for r in self.registers)
        matrix = np.asarray(matrix, dtype=np.complex128)
        if matrix.shape != (dim, dim):
            raise DimensionMismatchError(
                f"matrix shape {matrix.shape} does not match register dimension {dim}"
            )
        self.matrix = matrix
        if check:
            self.validate()

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def validate(self) -> None:
        herm = np.abs(self.matrix - self.matrix.conj().T).max()
        if herm > 1e-10:
            raise DimensionMismatchError(f"matrix is not Hermitian (deviation {herm:.3e})")
        tr = self.matrix.trace()
        if abs(tr - 1.0) > 1e-9:
            raise DimensionMismatchError(f"trace is {tr}, expected 1")
        evals = np.linalg.eigvalsh(self.matrix)
        if evals.min() < -1e-9:
            raise DimensionMismatchError(f"negative eigenvalue {evals.min():.3e}")

    @classmethod
    def from_pure(cls, registers, vector) -> "DensityOperator":
        v = np.asarray(vector, dtype=np.complex128).reshape(-1)
        return cls(registers, np.outer(v, v.conj()))

    def overlap(self, vector) -> float:
        """<psi| rho |psi> for a pure state given as a vector."""
        v = np.asarray(vector, dtype=np.complex128).reshape(-1)
        if v.shape[0] != self.dim:
            raise DimensionMismatchError("vector length does not match operator dimension")
        val = float(np.real(v.conj() @ self.matrix @ v))
        return min(max(val, 0.0), 1.0)

    def eig_ensemble(self, tol: float = 1e-12) -> list[tuple[float, np.ndarray]]:
        """Spectral decomposition as a pure-state ensemble, heaviest first."""
        evals, evecs = np.linalg.eigh(self.matrix)
        out = []
        for i in range(len(evals) - 1, -1, -1):
            p = float(evals[i])
            if p > tol:
                out.append((p, canonical_phase(evecs[:, i])))
        return out

    def to_json(self) -> dict:
        return {
            "registers": [[r.name, r.dim, r.kind] for r in self.registers],
            "matrix": [[[float(z.real), float(z.imag)] for z in row] for row in self.matrix],
        }

    @classmethod
    def from_json(cls, data) -> "DensityOperator":
        regs = [Register(str(n), int(d), str(k)) for n, d, k in data["registers"]]
        mat = np.array(
            [[complex(re, im) for re, im in row] for row in data["matrix"]],
            dtype=np.complex128,
        )
        return cls(regs, mat)


def canonical_phase(vector: np.ndarray) -> np.ndarray:
    """Rotate a global phase so the largest-magnitude entry is real positive.

    Keeps extracted vectors byte-stable across runs; SVD and eigh phases
    are otherwise arbitrary.
    """
    v = np.asarray(vector, dtype=np.complex128)
    idx = int(np.argmax(np.abs(v)))
    pivot = v[idx]
    if abs(pivot) == 0:
        return v
    return v * (abs(pivot) / pivot)


def overlap(rho: DensityOperator, vector) -> float:
    return rho.overlap(vector)
