"""Purified-oracle behavior pinned against hand-built references.

The reference construction never touches the oracle module's kernels: it
builds the joint superposition over all tables directly in the
computational basis with plain numpy, applies queries as permutations,
and converts bases by explicit matrix multiplication.
"""

import itertools

import numpy as np
import pytest

from qromlab import circuits
from qromlab.algebra import GroupSpec
from qromlab.errors import DimensionMismatchError, ZeroProbabilityError
from qromlab.oracle import (
    OracleSpec,
    PartialOracle,
    computational_support,
    fourier_support_size,
    init_purified,
    oracle_query,
    project_partial,
    weight,
)
from qromlab.qstate import QuantumState, Register


def spec_z2(n=2):
    return OracleSpec(n, GroupSpec((2,)))


def to_computational(state):
    """Rotate every live oracle cell to the computational basis."""
    f = state.layout.group.fourier_matrix
    out = state
    for reg in state.layout.registers:
        if reg.kind == "oracle":
            out = out.apply_unitary(f, [reg.name])
    return out


def hand_state_after_classical_query(spec, x, y0=0):
    """Sum over all tables of |y0 + h(x)> |h>, built from scratch."""
    q = spec.group.order
    n = spec.domain_size
    amps = np.zeros((q,) * (n + 1), dtype=np.complex128)
    norm = 1 / np.sqrt(q**n)
    for table in itertools.product(range(q), repeat=n):
        y = spec.group.add(y0, table[x])
        amps[(y,) + table] = norm
    return amps


def test_initial_state_is_uniform_over_tables():
    spec = spec_z2(2)
    s = init_purified(spec, [Register("Yw", 2)])
    comp = to_computational(s)
    # |0> on the work register, uniform over the 4 tables
    expect = np.zeros((2, 2, 2), dtype=np.complex128)
    expect[0] = 0.5
    assert np.allclose(comp.amps, expect, atol=1e-12)


@pytest.mark.parametrize("factors,x", [((2,), 0), ((2,), 1), ((3,), 1), ((2, 2), 0)])
def test_classical_query_matches_hand_reference(factors, x):
    g = GroupSpec(factors)
    spec = OracleSpec(2, g)
    s = init_purified(spec, [Register("Yw", g.order)])
    s = oracle_query(s, "Yw", x_const=x)
    assert np.allclose(
        to_computational(s).amps, hand_state_after_classical_query(spec, x), atol=1e-12
    )


@pytest.mark.parametrize("factors", [(2,), (3,), (2, 2)])
def test_classical_query_weight_value(factors):
    """Weight of a classically queried cell is 1 - 1/|Y|.

    Derived from the hand reference: the cell's reduced density matrix is
    maximally mixed, so its flat-Fourier mass is 1/|Y|.
    """
    g = GroupSpec(factors)
    q = g.order
    spec = OracleSpec(2, g)
    amps = hand_state_after_classical_query(spec, 0)
    # reduced density matrix of cell 0 in the computational basis
    mat = np.moveaxis(amps, 1, 0).reshape(q, -1)
    rho = mat @ mat.conj().T
    f = g.fourier_matrix
    rho_hat = f.conj().T @ rho @ f
    derived = 1.0 - float(rho_hat[0, 0].real)
    assert derived == pytest.approx(1.0 - 1.0 / q, abs=1e-12)

    s = init_purified(spec, [Register("Yw", q)])
    s = oracle_query(s, "Yw", x_const=0)
    assert weight(s, 0) == pytest.approx(derived, abs=1e-12)
    assert weight(s, 1) == pytest.approx(0.0, abs=1e-12)


def test_query_with_fourier_basis_y_shifts_single_cell():
    g = GroupSpec((2,))
    spec = OracleSpec(2, g)
    s = init_purified(spec, [Register("Yw", 2)])
    # prepare the y register in the Fourier ket |1hat>
    flip = np.array([[0, 1], [1, 0]])
    s = s.apply_unitary(flip, ["Yw"]).apply_unitary(g.fourier_matrix, ["Yw"])
    s = oracle_query(s, "Yw", x_const=1)
    # cell H1 moves to Fourier index -1 = 1, everything else untouched
    expect = np.zeros((2, 2, 2), dtype=np.complex128)
    expect[0, 0, 1] = g.fourier_matrix[0, 1]
    expect[1, 0, 1] = g.fourier_matrix[1, 1]
    assert np.allclose(s.amps, expect, atol=1e-12)
    assert weight(s, 1) == pytest.approx(1.0)
    assert fourier_support_size(s) == 1


def test_second_query_into_fresh_register_keeps_weight():
    spec = spec_z2(2)
    s = init_purified(spec, [Register("Y1", 2), Register("Y2", 2)])
    s = oracle_query(s, "Y1", x_const=0)
    w1 = weight(s, 0)
    s = oracle_query(s, "Y2", x_const=0)
    assert weight(s, 0) == pytest.approx(w1, abs=1e-12)
    # both registers hold the same value as the cell: y1 xor y2 is always 0
    parity = np.eye(4)[[0, 1, 3, 2]]  # cnot y1 -> y2
    probe = s.apply_unitary(parity, ["Y1", "Y2"])
    assert probe.probabilities("Y2")[0] == pytest.approx(1.0)


def test_double_query_same_register_is_identity_for_involutive_groups():
    rng = np.random.default_rng(0)
    for factors in [(2,), (2, 2)]:
        g = GroupSpec(factors)
        spec = OracleSpec(2, g)
        s = init_purified(spec, [Register("X", 2), Register("Yw", g.order)])
        s = s.apply_unitary(circuits.random_unitary(rng, 2), ["X"])
        s = s.apply_unitary(circuits.random_unitary(rng, g.order), ["Yw"])
        twice = oracle_query(oracle_query(s, "Yw", x_reg="X"), "Yw", x_reg="X")
        assert np.allclose(twice.amps, s.amps, atol=1e-10)


def test_query_then_inverse_is_identity():
    rng = np.random.default_rng(1)
    g = GroupSpec((3,))
    spec = OracleSpec(2, g)
    s = init_purified(spec, [Register("X", 2), Register("Yw", 3)])
    s = s.apply_unitary(circuits.random_unitary(rng, 2), ["X"])
    s = s.apply_unitary(circuits.random_unitary(rng, 3), ["Yw"])
    out = oracle_query(s, "Yw", x_reg="X")
    back = oracle_query(out, "Yw", x_reg="X", inverse=True)
    assert np.allclose(back.amps, s.amps, atol=1e-10)


def test_query_against_reference_permutation_on_random_states():
    """Fourier-picture kernel agrees with the computational-picture route."""
    rng = np.random.default_rng(2)
    for factors in [(2,), (3,), (2, 2)]:
        g = GroupSpec(factors)
        q = g.order
        spec = OracleSpec(2, g)
        base = init_purified(spec, [Register("X", 2), Register("Yw", q)])
        v = rng.normal(size=base.layout.total_dim) + 1j * rng.normal(size=base.layout.total_dim)
        v /= np.linalg.norm(v)
        s = QuantumState.from_vector(base.layout, v)

        got = to_computational(oracle_query(s, "Yw", x_reg="X"))

        comp = to_computational(s)
        arr = comp.amps.copy()
        out = np.zeros_like(arr)
        for x in range(2):
            for table_idx in np.ndindex(*(q,) * 2):
                hx = table_idx[x]
                for y in range(q):
                    out[(x, g.add(y, hx)) + table_idx] = arr[(x, y) + table_idx]
        assert np.allclose(got.amps, out, atol=1e-9)


def test_project_partial_on_uniform_oracle():
    g = GroupSpec((3,))
    spec = OracleSpec(2, g)
    s = init_purified(spec, [Register("Yw", 3)])
    projected, prob = project_partial(s, PartialOracle(((0, 2),)))
    assert prob == pytest.approx(1 / 3)
    assert projected.fixed == {"H0": 2}
    assert weight(projected, 0) == 0.0
    assert computational_support(projected) == {(2, y) for y in range(3)}


def test_project_partial_contradiction_raises():
    spec = spec_z2(2)
    s = init_purified(spec, [Register("Yw", 2)])
    s, _ = project_partial(s, PartialOracle(((0, 1),)))
    with pytest.raises(ZeroProbabilityError):
        project_partial(s, PartialOracle(((0, 0),)))


def test_project_partial_consistent_recollapse_is_noop():
    spec = spec_z2(2)
    s = init_purified(spec, [Register("Yw", 2)])
    s, _ = project_partial(s, PartialOracle(((0, 1),)))
    again, prob = project_partial(s, PartialOracle(((0, 1),)))
    assert prob == pytest.approx(1.0)
    assert np.allclose(again.amps, s.amps)


def test_query_on_collapsed_cell_acts_classically():
    g = GroupSpec((2,))
    spec = OracleSpec(2, g)
    s = init_purified(spec, [Register("Yw", 2)])
    s, _ = project_partial(s, PartialOracle(((1, 1),)))
    s = oracle_query(s, "Yw", x_const=1)
    assert s.probabilities("Yw")[1] == pytest.approx(1.0)
    # and again, through a live address register spanning both cells
    s2 = init_purified(spec, [Register("X", 2), Register("Yw", 2)])
    s2, _ = project_partial(s2, PartialOracle(((0, 1),)))
    plus = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
    s2 = s2.apply_unitary(plus, ["X"])
    s2 = oracle_query(s2, "Yw", x_reg="X")
    s2, _ = s2.postselect("X", 0)
    assert s2.probabilities("Yw")[1] == pytest.approx(1.0)


def test_support_of_postselected_query_branch():
    spec = spec_z2(2)
    s = init_purified(spec, [Register("Yw", 2)])
    s = oracle_query(s, "Yw", x_const=0)
    assert computational_support(s) == {(a, b) for a in range(2) for b in range(2)}
    branch, prob = s.postselect("Yw", 1)
    assert prob == pytest.approx(0.5)
    assert computational_support(branch) == {(1, 0), (1, 1)}


def test_fourier_support_bounded_by_query_count():
    rng = np.random.default_rng(9)
    spec = OracleSpec(3, GroupSpec((2,)))
    for queries in range(4):
        for _ in range(10):
            ops = circuits.random_ops(spec, rng, queries)
            state = circuits.run_purified(spec, ops)
            assert fourier_support_size(state) <= queries


def test_purified_distribution_matches_average_over_tables():
    rng = np.random.default_rng(12)
    for factors in [(2,), (3,)]:
        spec = OracleSpec(2, GroupSpec(factors))
        for queries in [1, 2, 3]:
            ops = circuits.random_ops(spec, rng, queries)
            purified = circuits.work_distribution(circuits.run_purified(spec, ops))
            averaged = circuits.averaged_fixed_distribution(spec, ops)
            assert circuits.total_variation(purified, averaged) <= 1e-9


def test_weight_invariant_under_work_unitaries():
    rng = np.random.default_rng(4)
    spec = spec_z2(2)
    s = init_purified(spec, [Register("X", 2), Register("Yw", 2)])
    s = oracle_query(s, "Yw", x_reg="X")
    u = circuits.random_unitary(rng, 4)
    moved = s.apply_unitary(u, ["X", "Yw"])
    for x in range(2):
        assert weight(moved, x) == pytest.approx(weight(s, x), abs=1e-12)


def test_query_register_dimension_checks():
    spec = spec_z2(2)
    s = init_purified(spec, [Register("X", 4), Register("Yw", 2)])
    with pytest.raises(DimensionMismatchError):
        oracle_query(s, "Yw", x_reg="X")  # address register larger than domain
    s2 = init_purified(spec, [Register("Yw", 3)])
    with pytest.raises(DimensionMismatchError):
        oracle_query(s2, "Yw", x_const=0)  # wrong range dimension
