import numpy as np
import pytest

from qromlab.algebra import GroupSpec, cyclic
from qromlab.errors import DomainError


def test_z2_fourier_is_hadamard():
    g = GroupSpec((2,))
    h = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
    assert np.allclose(g.fourier_matrix, h)


def test_klein_group_character_value():
    g = GroupSpec((2, 2))
    yhat = g.encode((1, 0))
    y = g.encode((1, 1))
    assert g.character(yhat, y) == pytest.approx(-1.0)


def test_character_is_symmetric_and_multiplicative():
    g = GroupSpec((2, 3))
    for yhat in range(g.order):
        for a in range(g.order):
            assert g.character(yhat, a) == pytest.approx(g.character(a, yhat))
            for b in range(g.order):
                prod = g.character(yhat, a) * g.character(yhat, b)
                assert g.character(yhat, g.add(a, b)) == pytest.approx(prod)


def test_character_orthogonality():
    g = GroupSpec((2, 3))
    t = g.character_table
    gram = t @ t.conj().T
    assert np.allclose(gram, g.order * np.eye(g.order), atol=1e-12)


def test_fourier_matrix_unitary_and_flat_column():
    for factors in [(2,), (3,), (4,), (2, 2), (2, 3)]:
        g = GroupSpec(factors)
        f = g.fourier_matrix
        assert np.allclose(f @ f.conj().T, np.eye(g.order), atol=1e-12)
        # flat Fourier state in computational coordinates
        assert np.allclose(f[:, 0], np.full(g.order, 1 / np.sqrt(g.order)))


def test_encode_decode_roundtrip():
    g = GroupSpec((2, 3, 2))
    for idx in range(g.order):
        assert g.encode(g.decode(idx)) == idx


def test_group_addition_tables():
    g = GroupSpec((2, 2))
    # component-wise xor, not mod-4 addition
    assert g.add(1, 1) == 0
    assert g.add(2, 3) == 1
    assert g.add_table[3, 3] == 0
    g4 = cyclic(4)
    assert g4.add(2, 3) == 1
    assert g4.neg(1) == 3
    for a in range(g4.order):
        for b in range(g4.order):
            assert g4.sub(g4.add(a, b), b) == a


def test_bad_group_specs_rejected():
    with pytest.raises(DomainError):
        GroupSpec(())
    with pytest.raises(DomainError):
        GroupSpec((1,))
    with pytest.raises(DomainError):
        GroupSpec((2,)).check(2)


def test_json_roundtrip():
    g = GroupSpec((2, 3))
    assert GroupSpec.from_json(g.to_json()) == g
