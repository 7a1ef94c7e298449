import cmath
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ghz_ensembles.fock import (
    CUTOFF,
    CutoffError,
    ModeId,
    PhaseLedger,
    Polarization,
    SparseState,
    block_reference,
    chain_state,
    create,
    cyclic,
    fidelity,
    ghz_reference,
    h,
    inner_product,
    pair_state,
    project_total,
    support,
    tensor,
    v,
    vacuum,
)

R = 1 / math.sqrt(2)


def test_mode_index_layout():
    assert h(1).index() == 0
    assert v(1).index() == 1
    assert v(3).index() == 5
    assert ModeId.from_index(5) == ModeId(3, Polarization.V)
    with pytest.raises(ValueError):
        h(5).index(4)


def test_cyclic_wraps():
    assert cyclic(5, 4) == 1
    assert cyclic(0, 4) == 4
    assert cyclic(3, 4) == 3


def test_vacuum_and_creation_factors():
    s = create(create(vacuum(1), h(1)), h(1))
    assert s.amplitudes == {(2, 0): pytest.approx(math.sqrt(2))}
    with pytest.raises(CutoffError):
        create(s, h(1))


def test_state_rejects_wrong_key_length():
    with pytest.raises(ValueError):
        SparseState(2, {(1, 0, 0): 1.0})


def test_prune_small_amplitudes():
    s = SparseState(2, {(1, 0): 1.0, (0, 1): 1e-16})
    assert list(s.amplitudes) == [(1, 0)]


def test_pair_state_amplitudes():
    s = pair_state(2, 1, 2, math.pi / 2)
    assert s.amplitudes[(1, 0, 0, 0)] == pytest.approx(R)
    assert s.amplitudes[(0, 0, 0, 1)] == pytest.approx(1j * R)
    assert s.norm() == pytest.approx(1.0)


def test_chain_state_counts_and_norm():
    s = chain_state(4)
    assert len(s) == 16
    assert s.norm() == pytest.approx(1.0)
    # each ensemble holds at most two excitations
    assert max(max(k) for k in s.amplitudes) <= CUTOFF


def test_tensor_append_and_join():
    a = pair_state(4, 1, 2)
    b = pair_state(4, 3, 4)
    joined = tensor(a, b, offset=0)
    assert joined.mode_count == 8
    assert joined.norm() == pytest.approx(1.0)
    appended = tensor(vacuum(1), vacuum(2))
    assert appended.mode_count == 6
    with pytest.raises(ValueError):
        tensor(a, pair_state(4, 1, 3), offset=0)


def test_support_lists_occupied_modes():
    assert support(pair_state(4, 2, 3)) == {h(2).index(), v(3).index()}


def test_inner_product_is_conjugate_linear_in_first():
    a = SparseState(2, {(1, 0): 1j})
    b = SparseState(2, {(1, 0): 1.0})
    assert inner_product(a, b) == pytest.approx(-1j)


def test_fidelity_requires_normalized():
    with pytest.raises(ValueError):
        fidelity(SparseState(2, {(1, 0): 2.0}), SparseState(2, {(1, 0): 1.0}))


def test_ghz_reference_values():
    g = ghz_reference(3, math.pi)
    assert g.amplitudes[(1, 0) * 3] == pytest.approx(R)
    assert g.amplitudes[(0, 1) * 3] == pytest.approx(-R)
    with pytest.raises(ValueError):
        ghz_reference(1)


def test_block_reference_terms():
    ref = block_reference(4, 1, 4, 0.3)
    assert ref.amplitudes[(1, 0, 1, 0, 1, 0, 0, 0)] == pytest.approx(R)
    assert ref.amplitudes[(0, 0, 0, 1, 0, 1, 0, 1)] == pytest.approx(R * cmath.exp(0.3j))


def test_phase_ledger_reverse_orientation():
    ledger = PhaseLedger(4, {(1, 2): 0.4, (4, 1): 0.1})
    assert ledger.phase(2, 1) == pytest.approx(-0.4)
    assert ledger.phase(4, 5) == pytest.approx(0.1)
    assert ledger.total_phase == pytest.approx(0.5)


def test_project_total_keeps_single_excitations():
    kept = project_total(chain_state(2), [1, 2])
    assert all(sum(k[:2]) == 1 and sum(k[2:]) == 1 for k in kept.amplitudes)
    assert kept.norm() ** 2 == pytest.approx(0.5)


def test_json_roundtrip():
    s = pair_state(3, 1, 3, 0.7)
    assert SparseState.from_json(s.to_json()).amplitudes == s.amplitudes


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 2 * math.pi), min_size=2, max_size=4))
def test_chain_state_is_normalized_for_any_phases(phases):
    n = len(phases)
    ledger = PhaseLedger(n, {(i + 1, cyclic(i + 2, n)): p for i, p in enumerate(phases)})
    assert chain_state(n, ledger).norm() == pytest.approx(1.0, abs=1e-12)
