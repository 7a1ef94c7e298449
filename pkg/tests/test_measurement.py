import cmath
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ghz_ensembles.fock import Polarization, SparseState, chain_state, create, h, pair_state, tensor, v, vacuum
from ghz_ensembles.loss import BranchMixture, NoiseParams, damp_mixture, density_distance
from ghz_ensembles.measurement import (
    HADAMARD,
    IDENTITY,
    ClickOutcome,
    RotationSpec,
    _rotation_table,
    acceptance_probability,
    apply_frame,
    detect_ensemble_exact,
    detect_ensemble_sample,
    frame_sign,
    postselect_all,
    rotate_ensemble,
)

R = 1 / math.sqrt(2)


def one_each():
    return create(create(vacuum(1), h(1)), v(1))


def test_single_photon_rotation_map():
    theta, phi = 0.3, 0.7
    spec = RotationSpec(theta, phi)
    out = rotate_ensemble(create(vacuum(1), h(1)), 1, spec).amplitudes
    assert out[(1, 0)] == pytest.approx(math.cos(theta))
    assert out[(0, 1)] == pytest.approx(cmath.exp(1j * phi) * math.sin(theta))
    out = rotate_ensemble(create(vacuum(1), v(1)), 1, spec).amplitudes
    assert out[(1, 0)] == pytest.approx(-cmath.exp(-1j * phi) * math.sin(theta))
    assert out[(0, 1)] == pytest.approx(math.cos(theta))


def test_hong_ou_mandel_no_coincidence():
    out = rotate_ensemble(one_each(), 1, HADAMARD)
    assert abs(out.amplitudes.get((1, 1), 0.0)) ** 2 < 1e-12
    assert abs(out.amplitudes[(2, 0)]) == pytest.approx(R)
    assert abs(out.amplitudes[(0, 2)]) == pytest.approx(R)
    # the two bunched terms carry opposite signs
    assert out.amplitudes[(2, 0)] == pytest.approx(-out.amplitudes[(0, 2)])


@pytest.mark.parametrize("a,b", [(0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (0, 2)])
def test_rotation_table_is_unitary(a, b):
    theta, phi = 0.41, 1.3
    columns = {}
    for x, y in [(0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (0, 2)]:
        columns[(x, y)] = {(p, q): c for p, q, c in _rotation_table(theta, phi, x, y)}
    col = columns[(a, b)]
    for other, col2 in columns.items():
        overlap = sum(col[k].conjugate() * col2.get(k, 0) for k in col)
        assert overlap == pytest.approx(1.0 if other == (a, b) else 0.0, abs=1e-12)


def test_identity_rotation_is_noop():
    s = chain_state(2)
    assert rotate_ensemble(s, 1, IDENTITY) is s


def test_click_outcome_bits():
    assert ClickOutcome(1, 1, 0).polarization_bit is Polarization.H
    assert ClickOutcome(1, 0, 1).polarization_bit is Polarization.V
    assert ClickOutcome(1, 1, 1).polarization_bit is None
    assert not ClickOutcome(1, 0, 0).accepted


def test_frame_sign_counts_h_outcomes():
    hh = [ClickOutcome(1, 1, 0), ClickOutcome(2, 1, 0)]
    hv = [ClickOutcome(1, 1, 0), ClickOutcome(2, 0, 1)]
    assert frame_sign(hh) == 1
    assert frame_sign(hv) == -1


def test_apply_frame_flips_v_amplitude():
    s = pair_state(2, 1, 2)
    flipped = apply_frame(s, 2, -1)
    assert flipped.amplitudes[(0, 0, 0, 1)] == pytest.approx(-R)
    assert flipped.amplitudes[(1, 0, 0, 0)] == pytest.approx(R)


@pytest.mark.parametrize("eta", [0.0, 0.3])
def test_exact_outcomes_sum_to_one(eta):
    mix = BranchMixture.pure(chain_state(2))
    results = detect_ensemble_exact(mix, 1, HADAMARD, NoiseParams(eta))
    assert sum(p for _, p, _ in results) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("theta", [0.0, math.pi / 8, math.pi / 4, math.pi / 3])
def test_acceptance_is_basis_invariant(theta):
    mix = BranchMixture.pure(chain_state(3))
    base = acceptance_probability(mix, 2, IDENTITY, NoiseParams(0.2))
    rotated = acceptance_probability(mix, 2, RotationSpec(theta, 0.4), NoiseParams(0.2))
    assert abs(base - rotated) < 1e-10


def test_loss_commutes_with_rotation():
    s = chain_state(2)
    noise = NoiseParams(0.35)
    modes = [h(1), v(1)]
    a = damp_mixture(BranchMixture.pure(rotate_ensemble(s, 1, HADAMARD)), modes, noise)
    b = damp_mixture(BranchMixture.pure(s), modes, noise).map(lambda x: rotate_ensemble(x, 1, HADAMARD))
    assert density_distance(a, b) < 1e-10


def test_sampled_detection_matches_exact(rng):
    s = tensor(pair_state(2, 1, 2), pair_state(2, 2, 1), offset=0)
    noise = NoiseParams(0.2)
    exact = {(o.n_h, o.n_v): p for o, p, _ in detect_ensemble_exact(BranchMixture.pure(s), 1, HADAMARD, noise)}
    trials = 4000
    seen = Counter()
    for _ in range(trials):
        outcome, post = detect_ensemble_sample(s, 1, HADAMARD, noise, rng)
        seen[(outcome.n_h, outcome.n_v)] += 1
        assert post.norm() == pytest.approx(1.0)
    for key, p in exact.items():
        sigma = math.sqrt(p * (1 - p) / trials)
        assert abs(seen[key] / trials - p) < 4 * sigma + 1e-12


def test_postselect_bit_agnostic_matches_sum_of_bits():
    mix = BranchMixture.pure(chain_state(2))
    noise = NoiseParams(0.1)
    total, _ = postselect_all(mix, [1], None, noise)
    parts = [postselect_all(mix, [1], [HADAMARD], noise, bits=[b])[0] for b in Polarization]
    assert total == pytest.approx(sum(parts), abs=1e-12)


def test_postselect_rejects_repeated_ensembles():
    with pytest.raises(ValueError):
        postselect_all(BranchMixture.pure(chain_state(2)), [1, 1], None, NoiseParams())


def test_postselect_reports_impossible_outcome():
    # vacuum never gives a click
    prob, post = postselect_all(BranchMixture.pure(vacuum(2)), [1], None, NoiseParams())
    assert prob == 0.0 and post is None


@settings(max_examples=25, deadline=None)
@given(st.floats(0, math.pi), st.floats(0, 2 * math.pi), st.floats(0, 0.9))
def test_detection_probabilities_normalized(theta, phi, eta):
    mix = BranchMixture.pure(chain_state(2))
    results = detect_ensemble_exact(mix, 2, RotationSpec(theta, phi), NoiseParams(eta))
    assert sum(p for _, p, _ in results) == pytest.approx(1.0, abs=1e-10)
