import math

import numpy as np
import pytest

from ghz_ensembles import analytics as A
from ghz_ensembles import protocol as P
from ghz_ensembles.fock import block_reference, ghz_reference
from ghz_ensembles.loss import NoiseParams
from ghz_ensembles.protocol import (
    ConfigError,
    Engine,
    GuardError,
    PhaseMode,
    PrepParams,
    ProtocolConfig,
    RestartMode,
    Scheme,
    TrialRecord,
    assign_phases,
    closure_fidelity,
    exact_basic,
    exact_block,
    exact_closure,
    run_trial,
)


def budget(cap=10 ** 9):
    return P._Budget(TrialRecord(), cap)


def test_config_validation():
    with pytest.raises(ConfigError):
        ProtocolConfig(6)
    with pytest.raises(GuardError):
        ProtocolConfig(16)
    ProtocolConfig(16, engine="abstract")
    with pytest.raises(ConfigError):
        ProtocolConfig(3, scheme="basic")
    ProtocolConfig(3, scheme="basic", phase_mode="random")
    with pytest.raises(ConfigError):
        ProtocolConfig(4, restart_mode="local")
    with pytest.raises(ConfigError):
        ProtocolConfig(4, safety_cap=0)
    with pytest.raises(ValueError):
        ProtocolConfig(4, engine="quantum")


def test_prep_params():
    prep = PrepParams()
    assert prep.t0 == pytest.approx(1e-5)
    assert prep.fidelity == pytest.approx(0.99)
    with pytest.raises(ValueError):
        PrepParams(p0=1.5)


@pytest.mark.parametrize("n", [2, 4, 8])
def test_mirrored_phases_cancel(rng, n):
    ledger = assign_phases(PhaseMode.MIRRORED, n, rng)
    assert abs(ledger.total_phase) < 1e-12
    assert any(abs(p) > 0 for p in ledger.link_phases.values())


def test_random_phases_cover_every_link(rng):
    ledger = assign_phases("random", 5, rng)
    assert len(ledger.link_phases) == 5
    assert all(0 <= p < 2 * math.pi for p in ledger.link_phases.values())


def test_prepare_pair_counts_attempts(rng):
    ledger = assign_phases("zero", 4, rng)
    prep = PrepParams(0.2, 100.0)
    draws = [P.prepare_pair(1, 2, ledger, prep, rng) for _ in range(4000)]
    attempts = np.array([d[1] for d in draws])
    assert attempts.min() >= 1
    assert attempts.mean() == pytest.approx(1 / 0.2, rel=0.05)
    assert all(d[2] == pytest.approx(d[1] / 100.0) for d in draws[:20])


def test_build_chain_state(rng):
    cfg = ProtocolConfig(4, scheme="basic")
    ledger = assign_phases("zero", 4, rng)
    state, elapsed, pulses = P.build_chain(cfg, ledger, rng)
    assert state.norm() == pytest.approx(1.0)
    assert len(state) == 16
    assert elapsed > 0 and pulses >= 4


def test_connect_frame_sign_matches_conditional_state(rng):
    cfg = ProtocolConfig(4, phase_mode="zero")
    ledger = assign_phases("zero", 4, rng)
    seen = 0
    while seen < 20:
        left = P._pair_block(1, ledger, cfg, rng, budget())
        right = P._pair_block(3, ledger, cfg, rng, budget())
        block, outcomes, _, finished = P.connect(1, left, right, ledger, cfg, rng)
        assert finished >= max(left.elapsed, right.elapsed)
        if block is None:
            continue
        seen += 1
        ends = {(k[0], k[7]): a for k, a in block.state.items()}
        assert ends[(0, 1)] / ends[(1, 0)] == pytest.approx(block.frame)
        assert set(block.bits) == {2, 3}


def test_connect_rejects_non_adjacent(rng):
    cfg = ProtocolConfig(8, phase_mode="zero")
    ledger = assign_phases("zero", 8, rng)
    a = P._pair_block(1, ledger, cfg, rng, budget())
    b = P._pair_block(5, ledger, cfg, rng, budget())
    with pytest.raises(ValueError):
        P.connect(1, a, b, ledger, cfg, rng)


@pytest.mark.parametrize("eta", [0.0, 0.2])
def test_exact_block_level_one(eta):
    ledger = assign_phases("random", 4, np.random.default_rng(3))
    step = exact_block(1, 1, ledger, NoiseParams(eta))
    assert step.probability == pytest.approx(A.p_connect(1, eta), abs=1e-12)
    assert step.vacuum_weight() == pytest.approx(2 * eta / (1 + 2 * eta), abs=1e-12)
    phase = sum(ledger.phase(i, i + 1) for i in (1, 2, 3))
    assert step.posterior.fidelity(block_reference(4, 1, 4, phase)) == pytest.approx(1 / (1 + 2 * eta))


def test_exact_closure_n4_ghz():
    ledger = assign_phases("mirrored", 4, np.random.default_rng(5))
    step = exact_closure(ledger, NoiseParams(0.2))
    assert step.probability == pytest.approx(A.p_close(1, 0.2), abs=1e-12)
    assert step.posterior.fidelity(ghz_reference(4, 0.0)) >= 1 - 1e-9


def test_exact_basic_matches_closed_form():
    ledger = assign_phases("random", 4, np.random.default_rng(9))
    prob, post = exact_basic(ledger, NoiseParams(0.2))
    assert prob == pytest.approx(A.basic_success(4, 0.2), abs=1e-12)
    assert post.fidelity(ghz_reference(4, ledger.total_phase)) == pytest.approx(1.0)


def test_closure_fidelity_wrong_phase_drops():
    ledger = assign_phases("random", 4, np.random.default_rng(11))
    assert closure_fidelity(ledger, NoiseParams()) == pytest.approx(1.0)
    shifted = closure_fidelity(ledger, NoiseParams(), ledger.total_phase + math.pi)
    assert shifted == pytest.approx(0.0, abs=1e-12)


def test_micro_improved_trial_record(rng):
    cfg = ProtocolConfig(8, noise=NoiseParams(0.1))
    rec = run_trial(cfg, rng)
    assert rec.success and rec.status == "success"
    assert sorted(rec.final_polarization_bits) == list(range(1, 9))
    assert rec.parity() == 0
    assert rec.step_successes["close"] == 1
    assert rec.step_successes["level2"] == rec.step_attempts["close"]
    assert rec.pair_preps >= 8 and rec.raman_pulses >= rec.pair_preps
    assert rec.wall_time > 0
    data = rec.to_json()
    assert data["final_polarization_bits"]["1"] in ("H", "V")


def test_micro_basic_trial(rng):
    cfg = ProtocolConfig(4, scheme="basic")
    rec = run_trial(cfg, rng)
    assert rec.success
    assert rec.step_successes["apply"] == 1
    assert rec.pair_preps == 4 * rec.step_attempts["apply"]


def test_abstract_trials(rng):
    for scheme in ("basic", "improved"):
        cfg = ProtocolConfig(16, noise=NoiseParams(0.2), scheme=scheme, engine="abstract")
        rec = run_trial(cfg, rng)
        assert rec.success and rec.wall_time > 0
        assert rec.final_polarization_bits == {}


def test_abstract_step_frequencies_track_formulas(rng):
    cfg = ProtocolConfig(8, noise=NoiseParams(1 / 3), engine="abstract")
    records = [run_trial(cfg, rng) for _ in range(2000)]
    for key, p in (("level1", A.p_connect(1, 1 / 3)), ("level2", A.p_connect(2, 1 / 3)), ("close", A.p_close(2, 1 / 3))):
        tries = sum(r.step_attempts[key] for r in records)
        wins = sum(r.step_successes[key] for r in records)
        assert abs(wins / tries - p) < 4 * math.sqrt(p * (1 - p) / tries)


def test_local_retry_is_not_slower_on_average():
    full = ProtocolConfig(16, noise=NoiseParams(0.3), engine="abstract")
    local = ProtocolConfig(16, noise=NoiseParams(0.3), engine="abstract", restart_mode="local")
    a = np.mean([run_trial(full, np.random.default_rng(i)).wall_time for i in range(300)])
    b = np.mean([run_trial(local, np.random.default_rng(i)).wall_time for i in range(300)])
    assert b < a


def test_sequential_prep_is_slower(rng):
    par = ProtocolConfig(4, scheme="basic", engine="abstract")
    seq = ProtocolConfig(4, scheme="basic", engine="abstract", parallel_prep=False)
    a = np.mean([run_trial(par, np.random.default_rng(i)).wall_time for i in range(300)])
    b = np.mean([run_trial(seq, np.random.default_rng(i)).wall_time for i in range(300)])
    assert b > a


def test_safety_cap_marks_trial(rng):
    cfg = ProtocolConfig(8, noise=NoiseParams(0.5), safety_cap=20)
    rec = run_trial(cfg, rng)
    assert not rec.success and rec.status == "safety_cap"
    abstract = ProtocolConfig(64, noise=NoiseParams(0.9), engine="abstract", safety_cap=1000)
    assert run_trial(abstract, rng).status == "safety_cap"


def test_same_seed_same_record():
    cfg = ProtocolConfig(4, noise=NoiseParams(0.2))
    a = run_trial(cfg, np.random.default_rng(42)).to_json()
    b = run_trial(cfg, np.random.default_rng(42)).to_json()
    assert a == b
