"""Chain and ladder protocols with repeat-until-success semantics.

Two engines drive the same time model. MICROSCOPIC evolves sparse states and
samples loss and detection trajectories. ABSTRACT replaces every measurement
by a Bernoulli draw at the closed-form success probability, which keeps large
n affordable.

Time model: pair preparations of one attempt run in parallel and an attempt
ends when its slowest ingredient is ready; measurement time is zero. Under
RESTART_ALL a failed connection discards both sub-blocks, which are then
rebuilt from pairs.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from . import analytics
from .fock import (
    PhaseLedger,
    SparseState,
    apply_creation_sum,
    chain_state,
    cyclic,
    ensemble_total,
    ghz_reference,
    h,
    pair_state,
    tensor,
    v,
    vacuum,
)
from .loss import BranchMixture, NoiseParams, tensor_mixtures
from .measurement import (
    HADAMARD,
    ClickOutcome,
    RotationSpec,
    detect_ensemble_sample,
    frame_sign,
    postselect_all,
)

MICRO_MAX_N = 10
DEFAULT_SAFETY_CAP = 10_000_000
_ABSTRACT_CHUNK = 1 << 16


class Scheme(str, Enum):
    BASIC = "basic"
    IMPROVED = "improved"


class PhaseMode(str, Enum):
    ZERO = "zero"
    RANDOM = "random"
    MIRRORED = "mirrored"


class Engine(str, Enum):
    MICROSCOPIC = "micro"
    ABSTRACT = "abstract"


class RestartMode(str, Enum):
    RESTART_ALL = "all"
    LOCAL_RETRY = "local"


class ConfigError(ValueError):
    pass


class GuardError(ConfigError):
    """A configuration the selected engine refuses to run (state-size guard)."""


class SafetyCapExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class PrepParams:
    p0: float = 0.01
    f_p: float = 1e7

    def __post_init__(self):
        analytics.pair_time(self.p0, self.f_p)

    @property
    def t0(self) -> float:
        return analytics.pair_time(self.p0, self.f_p)

    @property
    def fidelity(self) -> float:
        return analytics.pair_fidelity(self.p0)


@dataclass(frozen=True)
class ProtocolConfig:
    n: int
    noise: NoiseParams = NoiseParams()
    prep: PrepParams = PrepParams()
    scheme: Scheme = Scheme.IMPROVED
    phase_mode: PhaseMode = PhaseMode.MIRRORED
    engine: Engine = Engine.MICROSCOPIC
    restart_mode: RestartMode = RestartMode.RESTART_ALL
    parallel_prep: bool = True
    safety_cap: int = DEFAULT_SAFETY_CAP

    def __post_init__(self):
        for name, enum in (("scheme", Scheme), ("phase_mode", PhaseMode),
                           ("engine", Engine), ("restart_mode", RestartMode)):
            object.__setattr__(self, name, enum(getattr(self, name)))
        if self.n < 2:
            raise ConfigError(f"need at least two ensembles, got n={self.n}")
        if self.scheme is Scheme.IMPROVED:
            try:
                analytics.ladder_depth(self.n)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        if self.engine is Engine.MICROSCOPIC and self.n > MICRO_MAX_N:
            raise GuardError(f"microscopic engine is limited to n <= {MICRO_MAX_N}, got n={self.n}")
        if self.phase_mode is PhaseMode.MIRRORED and self.n % 2:
            raise ConfigError("mirrored phase assignment needs an even number of ensembles")
        if self.restart_mode is RestartMode.LOCAL_RETRY and self.engine is Engine.MICROSCOPIC:
            raise ConfigError("local retry keeps a measured sub-block and is only defined for the abstract engine")
        if self.safety_cap < 1:
            raise ConfigError("safety cap must be positive")

    @property
    def depth(self) -> int:
        return analytics.ladder_depth(self.n)


@dataclass
class TrialRecord:
    success: bool = False
    status: str = "pending"
    pair_preps: int = 0
    raman_pulses: int = 0
    wall_time: float = 0.0
    step_attempts: dict[str, int] = field(default_factory=dict)
    step_successes: dict[str, int] = field(default_factory=dict)
    final_polarization_bits: dict[int, str] = field(default_factory=dict)
    total_phase: float = 0.0

    def count(self, step: str, success: bool) -> None:
        self.step_attempts[step] = self.step_attempts.get(step, 0) + 1
        if success:
            self.step_successes[step] = self.step_successes.get(step, 0) + 1

    def parity(self) -> int | None:
        """Number of V bits mod 2 over all ensembles, if every bit is known."""
        if not self.success:
            return None
        return sum(1 for b in self.final_polarization_bits.values() if b == "V") % 2

    def to_json(self) -> dict:
        d = asdict(self)
        d["final_polarization_bits"] = {str(k): b for k, b in sorted(self.final_polarization_bits.items())}
        d["step_attempts"] = dict(sorted(self.step_attempts.items()))
        d["step_successes"] = dict(sorted(self.step_successes.items()))
        return d


def assign_phases(mode: PhaseMode | str, n: int, rng: np.random.Generator) -> PhaseLedger:
    """Channel phases for the links (i, i+1), i = 1..n (cyclic)."""
    mode = PhaseMode(mode)
    ledger = PhaseLedger(n)
    if mode is PhaseMode.ZERO:
        for i in range(1, n + 1):
            ledger.link_phases[(i, cyclic(i + 1, n))] = 0.0
    elif mode is PhaseMode.RANDOM:
        for i in range(1, n + 1):
            ledger.link_phases[(i, cyclic(i + 1, n))] = float(rng.uniform(0.0, 2 * math.pi))
    else:
        if n % 2:
            raise ConfigError("mirrored phase assignment needs an even number of ensembles")
        # link i and its mirror image n+1-i share one channel with opposite orientation
        for i in range(1, n // 2 + 1):
            phi = float(rng.uniform(0.0, 2 * math.pi))
            j = n + 1 - i
            ledger.link_phases[(i, cyclic(i + 1, n))] = phi
            ledger.link_phases[(j, cyclic(j + 1, n))] = -phi
    return ledger


class _Budget:
    """Per-trial accounting shared by nested builders."""

    def __init__(self, record: TrialRecord, cap: int):
        self.record = record
        self.cap = cap

    def spend(self, pairs: int, pulses: int = 0) -> None:
        self.record.pair_preps += pairs
        self.record.raman_pulses += pulses
        if self.record.pair_preps > self.cap:
            raise SafetyCapExceeded(f"pair preparations exceeded the cap of {self.cap}")


def prepare_pair(
    i: int, j: int, ledger: PhaseLedger, prep: PrepParams, rng: np.random.Generator
) -> tuple[SparseState, int, float]:
    """Ideal pair factor (h_i^dag + e^{i phi_ij} v_j^dag)/sqrt(2)|vac> plus the
    sampled number of Raman attempts and the elapsed time."""
    if i == j:
        raise ValueError("pair needs two distinct ensembles")
    attempts = int(rng.geometric(prep.p0))
    return pair_state(ledger.n, i, j, ledger.phase(i, j)), attempts, attempts / prep.f_p


def build_chain(
    config: ProtocolConfig, ledger: PhaseLedger, rng: np.random.Generator
) -> tuple[SparseState, float, int]:
    """Chain of pairs (i, i+1) over all n ensembles; returns state, elapsed, pulses."""
    if config.engine is not Engine.MICROSCOPIC:
        raise ConfigError("build_chain evolves states and needs the microscopic engine")
    n = config.n
    state = vacuum(n)
    times = []
    pulses = 0
    for i in range(1, n + 1):
        factor, attempts, elapsed = prepare_pair(i, cyclic(i + 1, n), ledger, config.prep, rng)
        state = tensor(state, factor, offset=0)
        times.append(elapsed)
        pulses += attempts
    elapsed = max(times) if config.parallel_prep else sum(times)
    return state, elapsed, pulses


def _bit(outcome: ClickOutcome) -> str:
    return outcome.polarization_bit.name


def run_basic_trial(config: ProtocolConfig, rng: np.random.Generator) -> TrialRecord:
    if config.scheme is not Scheme.BASIC:
        raise ConfigError("run_basic_trial needs scheme=basic")
    ledger = assign_phases(config.phase_mode, config.n, rng)
    record = TrialRecord(total_phase=ledger.total_phase)
    budget = _Budget(record, config.safety_cap)
    try:
        if config.engine is Engine.ABSTRACT:
            _abstract_basic(config, rng, record, budget)
        else:
            _micro_basic(config, ledger, rng, record, budget)
    except SafetyCapExceeded:
        record.success = False
        record.status = "safety_cap"
    return record


def _micro_basic(config, ledger, rng, record, budget) -> None:
    while True:
        state, elapsed, pulses = build_chain(config, ledger, rng)
        budget.spend(config.n, pulses)
        record.wall_time += elapsed
        bits = {}
        ok = True
        for ens in range(1, config.n + 1):
            outcome, state = detect_ensemble_sample(state, ens, HADAMARD, config.noise, rng)
            if not outcome.accepted:
                ok = False
                break
            bits[ens] = _bit(outcome)
        record.count("apply", ok)
        if ok:
            record.success = True
            record.status = "success"
            record.final_polarization_bits = bits
            return


def _abstract_basic(config, rng, record, budget) -> None:
    p = analytics.basic_success(config.n, config.noise.eta)
    attempts = int(rng.geometric(p))
    budget.spend(0)
    if attempts * config.n > config.safety_cap:
        record.step_attempts["apply"] = attempts
        raise SafetyCapExceeded("basic scheme would exceed the pair-preparation cap")
    wall, total_pulses = 0.0, 0
    # bounded chunks keep memory flat when attempts run into the millions
    for start in range(0, attempts, _ABSTRACT_CHUNK):
        rows = min(_ABSTRACT_CHUNK, attempts - start)
        pulses = rng.geometric(config.prep.p0, size=(rows, config.n))
        times = pulses / config.prep.f_p
        per_attempt = times.max(axis=1) if config.parallel_prep else times.sum(axis=1)
        wall += float(per_attempt.sum())
        total_pulses += int(pulses.sum())
    budget.spend(attempts * config.n, total_pulses)
    record.wall_time = wall
    record.step_attempts["apply"] = attempts
    record.step_successes["apply"] = 1
    record.success = True
    record.status = "success"


# ---------------------------------------------------------------- ladder, microscopic


@dataclass
class Block:
    """Effectively entangled run of ensembles lo..hi with its history."""

    lo: int
    hi: int
    level: int
    state: SparseState
    elapsed: float
    bits: dict[int, str] = field(default_factory=dict)
    frame: int = 1


def _pair_block(lo: int, ledger: PhaseLedger, config: ProtocolConfig, rng, budget: _Budget) -> Block:
    state, attempts, elapsed = prepare_pair(lo, lo + 1, ledger, config.prep, rng)
    budget.spend(1, attempts)
    return Block(lo, lo + 1, 0, state, elapsed)


def connect(
    level: int,
    left: Block,
    right: Block,
    ledger: PhaseLedger,
    config: ProtocolConfig,
    rng: np.random.Generator,
    budget: _Budget | None = None,
) -> tuple[Block | None, list[ClickOutcome], int, float]:
    """One connection attempt between two adjacent blocks.

    Prepares the link pair across the facing boundary ensembles and measures
    both of them. Returns the merged block (``None`` on failure), the click
    outcomes, the Raman attempts spent on the link and the time at which the
    attempt finished.
    """
    if left.hi + 1 != right.lo:
        raise ValueError(f"blocks {left.lo}-{left.hi} and {right.lo}-{right.hi} are not adjacent")
    a, b = left.hi, right.lo
    link, attempts, link_time = prepare_pair(a, b, ledger, config.prep, rng)
    if budget is not None:
        budget.spend(1, attempts)
    state = tensor(tensor(left.state, right.state, offset=0), link, offset=0)
    finished = max(left.elapsed, right.elapsed, link_time)
    outcomes = []
    for ens in (a, b):
        outcome, state = detect_ensemble_sample(state, ens, HADAMARD, config.noise, rng)
        outcomes.append(outcome)
        if not outcome.accepted:
            return None, outcomes, attempts, finished
    bits = {**left.bits, **right.bits, a: _bit(outcomes[0]), b: _bit(outcomes[1])}
    frame = left.frame * right.frame * frame_sign(outcomes)
    return Block(left.lo, right.hi, level, state, finished, bits, frame), outcomes, attempts, finished


def _build_block(level: int, lo: int, ledger, config, rng, budget: _Budget) -> Block:
    if level == 0:
        return _pair_block(lo, ledger, config, rng, budget)
    half = 2 ** level
    spent = 0.0
    while True:
        left = _build_block(level - 1, lo, ledger, config, rng, budget)
        right = _build_block(level - 1, lo + half, ledger, config, rng, budget)
        block, _, _, finished = connect(level, left, right, ledger, config, rng, budget)
        spent += finished
        budget.record.count(f"level{level}", block is not None)
        if block is not None:
            block.elapsed = spent
            return block


def close_loop(
    block: Block,
    ledger: PhaseLedger,
    config: ProtocolConfig,
    rng: np.random.Generator,
    budget: _Budget | None = None,
) -> TrialRecord:
    """Single closure attempt: link (n, 1) and measure ensembles n and 1."""
    n = config.n
    if (block.lo, block.hi) != (1, n):
        raise ValueError(f"closure needs a block spanning 1..{n}, got {block.lo}..{block.hi}")
    link, attempts, link_time = prepare_pair(n, 1, ledger, config.prep, rng)
    if budget is not None:
        budget.spend(1, attempts)
    state = tensor(block.state, link, offset=0)
    record = TrialRecord(wall_time=max(block.elapsed, link_time), total_phase=ledger.total_phase)
    bits = dict(block.bits)
    for ens in (n, 1):
        outcome, state = detect_ensemble_sample(state, ens, HADAMARD, config.noise, rng)
        if not outcome.accepted:
            record.status = "rejected"
            return record
        bits[ens] = _bit(outcome)
    record.success = True
    record.status = "success"
    record.final_polarization_bits = bits
    return record


def run_improved_trial(config: ProtocolConfig, rng: np.random.Generator) -> TrialRecord:
    if config.scheme is not Scheme.IMPROVED:
        raise ConfigError("run_improved_trial needs scheme=improved")
    ledger = assign_phases(config.phase_mode, config.n, rng)
    record = TrialRecord(total_phase=ledger.total_phase)
    budget = _Budget(record, config.safety_cap)
    try:
        if config.engine is Engine.ABSTRACT:
            _abstract_improved(config, rng, record, budget)
        else:
            while True:
                block = _build_block(config.depth, 1, ledger, config, rng, budget)
                attempt = close_loop(block, ledger, config, rng, budget)
                record.wall_time += attempt.wall_time
                record.count("close", attempt.success)
                if attempt.success:
                    record.success = True
                    record.status = "success"
                    record.final_polarization_bits = attempt.final_polarization_bits
                    break
    except SafetyCapExceeded:
        record.success = False
        record.status = "safety_cap"
    return record


def run_trial(config: ProtocolConfig, rng: np.random.Generator) -> TrialRecord:
    if config.scheme is Scheme.BASIC:
        return run_basic_trial(config, rng)
    return run_improved_trial(config, rng)


# ---------------------------------------------------------------- ladder, abstract


def _abstract_blocks(level: int, count: int, config: ProtocolConfig, rng, budget: _Budget) -> np.ndarray:
    """Completion times of ``count`` independently built level-``level`` blocks."""
    p0, f_p = config.prep.p0, config.prep.f_p
    if level == 0:
        pulses = rng.geometric(p0, size=count)
        budget.spend(count, int(pulses.sum()))
        return pulses / f_p
    p = analytics.p_connect(level, config.noise.eta)
    tries = rng.geometric(p, size=count)
    total = int(tries.sum())
    key = f"level{level}"
    budget.record.step_attempts[key] = budget.record.step_attempts.get(key, 0) + total
    budget.record.step_successes[key] = budget.record.step_successes.get(key, 0) + count
    min_pairs = 2 ** (level + 1) - 1
    if budget.record.pair_preps + total * min_pairs > budget.cap:
        raise SafetyCapExceeded(f"level {level} needs more than {budget.cap} pair preparations")
    starts = np.concatenate(([0], np.cumsum(tries)[:-1]))
    if config.restart_mode is RestartMode.RESTART_ALL:
        subs = _abstract_blocks(level - 1, 2 * total, config, rng, budget).reshape(total, 2)
        slowest = subs.max(axis=1)
    else:
        # the right sub-block survives failures; only the left one is rebuilt
        slowest = _abstract_blocks(level - 1, total, config, rng, budget)
        kept = _abstract_blocks(level - 1, count, config, rng, budget)
        slowest[starts] = np.maximum(slowest[starts], kept)
    link_pulses = rng.geometric(p0, size=total)
    budget.spend(total, int(link_pulses.sum()))
    attempt_time = np.maximum(slowest, link_pulses / f_p)
    return np.add.reduceat(attempt_time, starts)


def _abstract_improved(config: ProtocolConfig, rng, record: TrialRecord, budget: _Budget) -> None:
    i = config.depth
    tries = int(rng.geometric(analytics.p_close(i, config.noise.eta)))
    record.step_attempts["close"] = tries
    record.step_successes["close"] = 1
    if tries * (2 ** (i + 1)) > budget.cap:
        raise SafetyCapExceeded(f"closure needs more than {budget.cap} pair preparations")
    blocks = _abstract_blocks(i, tries, config, rng, budget)
    link_pulses = rng.geometric(config.prep.p0, size=tries)
    budget.spend(tries, int(link_pulses.sum()))
    record.wall_time = float(np.maximum(blocks, link_pulses / config.prep.f_p).sum())
    record.success = True
    record.status = "success"


# ---------------------------------------------------------------- exact engine


@dataclass
class ExactStep:
    """Exact acceptance probability and effective posterior of one step."""

    level: int
    lo: int
    hi: int
    probability: float
    posterior: BranchMixture | None
    sub_probabilities: list[float] = field(default_factory=list)

    def vacuum_weight(self) -> float:
        """Weight of the component with no excitation left in the two open end ensembles."""
        lo, hi = self.lo, self.hi
        return self.posterior.expectation(lambda k: ensemble_total(k, lo) + ensemble_total(k, hi) == 0)


def _join(a: SparseState, b: SparseState) -> SparseState:
    return tensor(a, b, offset=0)


def _add_link(mixture: BranchMixture, i: int, j: int, ledger: PhaseLedger) -> BranchMixture:
    r = 1 / math.sqrt(2)
    phase = complex(math.cos(ledger.phase(i, j)), math.sin(ledger.phase(i, j)))
    return mixture.map(lambda s: apply_creation_sum(s, [(h(i), r), (v(j), r * phase)]))


def exact_block(level: int, lo: int, ledger: PhaseLedger, noise: NoiseParams,
                specs: tuple[RotationSpec, RotationSpec] = (HADAMARD, HADAMARD)) -> ExactStep:
    """Effective state of a level-``level`` block starting at ensemble ``lo``,
    conditioned on every connection inside it having succeeded.

    ``probability`` is the acceptance of the last connection given successful
    sub-blocks.
    """
    n = ledger.n
    if level == 0:
        pure = BranchMixture.pure(pair_state(n, lo, lo + 1, ledger.phase(lo, lo + 1)))
        return ExactStep(0, lo, lo + 1, 1.0, pure)
    half = 2 ** level
    left = exact_block(level - 1, lo, ledger, noise, specs)
    right = exact_block(level - 1, lo + half, ledger, noise, specs)
    joined = tensor_mixtures(left.posterior, right.posterior, _join)
    a, b = left.hi, right.lo
    linked = _add_link(joined, a, b, ledger)
    prob, posterior = postselect_all(linked, [a, b], list(specs), noise)
    subs = left.sub_probabilities + [prob]
    return ExactStep(level, lo, right.hi, prob, posterior, subs)


def exact_closure(ledger: PhaseLedger, noise: NoiseParams) -> ExactStep:
    """Full ladder followed by the closing link (n, 1), all exact."""
    n = ledger.n
    depth = analytics.ladder_depth(n)
    top = exact_block(depth, 1, ledger, noise)
    linked = _add_link(top.posterior, n, 1, ledger)
    prob, posterior = postselect_all(linked, [n, 1], None, noise)
    return ExactStep(depth + 1, 1, n, prob, posterior, top.sub_probabilities)


def exact_basic(ledger: PhaseLedger, noise: NoiseParams) -> tuple[float, BranchMixture | None]:
    """Chain state postselected on a single click from every ensemble."""
    n = ledger.n
    return postselect_all(BranchMixture.pure(chain_state(n, ledger)), list(range(1, n + 1)), None, noise)


def closure_fidelity(ledger: PhaseLedger, noise: NoiseParams, phi_t: float | None = None) -> float:
    step = exact_closure(ledger, noise)
    ref = ghz_reference(ledger.n, ledger.total_phase if phi_t is None else phi_t)
    return step.posterior.fidelity(ref)
