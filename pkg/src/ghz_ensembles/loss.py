"""Excitation loss with a single lumped probability eta.

Two interchangeable forms: exact Kraus-branch enumeration producing a
``BranchMixture``, and trajectory sampling that picks one branch with its
exact probability.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np

from .fock import CUTOFF, Key, ModeId, SparseState, inner_product

WEIGHT_TOL = 1e-10
_MERGE_TOL = 1e-9
_DROP_WEIGHT = 1e-15


@dataclass(frozen=True)
class NoiseParams:
    eta: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.eta < 1.0:
            raise ValueError(f"loss probability must satisfy 0 <= eta < 1, got {self.eta}")


@dataclass(frozen=True)
class LossRecord:
    lost_counts: dict[ModeId, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.lost_counts.values())


def canonical_phase(state: SparseState) -> SparseState:
    """Fix global phase: first key (lexicographic) of maximal magnitude made real-positive."""
    if not state.amplitudes:
        return state
    peak = max(abs(a) for a in state.amplitudes.values())
    for key in sorted(state.amplitudes):
        amp = state.amplitudes[key]
        if abs(amp) >= peak - _MERGE_TOL:
            return state.scale(cmath.exp(-1j * cmath.phase(amp)))
    raise AssertionError("unreachable")


def _same_ray(a: SparseState, b: SparseState) -> bool:
    if a.amplitudes.keys() != b.amplitudes.keys():
        return False
    return abs(abs(inner_product(a, b)) - 1.0) < _MERGE_TOL


@dataclass(frozen=True)
class BranchMixture:
    """Mixed state sum_k w_k |psi_k><psi_k| with normalized branch states."""

    branches: tuple[tuple[float, SparseState], ...]

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(self.branches))

    @classmethod
    def pure(cls, state: SparseState) -> "BranchMixture":
        return cls(((1.0, state.normalize()),))

    @classmethod
    def from_unnormalized(cls, states: Iterable[SparseState], renormalize: bool = True) -> "BranchMixture":
        """Build from unnormalized branch vectors; weights are their squared norms."""
        merged: list[tuple[float, SparseState]] = []
        for s in states:
            w = s.norm() ** 2
            if w <= _DROP_WEIGHT:
                continue
            _merge_into(merged, w, canonical_phase(s.normalize()))
        total = sum(w for w, _ in merged)
        if renormalize and total > 0:
            merged = [(w / total, s) for w, s in merged]
        return cls(tuple(merged))

    @property
    def total_weight(self) -> float:
        return sum(w for w, _ in self.branches)

    @property
    def mode_count(self) -> int:
        return self.branches[0][1].mode_count

    def __len__(self) -> int:
        return len(self.branches)

    def map(self, op: Callable[[SparseState], SparseState]) -> "BranchMixture":
        """Apply a norm-preserving map to every branch."""
        return BranchMixture(tuple((w, op(s)) for w, s in self.branches))

    def expectation(self, predicate: Callable[[Key], bool]) -> float:
        """Weight of the keys satisfying ``predicate`` (a diagonal projector)."""
        return sum(
            w * sum(abs(a) ** 2 for k, a in s.items() if predicate(k)) for w, s in self.branches
        )

    def density_matrix(self) -> dict[tuple[Key, Key], complex]:
        rho: dict[tuple[Key, Key], complex] = {}
        for w, s in self.branches:
            for k1, a1 in s.items():
                for k2, a2 in s.items():
                    rho[(k1, k2)] = rho.get((k1, k2), 0j) + w * a1 * a2.conjugate()
        return rho

    def fidelity(self, reference: SparseState) -> float:
        """<ref|rho|ref> for a normalized pure reference."""
        return sum(w * abs(inner_product(reference, s)) ** 2 for w, s in self.branches)

    def to_json(self) -> dict:
        return {
            "branches": [
                {"weight": w, **s.to_json()} for w, s in self.branches
            ]
        }


def _merge_into(merged: list[tuple[float, SparseState]], weight: float, state: SparseState) -> None:
    for idx, (w, s) in enumerate(merged):
        if _same_ray(s, state):
            merged[idx] = (w + weight, s)
            return
    merged.append((weight, state))


def merge(branches: Iterable[tuple[float, SparseState]]) -> BranchMixture:
    merged: list[tuple[float, SparseState]] = []
    for w, s in branches:
        if w > _DROP_WEIGHT:
            _merge_into(merged, w, canonical_phase(s))
    return BranchMixture(tuple(merged))


def tensor_mixtures(a: BranchMixture, b: BranchMixture, join: Callable[[SparseState, SparseState], SparseState]) -> BranchMixture:
    return merge((wa * wb, join(sa, sb)) for wa, sa in a.branches for wb, sb in b.branches)


def density_distance(a: BranchMixture, b: BranchMixture) -> float:
    """Max entrywise difference between two density matrices."""
    ra, rb = a.density_matrix(), b.density_matrix()
    return max((abs(ra.get(k, 0j) - rb.get(k, 0j)) for k in ra.keys() | rb.keys()), default=0.0)


@lru_cache(maxsize=256)
def _kraus_factors(eta: float) -> tuple[tuple[float, ...], ...]:
    """factors[m][k] = sqrt(C(m,k) (1-eta)^(m-k) eta^k)."""
    keep = 1.0 - eta
    return tuple(
        tuple(math.sqrt(math.comb(m, k) * keep ** (m - k) * eta ** k) for k in range(m + 1))
        for m in range(CUTOFF + 1)
    )


def kraus_branches(state: SparseState, mode_index: int, eta: float) -> list[SparseState]:
    """Unnormalized K_k|psi> for k = 0..CUTOFF photons lost from one mode."""
    out: list[dict[Key, complex]] = [{} for _ in range(CUTOFF + 1)]
    factors = _kraus_factors(eta)
    for key, amp in state.items():
        m = key[mode_index]
        for k, factor in enumerate(factors[m]):
            if factor == 0.0:
                continue
            new = key[:mode_index] + (m - k,) + key[mode_index + 1:] if k else key
            out[k][new] = out[k].get(new, 0j) + amp * factor
    return [SparseState._trusted(state.mode_count, d) for d in out]


def _loss_weights(state: SparseState, mode_index: int, eta: float) -> list[float]:
    """Probabilities of losing k = 0..CUTOFF photons from one mode of a normalized state."""
    factors = _kraus_factors(eta)
    weights = [0.0] * (CUTOFF + 1)
    for key, amp in state.items():
        p = abs(amp) ** 2
        for k, factor in enumerate(factors[key[mode_index]]):
            weights[k] += p * factor * factor
    return weights


def _kraus_apply(state: SparseState, mode_index: int, eta: float, k: int) -> SparseState:
    factor_table = _kraus_factors(eta)
    out: dict[Key, complex] = {}
    for key, amp in state.items():
        m = key[mode_index]
        if m < k:
            continue
        new = key[:mode_index] + (m - k,) + key[mode_index + 1:] if k else key
        out[new] = amp * factor_table[m][k]
    return SparseState._trusted(state.mode_count, out)


def damp_mode_exact(state: SparseState, mode: ModeId, params: NoiseParams) -> BranchMixture:
    idx = mode.index(state.n_ensembles)
    if params.eta == 0.0:
        return BranchMixture.pure(state)
    return BranchMixture.from_unnormalized(kraus_branches(state, idx, params.eta), renormalize=False)


def damp_mixture(mixture: BranchMixture, modes: Sequence[ModeId], params: NoiseParams) -> BranchMixture:
    if len(set(modes)) != len(modes):
        raise ValueError(f"duplicate modes in {list(modes)}")
    if params.eta == 0.0:
        return mixture
    for mode in modes:
        collected = []
        for w, s in mixture.branches:
            for b in kraus_branches(s, mode.index(s.n_ensembles), params.eta):
                bw = b.norm() ** 2
                if bw > _DROP_WEIGHT:
                    collected.append((w * bw, b.normalize()))
        mixture = merge(collected)
    return mixture


def damp_all_exact(state: SparseState, modes: Sequence[ModeId], params: NoiseParams) -> BranchMixture:
    return damp_mixture(BranchMixture.pure(state), modes, params)


def damp_sample(
    state: SparseState, modes: Sequence[ModeId], params: NoiseParams, rng: np.random.Generator
) -> tuple[SparseState, LossRecord, float]:
    """Sample one loss trajectory. Returns the normalized state, what was lost,
    and the probability of the sampled path."""
    if len(set(modes)) != len(modes):
        raise ValueError(f"duplicate modes in {list(modes)}")
    lost: dict[ModeId, int] = {}
    path = 1.0
    if params.eta == 0.0:
        return state, LossRecord(lost), path
    for mode in modes:
        idx = mode.index(state.n_ensembles)
        if all(key[idx] == 0 for key in state.amplitudes):
            continue
        weights = _loss_weights(state, idx, params.eta)
        k = pick_index(weights, rng)
        path *= weights[k] / sum(weights)
        if k:
            lost[mode] = k
        state = _kraus_apply(state, idx, params.eta, k).normalize()
    return state, LossRecord(lost), path


def pick_index(weights: Sequence[float], rng: np.random.Generator) -> int:
    """Index drawn with probability proportional to ``weights``."""
    u = rng.random() * sum(weights)
    acc = 0.0
    last = 0
    for i, w in enumerate(weights):
        if w <= 0.0:
            continue
        acc += w
        last = i
        if u < acc:
            return i
    return last
