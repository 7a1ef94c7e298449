"""Vectorized trajectory sampling over many independent trials.

Each trial starts from the same pure state and undergoes the same sequence of
loss, rotation and detection on a set of ensembles; the random choices differ
per trial. Amplitudes live on a fixed basis of reachable occupation keys so
every operation is a sparse matrix acting on a (trials, basis) array.
"""

from __future__ import annotations

import itertools
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .fock import CUTOFF, Key, SparseState
from .loss import NoiseParams, _kraus_factors
from .measurement import HADAMARD, RotationSpec, _rotation_table


def _reachable_keys(state: SparseState, ensembles: Sequence[int]) -> list[Key]:
    """Keys reachable by loss and total-preserving rotations on ``ensembles``."""
    keys: set[Key] = set()
    for key in state.amplitudes:
        options = []
        for e in ensembles:
            i = 2 * (e - 1)
            tot = key[i] + key[i + 1]
            options.append([(p, q) for p in range(min(tot, CUTOFF) + 1)
                            for q in range(min(tot - p, CUTOFF) + 1)])
        for choice in itertools.product(*options):
            new = list(key)
            for e, (p, q) in zip(ensembles, choice):
                i = 2 * (e - 1)
                new[i], new[i + 1] = p, q
            keys.add(tuple(new))
    return sorted(keys)


def _sparse(basis: tuple[Key, ...], entries) -> sp.csr_matrix:
    index = {k: j for j, k in enumerate(basis)}
    rows, cols, vals = [], [], []
    for src, dst, val in entries:
        rows.append(index[dst])
        cols.append(index[src])
        vals.append(val)
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(basis), len(basis)), dtype=complex)


@lru_cache(maxsize=64)
def _loss_plan(basis: tuple[Key, ...], mode_index: int, eta: float):
    """Per k: (source rows, destination rows, factors) of the Kraus map K_k,
    plus the (k, basis) table of squared factors."""
    factors = _kraus_factors(eta)
    index = {key: j for j, key in enumerate(basis)}
    table = np.zeros((CUTOFF + 1, len(basis)))
    maps = []
    for k in range(CUTOFF + 1):
        src, dst, val = [], [], []
        for j, key in enumerate(basis):
            m = key[mode_index]
            if m >= k:
                table[k, j] = factors[m][k] ** 2
                src.append(j)
                dst.append(index[key[:mode_index] + (m - k,) + key[mode_index + 1:]])
                val.append(factors[m][k])
        maps.append((np.array(src, dtype=int), np.array(dst, dtype=int), np.array(val)))
    return table, maps


@lru_cache(maxsize=64)
def _rotation_plan(basis: tuple[Key, ...], ensemble: int, theta: float, phi: float) -> sp.csr_matrix:
    i = 2 * (ensemble - 1)
    entries = []
    for key in basis:
        for p, q, coeff in _rotation_table(theta, phi, key[i], key[i + 1]):
            entries.append((key, key[:i] + (p, q) + key[i + 2:], coeff))
    return _sparse(basis, entries)


@lru_cache(maxsize=64)
def _outcome_plan(basis: tuple[Key, ...], ensemble: int):
    i = 2 * (ensemble - 1)
    outcomes = sorted({(k[i], k[i + 1]) for k in basis})
    labels = np.array([outcomes.index((k[i], k[i + 1])) for k in basis])
    indicator = (labels[None, :] == np.arange(len(outcomes))[:, None]).astype(float)
    return np.array(outcomes), indicator


class TrajectoryBatch:
    def __init__(self, state: SparseState, ensembles: Sequence[int], trials: int, rng: np.random.Generator):
        self.basis = tuple(_reachable_keys(state, ensembles))
        self.index = {k: j for j, k in enumerate(self.basis)}
        self.rng = rng
        self.trials = trials
        vec = np.zeros(len(self.basis), dtype=complex)
        for key, amp in state.normalize().items():
            vec[self.index[key]] = amp
        # amplitudes stored as (basis, trials) so sparse operators act on the left
        self.psi = np.repeat(vec[:, None], trials, axis=1)

    def _choose(self, probs: np.ndarray) -> np.ndarray:
        """Per-trial index sampled from rows of ``probs`` (outcomes, trials)."""
        cum = np.cumsum(probs, axis=0)
        u = self.rng.random(self.trials) * cum[-1]
        return np.minimum((cum < u).sum(axis=0), probs.shape[0] - 1)

    def damp(self, mode_index: int, eta: float) -> np.ndarray:
        """Sample photons lost from one mode in every trial; returns the loss counts."""
        if eta == 0.0:
            return np.zeros(self.trials, dtype=int)
        # K_k is injective on keys, so P(k) is a weighted sum of |amplitude|^2
        table, maps = _loss_plan(self.basis, mode_index, eta)
        probs = table @ (self.psi.real ** 2 + self.psi.imag ** 2)
        lost = self._choose(probs)
        norm = np.sqrt(probs[lost, np.arange(self.trials)])
        new = np.zeros_like(self.psi)
        for k, (src, dst, val) in enumerate(maps):
            hit = lost == k
            if hit.any():
                new[dst] += (val[:, None] * self.psi[src]) * hit
        self.psi = new / norm
        return lost

    def rotate(self, ensemble: int, spec: RotationSpec) -> None:
        self.psi = _rotation_plan(self.basis, ensemble, spec.theta, spec.phi) @ self.psi

    def measure(self, ensemble: int) -> tuple[np.ndarray, np.ndarray]:
        """Projective number measurement of both modes; returns (n_h, n_v) per trial."""
        outcomes, indicator = _outcome_plan(self.basis, ensemble)
        probs = indicator @ (self.psi.real ** 2 + self.psi.imag ** 2)
        picked = self._choose(probs)
        self.psi *= indicator[picked].T / np.sqrt(np.maximum(probs[picked, np.arange(self.trials)], 1e-300))
        counts = outcomes[picked]
        return counts[:, 0], counts[:, 1]

    def detect(self, ensemble: int, spec: RotationSpec, noise: NoiseParams) -> tuple[np.ndarray, np.ndarray]:
        i = 2 * (ensemble - 1)
        self.damp(i, noise.eta)
        self.damp(i + 1, noise.eta)
        self.rotate(ensemble, spec)
        return self.measure(ensemble)


def sample_single_clicks(
    state: SparseState,
    ensembles: Sequence[int],
    noise: NoiseParams,
    trials: int,
    rng: np.random.Generator,
    spec: RotationSpec = HADAMARD,
    chunk: int = 1024,
) -> tuple[np.ndarray, np.ndarray]:
    """Detect ``ensembles`` in order for ``trials`` trajectories.

    Returns a boolean acceptance array (single click on every ensemble) and a
    (trials, len(ensembles)) array of polarization bits, 1 for V.
    """
    accepted = np.ones(trials, dtype=bool)
    bits = np.zeros((trials, len(ensembles)), dtype=int)
    for start in range(0, trials, chunk):
        stop = min(trials, start + chunk)
        batch = TrajectoryBatch(state, ensembles, stop - start, rng)
        for col, ens in enumerate(ensembles):
            nh, nv = batch.detect(ens, spec, noise)
            accepted[start:stop] &= (nh + nv) == 1
            bits[start:stop, col] = nv
    return accepted, bits
