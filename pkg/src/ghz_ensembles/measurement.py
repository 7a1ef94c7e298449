"""Two-mode rotations on an ensemble, photon-number detection and the
single-click acceptance rule.

Detection is number-resolving on both output modes after loss: a surviving
photon pair shows up as (2,0), (1,1) or (0,2) and is rejected. Only an
ensemble that delivers exactly one photon counts as a click.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .fock import CUTOFF, CutoffError, Key, Polarization, SparseState, ensemble_total, h, v
from .loss import BranchMixture, NoiseParams, damp_mixture, damp_sample, merge, pick_index


@dataclass(frozen=True)
class RotationSpec:
    """h^dag -> cos(theta) h^dag + e^{i phi} sin(theta) v^dag,
    v^dag -> -e^{-i phi} sin(theta) h^dag + cos(theta) v^dag."""

    theta: float = 0.0
    phi: float = 0.0


IDENTITY = RotationSpec(0.0, 0.0)
HADAMARD = RotationSpec(math.pi / 4, 0.0)


@dataclass(frozen=True)
class ClickOutcome:
    ensemble: int
    n_h: int
    n_v: int

    @property
    def accepted(self) -> bool:
        return self.n_h + self.n_v == 1

    @property
    def polarization_bit(self) -> Polarization | None:
        if not self.accepted:
            return None
        return Polarization.H if self.n_h == 1 else Polarization.V


@lru_cache(maxsize=None)
def _rotation_table(theta: float, phi: float, a: int, b: int) -> tuple[tuple[int, int, complex], ...]:
    """Image of |a,b> under the rotation as (p, q, amplitude) triples."""
    c, s = math.cos(theta), math.sin(theta)
    e = cmath.exp(1j * phi)
    poly: dict[tuple[int, int], complex] = {}
    for j in range(a + 1):
        ca = math.comb(a, j) * c ** (a - j) * (e * s) ** j
        for l in range(b + 1):
            cb = math.comb(b, l) * (-e.conjugate() * s) ** l * c ** (b - l)
            p, q = a - j + l, j + b - l
            poly[(p, q)] = poly.get((p, q), 0j) + ca * cb
    norm = math.sqrt(math.factorial(a) * math.factorial(b))
    return tuple(
        (p, q, coeff * math.sqrt(math.factorial(p) * math.factorial(q)) / norm)
        for (p, q), coeff in sorted(poly.items())
        if abs(coeff) > 1e-15
    )


def rotate_ensemble(state: SparseState, ensemble: int, spec: RotationSpec) -> SparseState:
    if spec.theta == 0.0 and spec.phi == 0.0:
        return state
    i = 2 * (ensemble - 1)
    out: dict[Key, complex] = {}
    for key, amp in state.items():
        for p, q, coeff in _rotation_table(spec.theta, spec.phi, key[i], key[i + 1]):
            if p > CUTOFF or q > CUTOFF:
                raise CutoffError(f"rotation of key {key} on ensemble {ensemble} exceeds cutoff")
            new = key[:i] + (p, q) + key[i + 2:]
            out[new] = out.get(new, 0j) + amp * coeff
    return SparseState._trusted(state.mode_count, out)


def apply_frame(state: SparseState, ensemble: int, sign: int) -> SparseState:
    """Z-type frame update: multiply by sign**n_v on the ensemble's v-mode."""
    if sign == 1:
        return state
    i = 2 * (ensemble - 1) + 1
    return SparseState._trusted(state.mode_count, {k: a * sign ** k[i] for k, a in state.items()})


def frame_sign(outcomes: Sequence[ClickOutcome]) -> int:
    """Sign picked up by the v-term of an open block after a Hadamard-basis
    connection: -1 per H outcome among the measured boundary ensembles."""
    flips = sum(1 for o in outcomes if o.polarization_bit is Polarization.H)
    return -1 if flips % 2 else 1


def _split_by_outcome(state: SparseState, ensemble: int) -> dict[tuple[int, int], dict[Key, complex]]:
    i = 2 * (ensemble - 1)
    parts: dict[tuple[int, int], dict[Key, complex]] = {}
    for key, amp in state.items():
        parts.setdefault((key[i], key[i + 1]), {})[key] = amp
    return parts


def detect_ensemble_exact(
    mixture: BranchMixture, ensemble: int, spec: RotationSpec, params: NoiseParams
) -> list[tuple[ClickOutcome, float, BranchMixture]]:
    """Full outcome distribution for lossy, rotated number detection of one ensemble.

    Posteriors keep the measured ensemble in its detected Fock state.
    """
    damped = damp_mixture(mixture, [h(ensemble), v(ensemble)], params)
    grouped: dict[tuple[int, int], list[tuple[float, SparseState]]] = {}
    for w, s in damped.branches:
        rotated = rotate_ensemble(s, ensemble, spec)
        for counts, amps in _split_by_outcome(rotated, ensemble).items():
            part = SparseState._trusted(s.mode_count, amps)
            pw = part.norm() ** 2
            if pw > 0.0:
                grouped.setdefault(counts, []).append((w * pw, part.normalize()))
    results = []
    for (nh, nv), branches in sorted(grouped.items()):
        prob = sum(w for w, _ in branches)
        posterior = merge((w / prob, s) for w, s in branches)
        results.append((ClickOutcome(ensemble, nh, nv), prob, posterior))
    return results


def acceptance_probability(mixture: BranchMixture, ensemble: int, spec: RotationSpec, params: NoiseParams) -> float:
    return sum(p for o, p, _ in detect_ensemble_exact(mixture, ensemble, spec, params) if o.accepted)


def detect_ensemble_sample(
    state: SparseState,
    ensemble: int,
    spec: RotationSpec,
    params: NoiseParams,
    rng: np.random.Generator,
) -> tuple[ClickOutcome, SparseState]:
    state, _, _ = damp_sample(state, [h(ensemble), v(ensemble)], params, rng)
    rotated = rotate_ensemble(state, ensemble, spec)
    parts = sorted(_split_by_outcome(rotated, ensemble).items())
    weights = [sum(abs(a) ** 2 for a in amps.values()) for _, amps in parts]
    (nh, nv), amps = parts[pick_index(weights, rng)]
    return ClickOutcome(ensemble, nh, nv), SparseState._trusted(state.mode_count, amps).normalize()


def postselect_all(
    mixture: BranchMixture,
    ensembles: Sequence[int],
    specs: Sequence[RotationSpec] | None,
    params: NoiseParams,
    bits: Sequence[Polarization] | None = None,
) -> tuple[float, BranchMixture | None]:
    """Keep only runs where every listed ensemble gives a single click.

    With ``bits=None`` acceptance is bit-agnostic: the single-click projector is
    summed over both polarization outcomes, which equals the projector onto one
    excitation in the ensemble and commutes with any rotation. The posterior is
    then the effective state in the unrotated frame. With explicit ``bits`` the
    named outcome is kept in the rotated frame of ``specs``.

    Returns ``(0.0, None)`` when nothing survives.
    """
    if len(set(ensembles)) != len(ensembles):
        raise ValueError(f"ensembles must be distinct: {list(ensembles)}")
    if specs is None:
        specs = [HADAMARD] * len(ensembles)
    success = 1.0
    for idx, (ens, spec) in enumerate(zip(ensembles, specs)):
        damped = damp_mixture(mixture, [h(ens), v(ens)], params)
        kept = []
        for w, s in damped.branches:
            if bits is None:
                part = SparseState._trusted(s.mode_count, {k: a for k, a in s.items() if ensemble_total(k, ens) == 1})
            else:
                rotated = rotate_ensemble(s, ens, spec)
                want = (1, 0) if bits[idx] is Polarization.H else (0, 1)
                part = SparseState._trusted(s.mode_count, _split_by_outcome(rotated, ens).get(want, {}))
            pw = part.norm() ** 2
            if pw > 0.0:
                kept.append((w * pw, part.normalize()))
        step = sum(w for w, _ in kept)
        if step <= 0.0:
            return 0.0, None
        success *= step
        mixture = merge((w / step, s) for w, s in kept)
    return success, mixture
