"""Sparse pure states of 2n bosonic modes (an h-mode and a v-mode per ensemble).

Flat mode index of ``(ensemble, polarization)`` is ``2*(ensemble-1) + pol`` with
``H = 0`` and ``V = 1``. Ensembles are numbered from 1.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from functools import lru_cache
from enum import IntEnum
from typing import Iterable, Mapping, NamedTuple

CUTOFF = 2
PRUNE_TOL = 1e-14
NORM_TOL = 1e-10
FIDELITY_NORM_TOL = 1e-8

Key = tuple[int, ...]


class CutoffError(ValueError):
    pass


class Polarization(IntEnum):
    H = 0
    V = 1


class ModeId(NamedTuple):
    ensemble: int
    polarization: Polarization

    def index(self, n: int | None = None) -> int:
        if self.ensemble < 1 or (n is not None and self.ensemble > n):
            raise ValueError(f"ensemble {self.ensemble} outside 1..{n}")
        return 2 * (self.ensemble - 1) + int(self.polarization)

    @classmethod
    def from_index(cls, index: int) -> "ModeId":
        return cls(index // 2 + 1, Polarization(index % 2))


def h(ensemble: int) -> ModeId:
    return ModeId(ensemble, Polarization.H)


def v(ensemble: int) -> ModeId:
    return ModeId(ensemble, Polarization.V)


def cyclic(i: int, n: int) -> int:
    """Map any integer ensemble label onto 1..n with n+1 == 1."""
    return (i - 1) % n + 1


@dataclass(frozen=True)
class SparseState:
    """Immutable sparse amplitude map over occupation keys.

    Entries with magnitude below ``PRUNE_TOL`` are dropped on construction.
    """

    mode_count: int
    amplitudes: Mapping[Key, complex] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for key, amp in self.amplitudes.items():
            if len(key) != self.mode_count:
                raise ValueError(f"key {key} does not have {self.mode_count} modes")
            if abs(amp) >= PRUNE_TOL:
                clean[tuple(key)] = complex(amp)
        object.__setattr__(self, "amplitudes", clean)

    @classmethod
    def _trusted(cls, mode_count: int, amplitudes: dict[Key, complex]) -> "SparseState":
        """Construct from well-formed keys, pruning only; skips validation."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "mode_count", mode_count)
        object.__setattr__(obj, "amplitudes", {k: a for k, a in amplitudes.items() if abs(a) >= PRUNE_TOL})
        return obj

    @property
    def n_ensembles(self) -> int:
        return self.mode_count // 2

    def __len__(self) -> int:
        return len(self.amplitudes)

    def items(self):
        return self.amplitudes.items()

    def norm(self) -> float:
        return math.sqrt(sum(abs(a) ** 2 for a in self.amplitudes.values()))

    def normalize(self) -> "SparseState":
        nrm = self.norm()
        if nrm == 0.0:
            raise ValueError("cannot normalize a zero state")
        return SparseState._trusted(self.mode_count, {k: a / nrm for k, a in self.amplitudes.items()})

    def scale(self, factor: complex) -> "SparseState":
        return SparseState._trusted(self.mode_count, {k: a * factor for k, a in self.amplitudes.items()})

    def ensemble_counts(self, key: Key, ensemble: int) -> tuple[int, int]:
        i = 2 * (ensemble - 1)
        return key[i], key[i + 1]

    def to_json(self) -> dict:
        entries = [
            {"key": list(k), "re": a.real, "im": a.imag}
            for k, a in sorted(self.amplitudes.items())
        ]
        return {"mode_count": self.mode_count, "entries": entries}

    @classmethod
    def from_json(cls, data: Mapping) -> "SparseState":
        amps = {tuple(e["key"]): complex(e["re"], e["im"]) for e in data["entries"]}
        return cls(int(data["mode_count"]), amps)


def vacuum(n: int) -> SparseState:
    if n < 1:
        raise ValueError(f"need at least one ensemble, got n={n}")
    return SparseState(2 * n, {(0,) * (2 * n): 1.0 + 0j})


def create(state: SparseState, mode: ModeId) -> SparseState:
    """Bosonic creation on one mode; the result is not renormalized."""
    idx = mode.index(state.n_ensembles)
    out: dict[Key, complex] = {}
    for key, amp in state.items():
        m = key[idx]
        if m + 1 > CUTOFF:
            raise CutoffError(f"creating on mode {mode} overflows cutoff {CUTOFF} at key {key}")
        new = key[:idx] + (m + 1,) + key[idx + 1:]
        out[new] = out.get(new, 0j) + amp * math.sqrt(m + 1)
    return SparseState._trusted(state.mode_count, out)


def apply_creation_sum(state: SparseState, terms: Iterable[tuple[ModeId, complex]]) -> SparseState:
    """Apply a linear combination of creation operators, sum_k c_k a_k^dagger."""
    out: dict[Key, complex] = {}
    for mode, coeff in terms:
        for key, amp in create(state, mode).items():
            out[key] = out.get(key, 0j) + coeff * amp
    return SparseState._trusted(state.mode_count, out)


def support(state: SparseState) -> set[int]:
    """Flat indices of modes occupied in at least one key."""
    occupied: set[int] = set()
    for key in state.amplitudes:
        occupied.update(i for i, c in enumerate(key) if c)
    return occupied


def tensor(a: SparseState, b: SparseState, offset: int | None = None) -> SparseState:
    """Product state with ``b``'s modes placed starting at flat index ``offset``.

    The default offset appends ``b`` after ``a``. With ``offset=0`` and equal
    sizes this joins two states living on disjoint modes of one register.
    """
    if offset is None:
        offset = a.mode_count
    if offset < 0:
        raise ValueError("offset must be non-negative")
    size = max(a.mode_count, offset + b.mode_count)
    clash = {i + offset for i in support(b)} & support(a)
    if clash:
        raise ValueError(f"overlapping mode ranges at flat indices {sorted(clash)}")
    out: dict[Key, complex] = {}
    for ka, aa in a.items():
        base = list(ka) + [0] * (size - a.mode_count)
        for kb, ab in b.items():
            key = base.copy()
            for j, c in enumerate(kb):
                key[offset + j] += c
            out[tuple(key)] = aa * ab
    return SparseState._trusted(size, out)


def inner_product(a: SparseState, b: SparseState) -> complex:
    """<a|b>, conjugate-linear in the first argument."""
    if a.mode_count != b.mode_count:
        raise ValueError(f"mode_count mismatch: {a.mode_count} vs {b.mode_count}")
    small, large = (a, b) if len(a) <= len(b) else (b, a)
    total = 0j
    for key, amp in small.items():
        other = large.amplitudes.get(key)
        if other is not None:
            total += amp.conjugate() * other if small is a else other.conjugate() * amp
    return total


def fidelity(a: SparseState, b: SparseState) -> float:
    for s in (a, b):
        if abs(s.norm() - 1.0) > FIDELITY_NORM_TOL:
            raise ValueError(f"fidelity needs normalized states (norm {s.norm():.12g})")
    return min(1.0, abs(inner_product(a, b)) ** 2)


def ghz_reference(n: int, phi_t: float = 0.0) -> SparseState:
    """(|H...H> + e^{i phi_t}|V...V>)/sqrt(2) over n ensembles."""
    if n < 2:
        raise ValueError(f"GHZ reference needs n >= 2, got {n}")
    all_h = (1, 0) * n
    all_v = (0, 1) * n
    r = 1 / math.sqrt(2)
    return SparseState(2 * n, {all_h: r + 0j, all_v: r * cmath.exp(1j * phi_t)})


@dataclass
class PhaseLedger:
    """Channel phases phi_{i,j} of the prepared pair states."""

    n: int
    link_phases: dict[tuple[int, int], float] = field(default_factory=dict)

    def phase(self, i: int, j: int) -> float:
        i, j = cyclic(i, self.n), cyclic(j, self.n)
        if (i, j) in self.link_phases:
            return self.link_phases[(i, j)]
        if (j, i) in self.link_phases:
            return -self.link_phases[(j, i)]
        return 0.0

    @property
    def total_phase(self) -> float:
        return sum(self.phase(i, i + 1) for i in range(1, self.n + 1))


@lru_cache(maxsize=4096)
def pair_state(n: int, i: int, j: int, phi: float = 0.0) -> SparseState:
    """(h_i^dagger + e^{i phi} v_j^dagger)/sqrt(2)|vac> inside an n-ensemble register."""
    if i == j:
        raise ValueError("pair needs two distinct ensembles")
    r = 1 / math.sqrt(2)
    return apply_creation_sum(vacuum(n), [(h(i), r), (v(j), r * cmath.exp(1j * phi))])


def chain_state(n: int, ledger: PhaseLedger | None = None) -> SparseState:
    """Product of pair states (i, i+1) for i = 1..n, cyclic."""
    ledger = ledger or PhaseLedger(n)
    state = vacuum(n)
    r = 1 / math.sqrt(2)
    for i in range(1, n + 1):
        j = cyclic(i + 1, n)
        state = apply_creation_sum(
            state, [(h(i), r), (v(j), r * cmath.exp(1j * ledger.phase(i, j)))]
        )
    return state


def ensemble_total(key: Key, ensemble: int) -> int:
    i = 2 * (ensemble - 1)
    return key[i] + key[i + 1]


def project_total(state: SparseState, ensembles: Iterable[int], total: int = 1) -> SparseState:
    """Keep only keys with exactly ``total`` excitations on every listed ensemble (unnormalized)."""
    ens = list(ensembles)
    return SparseState._trusted(
        state.mode_count,
        {k: a for k, a in state.items() if all(ensemble_total(k, e) == total for e in ens)},
    )


def block_reference(n: int, lo: int, hi: int, phase: float = 0.0) -> SparseState:
    """Ideal effective state of an open block lo..hi in an n-ensemble register:
    (h_lo ... h_{hi-1} + e^{i phase} v_{lo+1} ... v_hi)/sqrt(2)|vac>."""
    if not 1 <= lo < hi <= n:
        raise ValueError(f"need 1 <= lo < hi <= n, got lo={lo}, hi={hi}, n={n}")
    upper = [0] * (2 * n)
    lower = [0] * (2 * n)
    for k in range(lo, hi):
        upper[2 * (k - 1)] = 1
        lower[2 * k + 1] = 1
    r = 1 / math.sqrt(2)
    return SparseState(2 * n, {tuple(upper): r + 0j, tuple(lower): r * cmath.exp(1j * phase)})
