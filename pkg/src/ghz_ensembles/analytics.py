"""Closed-form probabilities, vacuum coefficients and preparation times."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field


def _check_eta(eta: float) -> None:
    if not 0.0 <= eta < 1.0:
        raise ValueError(f"eta must satisfy 0 <= eta < 1, got {eta}")


def ladder_depth(n: int) -> int:
    """Number of connection levels i for n = 2**(i+1) ensembles."""
    if n < 4 or n & (n - 1):
        raise ValueError(f"the improved ladder needs n = 2**(i+1) >= 4, got n={n}")
    return n.bit_length() - 2


def pair_time(p0: float, f_p: float) -> float:
    if not 0.0 < p0 < 1.0:
        raise ValueError(f"p0 must lie in (0, 1), got {p0}")
    if f_p <= 0.0:
        raise ValueError(f"repetition frequency must be positive, got {f_p}")
    return 1.0 / (p0 * f_p)


def pair_fidelity(p0: float) -> float:
    if not 0.0 < p0 < 1.0:
        raise ValueError(f"p0 must lie in (0, 1), got {p0}")
    return 1.0 - p0


def expected_max_geometric(count: int, p: float) -> float:
    """E[max of ``count`` iid Geometric(p) variables on {1, 2, ...}]."""
    if count < 1:
        raise ValueError(f"need at least one variable, got {count}")
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    q = 1.0 - p
    total, k, term = 0.0, 0, 1.0
    while term > 1e-16 or k < 1:
        term = 1.0 - (1.0 - q ** k) ** count
        total += term
        k += 1
    return total


def fidelity_bound(n: int, p0: float) -> float:
    """Product of pair fidelities over the n pairs that end up in the final state."""
    return pair_fidelity(p0) ** n


def basic_success(n: int, eta: float) -> float:
    """Per-attempt projection efficiency of the basic chain scheme."""
    _check_eta(eta)
    return (1.0 - eta) ** n / 2 ** (n - 1)


def basic_time(n: int, eta: float, t0: float) -> float:
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    _check_eta(eta)
    return t0 * math.exp(log_basic_time_factor(n, eta))


def log_basic_time_factor(n: int, eta: float) -> float:
    """Natural log of basic_time / t0; safe for large n."""
    return (n - 1) * math.log(2.0) - n * math.log1p(-eta)


def vacuum_coeff(i: int, eta: float) -> float:
    """Closed form; exact when ``eta`` is a ``Fraction``."""
    if i < 0:
        raise ValueError(f"level must be >= 0, got {i}")
    return 2 * eta * (2 ** i - 1)


def vacuum_coeff_recursive(i: int, eta: float) -> float:
    if i < 0:
        raise ValueError(f"level must be >= 0, got {i}")
    c = 0 * eta
    for _ in range(i):
        c = 2 * c + 2 * eta
    return c


def p_connect(i: int, eta: float) -> float:
    """Success probability of the i-th connection (i >= 1)."""
    if i < 1:
        raise ValueError(f"connection level must be >= 1, got {i}")
    _check_eta(eta)
    c = vacuum_coeff(i - 1, eta)
    return (1.0 - eta) ** 2 * (1.0 + 2.0 * eta + 2.0 * c) / (4.0 * (1.0 + c) ** 2)


def p_close(i: int, eta: float) -> float:
    """Success probability of closing the loop after i connections."""
    if i < 1:
        raise ValueError(f"connection level must be >= 1, got {i}")
    _check_eta(eta)
    return (1.0 - eta) ** 2 / (2.0 * (1.0 + vacuum_coeff(i, eta)))


def improved_time(n: int, eta: float, t0: float) -> float:
    i = ladder_depth(n)
    denom = p_close(i, eta)
    for j in range(1, i + 1):
        denom *= p_connect(j, eta)
    return t0 / denom


def quadratic_time(n: int, t0: float) -> float:
    return n * n * t0 / 2.0


def asymptotic_time(n: int, eta: float, t0: float) -> float:
    """Large-loss order-of-magnitude estimate, evaluated as printed."""
    ladder_depth(n)
    if eta <= 0.0:
        raise ValueError("the large-loss estimate is undefined at eta = 0")
    _check_eta(eta)
    lead = 2.0 * eta * n / (1.0 - eta) ** 2
    exponent = math.log2(2.0 * eta * math.sqrt(n) / (1.0 - eta) ** 2)
    return t0 * lead * (n / 2.0) ** exponent


def memoryless_repeats(n: int, p0: float) -> float:
    """Expected Raman repeats to get all n pairs at once without memory (inf on overflow)."""
    try:
        return math.pow(p0, -n)
    except OverflowError:
        return math.inf


def log10_memoryless_repeats(n: int, p0: float) -> float:
    return -n * math.log10(p0)


def memory_advantage(n: int, p0: float) -> float:
    """Ratio of memoryless repeats to the ~n/p0 pair attempts used with memory."""
    return 10 ** (log10_memoryless_repeats(n, p0) - math.log10(n / p0))


def crossover_n(eta: float, n_max: int = 1024) -> int | None:
    """Smallest power-of-two n at which the improved scheme beats the basic one."""
    n = 4
    while n <= n_max:
        if math.log(improved_time(n, eta, 1.0)) < log_basic_time_factor(n, eta):
            return n
        n *= 2
    return None


@dataclass
class ScalingRow:
    n: int
    eta: float
    p0: float
    f_p: float
    t0: float
    basic_time: float
    improved_time: float | None = None
    quadratic_time: float | None = None
    asymptotic_time: float | None = None
    p_steps: list[float] = field(default_factory=list)
    c_steps: list[float] = field(default_factory=list)
    p_close: float | None = None


def scaling_row(n: int, eta: float, p0: float, f_p: float) -> ScalingRow:
    t0 = pair_time(p0, f_p)
    row = ScalingRow(n=n, eta=eta, p0=p0, f_p=f_p, t0=t0, basic_time=basic_time(n, eta, t0))
    if n >= 4 and not n & (n - 1):
        i = ladder_depth(n)
        row.p_steps = [p_connect(j, eta) for j in range(1, i + 1)]
        row.c_steps = [vacuum_coeff(j, eta) for j in range(1, i + 1)]
        row.p_close = p_close(i, eta)
        row.improved_time = improved_time(n, eta, t0)
        row.quadratic_time = quadratic_time(n, t0)
        if eta > 0.0:
            row.asymptotic_time = asymptotic_time(n, eta, t0)
    return row


@dataclass
class ScalingReport:
    rows: list[ScalingRow] = field(default_factory=list)

    def columns(self) -> list[str]:
        depth = max((len(r.p_steps) for r in self.rows), default=0)
        return (
            ["n", "eta", "t0_s", "basic_s", "improved_s", "quadratic_s", "asymptotic_s"]
            + [f"p{j}" for j in range(1, depth + 1)]
            + [f"c{j}" for j in range(1, depth + 1)]
            + ["p_close"]
        )

    def records(self) -> list[dict]:
        depth = max((len(r.p_steps) for r in self.rows), default=0)
        out = []
        for r in self.rows:
            rec = {
                "n": r.n,
                "eta": r.eta,
                "t0_s": r.t0,
                "basic_s": r.basic_time,
                "improved_s": r.improved_time,
                "quadratic_s": r.quadratic_time,
                "asymptotic_s": r.asymptotic_time,
            }
            for j in range(depth):
                rec[f"p{j + 1}"] = r.p_steps[j] if j < len(r.p_steps) else None
            for j in range(depth):
                rec[f"c{j + 1}"] = r.c_steps[j] if j < len(r.c_steps) else None
            rec["p_close"] = r.p_close
            out.append(rec)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=self.columns(), lineterminator="\n")
        writer.writeheader()
        for rec in self.records():
            writer.writerow({k: ("" if val is None else repr(val)) for k, val in rec.items()})
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"columns": self.columns(), "rows": self.records(),
                           "detail": [asdict(r) for r in self.rows]}, indent=2)


def scaling_report(ns, etas, p0: float, f_p: float) -> ScalingReport:
    return ScalingReport([scaling_row(n, eta, p0, f_p) for eta in etas for n in ns])
