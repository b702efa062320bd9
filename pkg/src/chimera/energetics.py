"""Energy-scaling arithmetic for von Neumann vs hierarchical representations.

E_vN = k * 2^n * E_switch overflows every float for realistic n, so all
comparisons run in log2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

HEADLINE_RATIO = 1e4
LOG_BASES = {"2": 2.0, "e": math.e, "10": 10.0}


def parse_base(base) -> float:
    if isinstance(base, str):
        if base not in LOG_BASES:
            raise ValueError(f"log base must be one of {sorted(LOG_BASES)}")
        return LOG_BASES[base]
    return float(base)


def base_name(base: float) -> str:
    for name, value in LOG_BASES.items():
        if value == base:
            return name
    return repr(base)


@dataclass(frozen=True)
class EnergeticsParams:
    n: int
    k: float = 1.0
    k_prime: float = 1.0
    e_switch: float = 1.0  # J
    log_base: float = 2.0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if not (self.k > 0 and self.k_prime > 0 and self.e_switch > 0):
            raise ValueError("k, k_prime and e_switch must be positive")
        object.__setattr__(self, "log_base", parse_base(self.log_base))


def _log(x: float, base: float) -> float:
    if base == 2.0:
        return math.log2(x)
    if base == 10.0:
        return math.log10(x)
    if base == math.e:
        return math.log(x)
    return math.log(x) / math.log(base)


def log2_energy_vn(p: EnergeticsParams) -> float:
    return p.n + math.log2(p.k * p.e_switch)


def energy_hns(p: EnergeticsParams) -> float:
    return p.k_prime * _log(p.n, p.log_base) * p.e_switch


def log2_eta(p: EnergeticsParams) -> float:
    """log2(E_vN / E_HNS), i.e. n + log2(k / k') - log2(log_b(n)).

    E_switch cancels, so it is dropped before taking logs.
    """
    return p.n + math.log2(p.k / p.k_prime) - math.log2(_log(p.n, p.log_base))


def eta_linear(p: EnergeticsParams) -> float:
    """Ratio in the linear domain; raises OverflowError once 2^n is unrepresentable."""
    return (p.k * math.ldexp(1.0, p.n) * p.e_switch) / energy_hns(p)


def efficiency_report(p: EnergeticsParams) -> dict:
    """Literal formula value next to the quoted 10^4 headline."""
    l2 = log2_eta(p)
    log10_eta = l2 * math.log10(2.0)
    headline_log10 = math.log10(HEADLINE_RATIO)
    gap = log10_eta - headline_log10
    return {
        "n": p.n,
        "k": p.k,
        "k_prime": p.k_prime,
        "e_switch_j": p.e_switch,
        "log_base": base_name(p.log_base),
        "log2_energy_vn": log2_energy_vn(p),
        "energy_hns_j": energy_hns(p),
        "log2_eta": l2,
        "log10_eta": log10_eta,
        "headline_eta": HEADLINE_RATIO,
        "headline_log10_eta": headline_log10,
        "discrepancy_orders_of_magnitude": gap,
        "consistent_with_headline": abs(gap) < 1.0,
        "note": (
            f"literal ratio is 10^{log10_eta:.4g}; the quoted headline is 10^{headline_log10:g}"
            + ("" if abs(gap) < 1.0 else f", a gap of {gap:.4g} orders of magnitude")
        ),
    }
