"""Exact peak age-of-information statistics.

A link transmitting back-to-back packets of duration t, each failing
independently with probability p, produces peak ages (2+v)*t with geometric
weight p**v * (1-p). The closed forms below are the resulting expectations of
the linear and base-2 exponential aging functions, and the mixed-criticality
objective sums them over the low/high criticality partition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "RegulationError",
    "LinkProfile",
    "Allocation",
    "peak_aoi_pmf",
    "expected_linear_aoi",
    "expected_exp_aoi",
    "objective_psi",
    "empirical_psi",
]


class RegulationError(ValueError):
    """2**(t/tau_bar) * p >= 1: the exponential-age series diverges."""


@dataclass(frozen=True)
class LinkProfile:
    """Per-link payload sizes, criticality classes, and normalization time.

    ``hi_mask[k]`` is True for safety-critical (exponential-aging) links and
    False for non-critical (linear-aging) ones.
    """

    payload_bits: np.ndarray
    hi_mask: np.ndarray
    tau_bar: float

    def __post_init__(self):
        n = np.asarray(self.payload_bits, dtype=float)
        h = np.asarray(self.hi_mask, dtype=bool)
        n.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "payload_bits", n)
        object.__setattr__(self, "hi_mask", h)
        if n.shape != h.shape or n.ndim != 1:
            raise ValueError("payload_bits and hi_mask must be 1-D with equal length")
        if np.any(n <= 0):
            raise ValueError("payload sizes must be positive")
        if self.tau_bar <= 0:
            raise ValueError("tau_bar must be positive")

    @property
    def K(self) -> int:
        return int(self.payload_bits.shape[0])

    @property
    def lo_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.hi_mask)

    @property
    def hi_indices(self) -> np.ndarray:
        return np.flatnonzero(self.hi_mask)

    @classmethod
    def default(
        cls,
        K: int,
        payload_bits: float = 50e3,
        tau_bar: float = 10.0,
        hi_count: int | None = None,
    ) -> "LinkProfile":
        """First ceil(0.4*K) links are safety-critical unless overridden."""
        if hi_count is None:
            hi_count = math.ceil(0.4 * K)
        mask = np.zeros(K, dtype=bool)
        mask[:hi_count] = True
        return cls(np.full(K, float(payload_bits)), mask, tau_bar)


@dataclass(frozen=True)
class Allocation:
    """Transmission times t (s) and outage-probability upper bounds p."""

    t: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        p = np.asarray(self.p, dtype=float)
        t.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "p", p)
        if t.shape != p.shape:
            raise ValueError("t and p must have equal shape")
        if np.any(t <= 0):
            raise ValueError("transmission times must be positive")
        if np.any((p < 0) | (p >= 1)):
            raise ValueError("outage bounds must lie in [0, 1)")

    def regulation_margin(self, tau_bar: float) -> np.ndarray:
        """1 - 2**(t/tau_bar)*p per link; positive iff convergent."""
        return 1.0 - np.exp2(self.t / tau_bar) * self.p


def peak_aoi_pmf(t: float, p: float, v_max: int) -> list[tuple[float, float]]:
    """Truncated peak-age distribution: mass p**v*(1-p) at (2+v)*t.

    The returned masses sum to 1 - p**(v_max+1).
    """
    if not 0.0 <= p < 1.0:
        raise ValueError("p must lie in [0, 1)")
    if t <= 0:
        raise ValueError("t must be positive")
    if v_max < 0:
        raise ValueError("v_max must be >= 0")
    return [((2 + v) * t, p**v * (1.0 - p)) for v in range(v_max + 1)]


def expected_linear_aoi(t, p, tau_bar: float):
    """E[peak age / tau_bar] = 2*t/tau_bar + (p/(1-p))*t/tau_bar."""
    t = np.asarray(t, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p >= 1)):
        raise ValueError("p must lie in [0, 1)")
    out = (2.0 + p / (1.0 - p)) * t / tau_bar
    return float(out) if out.ndim == 0 else out


def expected_exp_aoi(t, p, tau_bar: float):
    """E[2**(peak age / tau_bar)] = 2**(2t/tau)*(1-p) / (1 - 2**(t/tau)*p).

    Requires the convergence condition 2**(t/tau_bar)*p < 1; always >= 1 and
    tends to 2**(2t/tau_bar) as p -> 0.
    """
    t = np.asarray(t, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p >= 1)):
        raise ValueError("p must lie in [0, 1)")
    w = np.exp2(t / tau_bar)
    denom = 1.0 - w * p
    if np.any(denom <= 0):
        raise RegulationError("2**(t/tau_bar)*p >= 1; expected exponential age diverges")
    out = w * w * (1.0 - p) / denom
    return float(out) if out.ndim == 0 else out


def objective_psi(alloc: Allocation, profile: LinkProfile) -> float:
    """Mixed-criticality objective: linear terms over LO links plus
    exponential terms over HI links."""
    lo = profile.lo_indices
    hi = profile.hi_indices
    total = 0.0
    if lo.size:
        total += float(np.sum(expected_linear_aoi(alloc.t[lo], alloc.p[lo], profile.tau_bar)))
    if hi.size:
        total += float(np.sum(expected_exp_aoi(alloc.t[hi], alloc.p[hi], profile.tau_bar)))
    return total


def empirical_psi(peak_samples: Sequence[np.ndarray], profile: LinkProfile) -> float:
    """Sample-mean estimator of the objective from per-link peak-age samples.

    LO links contribute mean(tau/tau_bar), HI links mean(2**(tau/tau_bar)).
    Raises if any link has no samples.
    """
    if len(peak_samples) != profile.K:
        raise ValueError(f"expected {profile.K} sample arrays, got {len(peak_samples)}")
    total = 0.0
    for k in range(profile.K):
        samples = np.asarray(peak_samples[k], dtype=float)
        if samples.size == 0:
            raise ValueError(f"link {k} has no peak-age samples")
        scaled = samples / profile.tau_bar
        if profile.hi_mask[k]:
            total += float(np.mean(np.exp2(scaled)))
        else:
            total += float(np.mean(scaled))
    return total
