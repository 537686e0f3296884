"""Physical-layer model of the D2D sensor-actuator network.

Topology geometry, Rayleigh block-fading channel draws, SINR and achievable
rate under treating-interference-as-noise, and the closed-form outage
probability used both by the optimizer and as ground truth for the simulator.

Convention: the instantaneous channel power gain from sensor i to actuator k
is ``E * d[i,k]**(-mu/2)`` with ``E ~ Exp(1)``, independent per (i, k) pair.
This matches the closed-form outage expression exactly, so simulated outage
frequencies and the closed form agree without correction factors.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

__all__ = [
    "PlacementBounds",
    "PlacementError",
    "Topology",
    "ChannelRealization",
    "dbm_to_watt",
    "watt_to_dbm",
    "generate_topology",
    "sample_channel",
    "sinr",
    "achievable_rate",
    "closed_form_outage",
    "outage_vector",
    "worst_case_rates",
    "rates_for_gains",
    "sinr_for_gains",
    "topology_to_dict",
    "topology_from_dict",
    "save_topology",
    "load_topology",
]

LN2 = math.log(2.0)


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watt_to_dbm(watt: float) -> float:
    return 10.0 * math.log10(watt) + 30.0


class PlacementError(RuntimeError):
    """Rejection sampling could not place all device pairs."""


@dataclass(frozen=True)
class PlacementBounds:
    """Geometric constraints for random pair placement (meters)."""

    area_m: float = 100.0
    pair_min_m: float = 5.0
    pair_max_m: float = 25.0
    cross_min_m: float = 20.0
    max_attempts: int = 100_000


@dataclass(frozen=True)
class Topology:
    """Immutable network geometry plus radio constants.

    ``d[i, k]`` is the distance from sensor i to actuator k divided by
    ``d_norm``. ``q`` is stored in watts (converted from dBm at the
    interface). ``sigma2 = noise PSD * B``. ``coupling[i, k]`` gates whether
    sensor i's signal reaches actuator k at all; the diagonal is always 1 and
    off-diagonal zeros model orthogonalized (interference-free) access.
    """

    sensor_xy: np.ndarray
    actuator_xy: np.ndarray
    d: np.ndarray
    mu: float
    q: np.ndarray
    sigma2: float
    B: float
    d_norm: float
    coupling: np.ndarray

    def __post_init__(self):
        for name in ("sensor_xy", "actuator_xy", "d", "q", "coupling"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.K < 1:
            raise ValueError("need at least one link")
        if not np.all(self.d > 0):
            raise ValueError("all distances must be positive")
        if not np.all(self.q > 0):
            raise ValueError("all transmit powers must be positive")
        if self.sigma2 <= 0 or self.B <= 0 or self.mu < 0:
            raise ValueError("sigma2 and B must be positive, mu nonnegative")
        if not np.all(np.diag(self.coupling) == 1.0):
            raise ValueError("own-link coupling must be 1")

    @property
    def K(self) -> int:
        return int(self.d.shape[0])

    @property
    def psd(self) -> float:
        """Noise power spectral density in W/Hz."""
        return self.sigma2 / self.B

    def path_gain(self) -> np.ndarray:
        """Mean channel power gain matrix d**(-mu/2), coupling applied."""
        return self.d ** (-self.mu / 2.0) * self.coupling


@dataclass(frozen=True)
class ChannelRealization:
    """One instantaneous gain matrix; gain[i, k] >= 0."""

    gain: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.gain, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "gain", arr)
        if np.any(arr < 0):
            raise ValueError("gains must be nonnegative")


def generate_topology(
    rng_seed: int,
    K: int,
    params: PlacementBounds | None = None,
    *,
    q_dbm: float = 20.0,
    psd_dbm_hz: float = -134.0,
    bandwidth_hz: float = 10e6,
    mu: float = 2.0,
    d_norm_m: float = 1.0,
) -> Topology:
    """Place K sensor-actuator pairs by rejection sampling.

    Each sensor is uniform in the square area; its actuator lies at a
    distance uniform in [pair_min, pair_max] and must stay inside the area
    and at least cross_min away from every other sensor. Deterministic for a
    fixed seed.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    b = params or PlacementBounds()
    rng = np.random.default_rng(rng_seed)
    sensors = np.zeros((K, 2))
    actuators = np.zeros((K, 2))
    for k in range(K):
        placed = False
        for _ in range(b.max_attempts):
            s = rng.uniform(0.0, b.area_m, size=2)
            if k and np.min(np.linalg.norm(actuators[:k] - s, axis=1)) < b.cross_min_m:
                continue
            for _ in range(64):
                ang = rng.uniform(0.0, 2.0 * math.pi)
                rad = rng.uniform(b.pair_min_m, b.pair_max_m)
                a = s + rad * np.array([math.cos(ang), math.sin(ang)])
                if not (0.0 <= a[0] <= b.area_m and 0.0 <= a[1] <= b.area_m):
                    continue
                if k and np.min(np.linalg.norm(sensors[:k] - a, axis=1)) < b.cross_min_m:
                    continue
                sensors[k], actuators[k] = s, a
                placed = True
                break
            if placed:
                break
        if not placed:
            raise PlacementError(
                f"could not place pair {k} after {b.max_attempts} attempts; "
                f"K={K} may be too dense for the {b.area_m}x{b.area_m} m area"
            )
    d = np.linalg.norm(sensors[:, None, :] - actuators[None, :, :], axis=2) / d_norm_m
    q = np.full(K, dbm_to_watt(q_dbm))
    psd = dbm_to_watt(psd_dbm_hz)
    return Topology(
        sensor_xy=sensors,
        actuator_xy=actuators,
        d=d,
        mu=mu,
        q=q,
        sigma2=psd * bandwidth_hz,
        B=bandwidth_hz,
        d_norm=d_norm_m,
        coupling=np.ones((K, K)),
    )


def sample_channel(topology: Topology, rng: np.random.Generator) -> ChannelRealization:
    """Draw one independent Exp(1) fading realization per (i, k) pair."""
    K = topology.K
    fading = rng.exponential(1.0, size=(K, K))
    return ChannelRealization(gain=fading * topology.path_gain())


def sinr_for_gains(topology: Topology, gains: np.ndarray) -> np.ndarray:
    """SINR per link for gain matrices of shape (..., K, K)."""
    q = topology.q
    signal = np.einsum("...kk->...k", gains) * q
    total = np.einsum("...ik,i->...k", gains, q)
    return signal / (topology.sigma2 + total - signal)


def rates_for_gains(topology: Topology, gains: np.ndarray) -> np.ndarray:
    """Achievable rate (bit/s) per link for gain matrices (..., K, K)."""
    return topology.B * np.log2(1.0 + sinr_for_gains(topology, gains))


def sinr(topology: Topology, realization: ChannelRealization, k: int) -> float:
    """Signal to interference-plus-noise ratio of link k."""
    g = realization.gain
    q = topology.q
    signal = g[k, k] * q[k]
    interference = float(g[:, k] @ q) - signal
    return float(signal / (topology.sigma2 + interference))


def achievable_rate(topology: Topology, realization: ChannelRealization, k: int) -> float:
    """Instantaneous achievable rate B*log2(1+SINR) of link k, in bit/s."""
    return topology.B * math.log2(1.0 + sinr(topology, realization, k))


def closed_form_outage(topology: Topology, r, k: int) -> float:
    """Probability that rate r[k] exceeds the achievable rate of link k.

    Exact under independent Exp(1) fading with power gain d**(-mu/2):
    ``1 - exp(-g*d_kk**(mu/2)*sigma2/q_k) * prod_i q_k/(q_k + g*(d_kk/d_ik)**(mu/2)*q_i)``
    with g = 2**(r_k/B) - 1. Zero when r_k = 0.
    """
    r = np.asarray(r, dtype=float)
    rk = float(r[k]) if r.ndim else float(r)
    if rk < 0:
        raise ValueError("rate must be nonnegative")
    return float(_outage_at_threshold(topology, math.expm1(LN2 * rk / topology.B), k))


def outage_vector(topology: Topology, r: np.ndarray) -> np.ndarray:
    """closed_form_outage evaluated for every link."""
    r = np.asarray(r, dtype=float)
    gammas = np.expm1(LN2 * r / topology.B)
    return np.array([_outage_at_threshold(topology, g, k) for k, g in enumerate(gammas)])


def _outage_at_threshold(topology: Topology, gamma: float, k: int) -> float:
    """Outage probability for SINR threshold gamma at link k."""
    d = topology.d
    q = topology.q
    dk = d[k, k] ** (topology.mu / 2.0)
    log_ok = -gamma * dk * topology.sigma2 / q[k]
    for i in range(topology.K):
        if i == k or topology.coupling[i, k] == 0.0:
            continue
        log_ok -= math.log1p(gamma * (dk / d[i, k] ** (topology.mu / 2.0)) * q[i] / q[k])
    return -math.expm1(log_ok)


def worst_case_rates(topology: Topology, M: int, rng: np.random.Generator) -> np.ndarray:
    """Per-link minimum achievable rate over M sampled realizations.

    Draws are consumed in realization order, so for a fixed generator state
    the result for M' < M is the minimum over a prefix of the same samples.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    rates, _ = sample_rate_statistics(topology, M, rng)
    return rates.min(axis=0)


def sample_rate_statistics(
    topology: Topology, M: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Rates (M, K) and SINRs (M, K) over M channel realizations."""
    K = topology.K
    fading = rng.exponential(1.0, size=(M, K, K))
    gains = fading * topology.path_gain()[None, :, :]
    snr = sinr_for_gains(topology, gains)
    return topology.B * np.log2(1.0 + snr), snr


# -- JSON scenario-file support ------------------------------------------------

def topology_to_dict(topology: Topology) -> dict:
    """Serializable form: positions in meters, powers in dBm, PSD in dBm/Hz."""
    out = {
        "sensors_m": topology.sensor_xy.tolist(),
        "actuators_m": topology.actuator_xy.tolist(),
        "q_dbm": [watt_to_dbm(w) for w in topology.q],
        "psd_dbm_hz": watt_to_dbm(topology.psd),
        "bandwidth_hz": topology.B,
        "mu": topology.mu,
        "d_norm_m": topology.d_norm,
    }
    if not np.all(topology.coupling == 1.0):
        out["coupling"] = topology.coupling.tolist()
    return out


def topology_from_dict(data: dict) -> Topology:
    sensors = np.asarray(data["sensors_m"], dtype=float)
    actuators = np.asarray(data["actuators_m"], dtype=float)
    if sensors.shape != actuators.shape or sensors.ndim != 2 or sensors.shape[1] != 2:
        raise ValueError("sensors_m and actuators_m must both be K x 2")
    K = sensors.shape[0]
    d_norm = float(data.get("d_norm_m", 1.0))
    d = np.linalg.norm(sensors[:, None, :] - actuators[None, :, :], axis=2) / d_norm
    q_dbm = data["q_dbm"]
    if np.isscalar(q_dbm):
        q_dbm = [q_dbm] * K
    q = np.array([dbm_to_watt(v) for v in q_dbm])
    B = float(data["bandwidth_hz"])
    psd = dbm_to_watt(float(data["psd_dbm_hz"]))
    coupling = np.asarray(data.get("coupling", np.ones((K, K))), dtype=float)
    return Topology(
        sensor_xy=sensors,
        actuator_xy=actuators,
        d=d,
        mu=float(data.get("mu", 2.0)),
        q=q,
        sigma2=psd * B,
        B=B,
        d_norm=d_norm,
        coupling=coupling,
    )


def save_topology(topology: Topology, path: str | Path) -> None:
    Path(path).write_text(json.dumps(topology_to_dict(topology), indent=2))


def load_topology(path: str | Path) -> Topology:
    return topology_from_dict(json.loads(Path(path).read_text()))


def with_oma_resources(topology: Topology, k_links: int | None = None, *, strict_orthogonal: bool = False) -> Topology:
    """Equal-split variant: B/K bandwidth and PSD*(B/K) noise power.

    By default cross-link coupling is kept, which reproduces the published
    benchmark behaviour (the band split is the only change). With
    ``strict_orthogonal=True`` the off-diagonal coupling is zeroed so every
    link sees a pure single-link channel.
    """
    K = k_links or topology.K
    if K < 1:
        raise ValueError("K must be >= 1")
    coupling = np.eye(topology.K) if strict_orthogonal else topology.coupling.copy()
    return replace(
        topology,
        B=topology.B / K,
        sigma2=topology.sigma2 / K,
        coupling=coupling,
    )
