"""Experiment drivers: scenario files, trace runs, and parameter sweeps.

A scenario JSON bundles the topology source (seed or explicit geometry),
radio constants, link profile, solver and simulation settings, and sweep
grids. Every emitted CSV row carries a short hash of the scenario for
provenance, and each run writes a JSON manifest next to its outputs.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .aoi import LinkProfile, empirical_psi
from .network import PlacementBounds, Topology, generate_topology, topology_from_dict
from .sca import SolverConfig, iterate
from .simulate import SimConfig, oma_topology, peak_samples_csv, run_trace, trace_events_csv

__all__ = [
    "Scenario",
    "default_scenario",
    "load_scenario",
    "scenario_hash",
    "run_trace_experiment",
    "run_sweep",
    "validate_oracles",
]

WORKERS_ENV = "AOI_FORGE_WORKERS"


def default_scenario() -> dict:
    """Desk-scale defaults: 10 MHz band, 20 dBm transmitters, -134 dBm/Hz
    noise density, path-loss exponent 2, 50 kbit payloads, 10 s
    normalization, 150 ms coherence time, five links with two
    safety-critical."""
    return {
        "name": "default",
        "topology": {"seed": 1, "K": 5},
        "radio": {
            "q_dbm": 20.0,
            "psd_dbm_hz": -134.0,
            "bandwidth_hz": 10e6,
            "mu": 2.0,
            "d_norm_m": 1.0,
        },
        "placement": {
            "area_m": 100.0,
            "pair_min_m": 5.0,
            "pair_max_m": 25.0,
            "cross_min_m": 20.0,
        },
        "profile": {"payload_bits": 50e3, "tau_bar_s": 10.0},
        "solver": {},
        "sim": {"horizon_s": 1.0, "t_coh_s": 0.150, "seed": 7},
        "modes": ["noma", "oma"],
        "oma": {"strict_orthogonal": False},
        "sweep": {
            "q_dbm_grid": [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            "k_grid": [2, 3, 5, 8],
            "topology_seeds": list(range(1, 21)),
        },
    }


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


@dataclass(frozen=True)
class Scenario:
    """Validated scenario: raw dict plus typed accessors."""

    raw: dict

    def __post_init__(self):
        data = _merge(default_scenario(), self.raw)
        object.__setattr__(self, "raw", data)
        topo = data["topology"]
        if not any(key in topo for key in ("seed", "file", "sensors_m")):
            raise ValueError("topology must give a seed, a file, or explicit positions")
        if "seed" in topo and int(topo.get("K", 0)) < 1:
            raise ValueError("seeded topologies need K >= 1")
        for mode in data["modes"]:
            if mode not in ("noma", "oma"):
                raise ValueError(f"unknown access mode '{mode}'")

    @property
    def hash(self) -> str:
        return scenario_hash(self.raw)

    @property
    def modes(self) -> list[str]:
        return list(self.raw["modes"])

    @property
    def K(self) -> int:
        topo = self.raw["topology"]
        if "K" in topo:
            return int(topo["K"])
        return len(topo["sensors_m"])

    def placement(self) -> PlacementBounds:
        p = self.raw["placement"]
        return PlacementBounds(
            area_m=float(p["area_m"]),
            pair_min_m=float(p["pair_min_m"]),
            pair_max_m=float(p["pair_max_m"]),
            cross_min_m=float(p["cross_min_m"]),
        )

    def base_topology(self, seed: int | None = None, K: int | None = None,
                      q_dbm: float | None = None) -> Topology:
        topo = self.raw["topology"]
        radio = self.raw["radio"]
        if "sensors_m" in topo:
            return topology_from_dict({**radio, **topo})
        if "file" in topo:
            return topology_from_dict(json.loads(Path(topo["file"]).read_text()))
        return generate_topology(
            seed if seed is not None else int(topo["seed"]),
            K if K is not None else int(topo["K"]),
            self.placement(),
            q_dbm=q_dbm if q_dbm is not None else float(radio["q_dbm"]),
            psd_dbm_hz=float(radio["psd_dbm_hz"]),
            bandwidth_hz=float(radio["bandwidth_hz"]),
            mu=float(radio["mu"]),
            d_norm_m=float(radio["d_norm_m"]),
        )

    def topology_for_mode(self, mode: str, seed: int | None = None, K: int | None = None,
                          q_dbm: float | None = None) -> Topology:
        base = self.base_topology(seed=seed, K=K, q_dbm=q_dbm)
        if mode == "oma":
            strict = bool(self.raw["oma"].get("strict_orthogonal", False))
            return oma_topology(base, strict_orthogonal=strict)
        return base

    def profile(self, K: int | None = None) -> LinkProfile:
        K = K if K is not None else self.K
        prof = self.raw["profile"]
        if "hi_links" in prof:
            mask = np.zeros(K, dtype=bool)
            mask[np.asarray(prof["hi_links"], dtype=int)] = True
            hi_count = int(mask.sum())
            profile = LinkProfile(
                np.full(K, float(prof["payload_bits"])), mask, float(prof["tau_bar_s"])
            )
            return profile
        hi_count = prof.get("hi_count")
        return LinkProfile.default(
            K,
            payload_bits=float(prof["payload_bits"]),
            tau_bar=float(prof["tau_bar_s"]),
            hi_count=int(hi_count) if hi_count is not None else None,
        )

    def solver_config(self) -> SolverConfig:
        return SolverConfig(**self.raw["solver"])

    def sim_config(self, access: str = "noma") -> SimConfig:
        sim = self.raw["sim"]
        return SimConfig(
            horizon_s=float(sim["horizon_s"]),
            t_coh_s=float(sim["t_coh_s"]),
            seed=int(sim["seed"]),
            access=access,
        )


def load_scenario(source: str | Path | dict) -> Scenario:
    if isinstance(source, dict):
        return Scenario(raw=source)
    return Scenario(raw=json.loads(Path(source).read_text()))


def scenario_hash(raw: dict) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _write_manifest(out_dir: Path, scenario: Scenario, kind: str,
                    outputs: list[str], wall_s: float, extra: dict | None = None) -> None:
    manifest = {
        "kind": kind,
        "scenario": scenario.raw,
        "scenario_hash": scenario.hash,
        "outputs": outputs,
        "wall_time_s": wall_s,
        "version": __version__,
    }
    if extra:
        manifest.update(extra)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))


def run_trace_experiment(scenario: Scenario, out_dir: str | Path) -> dict:
    """Optimize each access mode, simulate the resulting allocation, and emit
    trace/peak/objective-series CSVs plus a summary.

    Returns the summary dict: per mode, the optimized objective, the
    empirical objective from simulated peak samples, and solver metadata.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    sh = scenario.hash
    summary: dict = {"scenario_hash": sh, "modes": {}}
    outputs: list[str] = []
    for mode in scenario.modes:
        topology = scenario.topology_for_mode(mode)
        profile = scenario.profile()
        report = iterate(topology, profile, scenario.solver_config())
        sim = scenario.sim_config(access=mode)
        trace = run_trace(topology, report.allocation, profile, sim)

        trace_path = out_dir / f"trace_{mode}.csv"
        peaks_path = out_dir / f"peaks_{mode}.csv"
        series_path = out_dir / f"psi_timeseries_{mode}.csv"
        trace_events_csv(trace, trace_path, sh)
        peak_samples_csv(trace, peaks_path, sh)
        times, series = trace.psi_time_series(profile, dt=sim.t_coh_s / 10.0)
        with open(series_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time_s", "psi_sim", "scenario_hash"])
            for tt, vv in zip(times, series):
                writer.writerow([f"{tt:.6f}", f"{vv:.9f}", sh])
        outputs += [trace_path.name, peaks_path.name, series_path.name]

        peaks = trace.peak_arrays()
        psi_emp = empirical_psi(peaks, profile) if all(p.size for p in peaks) else None
        summary["modes"][mode] = {
            "psi_opt": report.psi,
            "psi_empirical": psi_emp,
            "iterations": int(report.iterations),
            "status": report.status,
            "t_alloc_s": report.allocation.t.tolist(),
            "p_alloc": report.allocation.p.tolist(),
            "mean_inst_aoi_s": [
                lt.time_average_aoi(trace.horizon_s) for lt in trace.links
            ],
            "outage_rates": [lt.outage_rate() for lt in trace.links],
        }
    wall = time.perf_counter() - t0
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2))
    outputs.append("summary.json")
    _write_manifest(out_dir, scenario, "trace", outputs, wall)
    return summary


def _sweep_point(raw: dict, mode: str, K: int, q_dbm: float, seed: int) -> dict:
    scenario = Scenario(raw=raw)
    row = {"mode": mode, "k": K, "q_dbm": q_dbm, "seed": seed}
    t0 = time.perf_counter()
    try:
        topology = scenario.topology_for_mode(mode, seed=seed, K=K, q_dbm=q_dbm)
        profile = scenario.profile(K)
        report = iterate(topology, profile, scenario.solver_config())
        row.update(
            psi_opt=report.psi,
            iterations=int(report.iterations),
            status=report.status,
        )
    except Exception as err:  # per-point failures recorded, sweep continues
        row.update(psi_opt=math.nan, iterations=0, status=f"error: {err}")
    row["runtime_s"] = time.perf_counter() - t0
    return row


def run_sweep(scenario: Scenario, out_dir: str | Path) -> list[dict]:
    """Optimize over the (mode, K, q_dBm, topology seed) grid in a process
    pool and emit per-seed rows plus seed-averaged summaries."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    sweep = scenario.raw["sweep"]
    q_grid = [float(q) for q in sweep["q_dbm_grid"]]
    k_grid = [int(k) for k in sweep["k_grid"]]
    seeds = [int(s) for s in sweep["topology_seeds"]]
    tasks = [
        (scenario.raw, mode, K, q, seed)
        for mode in scenario.modes
        for K in k_grid
        for q in q_grid
        for seed in seeds
    ]
    workers = int(os.environ.get(WORKERS_ENV, os.cpu_count() or 1))
    rows: list[dict] = []
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_sweep_point, *task) for task in tasks]
            for fut in as_completed(futures):
                rows.append(fut.result())
    else:
        rows = [_sweep_point(*task) for task in tasks]
    rows.sort(key=lambda r: (r["mode"], r["k"], r["q_dbm"], r["seed"]))

    sh = scenario.hash
    detail_path = out_dir / "sweep.csv"
    with open(detail_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["mode", "k", "q_dbm", "seed", "psi_opt", "iterations", "runtime_s",
             "status", "scenario_hash"]
        )
        for r in rows:
            writer.writerow(
                [r["mode"], r["k"], r["q_dbm"], r["seed"], f"{r['psi_opt']:.9e}",
                 r["iterations"], f"{r['runtime_s']:.3f}", r["status"], sh]
            )

    summary_path = out_dir / "sweep_summary.csv"
    summaries = []
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["mode", "k", "q_dbm", "psi_mean", "psi_std", "iterations_mean",
             "runtime_s_mean", "n_ok", "n_fail", "scenario_hash"]
        )
        for mode in scenario.modes:
            for K in k_grid:
                for q in q_grid:
                    cell = [r for r in rows
                            if r["mode"] == mode and r["k"] == K and r["q_dbm"] == q]
                    ok = [r for r in cell if not r["status"].startswith("error")]
                    psi = np.array([r["psi_opt"] for r in ok])
                    entry = {
                        "mode": mode, "k": K, "q_dbm": q,
                        "psi_mean": float(psi.mean()) if len(ok) else math.nan,
                        "psi_std": float(psi.std()) if len(ok) else math.nan,
                        "iterations_mean": float(np.mean([r["iterations"] for r in ok])) if ok else 0.0,
                        "runtime_s_mean": float(np.mean([r["runtime_s"] for r in cell])),
                        "n_ok": len(ok), "n_fail": len(cell) - len(ok),
                    }
                    summaries.append(entry)
                    writer.writerow(
                        [mode, K, q, f"{entry['psi_mean']:.9e}", f"{entry['psi_std']:.3e}",
                         f"{entry['iterations_mean']:.1f}", f"{entry['runtime_s_mean']:.3f}",
                         entry["n_ok"], entry["n_fail"], sh]
                    )
    _write_manifest(out_dir, scenario, "sweep", [detail_path.name, summary_path.name],
                    time.perf_counter() - t0, {"n_points": len(tasks)})
    return rows


# -- Self-check suite (aoi-forge validate) ---------------------------------------

def validate_oracles(fast: bool = True) -> list[tuple[str, bool, str]]:
    """Cross-checks closed forms against independent oracles at reduced scale.

    Returns (name, passed, detail) tuples; used by the CLI validate command.
    """
    from .aoi import Allocation, expected_exp_aoi, expected_linear_aoi, objective_psi
    from .network import outage_vector, sample_rate_statistics
    from .sca import (
        _canonical_fixed_point,
        build_constraints,
        surrogate_coefficients,
        update_multipliers,
    )
    from .solver import LinearConstraint, NlpProblem, solve

    checks: list[tuple[str, bool, str]] = []
    rng = np.random.default_rng(20240917)

    # Closed-form outage vs Monte Carlo frequency
    n_draws = 100_000 if fast else 1_000_000
    worst = 0.0
    for seed in (1, 2, 3):
        topo = generate_topology(seed, 3)
        rates, _ = sample_rate_statistics(topo, n_draws, np.random.default_rng(seed + 100))
        r_test = np.quantile(rates, 0.5, axis=0)
        p_cf = outage_vector(topo, r_test)
        p_mc = np.mean(rates < r_test[None, :], axis=0)
        se = np.sqrt(p_cf * (1 - p_cf) / n_draws)
        worst = max(worst, float(np.max(np.abs(p_mc - p_cf) / se)))
    checks.append(("outage closed form vs Monte Carlo", worst <= 3.0,
                   f"max deviation {worst:.2f} standard errors"))

    # Expectations vs truncated series
    def series(t, p, tau, exponential):
        ratio = 2.0 ** (t / tau) * p if exponential else p
        v_cut = 40000 if ratio > 0 else 1
        if 0 < ratio < 1:
            v_cut = min(v_cut, int(math.log(1e-16) / math.log(ratio)) + 2)
        v = np.arange(v_cut)
        if exponential:
            return float(np.sum(2.0 ** ((2 + v) * t / tau) * p**v * (1 - p)))
        return float(np.sum((2 + v) * (t / tau) * p**v * (1 - p)))

    max_err = 0.0
    for t in np.linspace(0.05, 4.0, 8):
        for p in np.linspace(0.01, 0.95, 8):
            lin = expected_linear_aoi(t, p, 10.0)
            max_err = max(max_err, abs(lin - series(t, p, 10.0, False)))
            if 2.0 ** (t / 10.0) * p <= 0.99:
                ex = expected_exp_aoi(t, p, 10.0)
                max_err = max(max_err, abs(ex - series(t, p, 10.0, True)))
    checks.append(("age expectations vs series", max_err <= 1e-9, f"max error {max_err:.2e}"))

    # Quadratic-transform fixed-point identity
    topo = generate_topology(5, 3)
    profile = LinkProfile.default(3)
    worst_fp = 0.0
    for _ in range(20):
        t = rng.uniform(0.005, 2.0, 3)
        p = rng.uniform(0.05, 0.8, 3)
        fp = _canonical_fixed_point(
            t, p, np.full(3, 10.0), topo, profile, SolverConfig(), np.full(3, 1e-4)
        )
        qt = update_multipliers(fp, profile)
        c_t, c_p, const = surrogate_coefficients(fp, qt, profile)
        psi_true = objective_psi(Allocation(fp.t, fp.p), profile)
        psi_sur = float(c_t @ fp.t + c_p @ fp.p + const)
        worst_fp = max(worst_fp, abs(psi_sur - psi_true) / max(1.0, abs(psi_true)))
    checks.append(("surrogate fixed-point identity", worst_fp <= 1e-10,
                   f"max relative gap {worst_fp:.2e}"))

    # Interior-point solver on an analytic problem
    prob = NlpProblem(
        n=1, c=np.array([1.0]),
        constraints=[LinearConstraint([0], [-1.0], 1.0, tag="x>=1")],
        lb=np.array([0.0]), ub=np.array([10.0]), x0=np.array([5.0]),
    )
    sol = solve(prob, 1e-7)
    checks.append(("interior-point analytic minimum", abs(sol.x[0] - 1.0) <= 1e-6,
                   f"x* = {sol.x[0]:.9f}"))

    # End-to-end: tiny optimization + simulation consistency
    topo1 = generate_topology(11, 1)
    prof1 = LinkProfile.default(1, hi_count=0)
    report = iterate(topo1, prof1, SolverConfig(init_samples=200, v_max=40))
    n_pkt = 20_000 if fast else 100_000
    t_pkt = float(report.allocation.t[0])
    sim = SimConfig(horizon_s=n_pkt * t_pkt, t_coh_s=t_pkt, seed=3)
    trace = run_trace(topo1, report.allocation, prof1, sim)
    p_cf = outage_vector(topo1, prof1.payload_bits / report.allocation.t)[0]
    p_emp = trace.links[0].outage_rate()
    n_tot = len(trace.links[0].packets)
    se = math.sqrt(p_cf * (1 - p_cf) / n_tot)
    dev = abs(p_emp - p_cf) / se if se > 0 else 0.0
    checks.append(("simulated outage vs closed form", dev <= 3.0,
                   f"deviation {dev:.2f} standard errors over {n_tot} packets"))
    return checks
