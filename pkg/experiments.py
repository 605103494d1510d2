"""
Experiment runners behind the command-line subcommands.

Every run writes into one output directory:

    manifest.json      config hash, config, package versions
    members/*.csv      per-member curves and scatter
    members/*.json     per-member reports
    summary.json       ensemble reduction, in member order

File bodies carry no timestamps, so a fixed seed reproduces them byte for byte.
"""
from __future__ import annotations

import asyncio
import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pydantic
import scipy

from bath import kms_violation
from config import config_hash, member_rng
from designopt import DesignProblem, gibbs_fidelity, optimize, sweep_resonator_count
from dispersive import DispersiveRegimeError, build_dispersive_model
from lindblad import (
    LindbladError,
    build_generator,
    complete_positivity_margin,
    ergodicity_check,
    fidelity,
    gibbs_state,
    maximally_mixed,
    propagate,
    rotating_wave_ratio,
    solve_steady_state,
    spectral_gap,
    trace_distance,
    verify_fixed_point,
)
from operators import BathCannotActError, chain_window_bound, coupled_transitions, energy_window, spectral_decomposition
from precision import davies_completion, gibbs_perturbation_bound, precision_bound
from version import __version__

logger = logging.getLogger(__name__)

RATES_HEADER_V1 = ("omega_GHz", "heating_GHz", "cooling_GHz", "sweep_GHz")
TRANSITIONS_HEADER_V1 = (
    "member", "alpha", "omega_GHz", "heating_GHz", "cooling_GHz", "capped_heating_GHz", "capped_cooling_GHz",
)
BINS_HEADER_V1 = (
    "omega_low_GHz", "omega_high_GHz", "count",
    "mean_heating_GHz", "mean_cooling_GHz", "mean_capped_heating_GHz", "mean_capped_cooling_GHz",
)
KMS_CURVE_HEADER_V1 = ("omega_GHz", "violation_initial_GHz", "violation_optimized_GHz")
PARETO_HEADER_V1 = ("n_resonators", "objective", "best_so_far")
TRAJECTORY_HEADER_V1 = ("t_ns", "trace_distance_to_gibbs")

FIXED_POINT_TOL = 1e-9
TRACE_PRESERVATION_TOL = 1e-9
CP_TOL = 1e-8
CAP_FRACTION = 0.1


def format_value(value):
    """Scientific notation with 10 significant digits; ints and strings pass through."""
    if isinstance(value, (bool, np.bool_, str)):
        return str(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.9e}"


def write_csv(path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    return value


def write_json(path, data):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_manifest(out_dir, config, command):
    write_json(
        out_dir / "manifest.json",
        {
            "command": command,
            "config_hash": config_hash(config),
            "config": config.model_dump(mode="json"),
            "versions": {
                "engineered_baths": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "pydantic": pydantic.VERSION,
            },
        },
    )


@dataclass(frozen=True, eq=False)
class Instance:
    """One drawn system: Hamiltonian, couplings and the windows it needs."""

    index: int
    couplings_J: np.ndarray
    hamiltonian: np.ndarray
    couplings: list
    decomp: object
    window: object
    coupled_window: object


def uniform_window(config):
    """Closed-form window at the largest |J| the ensemble can draw, for Ising chains."""
    system = config.system
    if system.model != "ising_chain":
        return None
    if system.J is not None:
        return chain_window_bound(system.qubit_frequencies(), system.J)
    j_max = max(abs(v) for v in system.J_range)
    return chain_window_bound(system.qubit_frequencies(), [j_max] * (system.n - 1))


def build_instance(config, index):
    """
    Draw member ``index``.

    The objective window is the configured override, else the uniform
    chain bound, else the coupled-transition window of the drawn system.
    """
    system = config.system
    j = system.draw_couplings(member_rng(config, index))
    h = system.hamiltonian(j)
    couplings = system.coupling_operators()
    decomp = spectral_decomposition(h)
    try:
        coupled = energy_window(decomp, couplings)
    except BathCannotActError:
        coupled = None
    window = config.target.energy_window() or uniform_window(config) or coupled
    if window is None:
        raise BathCannotActError("bath cannot act: no coupled transitions and no window override")
    return Instance(index, j, h, couplings, decomp, window, coupled)


def design_problem(config, instance):
    run = config.run
    return DesignProblem(
        temperature=config.target.temperature_GHz,
        window=instance.window,
        base_design=config.bath.design(len(instance.couplings)),
        free_parameters=tuple(run.free_parameters),
        bounds=run.parameter_bounds(),
        objective=run.objective,
        n_grid=run.grid,
        hold_photon_number=run.hold_photon_number,
        spectrum_model=config.bath.spectrum_model,
        hamiltonian=instance.hamiltonian,
        couplings=tuple(instance.couplings),
    )


def bath_spectrum(config, instance):
    """Configured spectrum without optimization."""
    if config.bath.mode == "exact_kms":
        return config.bath.reference_spectrum(config.target.temperature_GHz, len(instance.couplings))
    problem = design_problem(config, instance)
    return problem.spectrum_for(problem.base_design)


def rate_curve(spectrum, omegas):
    """Channel-averaged (omega, heating, cooling, sweep) rows."""
    channels = range(spectrum.n_channels)
    cooling = np.mean([spectrum.gamma(a, a, omegas) for a in channels], axis=0)
    heating = np.mean([spectrum.gamma(a, a, -omegas) for a in channels], axis=0)
    return np.column_stack([omegas, heating, cooling, heating + cooling])


def capped_rates(heating, cooling, leakage):
    """
    Rescale rates to the drive at which the largest cooling rate equals kappa/10.

    Returns:
        (capped_heating, capped_cooling, scale)
    """
    heating = np.asarray(heating, dtype=float)
    cooling = np.asarray(cooling, dtype=float)
    peak = float(cooling.max(initial=0.0))
    scale = CAP_FRACTION * leakage / peak if peak > 0 else 1.0
    return heating * scale, cooling * scale, scale


def transition_rows(instance, spectrum, leakage):
    """Scatter of every coupled transition with omega > 0, raw and capped."""
    found = [
        (alpha, omega)
        for alpha, _, _, omega in coupled_transitions(instance.decomp, instance.couplings)
        if omega > instance.decomp.delta_bohr
    ]
    if not found:
        return [], 1.0
    alphas = np.array([a for a, _ in found])
    omegas = np.array([w for _, w in found])
    cooling = np.array([float(spectrum.gamma(a, a, w)) for a, w in found])
    heating = np.array([float(spectrum.gamma(a, a, -w)) for a, w in found])
    capped_heating, capped_cooling, scale = capped_rates(heating, cooling, leakage)
    rows = [
        (instance.index, int(a), w, h, c, ch, cc)
        for a, w, h, c, ch, cc in zip(alphas, omegas, heating, cooling, capped_heating, capped_cooling)
    ]
    return rows, scale


def binned_means(rows, window, n_bins):
    """Mean raw and capped rates of the scatter rows per frequency bin over ``window``."""
    edges = np.linspace(window.omega_min, window.omega_max, n_bins + 1)
    data = np.array([row[2:] for row in rows], dtype=float).reshape(-1, 5)
    which = np.clip(np.searchsorted(edges, data[:, 0], side="right") - 1, 0, n_bins - 1)
    inside = (data[:, 0] >= edges[0]) & (data[:, 0] <= edges[-1])
    out = []
    for b in range(n_bins):
        sel = data[inside & (which == b)]
        means = sel[:, 1:].mean(axis=0) if len(sel) else np.full(4, np.nan)
        out.append((edges[b], edges[b + 1], len(sel), *means))
    return out


@dataclass(eq=False)
class MemberResult:
    index: int
    report: dict
    transitions: list = field(default_factory=list)

    @property
    def fidelity(self):
        return self.report.get("gibbs_fidelity")


def chain_member(config, index, out_dir):
    """
    Draw, optimize and report one ensemble member; writes members/member_NNN.*.

    A member whose design sits on a dispersive pole is reported with a
    ``dispersive`` violation and no rates; the ensemble carries on.
    """
    instance = build_instance(config, index)
    stem = out_dir / "members" / f"member_{index:03d}"
    try:
        report, rows = _chain_member_report(config, instance, stem)
    except DispersiveRegimeError as exc:
        logger.warning("member %d dropped: %s", index, exc)
        report = {
            "index": index,
            "J": instance.couplings_J,
            "window": instance.window.to_dict(),
            "detunings": None,
            "gibbs_fidelity": None,
            "regime_violations": ["dispersive"],
            "error": str(exc),
        }
        rows = []
    write_json(stem.with_suffix(".json"), report)
    if report["regime_violations"]:
        logger.warning("member %d regime violations: %s", index, ", ".join(report["regime_violations"]))
    return MemberResult(index, report, rows)


def _chain_member_report(config, instance, stem):
    problem = design_problem(config, instance)
    run = config.run

    if run.optimize_detuning:
        result = optimize(problem, seeds=run.seeds, rng_seed=config.system.rng_seed + instance.index, jobs=1)
        design, value, converged, member_fidelity = result.design, result.objective_value, result.converged, result.gibbs_fidelity
        kms = result.kms_report.to_dict()
    else:
        design = problem.base_design
        value, converged, kms = None, None, None
        member_fidelity = gibbs_fidelity(problem, design)

    spectrum = problem.spectrum_for(design)
    model = build_dispersive_model(instance.hamiltonian, instance.couplings, design, spectrum)
    accuracy = gibbs_perturbation_bound(instance.hamiltonian, model.h_star, config.target.temperature_GHz)
    leakage = min(design.leakages)
    rows, scale = transition_rows(instance, spectrum, leakage)
    if not run.cap_rates:
        rows = [row[:5] + (row[3], row[4]) for row in rows]
        scale = 1.0

    write_csv(stem.with_name(stem.name + "_rates.csv"), RATES_HEADER_V1, rate_curve(spectrum, instance.window.grid(run.rate_points)))
    write_csv(stem.with_name(stem.name + "_transitions.csv"), TRANSITIONS_HEADER_V1, rows)

    report = {
        "index": instance.index,
        "J": instance.couplings_J,
        "window": instance.window.to_dict(),
        "coupled_window": instance.coupled_window.to_dict() if instance.coupled_window else None,
        "design": design.to_dict(),
        "detunings": design.detunings,
        "objective_value": value,
        "converged": converged,
        "kms_report": kms,
        "gibbs_fidelity": member_fidelity,
        "regime": model.validity.to_dict(),
        "regime_violations": model.validity.violations(),
        "dispersive_accuracy": accuracy.to_dict(),
        "cap_scale": scale,
    }
    return report, rows


async def _gather_members(config, worker, *args):
    loop = asyncio.get_running_loop()
    n = config.system.ensemble_size
    with ThreadPoolExecutor(max_workers=config.run.jobs) as pool:
        tasks = [loop.run_in_executor(pool, worker, config, i, *args) for i in range(n)]
        return await asyncio.gather(*tasks)


@dataclass(eq=False)
class RunReport:
    out_dir: Path
    summary: dict
    members: list

    @property
    def passed(self):
        return bool(self.summary.get("passed", True))


async def run_chain_example(config):
    """
    Ensemble of Ising chains coupled to one optimized resonator each.

    Members run concurrently up to ``run.jobs``; the summary reduces them
    in member order.
    """
    out_dir = Path(config.run.output_directory)
    write_manifest(out_dir, config, "chain-example")
    members = await _gather_members(config, chain_member, out_dir)

    window = build_instance(config, 0).window
    rows = [row for m in members for row in m.transitions]
    bins = binned_means(rows, window, config.run.bins)
    write_csv(out_dir / "binned_rates.csv", BINS_HEADER_V1, bins)
    write_csv(out_dir / "transitions.csv", TRANSITIONS_HEADER_V1, rows)

    fidelities = [m.fidelity for m in members if m.fidelity is not None]
    mean_fidelity = float(np.mean(fidelities)) if fidelities else None
    summary = {
        "ensemble_size": len(members),
        "window": window.to_dict(),
        "mean_fidelity": mean_fidelity,
        "min_fidelity": min(fidelities) if fidelities else None,
        "fidelity_threshold": config.run.fidelity_threshold,
        "passed": mean_fidelity is not None and mean_fidelity >= config.run.fidelity_threshold,
        "detunings": [m.report["detunings"] for m in members],
        "regime_violations": {str(m.index): m.report["regime_violations"] for m in members if m.report["regime_violations"]},
        "bins": [dict(zip(BINS_HEADER_V1, b)) for b in bins],
    }
    write_json(out_dir / "summary.json", summary)
    return RunReport(out_dir, summary, members)


@dataclass(frozen=True)
class CheckResult:
    name: str
    member: int
    passed: bool
    value: float | None
    detail: str = ""

    def to_dict(self):
        return {"name": self.name, "member": self.member, "passed": self.passed, "value": self.value, "detail": self.detail}


def verify_member(config, index, out_dir):
    """Fixed point, ergodicity, trace preservation, CP and precision-bound checks of one member."""
    instance = build_instance(config, index)
    temperature = config.target.temperature_GHz
    decomp, couplings = instance.decomp, instance.couplings
    spectrum = bath_spectrum(config, instance)
    checks = []

    completed = build_generator(decomp, couplings, davies_completion(spectrum, temperature), frame=config.run.frame)
    residual = verify_fixed_point(completed, gibbs_state(decomp, temperature).density)
    checks.append(CheckResult("fixed_point", index, residual <= FIXED_POINT_TOL, residual))

    ergodicity = ergodicity_check(decomp, couplings)
    checks.append(CheckResult(
        "ergodicity", index, ergodicity.ergodic, float(len(ergodicity.components)),
        f"kernel dimension {ergodicity.kernel_dimension}",
    ))

    gen = build_generator(decomp, couplings, spectrum, frame=config.run.frame)
    leak = float(np.linalg.norm(gen.apply_adjoint(np.eye(decomp.dim))))
    checks.append(CheckResult("trace_preservation", index, leak <= TRACE_PRESERVATION_TOL, leak))
    margin = complete_positivity_margin(gen)
    checks.append(CheckResult("complete_positivity", index, margin >= -CP_TOL, margin))

    try:
        report = precision_bound(
            gen, spectrum, decomp, couplings, temperature, instance.window,
            hamiltonian_class=config.run.hamiltonian_class, log_base=config.run.log_base,
            n_samples=config.run.samples,
        )
        checks.append(CheckResult("precision_bound", index, report.holds, report.lhs, f"rhs {report.rhs_bound:.6g}"))
    except LindbladError as exc:
        checks.append(CheckResult("precision_bound", index, False, None, str(exc)))

    write_json(out_dir / "members" / f"member_{index:03d}_checks.json", [c.to_dict() for c in checks])
    return checks


async def run_verify(config):
    out_dir = Path(config.run.output_directory)
    write_manifest(out_dir, config, "verify")
    per_member = await _gather_members(config, verify_member, out_dir)
    checks = [c for member in per_member for c in member]
    failing = sorted({c.name for c in checks if not c.passed})
    summary = {
        "ensemble_size": len(per_member),
        "checks": {
            name: {
                "passed": sum(c.passed for c in checks if c.name == name),
                "total": sum(1 for c in checks if c.name == name),
            }
            for name in dict.fromkeys(c.name for c in checks)
        },
        "failing": failing,
        "passed": not failing,
    }
    write_json(out_dir / "summary.json", summary)
    return RunReport(out_dir, summary, checks)


async def run_design(config):
    """Optimize member 0's design; writes design.json, KMS curves and the N_r sweep."""
    out_dir = Path(config.run.output_directory)
    write_manifest(out_dir, config, "design")
    instance = build_instance(config, 0)
    problem = design_problem(config, instance)
    run = config.run

    loop = asyncio.get_running_loop()
    result = await loop.run_in_executor(None, lambda: optimize(problem, run.seeds, config.system.rng_seed, run.jobs))

    omegas = instance.window.grid(run.grid)
    before = kms_violation(problem.spectrum_for(problem.base_design), problem.temperature, -omegas)
    after = kms_violation(problem.spectrum_for(result.design), problem.temperature, -omegas)
    write_csv(out_dir / "kms_curve.csv", KMS_CURVE_HEADER_V1, np.column_stack([omegas, before, after]))
    write_csv(out_dir / "rates.csv", RATES_HEADER_V1, rate_curve(problem.spectrum_for(result.design), instance.window.grid(run.rate_points)))

    summary = {"problem": problem.to_dict(), "result": result.to_dict(), "passed": True}
    if run.resonator_counts != [1]:
        sweep = await loop.run_in_executor(
            None, lambda: sweep_resonator_count(problem, run.resonator_counts, run.seeds, config.system.rng_seed, run.jobs)
        )
        write_csv(out_dir / "pareto.csv", PARETO_HEADER_V1, [(p.n_resonators, p.objective_value, p.best_so_far) for p in sweep])
        summary["pareto"] = [p.to_dict() for p in sweep]
    if not result.converged:
        logger.warning("design optimizer did not converge; reporting best found")
    write_json(out_dir / "design.json", summary)
    return RunReport(out_dir, summary, [result])


async def run_rates(config):
    """Rate curve and transition scatter of member 0 for the configured (unoptimized) design."""
    out_dir = Path(config.run.output_directory)
    write_manifest(out_dir, config, "rates")
    instance = build_instance(config, 0)
    spectrum = bath_spectrum(config, instance)
    curve = rate_curve(spectrum, instance.window.grid(config.run.rate_points))
    write_csv(out_dir / "rates.csv", RATES_HEADER_V1, curve)
    rows, scale = transition_rows(instance, spectrum, config.bath.leakage)
    write_csv(out_dir / "transitions.csv", TRANSITIONS_HEADER_V1, rows)
    summary = {
        "window": instance.window.to_dict(),
        "max_cooling_GHz": float(curve[:, 2].max()),
        "max_heating_GHz": float(curve[:, 1].max()),
        "cap_GHz": CAP_FRACTION * config.bath.leakage,
        "cap_scale": scale,
        "passed": True,
    }
    write_json(out_dir / "summary.json", summary)
    return RunReport(out_dir, summary, [])


async def run_steady_state(config):
    """Steady state, gap and relaxation trajectory from the maximally mixed state for member 0."""
    out_dir = Path(config.run.output_directory)
    write_manifest(out_dir, config, "steady-state")
    instance = build_instance(config, 0)
    decomp = instance.decomp
    spectrum = bath_spectrum(config, instance)
    gen = build_generator(decomp, instance.couplings, spectrum, frame=config.run.frame)

    solution = solve_steady_state(gen)
    gibbs = gibbs_state(decomp, config.target.temperature_GHz).density
    gap = spectral_gap(gen)
    t_final = config.run.t_final or 20.0 / gap
    trajectory = propagate(gen, maximally_mixed(decomp.dim), t_final, config.run.n_steps)

    distances = trajectory.distances_to(gibbs)
    populations = trajectory.populations(decomp)
    header = TRAJECTORY_HEADER_V1 + tuple(f"population_{k}" for k in range(populations.shape[1]))
    write_csv(out_dir / "trajectory.csv", header, np.column_stack([trajectory.times, distances, populations]))

    summary = {
        "method": solution.method,
        "residual": solution.residual,
        "kernel_dimension": solution.kernel_dimension,
        "gap_GHz": gap,
        "t_final_ns": t_final,
        "fidelity": fidelity(solution.density, gibbs),
        "trace_distance": trace_distance(solution.density, gibbs),
        "rotating_wave_ratio": rotating_wave_ratio(decomp, instance.couplings, spectrum),
        "populations": np.diag(decomp.to_eigenbasis(solution.density)).real,
        "gibbs_populations": np.diag(decomp.to_eigenbasis(gibbs)).real,
        "passed": True,
    }
    write_json(out_dir / "summary.json", summary)
    return RunReport(out_dir, summary, [solution])
