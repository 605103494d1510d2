"""
Resonator design optimization against the detailed-balance objectives.

Two objectives are supported: "minimax", the largest violation
|exp(omega/T) gamma(-omega) - gamma(omega)| over the window, and
"integral", the integrated deviation of gamma(-omega)/gamma(omega) from
the Boltzmann factor. Also the two-group Lorentzian construction that
realizes an arbitrary target spectrum with KMS built in.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize, nnls
from scipy.stats import qmc

from bath import (
    DEFAULT_SAMPLES,
    KMSReport,
    LorentzianComponent,
    LorentzianSpectrum,
    RatioUndefinedError,
    ResonatorDesign,
    kms_max_violation,
    kms_ratio_integral,
    lorentzian,
)
from dispersive import DispersiveRegimeError, TransitionRateSpectrum
from lindblad import LindbladError, build_generator, fidelity, gibbs_state, steady_state
from operators import spectral_decomposition

logger = logging.getLogger(__name__)

OBJECTIVES = ("minimax", "integral")
PARAMETERS = ("detuning", "drive_amplitude", "leakage")
SPECTRUM_MODELS = ("transition_rate", "lorentzian")

OBJECTIVE_GRID = 401
MAX_ITERATIONS = 2000
WIDTH_MULTIPLES = (0.5, 0.75, 1.0, 1.5, 2.0, 3.0)


class FitError(RuntimeError):
    """The two-group fit found no usable nonnegative weights."""

    def __init__(self, message, residuals):
        self.residuals = residuals
        super().__init__(f"{message} (residuals {residuals})")


@dataclass(frozen=True, eq=False)
class DesignProblem:
    """
    What to optimize: the free parameters of every resonator of ``base_design``.

    ``bounds`` maps each free parameter name to a (low, high) pair shared by
    all resonators. With ``hold_photon_number`` the drive amplitudes follow
    the detunings and leakages so that each resonator keeps the photon
    number of the base design. ``hamiltonian`` and ``couplings`` are
    optional and only used for the end-to-end Gibbs fidelity.
    """

    temperature: float
    window: object
    base_design: ResonatorDesign
    free_parameters: tuple = ("detuning",)
    bounds: dict = field(default_factory=lambda: {"detuning": (-80.0, 80.0)})
    objective: str = "minimax"
    n_grid: int = OBJECTIVE_GRID
    hold_photon_number: bool = True
    spectrum_model: str = "transition_rate"
    hamiltonian: np.ndarray | None = None
    couplings: tuple | None = None

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.spectrum_model not in SPECTRUM_MODELS:
            raise ValueError(f"unknown spectrum model {self.spectrum_model!r}")
        if not self.free_parameters:
            raise ValueError("a design problem needs at least one free parameter")
        for name in self.free_parameters:
            if name not in PARAMETERS:
                raise ValueError(f"unknown design parameter {name!r}")
            low, high = self.bounds.get(name, (np.nan, np.nan))
            if not (np.isfinite(low) and np.isfinite(high) and low < high):
                raise ValueError(f"parameter {name!r} needs finite bounds low < high")
        object.__setattr__(self, "free_parameters", tuple(self.free_parameters))

    @property
    def n_free(self):
        return len(self.free_parameters) * self.base_design.n_resonators

    def vector_bounds(self):
        n = self.base_design.n_resonators
        return [tuple(self.bounds[name]) for name in self.free_parameters for _ in range(n)]

    def vector_from_design(self, design):
        columns = {
            "detuning": design.detunings,
            "drive_amplitude": np.asarray(design.drive_amplitudes),
            "leakage": np.asarray(design.leakages),
        }
        return np.concatenate([columns[name] for name in self.free_parameters])

    def design_from_vector(self, x):
        """Design with the free parameters taken from ``x`` (clamped to the bounds)."""
        base = self.base_design
        n = base.n_resonators
        bounds = np.asarray(self.vector_bounds())
        x = np.clip(np.asarray(x, dtype=float), bounds[:, 0], bounds[:, 1])
        values = {name: x[i * n:(i + 1) * n] for i, name in enumerate(self.free_parameters)}
        detunings = values.get("detuning", base.detunings)
        leakages = values.get("leakage", np.asarray(base.leakages))
        if "drive_amplitude" in values or not self.hold_photon_number:
            amplitudes = values.get("drive_amplitude", np.asarray(base.drive_amplitudes))
            return replace(
                base,
                drive_amplitudes=amplitudes,
                drive_frequencies=np.asarray(base.resonator_frequencies) + detunings,
                leakages=leakages,
            )
        return ResonatorDesign.from_photon_numbers(
            base.photon_numbers, detunings, leakages, base.resonator_frequencies, base.couplings
        )

    def spectrum_for(self, design):
        if self.spectrum_model == "transition_rate":
            return TransitionRateSpectrum(design)
        return LorentzianSpectrum.from_design(design)

    def with_resonator_count(self, n_resonators):
        """Same problem with the first resonator of the base design repeated ``n_resonators`` times."""
        if n_resonators < 1:
            raise ValueError("need at least one resonator")
        base = self.base_design
        pick = [0] * n_resonators
        design = ResonatorDesign(
            drive_amplitudes=[base.drive_amplitudes[i] for i in pick],
            drive_frequencies=[base.drive_frequencies[i] for i in pick],
            leakages=[base.leakages[i] for i in pick],
            resonator_frequencies=[base.resonator_frequencies[i] for i in pick],
            couplings=base.coupling_matrix[:, pick],
        )
        return replace(self, base_design=design)

    def to_dict(self):
        return {
            "temperature": self.temperature,
            "window": self.window.to_dict(),
            "base_design": self.base_design.to_dict(),
            "free_parameters": list(self.free_parameters),
            "bounds": {name: list(self.bounds[name]) for name in self.free_parameters},
            "objective": self.objective,
            "n_grid": self.n_grid,
            "hold_photon_number": self.hold_photon_number,
            "spectrum_model": self.spectrum_model,
        }


def evaluate_spectrum(problem, spectrum, n_samples=None):
    n_samples = problem.n_grid if n_samples is None else n_samples
    if problem.objective == "minimax":
        return kms_max_violation(spectrum, problem.temperature, problem.window, n_samples)
    return kms_ratio_integral(spectrum, problem.temperature, problem.window, n_samples)


def evaluate_objective(problem, design, n_samples=None):
    """
    Objective value of ``design`` on the problem's window grid.

    Raises:
        RatioUndefinedError: For the integral form when some gamma(omega) vanishes
    """
    return evaluate_spectrum(problem, problem.spectrum_for(design), n_samples)


def final_report(problem, design, n_samples=DEFAULT_SAMPLES):
    """Both objectives on the fine grid; the ratio is None when undefined."""
    spectrum = problem.spectrum_for(design)
    max_abs = kms_max_violation(spectrum, problem.temperature, problem.window, n_samples)
    try:
        ratio = kms_ratio_integral(spectrum, problem.temperature, problem.window, n_samples)
    except RatioUndefinedError:
        ratio = None
    return KMSReport(max_abs, ratio, problem.temperature, n_samples, "grid")


def gibbs_fidelity(problem, design):
    """Fidelity of the engineered steady state with the target Gibbs state, or None."""
    if problem.hamiltonian is None or problem.couplings is None:
        return None
    decomp = spectral_decomposition(problem.hamiltonian)
    gen = build_generator(decomp, problem.couplings, problem.spectrum_for(design), frame="lab")
    try:
        rho = steady_state(gen)
    except LindbladError as exc:
        logger.warning("no steady state for the optimized design: %s", exc)
        return None
    return fidelity(rho, gibbs_state(decomp, problem.temperature).density)


@dataclass(frozen=True)
class StartOutcome:
    index: int
    initial_value: float
    value: float
    x: tuple
    iterations: int
    success: bool


@dataclass(frozen=True, eq=False)
class DesignResult:
    design: ResonatorDesign
    objective: str
    objective_value: float
    kms_report: KMSReport
    gibbs_fidelity: float | None
    iterations: int
    converged: bool
    starts: tuple = ()

    def to_dict(self):
        return {
            "design": self.design.to_dict(),
            "objective": self.objective,
            "objective_value": self.objective_value,
            "kms_report": self.kms_report.to_dict(),
            "gibbs_fidelity": self.gibbs_fidelity,
            "iterations": self.iterations,
            "converged": self.converged,
            "starts": [
                {"index": s.index, "initial_value": s.initial_value, "value": s.value, "success": s.success}
                for s in self.starts
            ],
        }


def start_points(problem, seeds, rng_seed):
    """
    Halton points rotated by a seeded shift, scaled into the bounds.

    Start i does not depend on ``seeds``.
    """
    if seeds < 1:
        raise ValueError("need at least one start")
    bounds = np.asarray(problem.vector_bounds())
    unit = qmc.Halton(d=problem.n_free, scramble=False).random(seeds)
    shift = np.random.default_rng(rng_seed).random(problem.n_free)
    unit = np.mod(unit + shift, 1.0)
    return bounds[:, 0] + unit * (bounds[:, 1] - bounds[:, 0])


def _safe_objective(problem):
    def objective(x):
        try:
            value = evaluate_objective(problem, problem.design_from_vector(x))
        except (RatioUndefinedError, DispersiveRegimeError):
            return np.inf
        return value if np.isfinite(value) else np.inf

    return objective


def _run_start(problem, index, x0):
    objective = _safe_objective(problem)
    bounds = problem.vector_bounds()
    scale = max(high - low for low, high in bounds)
    initial = objective(x0)
    result = minimize(
        objective,
        x0,
        method="Nelder-Mead",
        bounds=bounds,
        options={"xatol": 1e-8 * scale, "fatol": 1e-12, "maxiter": MAX_ITERATIONS},
    )
    value = float(result.fun) if result.fun <= initial else initial
    x = result.x if result.fun <= initial else x0
    logger.debug("start %d: %.6g -> %.6g (%s)", index, initial, value, result.message)
    return StartOutcome(index, float(initial), value, tuple(float(v) for v in x), int(result.nit), bool(result.success))


def optimize(problem, seeds=8, rng_seed=0, jobs=1):
    """
    Multi-start Nelder-Mead over the free parameters.

    Starts run on a thread pool; the best start is chosen by
    (value, start index), so the result is deterministic for a given
    ``rng_seed`` and does not depend on ``jobs``.
    """
    points = start_points(problem, seeds, rng_seed)
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        outcomes = list(pool.map(lambda item: _run_start(problem, *item), enumerate(points)))

    best = min(outcomes, key=lambda o: (o.value, o.index))
    converged = any(o.success for o in outcomes) and any(o.value < o.initial_value for o in outcomes)
    if not converged:
        logger.warning("no optimizer start improved on its initial point")

    design = problem.design_from_vector(best.x)
    result = DesignResult(
        design=design,
        objective=problem.objective,
        objective_value=best.value,
        kms_report=final_report(problem, design),
        gibbs_fidelity=gibbs_fidelity(problem, design),
        iterations=sum(o.iterations for o in outcomes),
        converged=converged,
        starts=tuple(outcomes),
    )
    logger.info("best objective %.6g from start %d of %d", best.value, best.index, seeds)
    return result


@dataclass(frozen=True)
class ParetoPoint:
    n_resonators: int
    objective_value: float
    best_so_far: float
    design: ResonatorDesign

    def to_dict(self):
        return {
            "n_resonators": self.n_resonators,
            "objective_value": self.objective_value,
            "best_so_far": self.best_so_far,
            "design": self.design.to_dict(),
        }


def sweep_resonator_count(problem, counts, seeds=8, rng_seed=0, jobs=1):
    """Optimize at every resonator count; ``best_so_far`` is the running minimum."""
    points = []
    best = np.inf
    for n in counts:
        result = optimize(problem.with_resonator_count(n), seeds, rng_seed, jobs)
        best = min(best, result.objective_value)
        points.append(ParetoPoint(n, result.objective_value, best, result.design))
    return points


@dataclass(frozen=True, eq=False)
class TwoGroupFit:
    """
    Fitted Lorentzian groups; ``residuals`` are relative residuals per group
    and window side ("a_negative", "a_positive", "b_negative", "b_positive").
    """

    group_a: tuple
    group_b: tuple
    residuals: dict

    @property
    def components(self):
        return self.group_a + self.group_b

    def spectrum(self):
        return LorentzianSpectrum(self.components, np.ones((1, len(self.components))))


def _fit_group(centers, grid, target, spacing):
    best = None
    for multiple in WIDTH_MULTIPLES:
        width = multiple * spacing
        basis = np.column_stack([lorentzian(LorentzianComponent(1.0, c, width), grid) for c in centers])
        weights, residual = nnls(basis, target)
        if best is None or residual < best[0]:
            best = (residual, width, weights, basis)
    return best


def fit_two_groups(temperature, window, target, n_per_group, n_fit=OBJECTIVE_GRID):
    """
    Fit two groups of Lorentzians with nonnegative weights.

    Group a reproduces exp(omega/T) F(omega) on [-omega_max, -omega_min]
    and vanishes on the positive window; group b reproduces F on the
    positive window and vanishes on the negative one. Centers are spread
    uniformly over each group's window; the common width is the best of a
    few multiples of the center spacing.

    Raises:
        ValueError: If n_per_group < 1 or the temperature is not positive
        FitError: If a group ends up with all-zero weights or a relative
            residual of at least 1
    """
    if n_per_group < 1:
        raise ValueError("n_per_group must be at least 1")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    positive = window.grid(n_fit)
    negative = -positive[::-1]
    values = np.asarray(target(positive), dtype=float)
    if np.any(values <= 0):
        raise ValueError("target must be positive on the window")
    mirrored = values[::-1]
    spacing = max(window.span, window.omega_min * 1e-3) / n_per_group

    grid = np.concatenate([negative, positive])
    groups = {}
    residuals = {}
    for name, centers, side_target in (
        ("a", np.linspace(-window.omega_max, -window.omega_min, n_per_group),
         np.concatenate([np.exp(negative / temperature) * mirrored, np.zeros_like(positive)])),
        ("b", np.linspace(window.omega_min, window.omega_max, n_per_group),
         np.concatenate([np.zeros_like(negative), values])),
    ):
        _, width, weights, basis = _fit_group(centers, grid, side_target, spacing)
        fitted = basis @ weights
        half = len(negative)
        scale = np.linalg.norm(side_target)
        residuals[f"{name}_negative"] = float(np.linalg.norm(fitted[:half] - side_target[:half]) / scale)
        residuals[f"{name}_positive"] = float(np.linalg.norm(fitted[half:] - side_target[half:]) / scale)
        total = float(np.linalg.norm(fitted - side_target) / scale)
        if not np.any(weights > 0) or total >= 1.0:
            raise FitError(f"group {name} fit infeasible", residuals)
        groups[name] = tuple(LorentzianComponent(float(w), float(c), width) for w, c in zip(weights, centers))

    logger.debug("two-group fit with %d per group: %s", n_per_group, residuals)
    return TwoGroupFit(groups["a"], groups["b"], residuals)


def two_group_construction(
    temperature, window, target, n_per_group, coupling=1.0, resonator_frequency=None, n_fit=OBJECTIVE_GRID
):
    """
    Resonator design whose effective correlation realizes the two-group fit.

    A component of weight w, center c and width k becomes a resonator with
    Delta = -c, kappa = k and photon number 4 w / g^4, so that
    effective_correlation(design, 0, 0, 0, 0, omega) reproduces the fit.
    ``resonator_frequency`` defaults to half the lower window edge.
    """
    fit = fit_two_groups(temperature, window, target, n_per_group, n_fit)
    if coupling <= 0:
        raise ValueError("coupling must be positive")
    if resonator_frequency is None:
        resonator_frequency = 0.5 * window.omega_min
    components = fit.components
    n = len(components)
    return ResonatorDesign.from_photon_numbers(
        photon_numbers=[4.0 * c.weight / coupling ** 4 for c in components],
        detunings=[-c.center for c in components],
        leakages=[c.width for c in components],
        resonator_frequencies=[resonator_frequency] * n,
        couplings=np.full((1, n), coupling),
    )
