"""
Quantitative certificates for engineered baths.

The Davies completion of a spectrum, transition counting, the bound on the
distance between the engineered equilibrium and the Gibbs state, its
inverse (the precision a bath must reach) and the sensitivity of Gibbs
states to Hamiltonian errors.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from bath import DEFAULT_SAMPLES, BathSpectrum, ExactKMSSpectrum, kms_max_violation
from lindblad import build_generator, gibbs_state, spectral_gap, steady_state, trace_norm
from operators import MATRIX_ELEMENT_TOL, coupled_transitions, spectral_decomposition

logger = logging.getLogger(__name__)

HAMILTONIAN_CLASSES = ("general", "ising")
BOUND_SLACK = 1e-9


class KMSCompletedSpectrum(BathSpectrum):
    """
    gamma*(omega) = gamma(omega) for omega >= 0 and
    gamma*_{ab}(omega) = exp(omega/T) gamma_{ba}(-omega) for omega < 0.
    """

    kind = "kms_completed"

    def __init__(self, base, temperature):
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        super().__init__(base.n_channels)
        self.base = base
        self.temperature = float(temperature)

    def gamma(self, a, b, omega):
        omega = np.asarray(omega, dtype=float)
        magnitude = np.abs(omega)
        forward = self.base.gamma(a, b, magnitude)
        backward = np.exp(-magnitude / self.temperature) * self.base.gamma(b, a, magnitude)
        return np.where(omega >= 0, forward, backward)

    def to_dict(self):
        return {"kind": self.kind, "temperature": self.temperature, "base": self.base.to_dict()}


def davies_completion(spectrum, temperature):
    """Exact-KMS completion at temperature T; KMS inputs at the same T come back unchanged."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if isinstance(spectrum, (ExactKMSSpectrum, KMSCompletedSpectrum)) and spectrum.temperature == temperature:
        return spectrum
    return KMSCompletedSpectrum(spectrum, temperature)


def _log(x, base):
    return float(np.log(x) / np.log(base))


def g_of_d(d, hamiltonian_class="general"):
    """
    Transition-count factor G(d).

    general: d(d+1)/2. ising: n(n+1)/2 with n = log2 d, so d must be a
    power of two.
    """
    if d < 1:
        raise ValueError("dimension must be positive")
    if hamiltonian_class == "general":
        return d * (d + 1) // 2
    if hamiltonian_class == "ising":
        if d & (d - 1):
            raise ValueError(f"ising class needs d = 2^n, got d={d}")
        n = d.bit_length() - 1
        return n * (n + 1) // 2
    raise ValueError(f"unknown Hamiltonian class {hamiltonian_class!r}")


@dataclass(frozen=True)
class GenCount:
    per_omega: dict
    total_negative: int
    ising_closed_form: int | None = None


def gen_count(decomp, couplings):
    """
    Count nonzero blocks P(eps) S_alpha P(eps') grouped by omega = eps' - eps.

    ``total_negative`` sums the counts over omega < 0. When d is a power
    of two the closed form n(n+1)/2 for Ising models is reported next to it.
    """
    per_omega = {}
    n_levels = len(decomp.energies)
    for s in couplings:
        s = np.asarray(s, dtype=complex)
        for i in range(n_levels):
            for j in range(n_levels):
                block = decomp.projectors[i] @ s @ decomp.projectors[j]
                if np.max(np.abs(block)) <= MATRIX_ELEMENT_TOL:
                    continue
                omega = float(decomp.frequencies[decomp.transition_labels[i, j]])
                per_omega[omega] = per_omega.get(omega, 0) + 1
    total = sum(count for omega, count in per_omega.items() if omega < 0)
    d = decomp.dim
    closed_form = g_of_d(d, "ising") if d & (d - 1) == 0 else None
    return GenCount(dict(sorted(per_omega.items())), total, closed_form)


@dataclass(frozen=True)
class PrecisionReport:
    lhs: float
    rhs_bound: float
    gap: float
    g_of_d: int
    gen_sum: int
    max_kms_violation: float
    hamiltonian_class: str = "general"
    log_base: float = 2
    slack: float = field(default=BOUND_SLACK, repr=False)

    @property
    def holds(self):
        return self.lhs <= self.rhs_bound + self.slack

    def to_dict(self):
        out = asdict(self)
        out["holds"] = self.holds
        return out


def bound_rhs(gap, d, max_violation, hamiltonian_class="general", log_base=2):
    """6 (log d + 1) / lambda * G(d)^2 * max violation."""
    g = g_of_d(d, hamiltonian_class)
    return 6.0 * (_log(d, log_base) + 1.0) * g * g / gap * max_violation


def precision_bound(
    gen_actual,
    spectrum,
    decomp,
    couplings,
    temperature,
    window,
    hamiltonian_class="general",
    log_base=2,
    n_samples=DEFAULT_SAMPLES,
):
    """
    Compare ||rho_eq - rho_th||_1 with 6 (log d + 1) / lambda * G(d)^2 * max violation.

    lambda is the gap of the generator rebuilt from the Davies completion
    of ``spectrum`` in the frame of ``gen_actual``. The violation is
    sampled on the window grid together with every coupled Bohr frequency.

    Raises:
        NonErgodicError: If either generator has a degenerate kernel
        GapUnresolvedError: If the completed generator has no resolvable gap
    """
    completed = davies_completion(spectrum, temperature)
    gen_star = build_generator(decomp, couplings, completed, frame=gen_actual.frame)
    gap = spectral_gap(gen_star)

    bohr = [omega for _, _, _, omega in coupled_transitions(decomp, couplings) if omega > 0]
    violation = kms_max_violation(spectrum, temperature, window, n_samples, mode="both", bohr_frequencies=bohr)

    d = decomp.dim
    g = g_of_d(d, hamiltonian_class)
    rhs = bound_rhs(gap, d, violation, hamiltonian_class, log_base)
    lhs = trace_norm(steady_state(gen_actual) - gibbs_state(decomp, temperature).density)

    report = PrecisionReport(
        lhs=lhs,
        rhs_bound=float(rhs),
        gap=gap,
        g_of_d=g,
        gen_sum=gen_count(decomp, couplings).total_negative,
        max_kms_violation=violation,
        hamiltonian_class=hamiltonian_class,
        log_base=log_base,
    )
    if not report.holds:
        logger.warning("precision bound violated: lhs %.3g > rhs %.3g", lhs, rhs)
    return report


def required_precision(epsilon, gap, d, hamiltonian_class="general", log_base=2):
    """Largest KMS violation for which the bound guarantees distance <= epsilon."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if gap <= 0:
        raise ValueError("gap must be positive")
    return epsilon * gap / bound_rhs(1.0, d, 1.0, hamiltonian_class, log_base)


@dataclass(frozen=True)
class PerturbationReport:
    bound: float
    actual: float

    @property
    def holds(self):
        return self.actual <= self.bound + BOUND_SLACK

    def to_dict(self):
        return {"bound": self.bound, "actual": self.actual, "holds": self.holds}


def gibbs_perturbation_bound(h1, h2, temperature):
    """
    ||rho_1 - rho_2||_1 against 2 (exp(||H1 - H2||_1 / T) - 1).

    Both Gibbs states are built directly; trace norms are sums of
    singular values.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    h1 = np.asarray(h1, dtype=complex)
    h2 = np.asarray(h2, dtype=complex)
    distance = trace_norm(h1 - h2)
    bound = 2.0 * np.expm1(distance / temperature)
    rho1 = gibbs_state(spectral_decomposition(h1), temperature).density
    rho2 = gibbs_state(spectral_decomposition(h2), temperature).density
    report = PerturbationReport(bound=float(bound), actual=trace_norm(rho1 - rho2))
    if not report.holds:
        logger.warning("Gibbs perturbation bound violated: %.3g > %.3g", report.actual, report.bound)
    return report
