"""
Engineered bath fluctuation spectra.

A spectrum maps a channel pair (alpha, alpha') and a frequency omega to the
fluctuation coefficient gamma_{alpha alpha'}(omega) in GHz. Driven lossy
resonators contribute Lorentzian lines; an analytic exact-KMS reference is
available for verification.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import trapezoid

logger = logging.getLogger(__name__)

DEFAULT_SAMPLES = 2001
PSD_TOL = 1e-10


class RatioUndefinedError(ValueError):
    """Raised when gamma(omega) vanishes inside the window of the ratio objective."""


@dataclass(frozen=True)
class LorentzianComponent:
    """One Lorentzian line: weight * width / ((omega - center)^2 + (width/2)^2)."""

    weight: float
    center: float
    width: float

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError(f"Lorentzian weight must be non-negative, got {self.weight}")
        if self.width <= 0:
            raise ValueError(f"Lorentzian width must be positive, got {self.width}")

    def __call__(self, omega):
        return lorentzian(self, omega)

    def to_dict(self):
        return {"weight": self.weight, "center": self.center, "width": self.width}

    @classmethod
    def from_dict(cls, data):
        return cls(float(data["weight"]), float(data["center"]), float(data["width"]))


def lorentzian(component, omega):
    """
    Evaluate a Lorentzian line.

    Args:
        component: LorentzianComponent
        omega: Frequency or array of frequencies in GHz

    Returns:
        Rate in GHz, same shape as omega
    """
    omega = np.asarray(omega, dtype=float)
    half = component.width / 2.0
    return component.weight * component.width / ((omega - component.center) ** 2 + half * half)


def _as_tuple(values):
    return tuple(float(v) for v in np.atleast_1d(np.asarray(values, dtype=float)))


@dataclass(frozen=True)
class ResonatorDesign:
    """
    Drive and loss parameters of N_r resonators plus their couplings.

    ``couplings[alpha][nu]`` is g_{alpha nu} in GHz. Drive frequencies are
    carried signed (omega_d = omega_r + Delta); positivity is required of
    the resonator frequencies and leakage rates.
    """

    drive_amplitudes: tuple
    drive_frequencies: tuple
    leakages: tuple
    resonator_frequencies: tuple
    couplings: tuple

    def __post_init__(self):
        object.__setattr__(self, "drive_amplitudes", _as_tuple(self.drive_amplitudes))
        object.__setattr__(self, "drive_frequencies", _as_tuple(self.drive_frequencies))
        object.__setattr__(self, "leakages", _as_tuple(self.leakages))
        object.__setattr__(self, "resonator_frequencies", _as_tuple(self.resonator_frequencies))
        g = np.atleast_2d(np.asarray(self.couplings, dtype=float))
        object.__setattr__(self, "couplings", tuple(tuple(float(v) for v in row) for row in g))

        n = len(self.drive_amplitudes)
        if n < 1:
            raise ValueError("a design needs at least one resonator")
        for name in ("drive_frequencies", "leakages", "resonator_frequencies"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has {len(getattr(self, name))} entries, expected {n}")
        if g.shape[1] != n:
            raise ValueError(f"couplings have {g.shape[1]} columns, expected {n}")
        if min(self.leakages) <= 0:
            raise ValueError("leakage rates must be positive")
        if min(self.resonator_frequencies) <= 0:
            raise ValueError("resonator frequencies must be positive")

    @classmethod
    def from_photon_numbers(cls, photon_numbers, detunings, leakages, resonator_frequencies, couplings):
        """
        Build a design from target photon numbers instead of drive amplitudes.

        The amplitude is E = sqrt(N) * |Delta + i kappa/2| so that
        |alpha|^2 = N in the coherent steady state.
        """
        detunings = np.atleast_1d(np.asarray(detunings, dtype=float))
        n = detunings.size
        photon_numbers = np.broadcast_to(np.asarray(photon_numbers, dtype=float), (n,))
        leakages = np.broadcast_to(np.asarray(leakages, dtype=float), (n,))
        resonator_frequencies = np.broadcast_to(np.asarray(resonator_frequencies, dtype=float), (n,))
        if np.any(photon_numbers < 0):
            raise ValueError("photon numbers must be non-negative")
        amplitudes = np.sqrt(photon_numbers) * np.abs(detunings + 0.5j * leakages)
        return cls(
            drive_amplitudes=amplitudes,
            drive_frequencies=resonator_frequencies + detunings,
            leakages=leakages,
            resonator_frequencies=resonator_frequencies,
            couplings=couplings,
        )

    @property
    def n_resonators(self):
        return len(self.drive_amplitudes)

    @property
    def n_channels(self):
        return len(self.couplings)

    @property
    def detunings(self):
        return np.asarray(self.drive_frequencies) - np.asarray(self.resonator_frequencies)

    @property
    def coupling_matrix(self):
        return np.asarray(self.couplings, dtype=float)

    @property
    def photon_numbers(self):
        return np.array([abs(coherent_amplitude(self, nu)) ** 2 for nu in range(self.n_resonators)])

    def with_detunings(self, detunings, hold_photon_number=False):
        """Copy with new detunings; optionally re-derive amplitudes to keep N fixed."""
        detunings = np.broadcast_to(np.asarray(detunings, dtype=float), (self.n_resonators,))
        if hold_photon_number:
            return ResonatorDesign.from_photon_numbers(
                self.photon_numbers, detunings, self.leakages, self.resonator_frequencies, self.couplings
            )
        return replace(self, drive_frequencies=np.asarray(self.resonator_frequencies) + detunings)

    def to_dict(self):
        return {
            "drive_amplitudes": list(self.drive_amplitudes),
            "drive_frequencies": list(self.drive_frequencies),
            "leakages": list(self.leakages),
            "resonator_frequencies": list(self.resonator_frequencies),
            "couplings": [list(row) for row in self.couplings],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            drive_amplitudes=data["drive_amplitudes"],
            drive_frequencies=data["drive_frequencies"],
            leakages=data["leakages"],
            resonator_frequencies=data["resonator_frequencies"],
            couplings=data["couplings"],
        )


def coherent_amplitude(design, nu):
    """
    Steady-state coherent amplitude alpha = E / (Delta + i kappa/2) of resonator ``nu``.

    |alpha|^2 is the mean photon number stored in the resonator.
    """
    delta = design.drive_frequencies[nu] - design.resonator_frequencies[nu]
    return design.drive_amplitudes[nu] / complex(delta, design.leakages[nu] / 2.0)


class BathSpectrum:
    """
    Base class for gamma_{alpha alpha'}(omega) over ``n_channels`` coupling channels.

    Subclasses implement ``gamma``; it must accept scalar or array omega and
    return zero for channel indices outside the spectrum.
    """

    kind = "abstract"

    def __init__(self, n_channels):
        if n_channels < 1:
            raise ValueError("a spectrum needs at least one channel")
        self.n_channels = int(n_channels)

    def gamma(self, a, b, omega):
        raise NotImplementedError

    def has_pair(self, a, b):
        return 0 <= a < self.n_channels and 0 <= b < self.n_channels

    def matrix(self, omega):
        """The channel matrix [gamma_{ab}(omega)] at a single frequency."""
        out = np.empty((self.n_channels, self.n_channels))
        for a in range(self.n_channels):
            for b in range(self.n_channels):
                out[a, b] = float(self.gamma(a, b, omega))
        return out

    def pairs(self):
        return [(a, b) for a in range(self.n_channels) for b in range(self.n_channels)]

    def to_dict(self):
        raise NotImplementedError


class LorentzianSpectrum(BathSpectrum):
    """
    gamma_{ab}(omega) = sum_nu g_{a nu} g_{b nu} Lambda_nu(omega).

    Cross-mode terms Lambda_{nu nu'} with nu != nu' are zero.
    """

    kind = "lorentzian"

    def __init__(self, modes, couplings):
        self.modes = tuple(modes)
        couplings = np.asarray(couplings, dtype=float)
        if couplings.ndim == 1:
            couplings = couplings[:, None]
        if couplings.shape[1] != len(self.modes):
            raise ValueError(f"{couplings.shape[1]} coupling columns for {len(self.modes)} modes")
        super().__init__(couplings.shape[0])
        self.couplings = couplings

    @classmethod
    def from_design(cls, design):
        modes = [
            LorentzianComponent(
                weight=abs(coherent_amplitude(design, nu)) ** 2,
                center=-float(design.detunings[nu]),
                width=design.leakages[nu],
            )
            for nu in range(design.n_resonators)
        ]
        return cls(modes, design.coupling_matrix)

    def gamma(self, a, b, omega):
        omega = np.asarray(omega, dtype=float)
        total = np.zeros_like(omega)
        if not self.has_pair(a, b):
            return total
        for nu, mode in enumerate(self.modes):
            coefficient = self.couplings[a, nu] * self.couplings[b, nu]
            if coefficient != 0.0:
                total = total + coefficient * lorentzian(mode, omega)
        return total

    def to_dict(self):
        return {
            "kind": self.kind,
            "modes": [mode.to_dict() for mode in self.modes],
            "couplings": self.couplings.tolist(),
        }


class ExactKMSSpectrum(BathSpectrum):
    """
    Reference spectrum: gamma(omega) = gamma0 for omega >= 0 and
    gamma0 * exp(omega / T) for omega < 0, diagonal in the channels.
    """

    kind = "exact_kms"

    def __init__(self, base_rate, temperature, n_channels=1):
        if base_rate < 0:
            raise ValueError("base rate must be non-negative")
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        super().__init__(n_channels)
        self.base_rate = float(base_rate)
        self.temperature = float(temperature)

    def gamma(self, a, b, omega):
        omega = np.asarray(omega, dtype=float)
        if a != b or not self.has_pair(a, b):
            return np.zeros_like(omega)
        return np.where(omega >= 0, self.base_rate, self.base_rate * np.exp(np.minimum(omega, 0.0) / self.temperature))

    def to_dict(self):
        return {
            "kind": self.kind,
            "base_rate": self.base_rate,
            "temperature": self.temperature,
            "n_channels": self.n_channels,
        }


def spectrum_from_dict(data):
    """Rebuild a LorentzianSpectrum or ExactKMSSpectrum from ``to_dict`` output."""
    kind = data.get("kind")
    if kind == LorentzianSpectrum.kind:
        modes = [LorentzianComponent.from_dict(m) for m in data["modes"]]
        couplings = np.asarray(data["couplings"], dtype=float).reshape(-1, len(modes))
        return LorentzianSpectrum(modes, couplings)
    if kind == ExactKMSSpectrum.kind:
        return ExactKMSSpectrum(data["base_rate"], data["temperature"], data.get("n_channels", 1))
    raise ValueError(f"unknown spectrum kind {kind!r}")


def collective_gamma(spectrum, a, b, omega):
    """gamma_{ab}(omega) of ``spectrum``; zero for a missing channel pair."""
    return spectrum.gamma(a, b, omega)


def check_positive_semidefinite(spectrum, omegas, tol=PSD_TOL):
    """
    Return the most negative normalized eigenvalue of [gamma_ab(omega)] over ``omegas``.

    A value below ``-tol`` means the spectrum cannot come from a physical bath.
    """
    worst = 0.0
    for omega in np.atleast_1d(omegas):
        m = spectrum.matrix(omega)
        m = 0.5 * (m + m.T)
        scale = max(abs(np.trace(m)), 1e-300)
        worst = min(worst, float(np.linalg.eigvalsh(m).min()) / scale)
    return worst


@dataclass(frozen=True)
class KMSReport:
    """Detailed-balance residuals of a spectrum over an energy window."""

    max_abs: float
    ratio_integral: float | None
    temperature: float
    n_samples: int
    mode: str

    def to_dict(self):
        return {
            "max_abs": self.max_abs,
            "ratio_integral": self.ratio_integral,
            "temperature": self.temperature,
            "n_samples": self.n_samples,
            "mode": self.mode,
        }


def _require_temperature(temperature):
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")


def sample_frequencies(window, n_samples=DEFAULT_SAMPLES, mode="grid", bohr_frequencies=None):
    """
    Positive frequencies at which detailed balance is checked.

    mode="grid" samples the window uniformly, mode="bohr" uses only the
    supplied positive Bohr frequencies, mode="both" takes the union.
    """
    if mode not in ("grid", "bohr", "both"):
        raise ValueError(f"unknown sampling mode {mode!r}")
    parts = []
    if mode in ("grid", "both"):
        parts.append(window.grid(n_samples))
    if mode in ("bohr", "both"):
        if bohr_frequencies is None:
            raise ValueError("Bohr-frequency sampling needs the Bohr frequencies")
        bohr = np.asarray(bohr_frequencies, dtype=float)
        parts.append(bohr[bohr > 0])
    return np.unique(np.concatenate(parts))


def kms_violation(spectrum, temperature, omegas):
    """
    |exp(omega/T) gamma_{ba}(-omega) - gamma_{ab}(omega)| maximized over channel pairs.

    Args:
        spectrum: BathSpectrum
        temperature: Target temperature in GHz
        omegas: Negative frequencies

    Returns:
        Array of violations, one per omega
    """
    _require_temperature(temperature)
    omegas = np.asarray(omegas, dtype=float)
    boltzmann = np.exp(omegas / temperature)
    worst = np.zeros_like(omegas)
    for a, b in spectrum.pairs():
        diff = np.abs(boltzmann * spectrum.gamma(b, a, -omegas) - spectrum.gamma(a, b, omegas))
        worst = np.maximum(worst, diff)
    return worst


def kms_max_violation(spectrum, temperature, window, n_samples=DEFAULT_SAMPLES, mode="grid", bohr_frequencies=None):
    """Largest detailed-balance violation over [-omega_max, -omega_min]."""
    positive = sample_frequencies(window, n_samples, mode, bohr_frequencies)
    if positive.size == 0:
        return 0.0
    return float(kms_violation(spectrum, temperature, -positive).max())


def kms_ratio_integral(spectrum, temperature, window, n_samples=DEFAULT_SAMPLES):
    """
    Integral over the window of |gamma(-omega)/gamma(omega) - exp(-omega/T)|.

    Evaluated by the trapezoidal rule on each diagonal channel and reduced
    by the maximum over channels.

    Raises:
        RatioUndefinedError: If gamma(omega) vanishes anywhere on the grid
    """
    _require_temperature(temperature)
    omegas = window.grid(n_samples)
    worst = 0.0
    for a in range(spectrum.n_channels):
        forward = spectrum.gamma(a, a, omegas)
        if np.any(forward <= 0):
            raise RatioUndefinedError(f"ratio undefined: gamma_{a}{a}(omega) vanishes in the window")
        backward = spectrum.gamma(a, a, -omegas)
        integrand = np.abs(backward / forward - np.exp(-omegas / temperature))
        value = float(trapezoid(integrand, omegas)) if window.span > 0 else 0.0
        worst = max(worst, value)
    return worst


def kms_residual(spectrum, temperature, window, n_samples=DEFAULT_SAMPLES, mode="grid", bohr_frequencies=None):
    """
    Both detailed-balance objectives of a spectrum.

    Raises:
        ValueError: If the temperature is not positive
        RatioUndefinedError: If the ratio form is undefined
    """
    _require_temperature(temperature)
    max_abs = kms_max_violation(spectrum, temperature, window, n_samples, mode, bohr_frequencies)
    ratio = kms_ratio_integral(spectrum, temperature, window, n_samples)
    return KMSReport(max_abs=max_abs, ratio_integral=ratio, temperature=float(temperature), n_samples=n_samples, mode=mode)
