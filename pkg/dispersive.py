"""
Dispersive reduction of qubits coupled to driven lossy resonators.

Second-order effective operators only: R_alpha, A_nu, the modified system
Hamiltonian, the photon-number coupling operators S_hat_nu, their
correlation functions, the single-resonator heating/cooling rate and the
validity diagnostics of the reduction.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from bath import BathSpectrum, LorentzianComponent, LorentzianSpectrum, coherent_amplitude, lorentzian
from operators import MATRIX_ELEMENT_TOL, coupled_transitions, spectral_decomposition

logger = logging.getLogger(__name__)

POLE_TOL = 1e-6
REGIME_SLACK = 1e-9

DISPERSIVE_MARGIN = 5.0
BORN_RATIO = 0.1
MARKOV_RATIO = 0.1
LEAKAGE_RATIO = 0.2


class DispersiveRegimeError(ValueError):
    """A dispersive denominator or rate pole is within tolerance of zero."""


def _decompose(hamiltonian_or_decomp):
    if hasattr(hamiltonian_or_decomp, "eigenvectors"):
        return hamiltonian_or_decomp
    return spectral_decomposition(hamiltonian_or_decomp)


def r_operator(coupling, decomp, resonator_frequency):
    """
    R = sum_jk <j|S|k> / (omega_r + Omega_j - Omega_k) |j><k| over eigenstates.

    Raises:
        DispersiveRegimeError: If a coupled denominator is within 1e-6 GHz of zero
    """
    decomp = _decompose(decomp)
    s = decomp.to_eigenbasis(np.asarray(coupling, dtype=complex))
    energy = decomp.state_energies()
    denominator = resonator_frequency + energy[:, None] - energy[None, :]
    support = np.abs(s) > MATRIX_ELEMENT_TOL
    near = support & (np.abs(denominator) < POLE_TOL)
    if np.any(near):
        j, k = (int(v) for v in np.argwhere(near)[0])
        raise DispersiveRegimeError(f"dispersive assumption violated at ({j},{k})")
    r = np.where(support, s / np.where(support, denominator, 1.0), 0.0)
    return decomp.from_eigenbasis(r)


def a_operator(couplings, decomp, design, nu):
    """A_nu = sum_alpha g_{alpha nu} R_alpha(omega_r^nu)."""
    decomp = _decompose(decomp)
    g = design.coupling_matrix
    out = np.zeros((decomp.dim, decomp.dim), dtype=complex)
    for alpha, s in enumerate(couplings):
        if g[alpha, nu] != 0.0:
            out += g[alpha, nu] * r_operator(s, decomp, design.resonator_frequencies[nu])
    return out


def modified_hamiltonian(hamiltonian, couplings, design, photon_numbers=None):
    """
    H* = H - sum_{alpha,nu} (g/2) [((1 + N_nu) A_nu^dagger - A_nu) S_alpha + h.c.].

    ``photon_numbers`` defaults to the coherent-state photon numbers of the design.
    """
    h = np.asarray(hamiltonian, dtype=complex)
    decomp = spectral_decomposition(h)
    if photon_numbers is None:
        photon_numbers = design.photon_numbers
    g = design.coupling_matrix
    h_star = h.copy()
    for nu in range(design.n_resonators):
        a = a_operator(couplings, decomp, design, nu)
        dressed = (1.0 + photon_numbers[nu]) * a.conj().T - a
        for alpha, s in enumerate(couplings):
            term = dressed @ np.asarray(s, dtype=complex)
            h_star -= 0.5 * g[alpha, nu] * (term + term.conj().T)
    return h_star


def pair_weights(design):
    """``w[a, b, nu]`` = g_{a nu} g_{b nu} / 2, the weight of a^dagger a - <a^dagger a> in the bath pair B_{ab}."""
    g = design.coupling_matrix
    return 0.5 * g[:, None, :] * g[None, :, :]


@dataclass(frozen=True, eq=False)
class CouplingStructure:
    """Photon-number coupling operators and the bath pair weights they pair with."""

    s_hat: tuple
    bath_weights: np.ndarray


def coupling_operators(couplings, design, decomp):
    """S_hat_nu = 1/2 sum_alpha g_{alpha nu} [S_alpha, A_nu^dagger - A_nu]."""
    decomp = _decompose(decomp)
    g = design.coupling_matrix
    s_hat = []
    for nu in range(design.n_resonators):
        a = a_operator(couplings, decomp, design, nu)
        b = a.conj().T - a
        op = np.zeros_like(b)
        for alpha, s in enumerate(couplings):
            s = np.asarray(s, dtype=complex)
            op += 0.5 * g[alpha, nu] * (s @ b - b @ s)
        s_hat.append(op)
    return CouplingStructure(tuple(s_hat), pair_weights(design))


def effective_correlation(design, a, b, a_prime, b_prime, omega):
    """gamma = sum_nu w_{ab nu} w_{a'b' nu} Lambda_nu(omega), w the bath pair weights."""
    w = pair_weights(design)
    omega = np.asarray(omega, dtype=float)
    total = np.zeros_like(omega)
    for nu in range(design.n_resonators):
        weight = w[a, b, nu] * w[a_prime, b_prime, nu]
        if weight != 0.0:
            total = total + weight * lorentzian(resonator_line(design, nu), omega)
    return total


def resonator_line(design, nu):
    """Lambda_nu: weight |alpha_nu|^2, centered at -Delta_nu, width kappa_nu."""
    return LorentzianComponent(
        weight=abs(coherent_amplitude(design, nu)) ** 2,
        center=-float(design.detunings[nu]),
        width=design.leakages[nu],
    )


def flip_matrix_element(omega, resonator_frequency):
    """|<j|[X, R^dagger - R]|k>| = 4 omega / (omega_r^2 - omega^2) for a flip at Bohr frequency omega."""
    omega = np.asarray(omega, dtype=float)
    return 4.0 * omega / (resonator_frequency ** 2 - omega ** 2)


def rate_model(omega, photon_number, leakage, detuning, resonator_frequency, coupling):
    """
    Single-resonator transition rate at Bohr frequency omega.

    N kappa / ((omega + Delta)^2 + (kappa/2)^2) * (2 omega g^2 / (omega_r^2 - omega^2))^2.
    Positive omega is cooling, negative omega heating.

    Raises:
        DispersiveRegimeError: If |omega| is within 1e-6 GHz of omega_r
    """
    omega = np.asarray(omega, dtype=float)
    if np.any(np.abs(np.abs(omega) - resonator_frequency) < POLE_TOL):
        raise DispersiveRegimeError(f"rate pole: |omega| at resonator frequency {resonator_frequency}")
    line = photon_number * leakage / ((omega + detuning) ** 2 + (leakage / 2.0) ** 2)
    factor = 2.0 * omega * coupling ** 2 / (resonator_frequency ** 2 - omega ** 2)
    return line * factor ** 2


class TransitionRateSpectrum(BathSpectrum):
    """
    Per-channel transition rates of a resonator design.

    gamma_{aa}(omega) = sum_nu rate_model(omega; N_nu, kappa_nu, Delta_nu,
    omega_r^nu, g_{a nu}); channels are uncorrelated. Used on the bare
    coupling operators S_alpha.
    """

    kind = "transition_rate"

    def __init__(self, design):
        super().__init__(design.n_channels)
        self.design = design
        self._photon_numbers = design.photon_numbers
        self._detunings = design.detunings

    def gamma(self, a, b, omega):
        omega = np.asarray(omega, dtype=float)
        total = np.zeros_like(omega)
        if a != b or not self.has_pair(a, b):
            return total
        d = self.design
        for nu in range(d.n_resonators):
            g = d.couplings[a][nu]
            if g == 0.0 or self._photon_numbers[nu] == 0.0:
                continue
            total = total + rate_model(
                omega, self._photon_numbers[nu], d.leakages[nu], self._detunings[nu], d.resonator_frequencies[nu], g
            )
        return total

    def to_dict(self):
        return {"kind": self.kind, "design": self.design.to_dict()}


class DispersiveSpectrum(LorentzianSpectrum):
    """gamma_{nu nu'}(omega) = delta_{nu nu'} Lambda_nu(omega) on the S_hat_nu channels."""

    kind = "dispersive"

    def __init__(self, design):
        modes = [resonator_line(design, nu) for nu in range(design.n_resonators)]
        super().__init__(modes, np.eye(design.n_resonators))
        self.design = design


@dataclass(frozen=True)
class Criterion:
    """One regime diagnostic; ``upper`` criteria pass when ratio <= threshold."""

    name: str
    ratio: float
    threshold: float
    ok: bool
    upper: bool = True

    def to_dict(self):
        return {
            "name": self.name,
            "ratio": self.ratio,
            "threshold": self.threshold,
            "ok": self.ok,
            "upper": self.upper,
        }


def _at_most(name, ratio, threshold):
    return Criterion(name, float(ratio), threshold, bool(ratio <= threshold * (1 + REGIME_SLACK)), True)


def _at_least(name, ratio, threshold):
    return Criterion(name, float(ratio), threshold, bool(ratio >= threshold * (1 - REGIME_SLACK)), False)


@dataclass(frozen=True)
class RegimeReport:
    dispersive: Criterion
    born: Criterion
    markov: Criterion
    leakage: Criterion
    purcell: Criterion

    @property
    def criteria(self):
        return (self.dispersive, self.born, self.markov, self.leakage, self.purcell)

    @property
    def all_ok(self):
        return all(c.ok for c in self.criteria)

    def violations(self):
        return [c.name for c in self.criteria if not c.ok]

    def to_dict(self):
        return {c.name: c.to_dict() for c in self.criteria}


def purcell_rate(coupling, leakage, resonator_frequency, omega_j, omega_k):
    """
    Purcell-like decay kappa g^2 / (omega_r - (Omega_j - Omega_k))^2.

    Raises:
        DispersiveRegimeError: On a resonant denominator
    """
    detuning = resonator_frequency - (omega_j - omega_k)
    if abs(detuning) < POLE_TOL:
        raise DispersiveRegimeError("Purcell pole: transition resonant with the resonator")
    return leakage * coupling ** 2 / detuning ** 2


def purcell_threshold(detuning, omega):
    """Photon number 1/4 (1 + Delta / Omega) above which Purcell decay is negligible."""
    return 0.25 * (1.0 + detuning / omega)


def purcell_negligible(photon_number, detuning, omega):
    return photon_number > purcell_threshold(detuning, omega)


def regime_check(
    hamiltonian,
    couplings,
    design,
    spectrum=None,
    dispersive_margin=DISPERSIVE_MARGIN,
    born_ratio=BORN_RATIO,
    markov_ratio=MARKOV_RATIO,
    leakage_ratio=LEAKAGE_RATIO,
):
    """
    Diagnostics of the dispersive, Born, Markov, leakage and Purcell conditions.

    ``spectrum`` defaults to the TransitionRateSpectrum of the design.
    Never raises on a failing criterion; violations are logged.
    """
    decomp = spectral_decomposition(hamiltonian)
    if spectrum is None:
        spectrum = TransitionRateSpectrum(design)
    g = design.coupling_matrix
    energy = decomp.state_energies()
    gaps = energy[None, :] - energy[:, None]

    margin = np.inf
    for nu in range(design.n_resonators):
        total = sum(g[a, nu] * np.asarray(s, dtype=complex) for a, s in enumerate(couplings))
        elements = np.abs(decomp.to_eigenbasis(np.asarray(total, dtype=complex)))
        support = elements > MATRIX_ELEMENT_TOL
        if np.any(support):
            ratios = np.abs(design.resonator_frequencies[nu] - gaps[support]) / elements[support]
            margin = min(margin, float(ratios.min()))

    transitions = list(coupled_transitions(decomp, couplings))
    positive = [omega for _, _, _, omega in transitions if omega > decomp.delta_bohr]
    omega_min = min(positive) if positive else np.inf
    largest = max((abs(float(spectrum.gamma(a, a, omega))) for a, _, _, omega in transitions), default=0.0)

    required = 0.0
    for nu in range(design.n_resonators):
        for omega in positive:
            required = max(required, purcell_threshold(design.detunings[nu], omega) / max(design.photon_numbers[nu], 1e-300))

    report = RegimeReport(
        dispersive=_at_least("dispersive", margin, dispersive_margin),
        born=_at_most("born", largest / omega_min if positive else 0.0, born_ratio),
        markov=_at_most("markov", largest / min(design.leakages), markov_ratio),
        leakage=_at_most("leakage", max(k / w for k, w in zip(design.leakages, design.resonator_frequencies)), leakage_ratio),
        purcell=Criterion("purcell", float(required), 1.0, bool(required < 1.0), True),
    )
    for name in report.violations():
        logger.warning("regime criterion %s violated", name)
    return report


@dataclass(frozen=True, eq=False)
class DispersiveModel:
    r_ops: tuple
    a_ops: tuple
    h_star: np.ndarray
    s_hat: tuple
    bath_weights: np.ndarray
    validity: RegimeReport


def build_dispersive_model(hamiltonian, couplings, design, spectrum=None):
    """Assemble every dispersive-frame operator of a design together with its regime report."""
    h = np.asarray(hamiltonian, dtype=complex)
    decomp = spectral_decomposition(h)
    r_ops = tuple(
        tuple(r_operator(s, decomp, design.resonator_frequencies[nu]) for s in couplings)
        for nu in range(design.n_resonators)
    )
    a_ops = tuple(a_operator(couplings, decomp, design, nu) for nu in range(design.n_resonators))
    structure = coupling_operators(couplings, design, decomp)
    return DispersiveModel(
        r_ops=r_ops,
        a_ops=a_ops,
        h_star=modified_hamiltonian(h, couplings, design),
        s_hat=structure.s_hat,
        bath_weights=structure.bath_weights,
        validity=regime_check(h, couplings, design, spectrum),
    )
