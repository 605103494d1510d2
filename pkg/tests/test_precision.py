"""
Tests for the precision bound, transition counts and Davies completion.
"""
import pytest
import sys
import os
import numpy as np

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from bath import ExactKMSSpectrum, LorentzianComponent, LorentzianSpectrum, ResonatorDesign, kms_max_violation
from dispersive import TransitionRateSpectrum
from lindblad import build_generator
from operators import EnergyWindow, PAULI_X, PAULI_Z, ising_chain_hamiltonian, pauli, spectral_decomposition
from precision import (
    KMSCompletedSpectrum,
    bound_rhs,
    davies_completion,
    g_of_d,
    gen_count,
    gibbs_perturbation_bound,
    precision_bound,
    required_precision,
)

T = 5.0


def red_detuned_design(n_channels=1):
    return ResonatorDesign.from_photon_numbers(1.0, -5.0, 0.62, 3.1, [[0.3]] * n_channels)


class TestCounting:
    """Test G(d) and the per-frequency transition count."""

    def test_general_class(self):
        """Test that G(d) = d(d+1)/2 for general Hamiltonians."""
        assert g_of_d(1) == 1
        assert g_of_d(4) == 10
        assert g_of_d(8) == 36

    def test_ising_class(self):
        """Test that G(2^n) = n(n+1)/2 for Ising models."""
        assert g_of_d(2, "ising") == 1
        assert g_of_d(8, "ising") == 6

    def test_ising_needs_power_of_two(self):
        """Test that a non-power-of-two dimension is rejected for Ising."""
        with pytest.raises(ValueError):
            g_of_d(6, "ising")
        with pytest.raises(ValueError):
            g_of_d(4, "lattice")

    def test_two_qubit_ising_count(self):
        """Test that single-site flips on two qubits give 4 downward blocks."""
        decomp = spectral_decomposition(ising_chain_hamiltonian(2, [2.5, 2.3], [0.1]))
        count = gen_count(decomp, [pauli("X", 0, 2), pauli("X", 1, 2)])
        assert count.total_negative == 4
        assert count.ising_closed_form == 3
        assert all(omega != 0.0 for omega in count.per_omega)

    def test_dense_coupling_count(self):
        """Test that a dense coupling on a nondegenerate spectrum reaches d(d-1)/2."""
        rng = np.random.default_rng(2)
        m = rng.normal(size=(3, 3))
        h = np.diag([0.0, 1.3, 3.7])
        s = m + m.T + 1.0
        count = gen_count(spectral_decomposition(h), [s])
        assert count.total_negative == 3
        assert count.ising_closed_form is None


class TestBoundArithmetic:
    """Test the right-hand side and its inversion."""

    def test_bound_rhs_value(self):
        """Test 6 (log2 4 + 1) G(4)^2 / gap * v for gap 2 and v 0.5."""
        assert bound_rhs(2.0, 4, 0.5) == pytest.approx(450.0)

    def test_ising_bound_is_smaller(self):
        """Test that the Ising class tightens the bound for three qubits."""
        assert bound_rhs(1.0, 8, 1e-3, "ising") < bound_rhs(1.0, 8, 1e-3, "general")

    @pytest.mark.parametrize("log_base", [2, np.e])
    def test_required_precision_inverts_bound(self, log_base):
        """Test that the required violation reproduces epsilon through the bound."""
        v = required_precision(1e-2, 0.03, 8, log_base=log_base)
        assert bound_rhs(0.03, 8, v, log_base=log_base) == pytest.approx(1e-2)

    def test_required_precision_arguments(self):
        """Test that negative epsilon and a non-positive gap are rejected."""
        with pytest.raises(ValueError):
            required_precision(-1.0, 0.1, 2)
        with pytest.raises(ValueError):
            required_precision(0.1, 0.0, 2)


class TestDaviesCompletion:
    """Test the exact-KMS completion of an arbitrary spectrum."""

    def test_exact_kms_returned_unchanged(self):
        """Test that a KMS spectrum at the same temperature comes back as is."""
        spectrum = ExactKMSSpectrum(0.01, T)
        assert davies_completion(spectrum, T) is spectrum
        assert isinstance(davies_completion(spectrum, 2 * T), KMSCompletedSpectrum)

    def test_completion_has_zero_violation(self):
        """Test that the completed Lorentzian satisfies detailed balance exactly."""
        spectrum = LorentzianSpectrum([LorentzianComponent(1.0, 5.0, 0.62)], [[1.0]])
        completed = davies_completion(spectrum, T)
        window = EnergyWindow(4.6, 5.4)
        assert kms_max_violation(completed, T, window) == 0.0
        assert completed.gamma(0, 0, 5.0) == pytest.approx(spectrum.gamma(0, 0, 5.0))


class TestPrecisionBound:
    """Test the steady-state distance against the bound."""

    def test_exact_kms_is_tight(self):
        """Test that an exact-KMS bath reaches the Gibbs state with a zero bound."""
        decomp = spectral_decomposition(2.5 * PAULI_Z)
        spectrum = ExactKMSSpectrum(0.01, T)
        gen = build_generator(decomp, [PAULI_X], spectrum, frame="lab")
        report = precision_bound(gen, spectrum, decomp, [PAULI_X], T, EnergyWindow(5.0, 5.0))
        assert report.max_kms_violation == 0.0
        assert report.lhs < 1e-9
        assert report.holds
        assert report.gap == pytest.approx(0.01 * (1 + np.exp(-1.0)) / 2)

    def test_red_detuned_single_qubit(self):
        """Test the single-resonator qubit: distance 0.536 against a bound near 58."""
        decomp = spectral_decomposition(2.5 * PAULI_Z)
        spectrum = TransitionRateSpectrum(red_detuned_design())
        gen = build_generator(decomp, [PAULI_X], spectrum, frame="lab")
        report = precision_bound(gen, spectrum, decomp, [PAULI_X], T, EnergyWindow(5.0, 5.0))
        assert report.lhs == pytest.approx(0.536, abs=1e-3)
        assert report.rhs_bound == pytest.approx(58.0, rel=0.01)
        assert report.holds
        assert report.to_dict()["holds"] is True

    def test_random_chains_satisfy_bound(self):
        """Test that the bound holds on 100 random three-qubit chains."""
        rng = np.random.default_rng(0)
        n = 3
        couplings = [pauli("X", a, n) for a in range(n)]
        spectrum = TransitionRateSpectrum(red_detuned_design(n))
        window = EnergyWindow(4.6, 5.4)
        for trial in range(100):
            decomp = spectral_decomposition(ising_chain_hamiltonian(n, [2.5] * n, rng.uniform(-0.1, 0.1, n - 1)))
            gen = build_generator(decomp, couplings, spectrum, frame="lab")
            classes = ("general", "ising") if trial % 10 == 0 else ("general",)
            for hamiltonian_class in classes:
                report = precision_bound(gen, spectrum, decomp, couplings, T, window, hamiltonian_class, n_samples=201)
                assert report.holds


class TestGibbsPerturbation:
    """Test the Gibbs-state perturbation bound."""

    def test_identical_hamiltonians(self):
        """Test that equal Hamiltonians give zero distance and zero bound."""
        h = ising_chain_hamiltonian(2, [2.5, 2.5], [0.1])
        report = gibbs_perturbation_bound(h, h, T)
        assert report.actual == pytest.approx(0.0, abs=1e-12)
        assert report.bound == 0.0
        assert report.holds

    def test_small_perturbation(self):
        """Test that a small change in J stays within the bound."""
        h1 = ising_chain_hamiltonian(3, [2.5] * 3, [0.1, -0.05])
        h2 = ising_chain_hamiltonian(3, [2.5] * 3, [0.08, -0.02])
        report = gibbs_perturbation_bound(h1, h2, T)
        assert 0.0 < report.actual <= report.bound

    def test_temperature_must_be_positive(self):
        """Test that T <= 0 is rejected."""
        with pytest.raises(ValueError):
            gibbs_perturbation_bound(PAULI_Z, PAULI_Z, 0.0)

    def test_random_pairs_within_bound(self):
        """Test 50 random pairs with ||H1 - H2||_1 <= 0.2 T."""
        rng = np.random.default_rng(9)
        for _ in range(50):
            d = int(rng.integers(2, 7))
            m = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
            h1 = m + m.conj().T
            v = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
            v = v + v.conj().T
            v *= rng.uniform(0.0, 0.2) * T / np.linalg.norm(v, "nuc")
            assert gibbs_perturbation_bound(h1, h1 + v, T).holds
