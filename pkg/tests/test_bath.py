"""
Tests for bath spectra, resonator designs and detailed-balance residuals.
"""
import pytest
import sys
import os
import numpy as np

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from bath import (
    ExactKMSSpectrum,
    LorentzianComponent,
    LorentzianSpectrum,
    RatioUndefinedError,
    ResonatorDesign,
    check_positive_semidefinite,
    coherent_amplitude,
    collective_gamma,
    kms_max_violation,
    kms_ratio_integral,
    kms_residual,
    lorentzian,
    spectrum_from_dict,
)
from operators import EnergyWindow

CHAIN_WINDOW = EnergyWindow(4.6, 5.4)


def single_design(amplitude, detuning, leakage, resonator_frequency=3.1, coupling=1.0):
    return ResonatorDesign(
        drive_amplitudes=[amplitude],
        drive_frequencies=[resonator_frequency + detuning],
        leakages=[leakage],
        resonator_frequencies=[resonator_frequency],
        couplings=[[coupling]],
    )


def trapezoid_oracle(values, grid):
    return float(np.sum(0.5 * (values[1:] + values[:-1]) * np.diff(grid)))


class TestResonatorDesign:
    """Test drive parameters and coherent amplitudes."""

    def test_undriven_amplitude_is_zero(self):
        """Test that zero drive gives alpha = 0."""
        assert coherent_amplitude(single_design(0.0, -5.0, 0.62), 0) == 0

    def test_resonant_amplitude(self):
        """Test that E=1, Delta=0, kappa=2 gives alpha = -i."""
        alpha = coherent_amplitude(single_design(1.0, 0.0, 2.0), 0)
        assert alpha == pytest.approx(-1j)
        assert abs(alpha) ** 2 == pytest.approx(1.0)

    def test_detuned_amplitude_matches_complex_division(self):
        """Test that |alpha|^2 agrees with direct complex arithmetic."""
        alpha = coherent_amplitude(single_design(0.5, -5.0, 0.62), 0)
        expected = 0.5 / complex(-5.0, 0.31)
        assert alpha == pytest.approx(expected)
        assert abs(alpha) ** 2 == pytest.approx(0.25 / (25.0 + 0.31 ** 2))

    def test_invalid_design_rejected(self):
        """Test that non-positive leakage or resonator frequency is rejected."""
        with pytest.raises(ValueError):
            single_design(1.0, -5.0, 0.0)
        with pytest.raises(ValueError):
            single_design(1.0, -5.0, 0.62, resonator_frequency=-1.0)
        with pytest.raises(ValueError):
            ResonatorDesign([1.0, 1.0], [1.0], [0.5, 0.5], [3.0, 3.0], [[1.0, 1.0]])

    def test_photon_number_parametrization(self):
        """Test that from_photon_numbers stores the requested photon numbers."""
        design = ResonatorDesign.from_photon_numbers([1.0, 2.5], [-5.0, -20.0], 0.62, 3.1, [[0.3, 0.3]])
        assert np.allclose(design.photon_numbers, [1.0, 2.5])
        assert np.allclose(design.detunings, [-5.0, -20.0])
        assert design.drive_frequencies[0] == pytest.approx(-1.9)

    def test_with_detunings_holds_photon_number(self):
        """Test that moving the detuning can keep N fixed."""
        design = ResonatorDesign.from_photon_numbers(1.0, -5.0, 0.62, 3.1, [[0.3]])
        moved = design.with_detunings([-20.0], hold_photon_number=True)
        assert moved.photon_numbers[0] == pytest.approx(1.0)
        assert design.with_detunings([-20.0]).photon_numbers[0] < 0.1

    def test_dict_round_trip(self):
        """Test that to_dict/from_dict restores an equal design."""
        design = ResonatorDesign.from_photon_numbers([1.0, 0.5], [-5.0, -7.0], [0.62, 0.4], [3.1, 3.3], [[0.3, 0.1], [0.2, 0.3]])
        assert ResonatorDesign.from_dict(design.to_dict()) == design


class TestLorentzian:
    """Test the Lorentzian line shape."""

    def test_peak_value(self):
        """Test that the peak value is weight * width / (width/2)^2."""
        line = LorentzianComponent(1.0, 5.0, 0.62)
        assert lorentzian(line, 5.0) == pytest.approx(0.62 / 0.0961)
        assert lorentzian(line, 5.0) == pytest.approx(6.4516, abs=1e-4)

    def test_zero_weight(self):
        """Test that a zero-weight line vanishes everywhere."""
        line = LorentzianComponent(0.0, 5.0, 0.62)
        assert np.all(lorentzian(line, np.linspace(-10, 10, 11)) == 0.0)

    def test_symmetry_about_center(self):
        """Test that the line is even about its center."""
        line = LorentzianComponent(2.0, -1.5, 0.3)
        x = np.linspace(0, 4, 9)
        assert np.allclose(line(-1.5 + x), line(-1.5 - x))

    def test_invalid_component(self):
        """Test that negative weight or non-positive width is rejected."""
        with pytest.raises(ValueError):
            LorentzianComponent(-1.0, 0.0, 1.0)
        with pytest.raises(ValueError):
            LorentzianComponent(1.0, 0.0, 0.0)


class TestCollectiveGamma:
    """Test gamma_{ab}(omega) assembly."""

    def test_single_resonator_equals_lorentzian(self):
        """Test that one resonator with g=1 reproduces its line."""
        design = single_design(0.5, -5.0, 0.62)
        spectrum = LorentzianSpectrum.from_design(design)
        omegas = np.linspace(-6, 6, 13)
        line = LorentzianComponent(abs(coherent_amplitude(design, 0)) ** 2, 5.0, 0.62)
        assert np.allclose(collective_gamma(spectrum, 0, 0, omegas), lorentzian(line, omegas))

    def test_two_mirrored_resonators_sum(self):
        """Test that two resonators add term by term."""
        lines = [LorentzianComponent(1.0, 5.0, 0.5), LorentzianComponent(0.4, -5.0, 0.5)]
        spectrum = LorentzianSpectrum(lines, [[1.0, 1.0]])
        omegas = np.linspace(-6, 6, 25)
        assert np.allclose(spectrum.gamma(0, 0, omegas), lines[0](omegas) + lines[1](omegas))

    def test_missing_pair_is_zero(self):
        """Test that channel indices outside the spectrum give zero."""
        spectrum = LorentzianSpectrum([LorentzianComponent(1.0, 5.0, 0.5)], [[1.0]])
        assert collective_gamma(spectrum, 0, 3, 5.0) == 0.0

    def test_bilinear_in_couplings(self):
        """Test that scaling every g by 2 scales gamma by 4."""
        lines = [LorentzianComponent(1.0, 5.0, 0.5), LorentzianComponent(0.3, 4.0, 0.2)]
        g = np.array([[0.3, 0.1], [0.2, 0.4]])
        base = LorentzianSpectrum(lines, g)
        scaled = LorentzianSpectrum(lines, 2 * g)
        omegas = np.linspace(3, 6, 7)
        for a, b in base.pairs():
            assert np.allclose(scaled.gamma(a, b, omegas), 4 * base.gamma(a, b, omegas), rtol=1e-12)

    def test_exact_kms_reference(self):
        """Test the reference values gamma(5) = 0.01 and gamma(-5) = 0.01/e."""
        spectrum = ExactKMSSpectrum(0.01, 5.0)
        assert collective_gamma(spectrum, 0, 0, 5.0) == pytest.approx(0.01)
        assert collective_gamma(spectrum, 0, 0, -5.0) == pytest.approx(0.01 * np.exp(-1))

    def test_lorentzian_spectrum_is_psd(self):
        """Test that a two-channel Lorentzian spectrum is positive semidefinite."""
        lines = [LorentzianComponent(1.0, 5.0, 0.5), LorentzianComponent(0.3, -4.0, 0.2)]
        spectrum = LorentzianSpectrum(lines, [[0.3, -0.1], [0.2, 0.4]])
        assert check_positive_semidefinite(spectrum, np.linspace(-6, 6, 41)) >= -1e-10

    def test_spectrum_dict_round_trip(self):
        """Test that spectra rebuild from their dict form."""
        spectrum = LorentzianSpectrum([LorentzianComponent(1.0, 5.0, 0.5)], [[0.3], [0.2]])
        rebuilt = spectrum_from_dict(spectrum.to_dict())
        assert np.allclose(rebuilt.gamma(1, 0, 4.7), spectrum.gamma(1, 0, 4.7))
        kms = spectrum_from_dict(ExactKMSSpectrum(0.02, 3.0, 2).to_dict())
        assert kms.n_channels == 2 and kms.temperature == 3.0


class TestKMSResidual:
    """Test both detailed-balance objectives."""

    def test_exact_kms_has_zero_residual(self):
        """Test that the reference spectrum satisfies detailed balance."""
        report = kms_residual(ExactKMSSpectrum(0.01, 5.0), 5.0, CHAIN_WINDOW)
        assert report.max_abs <= 1e-12
        assert report.ratio_integral <= 1e-12

    def test_undriven_ratio_undefined(self):
        """Test that a vanishing gamma makes the ratio form fail."""
        spectrum = LorentzianSpectrum([LorentzianComponent(0.0, 5.0, 0.62)], [[1.0]])
        with pytest.raises(RatioUndefinedError):
            kms_ratio_integral(spectrum, 5.0, CHAIN_WINDOW)

    def test_non_positive_temperature(self):
        """Test that T <= 0 is an argument error."""
        with pytest.raises(ValueError):
            kms_residual(ExactKMSSpectrum(0.01, 5.0), 0.0, CHAIN_WINDOW)

    def test_red_detuned_lorentzian_matches_quadrature(self):
        """Test both residuals against a direct evaluation on the same grid."""
        line = LorentzianComponent(1.0, 5.0, 0.62)
        spectrum = LorentzianSpectrum([line], [[1.0]])
        grid = np.linspace(4.6, 5.4, 2001)
        ratio = np.abs(line(-grid) / line(grid) - np.exp(-grid / 5.0))
        violation = np.abs(np.exp(-grid / 5.0) * line(grid) - line(-grid))
        report = kms_residual(spectrum, 5.0, CHAIN_WINDOW)
        assert report.ratio_integral == pytest.approx(trapezoid_oracle(ratio, grid), abs=1e-10)
        assert report.max_abs == pytest.approx(violation.max(), abs=1e-10)

    def test_ratio_integral_converges(self):
        """Test that doubling the sample count changes the integral by < 1%."""
        spectrum = LorentzianSpectrum([LorentzianComponent(1.0, 20.0, 0.62)], [[1.0]])
        coarse = kms_ratio_integral(spectrum, 5.0, CHAIN_WINDOW, 1001)
        fine = kms_ratio_integral(spectrum, 5.0, CHAIN_WINDOW, 2001)
        assert abs(fine - coarse) < 0.01 * fine

    def test_bohr_mode_needs_frequencies(self):
        """Test that Bohr sampling requires Bohr frequencies and uses only them."""
        spectrum = LorentzianSpectrum([LorentzianComponent(1.0, 5.0, 0.62)], [[1.0]])
        with pytest.raises(ValueError):
            kms_max_violation(spectrum, 5.0, CHAIN_WINDOW, mode="bohr")
        at_five = kms_max_violation(spectrum, 5.0, CHAIN_WINDOW, mode="bohr", bohr_frequencies=[-5.0, 5.0])
        expected = abs(np.exp(-1.0) * lorentzian(LorentzianComponent(1.0, 5.0, 0.62), 5.0)
                       - lorentzian(LorentzianComponent(1.0, 5.0, 0.62), -5.0))
        assert at_five == pytest.approx(expected)
