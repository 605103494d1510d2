"""
Tests for the experiment runners and their output files.
"""
import csv
import json
import pytest
import sys
import os
import numpy as np

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from config import ExperimentConfig
from experiments import (
    BINS_HEADER_V1,
    RATES_HEADER_V1,
    TRANSITIONS_HEADER_V1,
    binned_means,
    build_instance,
    capped_rates,
    format_value,
    run_chain_example,
    run_design,
    run_rates,
    run_steady_state,
    run_verify,
)
from operators import EnergyWindow


def small_config(out_dir, **sections):
    """Two-qubit chain with short optimizer runs."""
    data = {
        "system": {"n": 2, "ensemble_size": 2, "rng_seed": 3},
        "run": {
            "output_directory": str(out_dir),
            "seeds": 2,
            "grid": 21,
            "samples": 101,
            "rate_points": 11,
            "bins": 4,
            "n_steps": 40,
        },
    }
    for name, values in sections.items():
        data.setdefault(name, {}).update(values)
    return ExperimentConfig.model_validate(data)


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


class TestHelpers:
    """Test output formatting and rate post-processing."""

    def test_format_value(self):
        """Test scientific notation with ten significant digits."""
        assert format_value(0.022064) == "2.206400000e-02"
        assert format_value(3) == "3"
        assert format_value(True) == "True"

    def test_capped_rates(self):
        """Test that the peak cooling rate is scaled to kappa/10."""
        heating, cooling, scale = capped_rates([0.001, 0.002], [0.02, 0.04], 0.62)
        assert cooling.max() == pytest.approx(0.062)
        assert heating[1] == pytest.approx(0.002 * scale)

    def test_binned_means(self):
        """Test that rows land in their frequency bins."""
        rows = [(0, 0, 4.7, 1.0, 2.0, 1.0, 2.0), (0, 1, 5.3, 3.0, 4.0, 3.0, 4.0), (1, 0, 5.35, 5.0, 6.0, 5.0, 6.0)]
        bins = binned_means(rows, EnergyWindow(4.6, 5.4), 2)
        assert bins[0][2] == 1
        assert bins[1][2] == 2
        assert bins[1][3] == pytest.approx(4.0)


class TestRunners:
    """Test each subcommand runner end to end on a two-qubit chain."""

    @pytest.mark.asyncio
    async def test_chain_example_outputs(self, tmp_path):
        """Test that the ensemble run writes its files and summary."""
        report = await run_chain_example(small_config(tmp_path))
        assert (tmp_path / "manifest.json").exists()
        assert (tmp_path / "members" / "member_000_rates.csv").exists()
        assert (tmp_path / "members" / "member_001.json").exists()
        assert read_rows(tmp_path / "binned_rates.csv")[0] == list(BINS_HEADER_V1)
        assert read_rows(tmp_path / "transitions.csv")[0] == list(TRANSITIONS_HEADER_V1)
        assert read_rows(tmp_path / "members" / "member_000_rates.csv")[0] == list(RATES_HEADER_V1)
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["ensemble_size"] == 2
        assert len(summary["detunings"]) == 2
        assert len(report.members) == 2

    @pytest.mark.asyncio
    async def test_chain_example_reproducible_across_jobs(self, tmp_path):
        """Test that a fixed seed gives identical results for one and two workers."""
        serial = tmp_path / "serial"
        threaded = tmp_path / "threaded"
        await run_chain_example(small_config(serial))
        await run_chain_example(small_config(threaded, run={"output_directory": str(threaded), "jobs": 2}))
        for name in ("summary.json", "transitions.csv", "binned_rates.csv"):
            assert (serial / name).read_bytes() == (threaded / name).read_bytes()

    @pytest.mark.asyncio
    async def test_verify_exact_kms_passes(self, tmp_path):
        """Test that every check passes for an exact-KMS bath."""
        report = await run_verify(small_config(tmp_path, bath={"mode": "exact_kms"}))
        assert report.summary["failing"] == []
        assert report.passed
        names = {c.name for c in report.members}
        assert names == {"fixed_point", "ergodicity", "trace_preservation", "complete_positivity", "precision_bound"}
        assert (tmp_path / "members" / "member_001_checks.json").exists()

    @pytest.mark.asyncio
    async def test_verify_detects_non_ergodic_coupling(self, tmp_path):
        """Test that coupling one of two qubits fails the ergodicity check."""
        config = small_config(tmp_path, system={"coupled_qubits": [0], "ensemble_size": 1}, bath={"mode": "exact_kms"})
        report = await run_verify(config)
        assert "ergodicity" in report.summary["failing"]
        assert not report.passed

    @pytest.mark.asyncio
    async def test_design_with_pareto(self, tmp_path):
        """Test that the design run writes curves and the resonator sweep."""
        config = small_config(tmp_path, run={"output_directory": str(tmp_path), "resonator_counts": [1, 2]})
        report = await run_design(config)
        assert len(read_rows(tmp_path / "kms_curve.csv")) == 22
        assert len(read_rows(tmp_path / "pareto.csv")) == 3
        design = json.loads((tmp_path / "design.json").read_text())
        assert design["result"]["objective"] == "minimax"
        assert report.members[0].objective_value >= 0.0

    @pytest.mark.asyncio
    async def test_rates(self, tmp_path):
        """Test the rate curve and the kappa/10 cap."""
        report = await run_rates(small_config(tmp_path))
        assert len(read_rows(tmp_path / "rates.csv")) == 12
        assert report.summary["cap_GHz"] == pytest.approx(0.062)
        assert report.summary["max_cooling_GHz"] > report.summary["max_heating_GHz"]
        rows = read_rows(tmp_path / "transitions.csv")[1:]
        assert rows
        assert max(float(r[6]) for r in rows) == pytest.approx(0.062)

    @pytest.mark.asyncio
    async def test_steady_state_reaches_gibbs(self, tmp_path):
        """Test that an exact-KMS bath relaxes to the Gibbs state."""
        report = await run_steady_state(small_config(tmp_path, bath={"mode": "exact_kms"}))
        assert report.summary["fidelity"] == pytest.approx(1.0, abs=1e-9)
        assert report.summary["trace_distance"] < 1e-9
        assert np.allclose(report.summary["populations"], report.summary["gibbs_populations"], atol=1e-9)
        rows = read_rows(tmp_path / "trajectory.csv")
        assert len(rows) == 42
        assert rows[0][:2] == ["t_ns", "trace_distance_to_gibbs"]
        assert float(rows[-1][1]) < float(rows[1][1])

    @pytest.mark.asyncio
    async def test_design_reproducible(self, tmp_path):
        """Test that two design runs with one seed write identical files."""
        config = small_config(tmp_path)
        await run_design(config)
        first = {name: (tmp_path / name).read_bytes() for name in ("design.json", "kms_curve.csv", "rates.csv")}
        await run_design(config)
        for name, content in first.items():
            assert (tmp_path / name).read_bytes() == content


class TestChainWindow:
    """Test the default chain example window."""

    def test_uniform_window(self):
        """Test that the default ensemble uses the [4.6, 5.4] GHz bound for every member."""
        config = ExperimentConfig()
        for index in range(3):
            window = build_instance(config, index).window
            assert window.omega_min == pytest.approx(4.6)
            assert window.omega_max == pytest.approx(5.4)


class TestChainExample:
    """Test the chain example's dispersive reporting and ensemble fidelity."""

    @pytest.mark.asyncio
    async def test_member_reports_dispersive_accuracy(self, tmp_path):
        """Test that each member records the Gibbs shift between H and H*."""
        await run_chain_example(small_config(tmp_path))
        member = json.loads((tmp_path / "members" / "member_000.json").read_text())
        accuracy = member["dispersive_accuracy"]
        assert accuracy["holds"] is True
        assert 0.0 < accuracy["actual"] <= accuracy["bound"]
        assert set(member["regime"]) == {"dispersive", "born", "markov", "leakage", "purcell"}

    @pytest.mark.asyncio
    async def test_resonant_design_does_not_abort(self, tmp_path):
        """Test that a resonator on the qubit frequency is reported per member and the run finishes."""
        config = small_config(tmp_path, bath={"resonator_frequency": 5.0})
        report = await run_chain_example(config)
        assert (tmp_path / "summary.json").exists()
        assert report.summary["ensemble_size"] == 2
        for member in report.members:
            assert "dispersive" in member.report["regime_violations"]
        assert set(report.summary["regime_violations"]) == {"0", "1"}

    @pytest.mark.asyncio
    async def test_default_chain_ensemble_fidelity(self, tmp_path):
        """Test that 20 default three-qubit chains reach a mean Gibbs fidelity of at least 0.95."""
        config = ExperimentConfig.model_validate({
            "system": {"ensemble_size": 20},
            "run": {"output_directory": str(tmp_path)},
        })
        report = await run_chain_example(config)
        assert report.summary["ensemble_size"] == 20
        assert report.summary["mean_fidelity"] >= 0.95
        assert report.passed
        assert report.summary["window"]["omega_min"] == pytest.approx(4.6)
        assert report.summary["window"]["omega_max"] == pytest.approx(5.4)
