"""
Experiment configuration.

JSON files validated by pydantic models; unknown keys are rejected. The
defaults reproduce the three-qubit Ising chain example: 2.5 GHz qubits,
J drawn from [-0.1, 0.1] GHz, one 3.1 GHz resonator with 0.62 GHz leakage
holding one photon, target temperature 5 GHz.
"""
from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from bath import ExactKMSSpectrum, ResonatorDesign
from operators import EnergyWindow, ising_chain_hamiltonian, pauli, transverse_ising_hamiltonian

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Raised for unreadable or schema-violating configuration."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SystemConfig(_Strict):
    model: Literal["ising_chain", "transverse_ising"] = "ising_chain"
    n: int = Field(3, ge=1, le=6)
    omegas: list[float] | None = None
    J: list[float] | None = None
    J_range: tuple[float, float] = (-0.1, 0.1)
    transverse_field: float = 1.0
    coupling_scale: float = 1.0
    coupled_qubits: list[int] | None = None
    ensemble_size: int = Field(1, ge=1)
    rng_seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_shapes(self):
        if self.omegas is not None:
            if len(self.omegas) != self.n:
                raise ValueError(f"omegas needs {self.n} entries")
            if min(self.omegas) <= 0:
                raise ValueError("qubit frequencies must be positive")
        if self.J is not None and len(self.J) != self.n - 1:
            raise ValueError(f"J needs {self.n - 1} entries")
        if self.J_range[0] > self.J_range[1]:
            raise ValueError("J_range must be (low, high)")
        if self.coupled_qubits is not None:
            if not self.coupled_qubits or any(not 0 <= q < self.n for q in self.coupled_qubits):
                raise ValueError("coupled_qubits must name qubits of the register")
        return self

    def qubit_frequencies(self):
        return list(self.omegas) if self.omegas is not None else [2.5] * self.n

    def draw_couplings(self, rng):
        """Fixed J when given, else uniform draws from J_range."""
        if self.J is not None:
            return np.asarray(self.J, dtype=float)
        low, high = self.J_range
        return rng.uniform(low, high, size=self.n - 1)

    def hamiltonian(self, couplings):
        if self.model == "ising_chain":
            return ising_chain_hamiltonian(self.n, self.qubit_frequencies(), couplings)
        return transverse_ising_hamiltonian(self.n, self.transverse_field, self.coupling_scale, couplings)

    def coupling_operators(self):
        """X on every coupled qubit."""
        qubits = self.coupled_qubits if self.coupled_qubits is not None else range(self.n)
        return [pauli("X", q, self.n) for q in qubits]


class BathConfig(_Strict):
    mode: Literal["resonators", "exact_kms"] = "resonators"
    coupling: float = Field(0.3, ge=0)
    resonator_frequency: float = Field(3.1, gt=0)
    leakage: float = Field(0.62, gt=0)
    photon_number: float = Field(1.0, ge=0)
    detuning: float = -5.0
    n_resonators: int = Field(1, ge=1)
    spectrum_model: Literal["transition_rate", "lorentzian"] = "transition_rate"
    base_rate: float = Field(0.01, ge=0)
    temperature: float | None = Field(None, gt=0)

    def design(self, n_channels):
        """Resonator design with every channel coupled to every resonator at strength g."""
        n = self.n_resonators
        return ResonatorDesign.from_photon_numbers(
            photon_numbers=[self.photon_number] * n,
            detunings=[self.detuning] * n,
            leakages=[self.leakage] * n,
            resonator_frequencies=[self.resonator_frequency] * n,
            couplings=np.full((n_channels, n), self.coupling),
        )

    def reference_spectrum(self, target_temperature, n_channels):
        return ExactKMSSpectrum(self.base_rate, self.temperature or target_temperature, n_channels)


class TargetConfig(_Strict):
    temperature_GHz: float = Field(5.0, gt=0)
    window: tuple[float, float] | None = None

    @model_validator(mode="after")
    def _check_window(self):
        if self.window is not None:
            EnergyWindow(*self.window)
        return self

    def energy_window(self):
        return EnergyWindow(*self.window) if self.window is not None else None


class RunConfig(_Strict):
    objective: Literal["minimax", "integral"] = "minimax"
    grid: int = Field(401, ge=2)
    samples: int = Field(2001, ge=2)
    seeds: int = Field(8, ge=1)
    jobs: int = Field(1, ge=1)
    output_directory: str = "runs/chain"
    free_parameters: list[Literal["detuning", "drive_amplitude", "leakage"]] = ["detuning"]
    detuning_bounds: tuple[float, float] = (-80.0, 80.0)
    amplitude_bounds: tuple[float, float] = (0.0, 50.0)
    leakage_bounds: tuple[float, float] = (0.05, 2.0)
    hold_photon_number: bool = True
    optimize_detuning: bool = True
    frame: Literal["lab", "interaction"] = "lab"
    hamiltonian_class: Literal["general", "ising"] = "general"
    log_base: float = Field(2.0, gt=1)
    rate_points: int = Field(201, ge=2)
    bins: int = Field(16, ge=1)
    cap_rates: bool = True
    resonator_counts: list[int] = [1]
    fidelity_threshold: float = Field(0.95, ge=0, le=1)
    t_final: float | None = Field(None, gt=0)
    n_steps: int = Field(200, ge=1)

    @model_validator(mode="after")
    def _check_bounds(self):
        for name in ("detuning_bounds", "amplitude_bounds", "leakage_bounds"):
            low, high = getattr(self, name)
            if not low < high:
                raise ValueError(f"{name} must satisfy low < high")
        if not self.free_parameters:
            raise ValueError("free_parameters must not be empty")
        if any(n < 1 for n in self.resonator_counts):
            raise ValueError("resonator counts must be positive")
        return self

    def parameter_bounds(self):
        return {
            "detuning": tuple(self.detuning_bounds),
            "drive_amplitude": tuple(self.amplitude_bounds),
            "leakage": tuple(self.leakage_bounds),
        }


class ExperimentConfig(_Strict):
    system: SystemConfig = SystemConfig()
    bath: BathConfig = BathConfig()
    target: TargetConfig = TargetConfig()
    run: RunConfig = RunConfig()


def parse_config(text):
    """
    Validate a JSON document.

    Raises:
        ConfigError: On malformed JSON or a schema violation
    """
    try:
        return ExperimentConfig.model_validate_json(text)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration:\n{exc}") from exc


def load_config(path=None):
    """Load a config file, or the defaults when ``path`` is None."""
    if path is None:
        return ExperimentConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    logger.debug("loaded config from %s", path)
    return parse_config(text)


def apply_overrides(config, seed=None, jobs=None, out=None, objective=None, grid=None):
    """Copy of ``config`` with the command-line overrides applied and revalidated."""
    data = config.model_dump(mode="json")
    if seed is not None:
        data["system"]["rng_seed"] = seed
    if jobs is not None:
        data["run"]["jobs"] = jobs
    if out is not None:
        data["run"]["output_directory"] = str(out)
    if objective is not None:
        data["run"]["objective"] = objective
    if grid is not None:
        data["run"]["grid"] = grid
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid override:\n{exc}") from exc


def canonical_json(config):
    return json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


def config_hash(config):
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def member_rng(config, index):
    """Generator of ensemble member ``index``: seed = rng_seed + index."""
    return np.random.default_rng(config.system.rng_seed + index)
