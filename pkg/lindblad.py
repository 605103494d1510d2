"""
Lindblad generators built from Bohr-frequency eigenoperators.

Density matrices are column-stacked, vec(A X B) = (B^T kron A) vec(X), so
the term A rho B^dagger lifts to conj(B) kron A. The dissipator of a
channel pair (alpha, alpha') at frequency omega is

    gamma_{alpha alpha'}(omega) * (S_{alpha'} rho S_alpha^dagger
                                   - 1/2 {S_alpha^dagger S_{alpha'}, rho})

and the lab frame adds -i[H, rho].
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from bath import ExactKMSSpectrum
from operators import MATRIX_ELEMENT_TOL, coupled_transitions, eigenoperators, validate_density_matrix

logger = logging.getLogger(__name__)

FRAMES = ("lab", "interaction")
PSD_TOL = 1e-10
KERNEL_TOL = 1e-10
STEADY_RESIDUAL_TOL = 1e-8
TRACE_DRIFT_TOL = 1e-6
NEGATIVITY_TOL = 1e-7


class LindbladError(RuntimeError):
    """Base class for generator construction and solve failures."""


class NotCompletelyPositiveError(LindbladError):
    """The fluctuation matrix [gamma_{ab}(omega)] has a negative eigenvalue."""


class NonErgodicError(LindbladError):
    """The generator kernel is more than one-dimensional."""

    def __init__(self, kernel_dimension):
        self.kernel_dimension = kernel_dimension
        super().__init__(f"non-ergodic: steady state not unique (kernel dimension {kernel_dimension})")


class GapUnresolvedError(LindbladError):
    """Every eigenvalue sits within the gap tolerance of zero."""


class PropagationError(LindbladError):
    """A propagated state left the set of density matrices."""

    def __init__(self, message, suggested_steps):
        self.suggested_steps = suggested_steps
        super().__init__(f"{message}; retry with n_steps >= {suggested_steps}")


def vec(rho):
    return np.asarray(rho, dtype=complex).reshape(-1, order="F")


def unvec(v, dim):
    return np.asarray(v, dtype=complex).reshape((dim, dim), order="F")


def commutator_superoperator(hamiltonian):
    """Superoperator of rho -> -i[H, rho]."""
    h = np.asarray(hamiltonian, dtype=complex)
    eye = np.eye(h.shape[0])
    return -1j * (np.kron(eye, h) - np.kron(h.T, eye))


def dissipator_superoperator(s_left, s_right, rate=1.0):
    """Superoperator of rate * (S_r rho S_l^dagger - 1/2 {S_l^dagger S_r, rho})."""
    s_left = np.asarray(s_left, dtype=complex)
    s_right = np.asarray(s_right, dtype=complex)
    eye = np.eye(s_left.shape[0])
    k = s_left.conj().T @ s_right
    return rate * (np.kron(s_left.conj(), s_right) - 0.5 * (np.kron(eye, k) + np.kron(k.T, eye)))


@dataclass(frozen=True)
class InventoryTerm:
    omega: float
    alpha: int
    alpha_prime: int
    rate: float
    eigenoperator: np.ndarray = field(repr=False)


@dataclass(eq=False)
class LindbladGenerator:
    """A d^2 x d^2 generator acting on column-stacked density matrices."""

    dim: int
    superoperator: np.ndarray
    inventory: list
    includes_hamiltonian: bool
    decomposition: object = field(default=None, repr=False)

    @property
    def frame(self):
        return "lab" if self.includes_hamiltonian else "interaction"

    @property
    def norm(self):
        return float(np.linalg.norm(self.superoperator))

    def apply(self, rho):
        return unvec(self.superoperator @ vec(rho), self.dim)

    def apply_adjoint(self, op):
        return unvec(self.superoperator.conj().T @ vec(op), self.dim)

    def eigenvalues(self):
        return np.linalg.eigvals(self.superoperator)

    def scaled(self, factor):
        """Generator with every dissipative rate multiplied by ``factor``."""
        if self.includes_hamiltonian:
            raise ValueError("only interaction-frame generators scale linearly")
        inventory = [
            InventoryTerm(t.omega, t.alpha, t.alpha_prime, factor * t.rate, t.eigenoperator)
            for t in self.inventory
        ]
        return LindbladGenerator(self.dim, factor * self.superoperator, inventory, False, self.decomposition)


@dataclass(frozen=True, eq=False)
class GibbsState:
    density: np.ndarray
    temperature: float

    @property
    def populations(self):
        return np.diag(self.density).real


def gibbs_state(decomp, temperature):
    """
    Thermal state exp(-H/T) / Tr exp(-H/T) built from the level projectors.

    Raises:
        ValueError: If the temperature is not positive
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    # shift by the ground energy so the largest exponent is 0
    weights = np.exp(-(decomp.energies - decomp.energies.min()) / temperature)
    density = sum(w * p for w, p in zip(weights, decomp.projectors))
    density = density / np.trace(density).real
    return GibbsState(density=0.5 * (density + density.conj().T), temperature=float(temperature))


def maximally_mixed(dim):
    return np.eye(dim, dtype=complex) / dim


def _check_psd(gamma, omega, tol):
    sym = 0.5 * (gamma + gamma.conj().T)
    scale = max(abs(np.trace(sym)), np.max(np.abs(sym)))
    if scale == 0.0:
        return
    smallest = float(np.linalg.eigvalsh(sym).min())
    if smallest < -tol * scale:
        raise NotCompletelyPositiveError(
            f"not completely positive: [gamma(omega={omega:.6g})] has eigenvalue {smallest:.3g}"
        )


def build_generator(decomp, couplings, spectrum, frame="interaction", psd_tol=PSD_TOL):
    """
    Assemble the Davies-form generator of ``couplings`` under ``spectrum``.

    Args:
        decomp: SpectralDecomposition of the system Hamiltonian
        couplings: Coupling operators S_alpha, one per spectrum channel
        spectrum: BathSpectrum providing gamma_{alpha alpha'}(omega)
        frame: "interaction" (dissipator only) or "lab" (adds -i[H, .])
        psd_tol: Relative tolerance of the positivity check

    Returns:
        LindbladGenerator

    Raises:
        ValueError: On an unknown frame
        NotCompletelyPositiveError: If some [gamma(omega)] is not PSD
    """
    if frame not in FRAMES:
        raise ValueError(f"unknown frame {frame!r}, expected one of {FRAMES}")
    couplings = [np.asarray(s, dtype=complex) for s in couplings]
    d = decomp.dim
    superop = np.zeros((d * d, d * d), dtype=complex)
    inventory = []

    components = [eigenoperators(s, decomp) for s in couplings]
    for k, omega in enumerate(decomp.frequencies):
        active = [a for a, comps in enumerate(components) if k in comps]
        if not active:
            continue
        gamma = np.array([[float(spectrum.gamma(a, b, omega)) for b in active] for a in active])
        _check_psd(gamma, omega, psd_tol)
        for i, a in enumerate(active):
            for j, b in enumerate(active):
                rate = gamma[i, j]
                if rate == 0.0:
                    continue
                superop += dissipator_superoperator(components[a][k], components[b][k], rate)
                inventory.append(InventoryTerm(float(omega), a, b, rate, components[a][k]))

    if frame == "lab":
        superop += commutator_superoperator(decomp.hamiltonian)
    logger.debug("built %s-frame generator: d=%d, %d terms", frame, d, len(inventory))
    return LindbladGenerator(d, superop, inventory, frame == "lab", decomp)


def kernel_dimension(gen, tol=KERNEL_TOL):
    """Number of singular values of the superoperator below tol * ||L||_F."""
    norm = gen.norm
    if norm == 0.0:
        return gen.dim * gen.dim
    singular = np.linalg.svd(gen.superoperator, compute_uv=False)
    return int(np.sum(singular <= tol * norm))


@dataclass(frozen=True, eq=False)
class SteadyStateSolution:
    density: np.ndarray
    residual: float
    method: str
    kernel_dimension: int


def _normalize(rho):
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def solve_steady_state(gen, kernel_tol=KERNEL_TOL, residual_tol=STEADY_RESIDUAL_TOL):
    """
    Unique fixed point of the generator.

    Solves L vec(rho) = 0 with the trace row appended by least squares;
    if that residual exceeds ``residual_tol`` the SVD null vector is used
    instead.

    Raises:
        NonErgodicError: If the kernel dimension exceeds one
    """
    d = gen.dim
    if d == 1:
        return SteadyStateSolution(np.ones((1, 1), dtype=complex), 0.0, "trivial", 1)
    dim_kernel = kernel_dimension(gen, kernel_tol)
    if dim_kernel > 1:
        raise NonErgodicError(dim_kernel)

    trace_row = vec(np.eye(d)).conj()[None, :]
    system = np.vstack([gen.superoperator, trace_row])
    rhs = np.zeros(d * d + 1, dtype=complex)
    rhs[-1] = 1.0
    solution, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    rho = _normalize(unvec(solution, d))
    residual = float(np.linalg.norm(gen.apply(rho)))
    method = "least-squares"

    if residual > residual_tol:
        logger.info("least-squares steady state residual %.3g, falling back to null vector", residual)
        _, _, vh = np.linalg.svd(gen.superoperator)
        rho = _normalize(unvec(vh[-1].conj(), d))
        residual = float(np.linalg.norm(gen.apply(rho)))
        method = "null-space"

    logger.debug("steady state via %s, residual %.3g", method, residual)
    return SteadyStateSolution(rho, residual, method, dim_kernel)


def steady_state(gen):
    return solve_steady_state(gen).density


def spectral_gap(gen, gap_tol=None):
    """
    Slowest nonzero relaxation rate, -max{Re mu : Re mu < -gap_tol}.

    ``gap_tol`` defaults to 1e-10 * ||L||_F.

    Raises:
        GapUnresolvedError: If no eigenvalue lies below -gap_tol
    """
    if gap_tol is None:
        gap_tol = KERNEL_TOL * gen.norm
    real = gen.eigenvalues().real
    decaying = real[real < -gap_tol]
    if decaying.size == 0:
        raise GapUnresolvedError("gap unresolved: every eigenvalue is within tolerance of zero")
    return float(-decaying.max())


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: tuple

    def populations(self, decomp):
        """Level-resolved populations Tr(P_k rho(t)), one row per time."""
        return np.array([[np.trace(p @ rho).real for p in decomp.projectors] for rho in self.states])

    def distances_to(self, target):
        return np.array([trace_distance(rho, target) for rho in self.states])


def propagate(gen, rho0, t_final, n_steps):
    """
    Evolve rho0 with one superoperator exponential applied ``n_steps`` times.

    Returns:
        Trajectory with n_steps + 1 states, the first being rho0

    Raises:
        ValueError: On an invalid initial state or step count
        PropagationError: If the trace drifts by more than 1e-6 or a
            state picks up an eigenvalue below -1e-7
    """
    rho0 = validate_density_matrix(rho0)
    if t_final < 0:
        raise ValueError("t_final must be non-negative")
    if n_steps < 1:
        raise ValueError("need at least one step")

    times = np.linspace(0.0, t_final, n_steps + 1)
    if t_final == 0:
        return Trajectory(times[:1], (rho0,))
    step = expm(gen.superoperator * (t_final / n_steps))
    v = vec(rho0)
    states = [rho0]
    for _ in range(n_steps):
        v = step @ v
        rho = unvec(v, gen.dim)
        drift = abs(np.trace(rho) - 1.0)
        if drift > TRACE_DRIFT_TOL:
            raise PropagationError(f"trace drift {drift:.3g}", 4 * n_steps)
        smallest = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min()
        if smallest < -NEGATIVITY_TOL:
            raise PropagationError(f"negative eigenvalue {smallest:.3g}", 4 * n_steps)
        states.append(rho)
    return Trajectory(times, tuple(states))


def verify_fixed_point(gen, rho):
    """||L(rho)||_F."""
    return float(np.linalg.norm(gen.apply(rho)))


def trace_norm(op):
    return float(np.linalg.norm(np.asarray(op, dtype=complex), "nuc"))


def trace_distance(rho, sigma):
    return 0.5 * trace_norm(np.asarray(rho) - np.asarray(sigma))


def _psd_sqrt(rho):
    values, vectors = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    return (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.conj().T


def fidelity(rho, sigma):
    """Uhlmann fidelity (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2."""
    root = _psd_sqrt(np.asarray(rho, dtype=complex))
    inner = root @ np.asarray(sigma, dtype=complex) @ root
    values = np.clip(np.linalg.eigvalsh(0.5 * (inner + inner.conj().T)), 0.0, None)
    return float(np.sum(np.sqrt(values)) ** 2)


def choi_matrix(gen, dt=None):
    """
    Choi matrix sum_ij |i><j| kron exp(L dt)(|i><j|).

    ``dt`` defaults to 1e-3 / ||L||_F.
    """
    d = gen.dim
    if dt is None:
        dt = 1e-3 / gen.norm if gen.norm > 0 else 1.0
    channel = expm(gen.superoperator * dt)
    choi = np.zeros((d * d, d * d), dtype=complex)
    for i in range(d):
        for j in range(d):
            unit = np.zeros((d, d), dtype=complex)
            unit[i, j] = 1.0
            choi[i * d:(i + 1) * d, j * d:(j + 1) * d] = unvec(channel @ vec(unit), d)
    return choi


def complete_positivity_margin(gen, dt=None):
    """Smallest eigenvalue of the Choi matrix; >= -1e-8 for a CP channel."""
    choi = choi_matrix(gen, dt)
    return float(np.linalg.eigvalsh(0.5 * (choi + choi.conj().T)).min())


def rotating_wave_ratio(decomp, couplings, spectrum):
    """
    max|gamma| over coupled transitions divided by the smallest coupled gap.

    Reported as a diagnostic; the secular treatment wants it well below 1.
    """
    transitions = list(coupled_transitions(decomp, couplings))
    positive = [omega for _, _, _, omega in transitions if omega > decomp.delta_bohr]
    if not positive:
        return 0.0
    largest = max(
        abs(float(spectrum.gamma(a, a, omega))) for a, _, _, omega in transitions
    )
    return largest / min(positive)


@dataclass(frozen=True)
class ErgodicityReport:
    ergodic: bool
    components: tuple
    kernel_dimension: int

    @property
    def consistent(self):
        return self.ergodic == (self.kernel_dimension == 1)

    def to_dict(self):
        return {
            "ergodic": self.ergodic,
            "components": [list(c) for c in self.components],
            "kernel_dimension": self.kernel_dimension,
        }


def ergodicity_check(decomp, couplings):
    """
    Connectivity of the eigenstates under the coupling operators.

    Two eigenstates are linked when |<i|S_alpha|j>| > 1e-12 for some alpha.
    The result carries the kernel dimension of a lab-frame generator built
    with a strictly positive exact-KMS reference spectrum as a cross-check.
    """
    d = decomp.dim
    adjacency = np.zeros((d, d), dtype=bool)
    for s in couplings:
        adjacency |= np.abs(decomp.to_eigenbasis(np.asarray(s, dtype=complex))) > MATRIX_ELEMENT_TOL
    n_components, labels = connected_components(csr_matrix(adjacency), directed=False)
    components = tuple(tuple(int(i) for i in np.flatnonzero(labels == c)) for c in range(n_components))

    spread = float(decomp.energies.max() - decomp.energies.min())
    reference = ExactKMSSpectrum(1.0, max(spread, 1.0), n_channels=max(len(couplings), 1))
    dim_kernel = kernel_dimension(build_generator(decomp, couplings, reference, frame="lab"))

    report = ErgodicityReport(n_components == 1, components, dim_kernel)
    if not report.consistent:
        logger.warning(
            "graph connectivity (%s) disagrees with reference kernel dimension %d",
            report.ergodic, dim_kernel,
        )
    return report
