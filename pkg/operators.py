"""
Hilbert-space operator algebra for few-qubit systems.

Pauli/tensor constructions, the model Hamiltonians used throughout the
project, spectral decomposition with Bohr-frequency bookkeeping,
eigenoperators S(omega) and the energy window a bath has to cover.

Conventions: hbar = k_B = 1, every energy/frequency is in GHz, and qubit 0
is the most-significant tensor factor.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

IDENTITY = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)

PAULIS = {"I": IDENTITY, "X": PAULI_X, "Y": PAULI_Y, "Z": PAULI_Z}

HERMITIAN_TOL = 1e-12
MATRIX_ELEMENT_TOL = 1e-12
EIGEN_RESIDUAL_TOL = 1e-9


class BathCannotActError(ValueError):
    """Raised when no coupling operator connects any pair of levels."""


def embed(op, site, n):
    """
    Lift a single-qubit operator onto an n-qubit register.

    Args:
        op: 2x2 operator
        site: Qubit index (0 is the most-significant factor)
        n: Number of qubits

    Returns:
        2^n x 2^n operator acting as ``op`` on ``site`` and identity elsewhere
    """
    if not 0 <= site < n:
        raise ValueError(f"site {site} outside register of {n} qubits")
    out = np.ones((1, 1), dtype=complex)
    for k in range(n):
        out = np.kron(out, op if k == site else IDENTITY)
    return out


def pauli(label, site, n):
    """Pauli ``label`` ('X', 'Y', 'Z' or 'I') on qubit ``site`` of ``n``."""
    try:
        return embed(PAULIS[label], site, n)
    except KeyError:
        raise ValueError(f"unknown Pauli label {label!r}") from None


def is_hermitian(op, tol=HERMITIAN_TOL):
    op = np.asarray(op)
    return op.ndim == 2 and op.shape[0] == op.shape[1] and np.max(np.abs(op - op.conj().T), initial=0.0) <= tol


def validate_density_matrix(rho, trace_tol=1e-10, eig_tol=1e-10):
    """
    Check the density-matrix invariants.

    Raises:
        ValueError: If rho is not Hermitian, not unit trace or not positive
    """
    rho = np.asarray(rho, dtype=complex)
    if not is_hermitian(rho, tol=1e-10):
        raise ValueError("density matrix is not Hermitian")
    trace = np.trace(rho).real
    if abs(trace - 1.0) > trace_tol:
        raise ValueError(f"density matrix trace {trace:.12g} != 1")
    smallest = np.linalg.eigvalsh(rho).min()
    if smallest < -eig_tol:
        raise ValueError(f"density matrix has negative eigenvalue {smallest:.3g}")
    return rho


def ising_chain_hamiltonian(n, omegas, couplings):
    """
    H = sum_a omega_a Z_a + sum_a J_a Z_a Z_{a+1} on an open chain.

    Args:
        n: Number of qubits (>= 1)
        omegas: n single-qubit frequencies in GHz
        couplings: n-1 nearest-neighbour strengths J in GHz

    Returns:
        Diagonal 2^n x 2^n Hamiltonian
    """
    omegas = list(omegas)
    couplings = list(couplings)
    if n < 1:
        raise ValueError("need at least one qubit")
    if len(omegas) != n:
        raise ValueError(f"expected {n} frequencies, got {len(omegas)}")
    if len(couplings) != n - 1:
        raise ValueError(f"expected {n - 1} couplings, got {len(couplings)}")

    dim = 2 ** n
    h = np.zeros((dim, dim), dtype=complex)
    for a, w in enumerate(omegas):
        h += w * pauli("Z", a, n)
    for a, j in enumerate(couplings):
        h += j * pauli("Z", a, n) @ pauli("Z", a + 1, n)
    return h


def transverse_ising_hamiltonian(n, a, b, couplings):
    """
    H = a sum_i X_i + b sum_ij J_ij Z_i Z_j at fixed coefficients.

    ``couplings`` is either the n-1 nearest-neighbour strengths of a chain
    or a full n x n matrix whose upper triangle is used.
    """
    if n < 1:
        raise ValueError("need at least one qubit")
    dim = 2 ** n
    h = np.zeros((dim, dim), dtype=complex)
    for i in range(n):
        h += a * pauli("X", i, n)

    couplings = np.asarray(couplings, dtype=float)
    if couplings.ndim == 1:
        if couplings.size != n - 1:
            raise ValueError(f"expected {n - 1} chain couplings, got {couplings.size}")
        pairs = [(i, i + 1, couplings[i]) for i in range(n - 1)]
    elif couplings.shape == (n, n):
        pairs = [(i, j, couplings[i, j]) for i in range(n) for j in range(i + 1, n)]
    else:
        raise ValueError(f"coupling array of shape {couplings.shape} does not fit {n} qubits")

    for i, j, strength in pairs:
        h += b * strength * pauli("Z", i, n) @ pauli("Z", j, n)
    return h


def _cluster(sorted_values, tol):
    """Group consecutive sorted values whose gap is <= tol; returns labels."""
    labels = np.zeros(len(sorted_values), dtype=int)
    for k in range(1, len(sorted_values)):
        gap = sorted_values[k] - sorted_values[k - 1]
        labels[k] = labels[k - 1] + (1 if gap > tol else 0)
    return labels


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """
    Projective decomposition H = sum_k energies[k] * projectors[k].

    Eigenvalues closer than ``delta_bohr`` share a level. ``frequencies``
    holds every distinct Bohr frequency (zero included) and
    ``transition_labels[i, j]`` is the index into ``frequencies`` of
    energies[j] - energies[i].
    """

    hamiltonian: np.ndarray
    energies: np.ndarray
    projectors: tuple
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    level_of: np.ndarray
    frequencies: np.ndarray
    transition_labels: np.ndarray
    delta_bohr: float

    @property
    def dim(self):
        return self.hamiltonian.shape[0]

    @property
    def bohr_frequencies(self):
        """Distinct nonzero Bohr frequencies, sorted."""
        return self.frequencies[np.abs(self.frequencies) > self.delta_bohr]

    def frequency_index(self, omega):
        """Index of ``omega`` in ``frequencies`` or None if it is not a Bohr frequency."""
        distance = np.abs(self.frequencies - omega)
        k = int(np.argmin(distance))
        return k if distance[k] <= self.delta_bohr else None

    def to_eigenbasis(self, op):
        return self.eigenvectors.conj().T @ op @ self.eigenvectors

    def from_eigenbasis(self, op):
        return self.eigenvectors @ op @ self.eigenvectors.conj().T

    def state_energies(self):
        """Level energy of each eigenvector column."""
        return self.energies[self.level_of]


def default_delta_bohr(energies):
    scale = float(np.max(np.abs(energies), initial=0.0))
    return 1e-9 * scale if scale > 0 else 1e-12


def spectral_decomposition(hamiltonian, delta_bohr=None):
    """
    Diagonalize a Hermitian Hamiltonian and group its spectrum.

    Args:
        hamiltonian: Hermitian operator
        delta_bohr: Degeneracy tolerance in GHz; defaults to 1e-9 * max|eps|

    Returns:
        SpectralDecomposition

    Raises:
        ValueError: If the input is not Hermitian or the eigensolve residual
            check fails
    """
    h = np.asarray(hamiltonian, dtype=complex)
    if not is_hermitian(h):
        raise ValueError("Hamiltonian is not Hermitian")

    if np.max(np.abs(h - np.diag(np.diag(h))), initial=0.0) == 0.0:
        # diagonal input keeps the computational basis inside degenerate levels
        diagonal = np.diag(h).real
        order = np.argsort(diagonal, kind="stable")
        eigenvalues = diagonal[order]
        eigenvectors = np.eye(h.shape[0], dtype=complex)[:, order]
    else:
        eigenvalues, eigenvectors = np.linalg.eigh(h)
    norm = max(np.linalg.norm(h, 2), 1.0)
    residual = np.linalg.norm(h @ eigenvectors - eigenvectors * eigenvalues, axis=0)
    if np.any(residual > EIGEN_RESIDUAL_TOL * norm):
        raise ValueError(f"eigensolve residual {residual.max():.3g} above tolerance")

    if delta_bohr is None:
        delta_bohr = default_delta_bohr(eigenvalues)

    level_of = _cluster(eigenvalues, delta_bohr)
    n_levels = level_of[-1] + 1
    energies = np.array([eigenvalues[level_of == k].mean() for k in range(n_levels)])
    projectors = tuple(
        eigenvectors[:, level_of == k] @ eigenvectors[:, level_of == k].conj().T
        for k in range(n_levels)
    )

    # transition (i -> j) carries omega = eps_j - eps_i
    diffs = energies[None, :] - energies[:, None]
    flat = diffs.ravel()
    order = np.argsort(flat, kind="stable")
    labels_sorted = _cluster(flat[order], delta_bohr)
    labels = np.empty_like(labels_sorted)
    labels[order] = labels_sorted
    frequencies = np.array([flat[labels == k].mean() for k in range(labels_sorted[-1] + 1)])
    zero = int(np.argmin(np.abs(frequencies)))
    frequencies[zero] = 0.0

    return SpectralDecomposition(
        hamiltonian=h,
        energies=energies,
        projectors=projectors,
        eigenvalues=eigenvalues,
        eigenvectors=eigenvectors,
        level_of=level_of,
        frequencies=frequencies,
        transition_labels=labels.reshape(diffs.shape),
        delta_bohr=float(delta_bohr),
    )


def eigenoperator(coupling, decomp, omega):
    """
    Bohr-frequency component S(omega) = sum_{eps'-eps=omega} P(eps) S P(eps').

    S(omega) lowers the system energy by omega. A frequency that is not a
    Bohr frequency of ``decomp`` yields the zero operator. For Hermitian S
    the negative-frequency component is returned as the exact adjoint of
    the positive one.
    """
    coupling = np.asarray(coupling, dtype=complex)
    k = decomp.frequency_index(omega)
    if k is None:
        return np.zeros_like(coupling)
    if decomp.frequencies[k] < 0 and is_hermitian(coupling):
        return eigenoperator(coupling, decomp, -decomp.frequencies[k]).conj().T

    levels = decomp.level_of
    mask = decomp.transition_labels[np.ix_(levels, levels)] == k
    return decomp.from_eigenbasis(decomp.to_eigenbasis(coupling) * mask)


def eigenoperators(coupling, decomp):
    """All nonzero Bohr components of ``coupling`` keyed by frequency index."""
    out = {}
    for k, omega in enumerate(decomp.frequencies):
        s_omega = eigenoperator(coupling, decomp, omega)
        if np.max(np.abs(s_omega), initial=0.0) > MATRIX_ELEMENT_TOL:
            out[k] = s_omega
    return out


def coupled_transitions(decomp, couplings):
    """
    Enumerate eigenstate pairs connected by a coupling operator.

    Yields:
        (alpha, i, j, omega) with |<i|S_alpha|j>| > 1e-12 and
        omega = eps_j - eps_i, for every ordered pair i != j
    """
    state_energy = decomp.state_energies()
    for alpha, s in enumerate(couplings):
        elements = np.abs(decomp.to_eigenbasis(np.asarray(s, dtype=complex)))
        rows, cols = np.nonzero(elements > MATRIX_ELEMENT_TOL)
        for i, j in zip(rows, cols):
            if i != j:
                yield alpha, int(i), int(j), float(state_energy[j] - state_energy[i])


@dataclass(frozen=True)
class EnergyWindow:
    """Positive frequency interval [omega_min, omega_max] the bath must cover (GHz)."""

    omega_min: float
    omega_max: float

    def __post_init__(self):
        if not 0 < self.omega_min <= self.omega_max:
            raise ValueError(f"invalid energy window [{self.omega_min}, {self.omega_max}]")

    @property
    def span(self):
        return self.omega_max - self.omega_min

    def grid(self, n_samples):
        """Uniform grid over the positive window."""
        if n_samples < 1:
            raise ValueError("need at least one sample")
        if self.span == 0 or n_samples == 1:
            return np.full(max(n_samples, 1), self.omega_min)
        return np.linspace(self.omega_min, self.omega_max, n_samples)

    def to_dict(self):
        return {"omega_min": self.omega_min, "omega_max": self.omega_max}


def energy_window(decomp, couplings):
    """
    Smallest and largest positive Bohr frequencies with a coupled transition.

    Raises:
        BathCannotActError: If no coupling connects any level pair
    """
    positive = [omega for _, _, _, omega in coupled_transitions(decomp, couplings) if omega > decomp.delta_bohr]
    if not positive:
        raise BathCannotActError("bath cannot act: no coupled transitions")
    return EnergyWindow(min(positive), max(positive))


def chain_window_bound(omegas, couplings):
    """
    Closed-form window 2[min(w_a - |J_a| - |J_{a-1}|), max(w_a + |J_a| + |J_{a-1}|)].

    Missing neighbours at the chain ends contribute zero. For random
    couplings it bounds every single-flip gap.
    """
    omegas = list(omegas)
    couplings = [abs(j) for j in couplings]
    if len(couplings) != len(omegas) - 1:
        raise ValueError("need len(omegas) - 1 couplings")
    lows, highs = [], []
    for a, w in enumerate(omegas):
        neighbours = (couplings[a] if a < len(couplings) else 0.0) + (couplings[a - 1] if a > 0 else 0.0)
        lows.append(w - neighbours)
        highs.append(w + neighbours)
    return EnergyWindow(2 * min(lows), 2 * max(highs))
