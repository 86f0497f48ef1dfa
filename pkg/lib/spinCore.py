"""
Spin-j core - Dicke-basis operators, coherent states and spectral time evolution

All matrices are indexed in the J_z eigenbasis in ascending order, so array index
i corresponds to the magnetic quantum number m = -j + i. Units are hbar = 1.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Union

import numpy as np
from scipy.special import gammaln, xlogy

logger = logging.getLogger("Macroreal")

HERMITIAN_TOLERANCE = 1e-12
NORM_TOLERANCE = 1e-12
POSITIVITY_TOLERANCE = 1e-10


class ContractViolation(ValueError):
    """A numerical post-condition did not hold (completeness, Hermiticity, ...)."""


@dataclass(frozen=True)
class SpinSpace:
    two_j: int

    def __post_init__(self):
        if int(self.two_j) != self.two_j or self.two_j < 1:
            raise ValueError(f"Spin length must satisfy 2j >= 1 and integer, got 2j={self.two_j}")
        object.__setattr__(self, "two_j", int(self.two_j))

    @classmethod
    def from_j(cls, j):
        two_j = 2 * j
        if abs(two_j - round(two_j)) > 1e-12:
            raise ValueError(f"Spin length j={j} is not a half-integer")
        return cls(int(round(two_j)))

    @property
    def j(self):
        return self.two_j / 2

    @property
    def dim(self):
        return self.two_j + 1

    @property
    def m_values(self):
        return np.arange(self.dim) - self.j

    def index(self, m):
        """Array index of the Dicke level m (half-integers allowed)."""
        position = m + self.j
        if abs(position - round(position)) > 1e-12 or not 0 <= round(position) <= self.two_j:
            raise ValueError(f"m={m} is not a Dicke level of spin j={self.j}")
        return int(round(position))


@dataclass(frozen=True)
class Direction:
    theta: float
    phi: float = 0.0

    def __post_init__(self):
        theta = float(self.theta)
        if not -1e-14 <= theta <= math.pi + 1e-14:
            raise ValueError(f"Polar angle {theta} outside [0, pi]")
        phi = float(self.phi)
        if not math.isfinite(phi):
            raise ValueError(f"Azimuth {phi} is not finite")
        object.__setattr__(self, "theta", min(max(theta, 0.0), math.pi))
        object.__setattr__(self, "phi", float(np.mod(phi, 2 * math.pi)))

    def unit_vector(self):
        return np.array([
            math.sin(self.theta) * math.cos(self.phi),
            math.sin(self.theta) * math.sin(self.phi),
            math.cos(self.theta),
        ])

    @classmethod
    def from_vector(cls, vector):
        x, y, z = np.asarray(vector, dtype=float)
        length = math.sqrt(x * x + y * y + z * z)
        if length == 0.0:
            raise ValueError("Cannot take the direction of a zero vector")
        return cls(math.acos(max(-1.0, min(1.0, z / length))), math.atan2(y, x))


def _as_readonly(array, dtype=complex):
    array = np.array(array, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class StateVector:
    space: SpinSpace
    amplitudes: np.ndarray

    def __post_init__(self):
        amplitudes = _as_readonly(self.amplitudes)
        if amplitudes.shape != (self.space.dim,):
            raise ValueError(f"Expected {self.space.dim} amplitudes, got shape {amplitudes.shape}")
        norm = np.vdot(amplitudes, amplitudes).real
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise ValueError(f"State vector is not normalised (squared norm {norm!r})")
        object.__setattr__(self, "amplitudes", amplitudes)

    def projector(self):
        return np.outer(self.amplitudes, self.amplitudes.conj())


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    space: SpinSpace
    entries: np.ndarray

    def __post_init__(self):
        entries = _as_readonly(self.entries)
        dim = self.space.dim
        if entries.shape != (dim, dim):
            raise ValueError(f"Expected a {dim}x{dim} density matrix, got shape {entries.shape}")
        if np.max(np.abs(entries - entries.conj().T)) > HERMITIAN_TOLERANCE:
            raise ValueError("Density matrix is not Hermitian")
        trace = np.trace(entries).real
        if abs(trace - 1.0) > NORM_TOLERANCE:
            raise ValueError(f"Density matrix trace is {trace!r}, not 1")
        if np.linalg.eigvalsh(entries)[0] < -POSITIVITY_TOLERANCE:
            raise ValueError("Density matrix has a negative eigenvalue")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def from_state(cls, state):
        return cls(state.space, state.projector())

    @classmethod
    def maximally_mixed(cls, space):
        return cls(space, np.eye(space.dim) / space.dim)

    @classmethod
    def from_unnormalised(cls, space, entries):
        """Symmetrise and renormalise an operator produced by numerical updates."""
        entries = 0.5 * (entries + entries.conj().T)
        return cls(space, entries / np.trace(entries).real)


@dataclass(frozen=True)
class SpinOperators:
    jx: np.ndarray
    jy: np.ndarray
    jz: np.ndarray
    jplus: np.ndarray
    jminus: np.ndarray

    def along(self, direction):
        nx, ny, nz = direction.unit_vector()
        return nx * self.jx + ny * self.jy + nz * self.jz


@lru_cache(maxsize=None)
def _operators_for(two_j):
    space = SpinSpace(two_j)
    j = space.j
    m = space.m_values
    ladder = np.sqrt(j * (j + 1) - m[:-1] * (m[:-1] + 1))
    jplus = np.diag(ladder, k=-1).astype(complex)
    jminus = jplus.T.copy()
    return SpinOperators(
        jx=_as_readonly(0.5 * (jplus + jminus)),
        jy=_as_readonly((jplus - jminus) / 2j),
        jz=_as_readonly(np.diag(m)),
        jplus=_as_readonly(jplus),
        jminus=_as_readonly(jminus),
    )


def build_operators(space):
    return _operators_for(space.two_j)


def _log_binomials(space):
    two_j = space.two_j
    i = np.arange(space.dim)
    return gammaln(two_j + 1) - gammaln(i + 1) - gammaln(two_j - i + 1)


def coherent_radial(space, thetas):
    """
    Moduli |<k|theta, phi>| for every Dicke level, evaluated in log space.

    Returns an array of shape (len(thetas), dim); column i belongs to m = -j + i.
    """
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    i = np.arange(space.dim)
    up = i  # j + k
    down = space.two_j - i  # j - k
    cos_half = np.cos(thetas / 2)[:, None]
    sin_half = np.sin(thetas / 2)[:, None]
    log_moduli = 0.5 * _log_binomials(space)[None, :] + xlogy(up, cos_half) + xlogy(down, sin_half)
    return np.exp(log_moduli)


def coherent_amplitude(space, k, direction):
    i = space.index(k)
    modulus = coherent_radial(space, [direction.theta])[0, i]
    return modulus * np.exp(1j * (space.j - k) * direction.phi)


def coherent_vectors(space, directions):
    """Columns are the coherent states of `directions`."""
    thetas = np.array([d.theta for d in directions])
    phis = np.array([d.phi for d in directions])
    phases = np.exp(1j * (space.j - space.m_values)[:, None] * phis[None, :])
    return coherent_radial(space, thetas).T * phases


def coherent_state(space, direction):
    return StateVector(space, coherent_vectors(space, [direction])[:, 0])


def basis_state(space, m):
    amplitudes = np.zeros(space.dim, dtype=complex)
    amplitudes[space.index(m)] = 1.0
    return StateVector(space, amplitudes)


def pole_state(space, sign=+1):
    """|+j> for sign > 0, |-j> otherwise."""
    return basis_state(space, space.j if sign > 0 else -space.j)


def fidelity(a, b):
    return float(abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2)


def mean_spin(space, state):
    """Bloch vector (<Jx>, <Jy>, <Jz>) of a state vector or density matrix."""
    ops = build_operators(space)
    if isinstance(state, StateVector):
        psi = state.amplitudes
        return np.array([np.vdot(psi, op @ psi).real for op in (ops.jx, ops.jy, ops.jz)])
    return np.array([np.trace(state.entries @ op).real for op in (ops.jx, ops.jy, ops.jz)])


# Hamiltonian library

@dataclass(frozen=True)
class Rotation:
    axis: str = "x"
    omega: float = 1.0

    def __post_init__(self):
        if self.axis not in ("x", "y", "z"):
            raise ValueError(f"Rotation axis must be x, y or z, got {self.axis!r}")
        if not math.isfinite(self.omega):
            raise ValueError("Rotation frequency must be finite")


@dataclass(frozen=True)
class CatFlip:
    omega: float = 1.0

    def __post_init__(self):
        if not math.isfinite(self.omega):
            raise ValueError("Cat-flip frequency must be finite")


@dataclass(frozen=True)
class TwoLevel:
    delta_e: float
    levels: tuple

    def __post_init__(self):
        if not math.isfinite(self.delta_e):
            raise ValueError("Energy gap must be finite")
        if len(self.levels) != 2 or self.levels[0] == self.levels[1]:
            raise ValueError("A two-level Hamiltonian needs two distinct Dicke levels")
        object.__setattr__(self, "levels", tuple(self.levels))


@dataclass(frozen=True, eq=False)
class Custom:
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        matrix = _as_readonly(self.matrix)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("Custom Hamiltonian must be a square matrix")
        if np.max(np.abs(matrix - matrix.conj().T)) > HERMITIAN_TOLERANCE:
            raise ValueError("Custom Hamiltonian is not Hermitian")
        object.__setattr__(self, "matrix", matrix)


HamiltonianSpec = Union[Rotation, CatFlip, TwoLevel, Custom]


def describe_hamiltonian(spec):
    if isinstance(spec, Rotation):
        return {"kind": "rotation", "axis": spec.axis, "omega": spec.omega}
    if isinstance(spec, CatFlip):
        return {"kind": "cat-flip", "omega": spec.omega}
    if isinstance(spec, TwoLevel):
        return {"kind": "two-level", "delta_e": spec.delta_e, "levels": list(spec.levels)}
    return {"kind": "custom", "dim": int(spec.matrix.shape[0])}


def build_hamiltonian(spec, space):
    dim = space.dim
    if isinstance(spec, Rotation):
        ops = build_operators(space)
        return spec.omega * np.array(getattr(ops, "j" + spec.axis))
    if isinstance(spec, CatFlip):
        hamiltonian = np.zeros((dim, dim), dtype=complex)
        # i*omega*(|-j><+j| - |+j><-j|)
        hamiltonian[0, dim - 1] = 1j * spec.omega
        hamiltonian[dim - 1, 0] = -1j * spec.omega
        return hamiltonian
    if isinstance(spec, TwoLevel):
        lower, upper = (space.index(m) for m in spec.levels)
        hamiltonian = np.zeros((dim, dim), dtype=complex)
        hamiltonian[lower, lower] = -spec.delta_e / 2
        hamiltonian[upper, upper] = spec.delta_e / 2
        return hamiltonian
    if isinstance(spec, Custom):
        if spec.matrix.shape != (dim, dim):
            raise ValueError(f"Custom Hamiltonian is {spec.matrix.shape}, space needs {dim}x{dim}")
        return np.array(spec.matrix)
    raise TypeError(f"Unknown Hamiltonian specification {spec!r}")


@dataclass(frozen=True, eq=False)
class Propagator:
    space: SpinSpace
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def unitary(self, t):
        if not math.isfinite(t):
            raise ValueError("Evolution time must be finite")
        vectors = self.eigenvectors
        return (vectors * np.exp(-1j * self.eigenvalues * t)) @ vectors.conj().T

    def reconstruct(self):
        vectors = self.eigenvectors
        return (vectors * self.eigenvalues) @ vectors.conj().T


def diagonalize(hamiltonian, space=None):
    hamiltonian = np.asarray(hamiltonian, dtype=complex)
    if hamiltonian.ndim != 2 or hamiltonian.shape[0] != hamiltonian.shape[1]:
        raise ValueError("Hamiltonian must be a square matrix")
    scale = max(1.0, float(np.max(np.abs(hamiltonian))))
    if np.max(np.abs(hamiltonian - hamiltonian.conj().T)) > HERMITIAN_TOLERANCE * scale:
        raise ValueError("Hamiltonian is not Hermitian")
    if space is None:
        space = SpinSpace(hamiltonian.shape[0] - 1)
    energies, vectors = np.linalg.eigh(hamiltonian)
    return Propagator(space, _as_readonly(energies, float), _as_readonly(vectors))


def propagator_for(spec, space):
    return diagonalize(build_hamiltonian(spec, space), space)


def evolve(propagator, state, t):
    unitary = propagator.unitary(t)
    if isinstance(state, StateVector):
        psi = unitary @ state.amplitudes
        return StateVector(state.space, psi / np.linalg.norm(psi))
    return DensityMatrix.from_unnormalised(state.space, unitary @ state.entries @ unitary.conj().T)


def survival_probability(propagator, psi0, t):
    """Return (|<psi0|psi(t)>|^2, arg <psi0|psi(t)>)."""
    amplitude = np.vdot(psi0.amplitudes, propagator.unitary(t) @ psi0.amplitudes)
    return float(abs(amplitude) ** 2), float(np.angle(amplitude))


def rotation_operator(space, direction):
    """exp(-i phi Jz) exp(-i theta Jy), which carries |+j> onto |theta, phi>."""
    ops = build_operators(space)
    tilt = diagonalize(ops.jy, space).unitary(direction.theta)
    turn = np.diag(np.exp(-1j * direction.phi * space.m_values))
    return turn @ tilt


def cat_state(space, omega, t):
    """cos(omega t)|+j> + sin(omega t)|-j>, generated by the cat-flip Hamiltonian."""
    return evolve(propagator_for(CatFlip(omega), space), pole_state(space, +1), t)


def cat_mixture(space, omega, t):
    weights = np.zeros(space.dim)
    weights[-1] = math.cos(omega * t) ** 2
    weights[0] = math.sin(omega * t) ** 2
    return DensityMatrix(space, np.diag(weights))
