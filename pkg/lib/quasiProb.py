"""
Quasi-probability distributions of a spin-j state on the sphere of directions

Husimi Q-functions are evaluated exactly on a product quadrature grid (Gauss-Legendre
rings in cos(theta), uniform in phi). Because every Q of a spin-j state is a
spherical polynomial of degree 2j, each ring only needs the 4j+1 Fourier
coefficients of the density matrix diagonals.
"""

import logging
import math
from collections import namedtuple
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import gammaln, sph_harm_y

from lib.spinCore import (
    ContractViolation,
    DensityMatrix,
    SpinSpace,
    cat_mixture,
    cat_state,
    coherent_radial,
    coherent_vectors,
)

logger = logging.getLogger("Macroreal")

MAX_P_FUNCTION_J = 20
NORMALISATION_TOLERANCE = 1e-8
NEGATIVITY_TOLERANCE = 1e-9
CLIPPED_MASS_LIMIT = 1e-6
BREAK_MATCH_TOLERANCE = 1e-12

PROBABILITY = "probability"
QUASI = "quasi"
FUNCTION = "function"


@dataclass(frozen=True, eq=False)
class SphereGrid:
    space: object
    oversample: int
    breaks: tuple
    ring_cos: np.ndarray
    ring_weights: np.ndarray
    n_phi: int
    band_limit: int

    @property
    def key(self):
        return (self.space.two_j, self.oversample, self.breaks)

    @property
    def ring_theta(self):
        return np.arccos(np.clip(self.ring_cos, -1.0, 1.0))

    @property
    def phi(self):
        return 2 * math.pi * np.arange(self.n_phi) / self.n_phi

    @property
    def phi_weight(self):
        return 2 * math.pi / self.n_phi

    @property
    def n_rings(self):
        return len(self.ring_cos)

    @property
    def n_nodes(self):
        return self.n_rings * self.n_phi

    @property
    def weights(self):
        """Flattened node weights, ring-major."""
        return np.repeat(self.ring_weights * self.phi_weight, self.n_phi)

    def node_angles(self):
        theta = np.repeat(self.ring_theta, self.n_phi)
        phi = np.tile(self.phi, self.n_rings)
        return theta, phi

    def same_as(self, other):
        return self is other or self.key == other.key

    def has_breaks(self, cos_cuts):
        return all(
            any(abs(cut - b) <= BREAK_MATCH_TOLERANCE for b in self.breaks) for cut in cos_cuts
        )


def make_grid(space, oversample=2, breaks=()):
    """
    Product quadrature exact for spherical polynomials of degree 4j*oversample.

    `breaks` are cos(theta) values strictly inside (-1, 1); the Gauss-Legendre
    rule is composed segment by segment so that an indicator of a polar band with
    those edges is integrated exactly.
    """
    if int(oversample) != oversample or oversample < 1:
        raise ValueError(f"Oversampling factor must be a positive integer, got {oversample}")
    breaks = tuple(sorted(float(b) for b in breaks))
    if any(not -1.0 < b < 1.0 for b in breaks) or len(set(breaks)) != len(breaks):
        raise ValueError("Grid break points must be distinct and strictly inside (-1, 1)")

    band_limit = 2 * space.two_j * int(oversample)
    n_per_segment = band_limit // 2 + 1
    nodes, weights = leggauss(n_per_segment)
    edges = (-1.0,) + breaks + (1.0,)
    ring_cos, ring_weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = (hi - lo) / 2
        ring_cos.append(lo + half * (nodes + 1))
        ring_weights.append(half * weights)
    ring_cos = np.concatenate(ring_cos)[::-1]  # ascending theta
    ring_weights = np.concatenate(ring_weights)[::-1]
    grid = SphereGrid(space, int(oversample), breaks, ring_cos, ring_weights, band_limit + 1, band_limit)
    logger.debug("Built sphere grid j=%s: %d rings x %d azimuths", space.j, grid.n_rings, grid.n_phi)
    return grid


def aligned_grid(grid, cos_cuts):
    """Return `grid` if it already breaks at every cut, else a rebuilt grid that does."""
    if grid.has_breaks(cos_cuts):
        return grid
    logger.warning(
        "Sphere grid lacks break points at %s; rebuilding an aligned grid", [float(c) for c in cos_cuts]
    )
    merged = list(grid.breaks)
    for cut in cos_cuts:
        if not any(abs(cut - b) <= BREAK_MATCH_TOLERANCE for b in merged):
            merged.append(float(cut))
    return make_grid(grid.space, grid.oversample, merged)


@dataclass(frozen=True, eq=False)
class SphereDistribution:
    grid: SphereGrid
    values: np.ndarray
    kind: str = PROBABILITY

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True).reshape(self.grid.n_rings, self.grid.n_phi)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.kind not in (PROBABILITY, QUASI, FUNCTION):
            raise ValueError(f"Unknown distribution kind {self.kind!r}")
        if self.kind == FUNCTION:
            return
        total = self.integral()
        if abs(total - 1.0) > NORMALISATION_TOLERANCE:
            raise ContractViolation(f"Distribution integrates to {total!r}, not 1")
        if self.kind == PROBABILITY and values.min() < -NEGATIVITY_TOLERANCE:
            raise ContractViolation(f"Probability density has negative value {values.min()!r}")

    def integral(self):
        return float(self.grid.ring_weights @ self.values.sum(axis=1) * self.grid.phi_weight)

    @property
    def flat(self):
        return self.values.ravel()


Overlap = namedtuple("Overlap", ["value", "clipped_mass"])


def _diagonal_slices(dim, d):
    """Index ranges (rows, cols) of the entries (i, i - d) of a dim x dim matrix."""
    if d >= 0:
        rows = np.arange(d, dim)
    else:
        rows = np.arange(0, dim + d)
    return rows, rows - d


def _phase_table(dim, phi):
    offsets = np.arange(-(dim - 1), dim)
    return offsets, np.exp(1j * offsets[:, None] * phi[None, :])


def _ring_fourier_coefficients(entries, radial):
    """F_d(ring) = sum_i r_i r_{i-d} rho[i, i-d] for every diagonal offset d."""
    dim = entries.shape[0]
    coefficients = np.zeros((radial.shape[0], 2 * dim - 1), dtype=complex)
    for d in range(-(dim - 1), dim):
        rows, cols = _diagonal_slices(dim, d)
        coefficients[:, d + dim - 1] = (radial[:, rows] * radial[:, cols]) @ entries[rows, cols]
    return coefficients


def _q_on_rings(entries, space, thetas, phi):
    radial = coherent_radial(space, thetas)
    _, phases = _phase_table(space.dim, phi)
    values = _ring_fourier_coefficients(entries, radial) @ phases
    return (space.dim / (4 * math.pi)) * values.real


def q_function(rho, grid):
    """Husimi Q(theta, phi) = (2j+1)/4pi <theta, phi| rho |theta, phi> on the grid nodes."""
    if rho.space != grid.space:
        raise ValueError("Density matrix and grid belong to different spin spaces")
    values = _q_on_rings(rho.entries, rho.space, grid.ring_theta, grid.phi)
    return SphereDistribution(grid, values, PROBABILITY)


def q_values_at(rho, directions):
    """Q at arbitrary directions (one coherent-state expectation each)."""
    vectors = coherent_vectors(rho.space, directions)
    expectations = np.einsum("in,ij,jn->n", vectors.conj(), rho.entries, vectors).real
    return (rho.space.dim / (4 * math.pi)) * expectations


def coherent_mixture_operator(distribution):
    """The operator integral of f(Omega) |Omega><Omega| over the sphere."""
    grid = distribution.grid
    space = grid.space
    dim = space.dim
    radial = coherent_radial(space, grid.ring_theta)
    _, phases = _phase_table(dim, grid.phi)
    azimuthal = (distribution.values * grid.phi_weight) @ phases.conj().T
    operator = np.zeros((dim, dim), dtype=complex)
    for d in range(-(dim - 1), dim):
        rows, cols = _diagonal_slices(dim, d)
        ring_factor = grid.ring_weights * azimuthal[:, d + dim - 1]
        operator[rows, cols] = (radial[:, rows] * radial[:, cols]).T @ ring_factor
    return operator


def _transfer_factors(two_j):
    ranks = np.arange(two_j + 1)
    log_tau = (
        math.log(two_j + 1)
        + 2 * gammaln(two_j + 1)
        - gammaln(two_j - ranks + 1)
        - gammaln(two_j + ranks + 2)
    )
    return np.exp(log_tau)


def p_function(rho, grid):
    """
    Glauber-Sudarshan P-function, band limited to rank 2j.

    The Q-function is projected on spherical harmonics ring by ring, each rank K
    is divided by the Q/P transfer factor and the result resynthesised on the grid.
    """
    space = rho.space
    if space.j > MAX_P_FUNCTION_J:
        raise ValueError(f"P-function deconvolution is limited to j <= {MAX_P_FUNCTION_J}, got j={space.j}")
    if space != grid.space:
        raise ValueError("Density matrix and grid belong to different spin spaces")

    two_j = space.two_j
    tau = _transfer_factors(two_j)
    if not np.all(np.isfinite(tau)) or tau.min() < 1e-300:
        raise ContractViolation("Q/P transfer factor underflow; deconvolution is ill-conditioned")

    q_values = q_function(rho, grid).values
    orders = np.arange(-two_j, two_j + 1)
    azimuthal_phases = np.exp(1j * orders[:, None] * grid.phi[None, :])
    # F_Q[r, m] = integral over phi of Q e^{-i m phi}
    q_fourier = (q_values * grid.phi_weight) @ azimuthal_phases.conj().T

    theta = grid.ring_theta
    harmonics = np.zeros((two_j + 1, len(orders), grid.n_rings))
    for rank in range(two_j + 1):
        order = np.arange(-rank, rank + 1)
        harmonics[rank, order + two_j, :] = sph_harm_y(rank, order[:, None], theta[None, :], 0.0).real

    q_coefficients = np.einsum("kmr,r,rm->km", harmonics, grid.ring_weights, q_fourier)
    p_coefficients = q_coefficients / tau[:, None]
    p_rings = np.einsum("km,kmr->rm", p_coefficients, harmonics) @ azimuthal_phases
    imaginary = np.max(np.abs(p_rings.imag))
    if imaginary > 1e-6 * max(1.0, np.max(np.abs(p_rings.real))):
        logger.warning("P-function resynthesis left an imaginary residue of %.3g", imaginary)
    return SphereDistribution(grid, p_rings.real, QUASI)


def q_of_cat_pair(j, t, omega, grid):
    """Q-functions of the cat superposition and of the matching two-pole mixture."""
    space = SpinSpace.from_j(j)
    if space != grid.space:
        raise ValueError("Grid was built for a different spin length")
    superposition = DensityMatrix.from_state(cat_state(space, omega, t))
    mixture = cat_mixture(space, omega, t)
    return q_function(superposition, grid), q_function(mixture, grid)


def overlap_report(f, g):
    if not f.grid.same_as(g.grid):
        raise ValueError("Distributions live on different grids")
    weights = f.grid.weights
    clipped_mass = 0.0
    clipped = []
    for values in (f.flat, g.flat):
        negative = np.minimum(values, 0.0)
        clipped_mass += float(weights @ -negative)
        clipped.append(values - negative)
    if clipped_mass > CLIPPED_MASS_LIMIT:
        raise ContractViolation(f"Overlap clipped {clipped_mass:.3g} of negative mass")
    if clipped_mass:
        logger.debug("Overlap clipped %.3g of negative mass", clipped_mass)
    value = float(weights @ np.sqrt(clipped[0] * clipped[1]))
    return Overlap(value, clipped_mass)


def overlap(f, g):
    """Bhattacharyya overlap, the integral of sqrt(f g)."""
    return overlap_report(f, g).value


@dataclass(frozen=True)
class PolarBand:
    cos_lo: float
    cos_hi: float

    def __post_init__(self):
        if not -1.0 <= self.cos_lo < self.cos_hi <= 1.0:
            raise ValueError(f"Invalid polar band [{self.cos_lo}, {self.cos_hi}]")

    @classmethod
    def hemisphere(cls, north=True):
        return cls(0.0, 1.0) if north else cls(-1.0, 0.0)


def integrate_region(distribution, region):
    """Integrate over a PolarBand or a union of disjoint bands."""
    bands = [region] if isinstance(region, PolarBand) else list(region)
    grid = distribution.grid
    edges = [c for band in bands for c in (band.cos_lo, band.cos_hi) if abs(c) < 1.0]
    if not grid.has_breaks(edges):
        logger.debug("Integrating over band edges %s that are not grid breaks; result is approximate", edges)
    ring_totals = distribution.values.sum(axis=1) * grid.phi_weight * grid.ring_weights
    inside = np.zeros(grid.n_rings, dtype=bool)
    for band in bands:
        inside |= (grid.ring_cos > band.cos_lo) & (grid.ring_cos < band.cos_hi)
    return float(ring_totals[inside].sum())


def distribution_rows(distribution):
    """(theta, phi, weight, value) per node, ring-major."""
    theta, phi = distribution.grid.node_angles()
    return zip(theta, phi, distribution.grid.weights, distribution.flat)
