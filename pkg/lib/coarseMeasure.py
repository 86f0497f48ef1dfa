"""
Coarse-grained direction measurements

A partition of the sphere into polar bands (cuts at cos(theta) = m/j) is grouped
into slots. Projecting the coherent-state resolution of identity onto a slot
gives a POVM element diagonal in the Dicke basis; its weights are regularised
incomplete beta functions, so nothing is integrated numerically.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

from lib.quasiProb import PolarBand, aligned_grid, integrate_region, q_function
from lib.spinCore import ContractViolation, DensityMatrix

logger = logging.getLogger("Macroreal")

COMPLETENESS_TOLERANCE = 1e-12
NEGLIGIBLE_OUTCOME = 1e-14


@dataclass(frozen=True, eq=False)
class SlotPartition:
    space: object
    cuts: tuple
    labels: tuple = None
    slot_size: float = None

    def __post_init__(self):
        j = self.space.j
        cuts = tuple(float(c) for c in self.cuts)
        if any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise ValueError(f"Partition cuts must be strictly increasing, got {cuts}")
        if any(not -j < c < j for c in cuts):
            raise ValueError(f"Partition cuts must lie strictly inside (-{j}, {j})")
        labels = tuple(range(len(cuts) + 1)) if self.labels is None else tuple(int(x) for x in self.labels)
        if len(labels) != len(cuts) + 1:
            raise ValueError("Need one slot label per band")
        if sorted(set(labels)) != list(range(len(set(labels)))):
            raise ValueError("Slot labels must be 0..n_slots-1")
        if len(set(labels)) < 2:
            raise ValueError("A partition needs at least two slots")
        object.__setattr__(self, "cuts", cuts)
        object.__setattr__(self, "labels", labels)

    @property
    def n_bands(self):
        return len(self.cuts) + 1

    @property
    def n_slots(self):
        return len(set(self.labels))

    @property
    def cos_cuts(self):
        return tuple(c / self.space.j for c in self.cuts)

    def band_edges(self, band):
        edges = (-self.space.j,) + self.cuts + (self.space.j,)
        return edges[band], edges[band + 1]

    def polar_bands(self, slot):
        """The polar bands (in cos theta) belonging to `slot`."""
        j = self.space.j
        return [
            PolarBand(lo / j, hi / j)
            for band, label in enumerate(self.labels)
            if label == slot
            for lo, hi in [self.band_edges(band)]
        ]

    def slot_of_pole(self, sign=+1):
        return self.labels[-1] if sign > 0 else self.labels[0]

    def coarse_graining_ratio(self):
        """Slot size over the quantum scale sqrt(j); the narrowest band is used when sizes differ."""
        if self.slot_size is not None:
            size = self.slot_size
        else:
            edges = (-self.space.j,) + self.cuts + (self.space.j,)
            size = min(b - a for a, b in zip(edges, edges[1:]))
        return size / math.sqrt(self.space.j)

    def describe(self):
        return {"cuts": list(self.cuts), "labels": list(self.labels), "slot_size": self.slot_size}


def uniform_partition(space, n_slots=None, slot_size=None):
    if (n_slots is None) == (slot_size is None):
        raise ValueError("Give exactly one of n_slots or slot_size")
    j = space.j
    if slot_size is not None:
        if slot_size <= 0 or slot_size > space.two_j:
            raise ValueError(f"Slot size {slot_size} must lie in (0, 2j]")
        n_slots = int(space.two_j // slot_size)
        if n_slots < 2:
            raise ValueError(f"Slot size {slot_size} leaves fewer than two slots")
        # the last slot absorbs the remainder
        cuts = tuple(-j + slot_size * s for s in range(1, n_slots))
        return SlotPartition(space, cuts, slot_size=float(slot_size))
    if int(n_slots) != n_slots or n_slots < 2:
        raise ValueError(f"Need an integer number of slots >= 2, got {n_slots}")
    width = space.two_j / n_slots
    cuts = tuple(-j + width * s for s in range(1, int(n_slots)))
    return SlotPartition(space, cuts, slot_size=width)


def hemisphere_partition(space):
    return uniform_partition(space, n_slots=2)


def fine_grained_partition(space):
    """One slot per Dicke level, cut halfway between neighbouring levels."""
    cuts = tuple(space.m_values[:-1] + 0.5)
    return SlotPartition(space, cuts, slot_size=1.0)


def merged_pole_partition(space, cap_size=None):
    """Both polar caps of m-size `cap_size` merged into slot 0, the equatorial band is slot 1."""
    j = space.j
    cap_size = j / 2 if cap_size is None else float(cap_size)
    if not 0 < cap_size < j:
        raise ValueError(f"Cap size must lie in (0, j), got {cap_size}")
    return SlotPartition(space, (-j + cap_size, j - cap_size), labels=(0, 1, 0))


def _band_weights(partition):
    """g_band(k): the fraction of the coherent-state resolution of |k><k| inside each band."""
    space = partition.space
    index = np.arange(space.dim, dtype=float)
    a = index + 1  # j + k + 1
    b = space.two_j - index + 1  # j - k + 1
    u = np.array([0.0] + [(1 + c) / 2 for c in partition.cos_cuts] + [1.0])
    lower = betainc(a[None, :], b[None, :], u[:, None])
    upper = betainc(b[None, :], a[None, :], 1 - u[:, None])
    # difference the tail with the smaller magnitudes to avoid cancellation
    from_lower = lower[1:] - lower[:-1]
    from_upper = upper[:-1] - upper[1:]
    weights = np.where(lower[1:] <= upper[:-1], from_lower, from_upper)
    return np.clip(weights, 0.0, None)


def g_weights(partition):
    """Array (n_slots, 2j+1) of POVM diagonals; columns sum to 1."""
    bands = _band_weights(partition)
    weights = np.zeros((partition.n_slots, partition.space.dim))
    for band, label in enumerate(partition.labels):
        weights[label] += bands[band]
    deficit = np.max(np.abs(weights.sum(axis=0) - 1.0))
    if deficit > COMPLETENESS_TOLERANCE:
        raise ContractViolation(f"POVM completeness violated by {deficit:.3g}")
    return weights


@dataclass(frozen=True, eq=False)
class PovmElement:
    slot: int
    weights: np.ndarray

    def matrix(self):
        return np.diag(self.weights).astype(complex)


@dataclass(frozen=True, eq=False)
class KrausOperator:
    slot: int
    diagonal: np.ndarray

    def matrix(self):
        return np.diag(self.diagonal).astype(complex)


@dataclass(frozen=True, eq=False)
class MeasurementOutcome:
    slot: int
    probability: float
    state: DensityMatrix


class OutcomeList(list):
    """Measurement outcomes; `dropped` lists slots whose probability was negligible."""

    def __init__(self, outcomes, dropped=()):
        super().__init__(outcomes)
        self.dropped = tuple(dropped)

    def probabilities(self):
        return {outcome.slot: outcome.probability for outcome in self}


def povm_elements(partition):
    return [PovmElement(slot, row) for slot, row in enumerate(g_weights(partition))]


def kraus_operators(partition):
    return [KrausOperator(slot, np.sqrt(row)) for slot, row in enumerate(g_weights(partition))]


def measure(rho, partition):
    if rho.space != partition.space:
        raise ValueError("Density matrix and partition belong to different spin spaces")
    outcomes, dropped = [], []
    populations = np.diag(rho.entries).real
    for kraus in kraus_operators(partition):
        probability = float(populations @ kraus.diagonal ** 2)
        if probability < NEGLIGIBLE_OUTCOME:
            dropped.append(kraus.slot)
            continue
        updated = rho.entries * np.outer(kraus.diagonal, kraus.diagonal) / probability
        outcomes.append(MeasurementOutcome(kraus.slot, probability, DensityMatrix.from_unnormalised(rho.space, updated)))
    if dropped:
        logger.debug("Dropped negligible measurement outcomes %s", dropped)
    return OutcomeList(outcomes, dropped)


def decohere(rho, partition):
    """Non-selective measurement: the sum over slots of M rho M."""
    diagonals = np.sqrt(g_weights(partition))
    mask = diagonals.T @ diagonals
    return DensityMatrix.from_unnormalised(rho.space, rho.entries * mask)


def classical_outcome_probs(rho, partition, grid):
    """Slot probabilities read off the Q-function, integrating over each slot's bands."""
    grid = aligned_grid(grid, partition.cos_cuts)
    q = q_function(rho, grid)
    return np.array([integrate_region(q, partition.polar_bands(slot)) for slot in range(partition.n_slots)])
