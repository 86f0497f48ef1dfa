"""
Macrorealism tests for a spin-j system

Leggett-Garg correlators from explicit sequential-measurement statistics,
no-signalling-in-time style conditions scored with Q-function overlaps, and a
classifier that decides whether a Hamiltonian keeps coarse observables classical.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from lib.coarseMeasure import decohere, g_weights, kraus_operators
from lib.quasiProb import aligned_grid, overlap, q_function
from lib.spinCore import (
    ContractViolation,
    DensityMatrix,
    StateVector,
    build_hamiltonian,
    build_operators,
    coherent_vectors,
    describe_hamiltonian,
    diagonalize,
    evolve,
    survival_probability,
)

logger = logging.getLogger("Macroreal")

PROTOCOL_AGREEMENT = 1e-9
DEFAULT_CONDITION_TOLERANCE = 0.05
DEFAULT_CLASSICAL_THRESHOLD = 0.05
PLUS, MINUS = +1, -1


@dataclass(frozen=True)
class LgiResult:
    c12: float
    c23: float
    c13: float
    times: tuple
    protocol: str
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def k(self):
        return self.c12 + self.c23 - self.c13

    @property
    def violated(self):
        return self.k > 1.0

    def to_record(self):
        return {
            "protocol": self.protocol,
            "t1": self.times[0],
            "t2": self.times[1],
            "t3": self.times[2],
            "c12": self.c12,
            "c23": self.c23,
            "c13": self.c13,
            "k": self.k,
        }


def _check_times(times):
    t1, t2, t3 = (float(t) for t in times)
    if not all(math.isfinite(t) for t in (t1, t2, t3)):
        raise ValueError("Measurement times must be finite")
    if not t1 <= t2 <= t3:
        raise ValueError(f"Measurement times must satisfy t1 <= t2 <= t3, got {times}")
    return t1, t2, t3


def _sequence_statistics(propagator, rho0, instrument, times):
    """
    Joint probabilities of every outcome sequence for measurements at `times`.

    The system starts in rho0 at t = 0; `instrument` maps an outcome label to its
    Kraus matrix. Branch states are kept unnormalised so their trace is the joint
    probability.
    """
    branches = {(): np.array(rho0.entries)}
    now = 0.0
    for t in times:
        unitary = propagator.unitary(t - now)
        now = t
        updated = {}
        for sequence, branch in branches.items():
            evolved = unitary @ branch @ unitary.conj().T
            for label, kraus in instrument.items():
                updated[sequence + (label,)] = kraus @ evolved @ kraus.conj().T
        branches = updated
    return {sequence: float(np.trace(branch).real) for sequence, branch in branches.items()}


def _correlator(statistics):
    return sum(a * b * p for (a, b), p in statistics.items())


def _dichotomic_instrument(partition):
    if partition.n_slots != 2:
        raise ValueError("A dichotomic observable needs a two-slot partition")
    plus = partition.slot_of_pole(+1)
    kraus = {k.slot: k.diagonal for k in kraus_operators(partition)}
    minus = next(slot for slot in kraus if slot != plus)
    return {PLUS: np.diag(kraus[plus]).astype(complex), MINUS: np.diag(kraus[minus]).astype(complex)}


def _projective_instrument(psi0):
    projector = psi0.projector()
    return {PLUS: projector, MINUS: np.eye(len(projector), dtype=complex) - projector}


def _as_density(state):
    return DensityMatrix.from_state(state) if isinstance(state, StateVector) else state


def _lgi_from_instrument(propagator, rho0, instrument, times, protocol, metadata):
    t1, t2, t3 = times
    c12 = _correlator(_sequence_statistics(propagator, rho0, instrument, (t1, t2)))
    c23 = _correlator(_sequence_statistics(propagator, rho0, instrument, (t2, t3)))
    c13 = _correlator(_sequence_statistics(propagator, rho0, instrument, (t1, t3)))
    return LgiResult(c12, c23, c13, (t1, t2, t3), protocol, metadata)


def lgi_coarse(propagator, rho0, partition, times):
    """
    LGI combination K for the coarse two-slot observable.

    Each correlator comes from its own two-measurement run, so C13 never sees a
    measurement at t2. Returns (LgiResult, PathTable).
    """
    table = path_table(propagator, rho0, partition, times)
    result = LgiResult(
        table.correlator(1, 2),
        table.correlator(2, 3),
        table.correlator(1, 3),
        table.times,
        "coarse",
        {"partition": partition.describe()},
    )
    logger.debug("Coarse LGI at times %s: K=%.6f", table.times, result.k)
    return result, table


def lgi_closed_form(propagator, psi0, dt):
    """K = 4 p1 sqrt(p2) cos(2 alpha - beta) - 4 p2 + 1 from survival amplitudes."""
    p1, alpha = survival_probability(propagator, psi0, dt)
    p2, beta = survival_probability(propagator, psi0, 2 * dt)
    return 4 * p1 * math.sqrt(p2) * math.cos(2 * alpha - beta) - 4 * p2 + 1


def lgi_projective(propagator, psi0, dt):
    """
    Projective LGI protocol: Q = +1 on |psi0>, -1 on its complement,
    measured at t = 0, dt and 2 dt.
    """
    if not math.isfinite(dt) or dt < 0:
        raise ValueError(f"Time step must be finite and non-negative, got {dt}")
    closed = lgi_closed_form(propagator, psi0, dt)
    result = _lgi_from_instrument(
        propagator,
        DensityMatrix.from_state(psi0),
        _projective_instrument(psi0),
        (0.0, dt, 2 * dt),
        "projective",
        {"closed_form_k": closed},
    )
    if abs(result.k - closed) > PROTOCOL_AGREEMENT:
        raise ContractViolation(f"Explicit K={result.k!r} disagrees with closed form K={closed!r}")
    return result


def two_level_k(delta_e, dt):
    x = delta_e * dt
    return 2 * math.cos(x) - math.cos(2 * x)


@dataclass(eq=False)
class PathTable:
    """
    Outcome statistics of a dichotomic observable at three times.

    `marginals[i]` holds first-measurement probabilities at time i (1, 2, 3),
    `pairs[(i, k)]` the joint statistics of a run measuring only at i and k, and
    `sequences` the joint statistics of a run measuring at all three times.
    """

    times: tuple
    marginals: dict
    pairs: dict
    sequences: dict

    def conditional(self, first, second):
        """q(second outcome | first outcome) for the pair run (first, second)."""
        table = {}
        for (a, b), joint in self.pairs[(first, second)].items():
            p = self.marginals[first][a]
            table[(a, b)] = joint / p if p > 0 else float("nan")
        return table

    def correlator(self, first, second):
        return _correlator(self.pairs[(first, second)])

    def path_residual(self):
        """
        Largest gap between q(3c|1a) and the sum over intermediate outcomes b of
        q(2b|1a) q(3c|2b,1a), which vanishes when intermediate paths combine classically.
        """
        residual = 0.0
        direct = self.conditional(1, 3)
        for a in (PLUS, MINUS):
            p_first = self.marginals[1][a]
            if p_first <= 0:
                continue
            for c in (PLUS, MINUS):
                through = sum(self.sequences[(a, b, c)] for b in (PLUS, MINUS)) / p_first
                residual = max(residual, abs(direct[(a, c)] - through))
        return residual

    def to_records(self):
        records = []
        for (first, second), statistics in sorted(self.pairs.items()):
            for (a, b), joint in sorted(statistics.items()):
                records.append({"run": f"{first}{second}", "outcomes": f"{a:+d}{b:+d}", "probability": joint})
        for outcomes, joint in sorted(self.sequences.items()):
            records.append({"run": "123", "outcomes": "".join(f"{x:+d}" for x in outcomes), "probability": joint})
        return records


def path_table(propagator, rho0, partition, times):
    times = _check_times(times)
    rho0 = _as_density(rho0)
    if rho0.space != partition.space:
        raise ValueError("Initial state and partition belong to different spin spaces")
    instrument = _dichotomic_instrument(partition)
    marginals = {}
    for index, t in enumerate(times, start=1):
        single = _sequence_statistics(propagator, rho0, instrument, (t,))
        marginals[index] = {label: single[(label,)] for label in (PLUS, MINUS)}
    pairs = {
        (first, second): _sequence_statistics(propagator, rho0, instrument, (times[first - 1], times[second - 1]))
        for first, second in ((1, 2), (2, 3), (1, 3))
    }
    sequences = _sequence_statistics(propagator, rho0, instrument, times)
    return PathTable(times, marginals, pairs, sequences)


@dataclass(frozen=True)
class ConditionReport:
    condition: str
    score: float
    tolerance: float
    witness: dict

    @property
    def passed(self):
        return self.score >= 1.0 - self.tolerance

    def to_record(self):
        return {"condition": self.condition, "score": self.score, "tolerance": self.tolerance,
                "passed": self.passed, **{f"witness_{k}": v for k, v in self.witness.items()}}


def _witness(f, g):
    difference = np.abs(f.flat - g.flat)
    node = int(np.argmax(difference))
    theta, phi = f.grid.node_angles()
    return {"theta": float(theta[node]), "phi": float(phi[node]), "discrepancy": float(difference[node])}


def _report(condition, before, after, tolerance):
    return ConditionReport(condition, overlap(before, after), float(tolerance), _witness(before, after))


def mixture_condition(rho, partition, grid, tolerance=DEFAULT_CONDITION_TOLERANCE):
    """Is rho indistinguishable, in phase space, from its slot-decohered version?"""
    grid = aligned_grid(grid, partition.cos_cuts)
    before = q_function(rho, grid)
    after = q_function(decohere(rho, partition), grid)
    return _report("mixture", before, after, tolerance)


def evolution_condition(rho0, propagator, partition, t_i, t_j, grid, tolerance=DEFAULT_CONDITION_TOLERANCE):
    """Does a non-selective measurement at t_i leave the state at t_j unchanged?"""
    if t_j < t_i:
        raise ValueError("Evolution condition needs t_i <= t_j")
    grid = aligned_grid(grid, partition.cos_cuts)
    rho0 = _as_density(rho0)
    at_i = evolve(propagator, rho0, t_i)
    undisturbed = evolve(propagator, at_i, t_j - t_i)
    disturbed = evolve(propagator, decohere(at_i, partition), t_j - t_i)
    return _report("evolution", q_function(undisturbed, grid), q_function(disturbed, grid), tolerance)


def sufficient_condition(propagator, partition, times, directions, tolerance=DEFAULT_CONDITION_TOLERANCE,
                         border_zone=None):
    """
    Score 1 - max epsilon of the evolved coherent states over the (t, Omega) samples,
    with the worst sample as witness. Samples in the border zone are skipped as in
    `classify_hamiltonian`.
    """
    kept, worst, excluded = _scan_deviations(propagator, partition, times, directions, border_zone)
    witness = dict(worst, excluded=excluded, samples=len(kept))
    return ConditionReport("sufficient", 1.0 - float(max(kept)), float(tolerance), witness)


def sharp_observable_statistics(rho_a, rho_b, psi):
    """Total-variation distance of the outcomes of the projective test {|psi><psi|, 1 - |psi><psi|}."""
    projector = psi.projector()
    p_a = float(np.trace(rho_a.entries @ projector).real)
    p_b = float(np.trace(rho_b.entries @ projector).real)
    return abs(p_a - p_b)


def classicality_deviation(propagator, partition, t, direction):
    """1 minus the largest slot probability of the evolved coherent state."""
    return float(_deviations(propagator, partition, t, [direction])[0][0])


def _deviations(propagator, partition, t, directions):
    space = partition.space
    evolved = propagator.unitary(t) @ coherent_vectors(space, directions)
    populations = np.abs(evolved) ** 2
    slot_probabilities = g_weights(partition) @ populations
    return 1.0 - slot_probabilities.max(axis=0), evolved


def _mean_spin_polar(space, evolved):
    ops = build_operators(space)
    components = [np.einsum("in,ij,jn->n", evolved.conj(), op, evolved).real for op in (ops.jx, ops.jy, ops.jz)]
    length = np.sqrt(sum(c ** 2 for c in components))
    polar = np.arccos(np.clip(components[2] / np.where(length > 0, length, 1.0), -1.0, 1.0))
    return polar, length


def _scan_deviations(propagator, partition, times, directions, border_zone=None):
    """Deviations over times x directions, dropping samples whose mean spin ends near a slot border."""
    space = partition.space
    if not len(directions) or not len(times):
        raise ValueError("Need at least one time and one direction")
    zone = 2 / math.sqrt(space.j) if border_zone is None else float(border_zone)
    borders = np.arccos(np.array(partition.cos_cuts))

    kept = []
    worst = {"deviation": -1.0}
    excluded = 0
    for t in times:
        deviations, evolved = _deviations(propagator, partition, t, directions)
        polar, length = _mean_spin_polar(space, evolved)
        for n, direction in enumerate(directions):
            if length[n] > 1e-9 * space.j and np.any(np.abs(polar[n] - borders) < zone):
                excluded += 1
                continue
            kept.append(deviations[n])
            if deviations[n] > worst["deviation"]:
                worst = {"deviation": float(deviations[n]), "t": float(t),
                         "theta": direction.theta, "phi": direction.phi}
    if not kept:
        raise ValueError("Every sample fell inside the border zone; widen the sampling")
    return kept, worst, excluded


@dataclass(frozen=True)
class ClassificationReport:
    hamiltonian: dict
    partition: dict
    max_deviation: float
    mean_deviation: float
    worst: dict
    n_samples: int
    n_excluded: int
    threshold: float

    @property
    def classical(self):
        return self.max_deviation <= self.threshold

    def to_record(self):
        return {
            "hamiltonian": self.hamiltonian,
            "partition": self.partition,
            "max_deviation": self.max_deviation,
            "mean_deviation": self.mean_deviation,
            "worst": self.worst,
            "n_samples": self.n_samples,
            "n_excluded": self.n_excluded,
            "threshold": self.threshold,
            "classical": self.classical,
        }


def classify_hamiltonian(spec, partition, times, directions, threshold=DEFAULT_CLASSICAL_THRESHOLD, border_zone=None):
    """
    Evolve coherent states from `directions` for each of `times` and record how far
    each lands from a single slot. Samples whose mean spin sits within `border_zone`
    (polar angle, default 2/sqrt(j)) of a slot border are excluded: near a border
    even a classical trajectory is split between slots.
    """
    space = partition.space
    propagator = diagonalize(build_hamiltonian(spec, space), space)
    kept, worst, excluded = _scan_deviations(propagator, partition, times, directions, border_zone)
    report = ClassificationReport(
        describe_hamiltonian(spec),
        partition.describe(),
        float(max(kept)),
        float(np.mean(kept)),
        worst,
        len(kept),
        excluded,
        float(threshold),
    )
    logger.info(
        "Classified %s: max deviation %.4f over %d samples (%d excluded) -> %s",
        report.hamiltonian["kind"], report.max_deviation, report.n_samples, excluded,
        "classical" if report.classical else "non-classical",
    )
    return report
