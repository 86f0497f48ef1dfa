"""
Tests for the macrorealism simulator - numerical core, experiment commands and housekeeping.
"""

from django import forms
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase
from unittest.mock import patch
from io import StringIO
from datetime import datetime, timedelta, timezone
import csv
import json
import math
import os
import tempfile
import time

import numpy as np

from lib import macrorealLab, qubitCircuit, spinCore
from lib.coarseMeasure import (
    SlotPartition,
    classical_outcome_probs,
    decohere,
    fine_grained_partition,
    g_weights,
    hemisphere_partition,
    measure,
    merged_pole_partition,
    povm_elements,
    uniform_partition,
)
from lib.macrorealLab import (
    classicality_deviation,
    classify_hamiltonian,
    evolution_condition,
    lgi_closed_form,
    lgi_coarse,
    lgi_projective,
    mixture_condition,
    path_table,
    sharp_observable_statistics,
    sufficient_condition,
    two_level_k,
)
from lib.quasiProb import (
    FUNCTION,
    PolarBand,
    SphereDistribution,
    aligned_grid,
    coherent_mixture_operator,
    integrate_region,
    make_grid,
    overlap,
    p_function,
    q_function,
    q_of_cat_pair,
    q_values_at,
)
from lib.qubitCircuit import (
    GateLog,
    QubitRegister,
    apply_cnot,
    apply_rotation,
    cat_subspace_amplitudes,
    cat_target,
    gate_count_scaling,
    simulate_cat_protocol,
    simulate_global_rotation,
)
from lib.spinCore import (
    CatFlip,
    ContractViolation,
    DensityMatrix,
    Direction,
    Rotation,
    SpinSpace,
    StateVector,
    TwoLevel,
    build_operators,
    cat_mixture,
    cat_state,
    coherent_amplitude,
    coherent_state,
    diagonalize,
    evolve,
    fidelity,
    mean_spin,
    pole_state,
    propagator_for,
    rotation_operator,
    survival_probability,
)
from macrorealapp import experiments
from macrorealapp import models as lab_models
from macrorealapp.management.commands import cleanup_runs


def random_density(space, rng):
    a = rng.normal(size=(space.dim, space.dim)) + 1j * rng.normal(size=(space.dim, space.dim))
    return DensityMatrix.from_unnormalised(space, a @ a.conj().T)


def random_state(space, rng):
    psi = rng.normal(size=space.dim) + 1j * rng.normal(size=space.dim)
    return StateVector(space, psi / np.linalg.norm(psi))


class SpinCoreTests(TestCase):

    def test_operators_satisfy_angular_momentum_algebra(self):
        for j in (0.5, 1, 3.5, 10):
            space = SpinSpace.from_j(j)
            ops = build_operators(space)
            commutator = ops.jx @ ops.jy - ops.jy @ ops.jx
            self.assertLess(np.max(np.abs(commutator - 1j * ops.jz)), 1e-10)
            casimir = ops.jx @ ops.jx + ops.jy @ ops.jy + ops.jz @ ops.jz
            self.assertLess(np.max(np.abs(casimir - j * (j + 1) * np.eye(space.dim))), 1e-10)

    def test_raising_operator_moves_up_one_level(self):
        space = SpinSpace.from_j(2)
        ops = build_operators(space)
        m = -1
        coefficient = ops.jplus[space.index(m + 1), space.index(m)]
        self.assertAlmostEqual(coefficient.real, math.sqrt(2 * 3 - m * (m + 1)), places=12)
        self.assertEqual(np.count_nonzero(ops.jplus[:, space.index(2)]), 0)

    def test_invalid_spin_lengths_are_rejected(self):
        with self.assertRaises(ValueError):
            SpinSpace.from_j(0.3)
        with self.assertRaises(ValueError):
            SpinSpace(0)
        with self.assertRaises(ValueError):
            SpinSpace.from_j(1).index(0.5)

    def test_coherent_state_points_along_its_direction(self):
        direction = Direction(1.1, 2.3)
        for j in (1, 10, 100):
            space = SpinSpace.from_j(j)
            state = coherent_state(space, direction)
            self.assertAlmostEqual(np.linalg.norm(state.amplitudes), 1.0, places=12)
            np.testing.assert_allclose(mean_spin(space, state), j * direction.unit_vector(), atol=1e-9 * j)

    def test_log_space_amplitudes_match_direct_binomials(self):
        direction = Direction(0.7, 0.4)
        for two_j in range(1, 31):
            space = SpinSpace(two_j)
            j = space.j
            for m in space.m_values:
                direct = (
                    math.sqrt(math.comb(two_j, int(round(j + m))))
                    * math.cos(direction.theta / 2) ** (j + m)
                    * math.sin(direction.theta / 2) ** (j - m)
                )
                value = coherent_amplitude(space, m, direction)
                self.assertLessEqual(abs(abs(value) - direct), 1e-12 * direct)
                self.assertAlmostEqual(np.angle(value * np.exp(-1j * (j - m) * direction.phi)), 0.0, places=9)

    def test_coherent_state_at_the_north_pole_is_the_top_level(self):
        space = SpinSpace.from_j(5)
        self.assertAlmostEqual(fidelity(coherent_state(space, Direction(0.0)), pole_state(space, +1)), 1.0, places=12)

    def test_propagator_is_unitary_and_reproduces_the_hamiltonian(self):
        space = SpinSpace.from_j(7.5)
        hamiltonian = spinCore.build_hamiltonian(Rotation("x", 0.8), space)
        propagator = diagonalize(hamiltonian, space)
        unitary = propagator.unitary(1.3)
        self.assertLess(np.max(np.abs(unitary @ unitary.conj().T - np.eye(space.dim))), 1e-12)
        self.assertLess(np.max(np.abs(propagator.reconstruct() - hamiltonian)), 1e-10)
        self.assertLess(np.max(np.abs(propagator.unitary(0.0) - np.eye(space.dim))), 1e-12)

    def test_non_hermitian_hamiltonian_is_rejected(self):
        matrix = np.zeros((3, 3), dtype=complex)
        matrix[0, 2] = 1.0
        with self.assertRaises(ValueError):
            diagonalize(matrix)
        with self.assertRaises(ValueError):
            spinCore.Custom(matrix)

    def test_cat_flip_swings_between_the_poles(self):
        space = SpinSpace.from_j(20)
        for omega_t in (0.0, math.pi / 4, 1.0, math.pi / 2):
            psi = cat_state(space, 1.0, omega_t).amplitudes
            self.assertAlmostEqual(psi[-1].real, math.cos(omega_t), places=12)
            self.assertAlmostEqual(psi[0].real, math.sin(omega_t), places=12)
            self.assertLess(np.max(np.abs(psi[1:-1])), 1e-12)

    def test_two_level_survival_probability(self):
        space = SpinSpace.from_j(0.5)
        spec = TwoLevel(1.7, (-0.5, 0.5))
        psi0 = StateVector(space, np.array([1, 1]) / math.sqrt(2))
        propagator = propagator_for(spec, space)
        for t in (0.0, 0.4, 2.0):
            probability, _ = survival_probability(propagator, psi0, t)
            self.assertAlmostEqual(probability, math.cos(1.7 * t / 2) ** 2, places=12)

    def test_rotation_about_x_turns_the_spin_towards_minus_y(self):
        space = SpinSpace.from_j(10)
        propagator = propagator_for(Rotation("x", 1.0), space)
        spin = mean_spin(space, evolve(propagator, pole_state(space, +1), 0.6))
        np.testing.assert_allclose(spin, [0.0, -10 * math.sin(0.6), 10 * math.cos(0.6)], atol=1e-9)

    def test_rotation_operator_maps_the_pole_to_a_coherent_state(self):
        space = SpinSpace.from_j(10)
        direction = Direction(math.pi / 4, 3 * math.pi / 2)
        rotated = StateVector(space, rotation_operator(space, direction) @ pole_state(space, +1).amplitudes)
        self.assertAlmostEqual(fidelity(rotated, coherent_state(space, direction)), 1.0, places=12)

    def test_density_matrix_validation(self):
        space = SpinSpace.from_j(1)
        with self.assertRaises(ValueError):
            DensityMatrix(space, np.eye(3))
        skew = np.eye(3) / 3
        skew = skew.astype(complex)
        skew[0, 1] = 0.1
        with self.assertRaises(ValueError):
            DensityMatrix(space, skew)
        with self.assertRaises(ValueError):
            DensityMatrix(space, np.diag([1.2, -0.2, 0.0]))

    def test_direction_range_is_enforced(self):
        with self.assertRaises(ValueError):
            Direction(-0.1)
        with self.assertRaises(ValueError):
            Direction(float("nan"))
        self.assertAlmostEqual(Direction(1.0, -math.pi / 2).phi, 3 * math.pi / 2)

    def test_non_finite_azimuth_is_rejected(self):
        for phi in (float("nan"), float("inf"), -float("inf")):
            with self.assertRaises(ValueError):
                Direction(1.0, phi)

    def test_propagator_composes_over_time(self):
        space = SpinSpace.from_j(6)
        propagator = propagator_for(Rotation("y", 0.9), space)
        for t1, t2 in ((0.3, 1.1), (2.0, -0.7)):
            self.assertLess(np.max(np.abs(propagator.unitary(t1) @ propagator.unitary(-t1) - np.eye(space.dim))), 1e-10)
            composed = propagator.unitary(t1) @ propagator.unitary(t2)
            self.assertLess(np.max(np.abs(propagator.unitary(t1 + t2) - composed)), 1e-10)

    def test_eigen_decomposition_reconstructs_large_hamiltonians(self):
        space = SpinSpace.from_j(100)
        for spec in (Rotation("x", 1.0), CatFlip(1.0)):
            hamiltonian = spinCore.build_hamiltonian(spec, space)
            propagator = diagonalize(hamiltonian, space)
            self.assertEqual(space.dim, 201)
            self.assertLess(np.linalg.norm(propagator.reconstruct() - hamiltonian), 1e-10)


class QuasiProbTests(TestCase):

    def test_grid_weights_cover_the_sphere(self):
        space = SpinSpace.from_j(3)
        for breaks in ((), (0.0,), (-1 / 3, 0.5)):
            grid = make_grid(space, 2, breaks)
            self.assertAlmostEqual(grid.weights.sum(), 4 * math.pi, places=11)
            ones = SphereDistribution(grid, np.ones(grid.n_nodes), FUNCTION)
            self.assertAlmostEqual(ones.integral(), 4 * math.pi, places=11)

    def test_grid_rejects_bad_parameters(self):
        space = SpinSpace.from_j(1)
        with self.assertRaises(ValueError):
            make_grid(space, 0)
        with self.assertRaises(ValueError):
            make_grid(space, 2, (1.0,))

    def test_q_function_is_normalised_and_positive(self):
        rng = np.random.default_rng(7)
        space = SpinSpace.from_j(3.5)
        grid = make_grid(space)
        q = q_function(random_density(space, rng), grid)
        self.assertAlmostEqual(q.integral(), 1.0, places=10)
        self.assertGreaterEqual(q.values.min(), -1e-12)

    def test_q_function_peak_of_the_top_level(self):
        space = SpinSpace.from_j(10)
        rho = DensityMatrix.from_state(pole_state(space, +1))
        peak = q_values_at(rho, [Direction(0.0)])[0]
        self.assertAlmostEqual(peak, 21 / (4 * math.pi), places=12)

    def test_pointwise_q_agrees_with_grid_values(self):
        rng = np.random.default_rng(11)
        space = SpinSpace.from_j(2.5)
        grid = make_grid(space)
        rho = random_density(space, rng)
        q = q_function(rho, grid)
        theta, phi = grid.node_angles()
        nodes = [Direction(t, p) for t, p in zip(theta[::17], phi[::17])]
        np.testing.assert_allclose(q_values_at(rho, nodes), q.flat[::17], atol=1e-12)

    def test_maximally_mixed_state_has_flat_q_and_p(self):
        space = SpinSpace.from_j(4)
        grid = make_grid(space)
        rho = DensityMatrix.maximally_mixed(space)
        np.testing.assert_allclose(q_function(rho, grid).values, 1 / (4 * math.pi), atol=1e-12)
        np.testing.assert_allclose(p_function(rho, grid).values, 1 / (4 * math.pi), atol=1e-9)

    def test_p_function_reconstructs_the_density_matrix(self):
        rng = np.random.default_rng(2024)
        for j in (1, 2.5, 5, 10):
            space = SpinSpace.from_j(j)
            grid = make_grid(space)
            for _ in range(5):
                rho = random_density(space, rng)
                rebuilt = coherent_mixture_operator(p_function(rho, grid))
                self.assertLess(np.linalg.norm(rebuilt - rho.entries), 1e-6)

    def test_coherent_mixture_of_a_constant_is_proportional_to_identity(self):
        space = SpinSpace.from_j(3)
        grid = make_grid(space)
        operator = coherent_mixture_operator(SphereDistribution(grid, np.ones(grid.n_nodes), FUNCTION))
        np.testing.assert_allclose(operator, 4 * math.pi / 7 * np.eye(7), atol=1e-12)

    def test_p_function_is_limited_to_moderate_spins(self):
        space = SpinSpace.from_j(20.5)
        rho = DensityMatrix.maximally_mixed(space)
        with self.assertRaises(ValueError):
            p_function(rho, make_grid(space, 1))

    def test_cat_and_mixture_share_their_q_function(self):
        space = SpinSpace.from_j(50)
        q_sup, q_mix = q_of_cat_pair(50, math.pi / 4, 1.0, make_grid(space))
        self.assertGreaterEqual(overlap(q_sup, q_mix), 1 - 1e-6)

    def test_cat_p_function_oscillates_while_q_stays_positive(self):
        space = SpinSpace.from_j(10)
        grid = make_grid(space)
        superposition = DensityMatrix.from_state(cat_state(space, 1.0, math.pi / 4))
        mixture = cat_mixture(space, 1.0, math.pi / 4)
        p_sup = p_function(superposition, grid)
        p_mix = p_function(mixture, grid)
        self.assertLess(p_sup.values.min(), 0.0)
        interference = p_sup.values - p_mix.values
        self.assertLess(interference.min(), 0.0)
        self.assertGreater(interference.max(), 0.0)
        np.testing.assert_allclose(interference[0], 0.0, atol=1e-6 * np.abs(p_mix.values).max())
        self.assertGreaterEqual(q_function(superposition, grid).values.min(), -1e-10)

    def test_mixture_at_time_zero_is_the_top_level(self):
        space = SpinSpace.from_j(3)
        grid = make_grid(space)
        p_mix = p_function(cat_mixture(space, 1.0, 0.0), grid)
        p_top = p_function(DensityMatrix.from_state(pole_state(space, +1)), grid)
        np.testing.assert_allclose(p_mix.values, p_top.values, atol=1e-9)

    def test_overlap_of_a_distribution_with_itself_is_one(self):
        space = SpinSpace.from_j(6)
        grid = make_grid(space)
        q = q_function(DensityMatrix.from_state(coherent_state(space, Direction(1.0, 2.0))), grid)
        self.assertAlmostEqual(overlap(q, q), 1.0, places=10)

    def test_coherent_states_resolve_the_identity(self):
        for j in (0.5, 5, 12.5, 20):
            space = SpinSpace.from_j(j)
            grid = make_grid(space)
            density = SphereDistribution(grid, np.full(grid.n_nodes, space.dim / (4 * math.pi)), FUNCTION)
            operator = coherent_mixture_operator(density)
            self.assertLess(np.max(np.abs(operator - np.eye(space.dim))), 1e-8)

    def test_coherent_states_on_one_meridian_overlap_as_a_power_of_the_half_angle(self):
        space = SpinSpace.from_j(10)
        for theta1, theta2 in ((0.3, 0.9), (1.2, 2.7), (0.0, math.pi / 2)):
            first = coherent_state(space, Direction(theta1, 0.8))
            second = coherent_state(space, Direction(theta2, 0.8))
            expected = math.cos((theta2 - theta1) / 2) ** 40
            self.assertAlmostEqual(fidelity(first, second), expected, places=12)

    def test_q_functions_of_opposite_poles_barely_overlap(self):
        space = SpinSpace.from_j(50)
        grid = make_grid(space)
        north = q_function(DensityMatrix.from_state(pole_state(space, +1)), grid)
        south = q_function(DensityMatrix.from_state(pole_state(space, -1)), grid)
        self.assertLess(overlap(north, south), 1e-10)

    def test_q_overlap_decays_with_angular_separation(self):
        space = SpinSpace.from_j(10)
        grid = make_grid(space)
        reference = q_function(DensityMatrix.from_state(coherent_state(space, Direction(0.4, 1.0))), grid)
        overlaps = [
            overlap(reference, q_function(DensityMatrix.from_state(coherent_state(space, Direction(0.4 + d, 1.0))), grid))
            for d in np.linspace(0.0, 2.5, 11)
        ]
        self.assertAlmostEqual(overlaps[0], 1.0, places=10)
        self.assertTrue(all(b < a for a, b in zip(overlaps, overlaps[1:])), overlaps)

    def test_overlap_rejects_mismatched_grids(self):
        space = SpinSpace.from_j(2)
        rho = DensityMatrix.maximally_mixed(space)
        with self.assertRaises(ValueError):
            overlap(q_function(rho, make_grid(space, 1)), q_function(rho, make_grid(space, 2)))

    def test_overlap_refuses_to_clip_real_negativity(self):
        space = SpinSpace.from_j(1)
        grid = make_grid(space)
        values = np.full(grid.n_nodes, 1 / (4 * math.pi))
        values[: grid.n_phi] = -1.0
        negative = SphereDistribution(grid, values, FUNCTION)
        with self.assertRaises(ContractViolation):
            overlap(negative, negative)

    def test_hemisphere_integral_of_the_top_level(self):
        space = SpinSpace.from_j(1)
        grid = make_grid(space, 2, (0.0,))
        q = q_function(DensityMatrix.from_state(pole_state(space, +1)), grid)
        self.assertAlmostEqual(integrate_region(q, PolarBand.hemisphere(north=True)), 7 / 8, places=12)
        self.assertAlmostEqual(integrate_region(q, PolarBand.hemisphere(north=False)), 1 / 8, places=12)

    def test_unaligned_grid_is_rebuilt_with_a_warning(self):
        space = SpinSpace.from_j(4)
        grid = make_grid(space)
        with self.assertLogs("Macroreal", level="WARNING"):
            rebuilt = aligned_grid(grid, (0.25,))
        self.assertEqual(rebuilt.breaks, (0.25,))
        self.assertIs(aligned_grid(rebuilt, (0.25,)), rebuilt)


class CoarseMeasureTests(TestCase):

    def test_hemisphere_weights_for_spin_one(self):
        weights = g_weights(hemisphere_partition(SpinSpace.from_j(1)))
        np.testing.assert_allclose(weights[1], [1 / 8, 1 / 2, 7 / 8], atol=1e-15)
        np.testing.assert_allclose(weights[0], [7 / 8, 1 / 2, 1 / 8], atol=1e-15)

    def test_povm_is_complete_for_random_partitions(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            space = SpinSpace(int(rng.integers(1, 201)))
            j = space.j
            n_cuts = int(rng.integers(1, 8))
            cuts = np.unique(rng.uniform(-j, j, size=n_cuts))
            cuts = cuts[(cuts > -j) & (cuts < j)]
            if not len(cuts):
                continue
            partition = SlotPartition(space, tuple(cuts))
            weights = g_weights(partition)
            self.assertLess(np.max(np.abs(weights.sum(axis=0) - 1)), 1e-12)
            self.assertGreaterEqual(weights.min(), 0.0)
            total = sum(element.matrix() for element in povm_elements(partition))
            self.assertLess(np.max(np.abs(total - np.eye(space.dim))), 1e-12)

    def test_uniform_partition_by_slot_size(self):
        space = SpinSpace.from_j(10)
        partition = uniform_partition(space, slot_size=3)
        self.assertEqual(partition.n_slots, 6)
        self.assertEqual(partition.cuts, (-7.0, -4.0, -1.0, 2.0, 5.0))
        self.assertAlmostEqual(partition.coarse_graining_ratio(), 3 / math.sqrt(10))
        with self.assertRaises(ValueError):
            uniform_partition(space, slot_size=21)
        with self.assertRaises(ValueError):
            uniform_partition(space, n_slots=1)
        with self.assertRaises(ValueError):
            uniform_partition(space, n_slots=2, slot_size=3)

    def test_special_partitions(self):
        space = SpinSpace.from_j(4)
        fine = fine_grained_partition(space)
        self.assertEqual(fine.n_slots, 9)
        np.testing.assert_allclose(g_weights(fine).sum(axis=0), 1.0, atol=1e-12)
        merged = merged_pole_partition(space)
        self.assertEqual(merged.cuts, (-2.0, 2.0))
        self.assertEqual(merged.labels, (0, 1, 0))
        self.assertEqual(merged.slot_of_pole(+1), merged.slot_of_pole(-1))

    def test_invalid_partitions_are_rejected(self):
        space = SpinSpace.from_j(5)
        for cuts in ((1.0, 0.0), (-5.0,), (0.0, 5.0), (1.0, 1.0)):
            with self.assertRaises(ValueError):
                SlotPartition(space, cuts)
        with self.assertRaises(ValueError):
            SlotPartition(space, (0.0,), labels=(0, 0))

    def test_measurement_probabilities_and_updated_states(self):
        rng = np.random.default_rng(5)
        space = SpinSpace.from_j(6)
        rho = random_density(space, rng)
        outcomes = measure(rho, uniform_partition(space, n_slots=3))
        self.assertAlmostEqual(sum(o.probability for o in outcomes), 1.0, places=12)
        for outcome in outcomes:
            self.assertAlmostEqual(np.trace(outcome.state.entries).real, 1.0, places=12)

    def test_negligible_outcomes_are_dropped(self):
        space = SpinSpace.from_j(30)
        outcomes = measure(DensityMatrix.from_state(pole_state(space, +1)), hemisphere_partition(space))
        self.assertEqual(len(outcomes), 1)
        self.assertEqual(outcomes.dropped, (0,))
        self.assertEqual(outcomes[0].slot, 1)

    def test_classical_route_matches_operator_route(self):
        rng = np.random.default_rng(8)
        space = SpinSpace.from_j(7.5)
        rho = random_density(space, rng)
        for partition in (uniform_partition(space, n_slots=3), merged_pole_partition(space)):
            expected = np.zeros(partition.n_slots)
            for outcome in measure(rho, partition):
                expected[outcome.slot] = outcome.probability
            grid = make_grid(space, 2, partition.cos_cuts)
            np.testing.assert_allclose(classical_outcome_probs(rho, partition, grid), expected, atol=1e-8)

    def test_measuring_a_cat_leaves_nearly_a_pole(self):
        space = SpinSpace.from_j(20)
        cat = DensityMatrix.from_state(cat_state(space, 1.0, math.pi / 4))
        outcomes = measure(cat, hemisphere_partition(space))
        self.assertEqual(sorted(o.slot for o in outcomes), [0, 1])
        for outcome in outcomes:
            self.assertAlmostEqual(outcome.probability, 0.5, places=10)
            pole = DensityMatrix.from_state(pole_state(space, +1 if outcome.slot == 1 else -1))
            trace_distance = 0.5 * np.abs(np.linalg.eigvalsh(outcome.state.entries - pole.entries)).sum()
            self.assertLess(trace_distance, 1e-5)

    def test_repeated_measurement_repeats_the_slot(self):
        space = SpinSpace.from_j(50)
        partition = uniform_partition(space, slot_size=4 * math.sqrt(50) + 1)
        lo, hi = partition.band_edges(1)
        centre = Direction(math.acos((lo + hi) / 2 / space.j))
        first = {o.slot: o for o in measure(DensityMatrix.from_state(coherent_state(space, centre)), partition)}
        again = {o.slot: o.probability for o in measure(first[1].state, partition)}
        self.assertGreaterEqual(again[1], 0.97)

    def test_decoherence_removes_coherence_between_the_poles(self):
        space = SpinSpace.from_j(20)
        cat = DensityMatrix.from_state(cat_state(space, 1.0, math.pi / 4))
        decohered = decohere(cat, hemisphere_partition(space))
        self.assertLess(abs(decohered.entries[0, -1]), 1e-6)
        self.assertAlmostEqual(decohered.entries[-1, -1].real, 0.5, places=12)


class MacrorealLabTests(TestCase):

    def test_two_level_projective_lgi_reaches_one_and_a_half(self):
        space = SpinSpace.from_j(0.5)
        propagator = propagator_for(TwoLevel(1.0, (-0.5, 0.5)), space)
        psi0 = StateVector(space, np.array([1, 1]) / math.sqrt(2))
        for x in (math.pi / 3, 5 * math.pi / 3):
            result = lgi_projective(propagator, psi0, x)
            self.assertAlmostEqual(result.k, 1.5, delta=1e-9)
            self.assertTrue(result.violated)
        for x in np.linspace(0, 2 * math.pi, 25):
            self.assertAlmostEqual(lgi_projective(propagator, psi0, x).k, two_level_k(1.0, x), delta=1e-9)

    def test_projective_cat_flip_follows_the_doubled_frequency_curve(self):
        space = SpinSpace.from_j(5)
        propagator = propagator_for(CatFlip(1.0), space)
        psi0 = pole_state(space, +1)
        for dt in (0.1, math.pi / 6, 1.2):
            result = lgi_projective(propagator, psi0, dt)
            self.assertAlmostEqual(result.k, two_level_k(2.0, dt), delta=1e-9)
            self.assertAlmostEqual(result.metadata["closed_form_k"], lgi_closed_form(propagator, psi0, dt), places=12)

    def test_cat_coarse_correlators(self):
        space = SpinSpace.from_j(20)
        propagator = propagator_for(CatFlip(1.0), space)
        partition = hemisphere_partition(space)
        rho0 = DensityMatrix.from_state(pole_state(space, +1))
        for dt in np.linspace(0.0, math.pi, 50):
            result, _ = lgi_coarse(propagator, rho0, partition, (0.0, dt, 2 * dt))
            self.assertAlmostEqual(result.c12, math.cos(2 * dt), delta=1e-6)
            self.assertAlmostEqual(result.c23, math.cos(2 * dt), delta=1e-6)
            self.assertAlmostEqual(result.c13, math.cos(4 * dt), delta=1e-6)
        peak, _ = lgi_coarse(propagator, rho0, partition, (0.0, math.pi / 6, math.pi / 3))
        self.assertAlmostEqual(peak.k, 1.5, delta=1e-6)

    def test_rotation_keeps_coarse_lgi_satisfied_for_large_spins(self):
        for j in (10, 20, 50, 100):
            space = SpinSpace.from_j(j)
            propagator = propagator_for(Rotation("x", 1.0), space)
            psi0 = coherent_state(space, Direction(math.pi / 2 + 0.3, math.pi / 2))
            dt = math.pi / 3
            result, _ = lgi_coarse(propagator, psi0, hemisphere_partition(space), (0.0, dt, 2 * dt))
            self.assertLessEqual(result.k, 1.05, j)

    def test_frozen_dynamics_give_the_classical_bound(self):
        space = SpinSpace.from_j(20)
        propagator = propagator_for(Rotation("x", 0.0), space)
        result, table = lgi_coarse(propagator, pole_state(space, +1), hemisphere_partition(space), (0.0, 0.4, 0.8))
        for correlator in (result.c12, result.c23, result.c13):
            self.assertAlmostEqual(correlator, 1.0, delta=1e-3)
        self.assertAlmostEqual(result.k, 1.0, delta=1e-3)
        self.assertEqual(result.c12, table.correlator(1, 2))

    def test_energy_eigenstate_never_violates(self):
        space = SpinSpace.from_j(0.5)
        propagator = propagator_for(TwoLevel(1.0, (-0.5, 0.5)), space)
        self.assertAlmostEqual(lgi_projective(propagator, pole_state(space, +1), 0.7).k, 1.0, places=12)

    def test_lgi_requires_ordered_times(self):
        space = SpinSpace.from_j(1)
        propagator = propagator_for(CatFlip(1.0), space)
        with self.assertRaises(ValueError):
            lgi_coarse(propagator, pole_state(space, +1), hemisphere_partition(space), (0.0, 1.0, 0.5))
        with self.assertRaises(ValueError):
            lgi_coarse(propagator, pole_state(space, +1), uniform_partition(space, n_slots=3), (0.0, 0.5, 1.0))

    def test_path_table_is_classical_when_dynamics_commute_with_the_measurement(self):
        space = SpinSpace.from_j(10)
        propagator = propagator_for(Rotation("z", 1.0), space)
        table = path_table(propagator, coherent_state(space, Direction(1.0, 0.3)), hemisphere_partition(space), (0.2, 0.9, 1.7))
        self.assertLess(table.path_residual(), 1e-12)
        self.assertAlmostEqual(sum(table.sequences.values()), 1.0, places=12)
        for statistics in table.pairs.values():
            self.assertAlmostEqual(sum(statistics.values()), 1.0, places=12)

    def test_path_table_exposes_the_cat_flip(self):
        space = SpinSpace.from_j(20)
        propagator = propagator_for(CatFlip(1.0), space)
        dt = math.pi / 6
        table = path_table(propagator, pole_state(space, +1), hemisphere_partition(space), (0.0, dt, 2 * dt))
        self.assertGreater(table.path_residual(), 0.3)
        self.assertAlmostEqual(table.correlator(1, 2), math.cos(2 * dt), delta=1e-6)
        self.assertEqual(len(table.to_records()), 12 + 8)

    def test_border_overlap_is_independent_of_spin_length(self):
        for j in (10, 50, 100):
            space = SpinSpace.from_j(j)
            partition = hemisphere_partition(space)
            rho = DensityMatrix.from_state(coherent_state(space, Direction(math.pi / 2, 0.0)))
            report = mixture_condition(rho, partition, make_grid(space, 2, partition.cos_cuts))
            self.assertAlmostEqual(report.score, 0.997, delta=0.002)

    def test_mixture_condition_holds_inside_a_slot_and_for_the_cat(self):
        space = SpinSpace.from_j(50)
        partition = hemisphere_partition(space)
        grid = make_grid(space, 2, partition.cos_cuts)
        inside = DensityMatrix.from_state(coherent_state(space, Direction(0.5, 1.0)))
        self.assertTrue(mixture_condition(inside, partition, grid).passed)
        cat = DensityMatrix.from_state(cat_state(space, 1.0, math.pi / 4))
        self.assertGreaterEqual(mixture_condition(cat, partition, grid).score, 1 - 1e-6)

    def test_evolution_condition_separates_rotation_from_cat_flip(self):
        space = SpinSpace.from_j(20)
        partition = hemisphere_partition(space)
        grid = make_grid(space, 2, partition.cos_cuts)
        rotation = propagator_for(Rotation("x", 1.0), space)
        start = coherent_state(space, Direction(0.5, math.pi / 2))
        self.assertTrue(evolution_condition(start, rotation, partition, 0.2, 0.8, grid).passed)
        flip = propagator_for(CatFlip(1.0), space)
        report = evolution_condition(pole_state(space, +1), flip, partition, math.pi / 4, math.pi / 2, grid)
        self.assertFalse(report.passed)
        self.assertAlmostEqual(report.score, 1 / math.sqrt(2), delta=0.01)
        self.assertIn("theta", report.witness)

    def test_sufficient_condition_separates_rotation_from_cat_flip(self):
        space = SpinSpace.from_j(20)
        partition = hemisphere_partition(space)
        times = np.linspace(0, 2 * math.pi, 33)
        directions = [Direction(t, p) for t in np.linspace(0, math.pi, 13) for p in (0, math.pi / 2, math.pi, 3 * math.pi / 2)]

        rotation = sufficient_condition(propagator_for(Rotation("x", 1.0), space), partition, times, directions)
        self.assertEqual(rotation.condition, "sufficient")
        self.assertTrue(rotation.passed)
        self.assertGreater(rotation.witness["excluded"], 0)

        cat = sufficient_condition(propagator_for(CatFlip(1.0), space), partition, times, directions)
        self.assertFalse(cat.passed)
        self.assertAlmostEqual(cat.score, 0.5, delta=0.05)
        self.assertAlmostEqual(1 - cat.score, cat.witness["deviation"], places=12)
        for key in ("t", "theta", "phi"):
            self.assertIn(key, cat.witness)

    def test_sufficient_condition_matches_the_classifier(self):
        space = SpinSpace.from_j(10)
        partition = hemisphere_partition(space)
        times = np.linspace(0, math.pi, 9)
        directions = [Direction(t, p) for t in np.linspace(0, math.pi, 7) for p in (0, math.pi / 2)]
        report = sufficient_condition(propagator_for(Rotation("y", 1.0), space), partition, times, directions)
        verdict = classify_hamiltonian(Rotation("y", 1.0), partition, times, directions)
        self.assertAlmostEqual(report.score, 1 - verdict.max_deviation, places=12)
        self.assertEqual(report.witness["samples"], verdict.n_samples)
        with self.assertRaises(ValueError):
            sufficient_condition(propagator_for(Rotation("y", 1.0), space), partition, [], directions)

    def test_classicality_conditions_imply_one_another_for_a_rotation(self):
        space = SpinSpace.from_j(20)
        partition = hemisphere_partition(space)
        grid = make_grid(space, 2, partition.cos_cuts)
        propagator = propagator_for(Rotation("x", 1.0), space)
        times = np.linspace(0, 2 * math.pi, 33)
        directions = [Direction(t, p) for t in np.linspace(0, math.pi, 13) for p in (0, math.pi / 2, math.pi, 3 * math.pi / 2)]

        sufficient = sufficient_condition(propagator, partition, times, directions)
        self.assertTrue(sufficient.passed)
        evolution = evolution_condition(coherent_state(space, Direction(0.5, math.pi / 2)), propagator, partition, 0.2, 0.8, grid)
        self.assertTrue(evolution.passed)
        psi0 = coherent_state(space, Direction(math.pi / 2 + 0.3, math.pi / 2))
        result, _ = lgi_coarse(propagator, psi0, partition, (0.0, math.pi / 3, 2 * math.pi / 3))
        self.assertLessEqual(result.k, 1.05)

    def test_lgi_never_exceeds_the_quantum_bound(self):
        cases = [
            (SpinSpace.from_j(0.5), TwoLevel(1.0, (-0.5, 0.5))),
            (SpinSpace.from_j(5), CatFlip(1.0)),
            (SpinSpace.from_j(20), CatFlip(0.7)),
            (SpinSpace.from_j(10), Rotation("x", 1.0)),
        ]
        for space, spec in cases:
            propagator = propagator_for(spec, space)
            psi0 = pole_state(space, +1) if space.dim > 2 else StateVector(space, np.array([1, 1]) / math.sqrt(2))
            for dt in np.linspace(0.0, 2 * math.pi, 41):
                self.assertLessEqual(lgi_projective(propagator, psi0, dt).k, 1.5 + 1e-9)
                result, _ = lgi_coarse(propagator, psi0, hemisphere_partition(space), (0.0, dt, 2 * dt))
                self.assertLessEqual(result.k, 1.5 + 1e-9)

    def test_correlators_are_unchanged_when_both_labels_flip(self):
        space = SpinSpace.from_j(10)
        propagator = propagator_for(Rotation("x", 1.0), space)
        rho0 = DensityMatrix.from_state(coherent_state(space, Direction(0.7, 0.2)))
        instrument = macrorealLab._dichotomic_instrument(hemisphere_partition(space))
        flipped = {-label: kraus for label, kraus in instrument.items()}
        for times in ((0.0, 0.6), (0.3, 1.9), (1.0, 1.0)):
            statistics = macrorealLab._sequence_statistics(propagator, rho0, instrument, times)
            relabelled = macrorealLab._sequence_statistics(propagator, rho0, flipped, times)
            for (a, b), probability in statistics.items():
                self.assertAlmostEqual(relabelled[(-a, -b)], probability, places=14)
            self.assertAlmostEqual(
                macrorealLab._correlator(relabelled), macrorealLab._correlator(statistics), places=14
            )

    def test_sharp_measurement_tells_cat_from_mixture(self):
        space = SpinSpace.from_j(50)
        psi = cat_state(space, 1.0, math.pi / 4)
        distance = sharp_observable_statistics(DensityMatrix.from_state(psi), cat_mixture(space, 1.0, math.pi / 4), psi)
        self.assertGreater(distance, 0.4)

    def test_classification_verdicts(self):
        space = SpinSpace.from_j(20)
        times = np.linspace(0, 2 * math.pi, 33)
        directions = [Direction(t, p) for t in np.linspace(0, math.pi, 13) for p in (0, math.pi / 2, math.pi, 3 * math.pi / 2)]
        hemisphere = hemisphere_partition(space)
        rotation = classify_hamiltonian(Rotation("x", 1.0), hemisphere, times, directions)
        self.assertTrue(rotation.classical)
        self.assertGreater(rotation.n_excluded, 0)
        cat = classify_hamiltonian(CatFlip(1.0), hemisphere, times, directions)
        self.assertFalse(cat.classical)
        self.assertGreaterEqual(cat.max_deviation, 0.45)
        self.assertLessEqual(cat.max_deviation, 0.55)
        merged = classify_hamiltonian(CatFlip(1.0), merged_pole_partition(space), times, directions)
        self.assertTrue(merged.classical)

    def test_pole_state_stays_in_its_slot_without_dynamics(self):
        space = SpinSpace.from_j(20)
        propagator = propagator_for(Rotation("z", 1.0), space)
        self.assertLess(classicality_deviation(propagator, hemisphere_partition(space), 3.0, Direction(0.0)), 1e-9)


class QubitCircuitTests(TestCase):

    def test_cnot_truth_table(self):
        for before, after in (("00", "00"), ("01", "01"), ("10", "11"), ("11", "10")):
            register = apply_cnot(QubitRegister.basis(before), 1, 2)
            self.assertEqual(register.amplitude(after), 1.0)

    def test_anti_controlled_not_flips_on_zero(self):
        register = apply_cnot(QubitRegister.basis("01"), 1, 2, control_state=0)
        self.assertEqual(register.amplitude("00"), 1.0)

    def test_rotation_convention(self):
        register = apply_rotation(QubitRegister.basis("1"), 1, 0.3)
        self.assertAlmostEqual(register.amplitude("1").real, math.cos(0.3), places=14)
        self.assertAlmostEqual(register.amplitude("0").real, math.sin(0.3), places=14)

    def test_invalid_gates_are_rejected(self):
        register = QubitRegister.basis("000")
        with self.assertRaises(ValueError):
            apply_rotation(register, 0, 0.1)
        with self.assertRaises(ValueError):
            apply_rotation(register, 4, 0.1)
        with self.assertRaises(ValueError):
            apply_cnot(register, 2, 2)
        with self.assertRaises(ValueError):
            QubitRegister(qubitCircuit.MAX_QUBITS + 1)

    def test_cat_protocol_fidelity_and_gate_counts(self):
        register, log, fidelities = simulate_cat_protocol(10, math.pi / 40, 20)
        self.assertGreaterEqual(min(fidelities), 1 - 1e-9)
        self.assertEqual(log.counts_per_interval(), [10] + [19] * 19)
        self.assertAlmostEqual(register.norm(), 1.0, places=12)

    def test_single_interval_on_three_qubits(self):
        register, log, _ = simulate_cat_protocol(3, math.pi / 6, 1)
        self.assertEqual(len(log.gates), 3)
        self.assertAlmostEqual(register.amplitude("111").real, math.cos(math.pi / 6), places=14)
        self.assertAlmostEqual(register.amplitude("000").real, math.sin(math.pi / 6), places=14)

    def test_quarter_turn_ends_in_all_zeros(self):
        register, _, _ = simulate_cat_protocol(5, math.pi / 8, 4)
        self.assertAlmostEqual(abs(register.amplitude("00000")), 1.0, places=12)

    def test_cat_protocol_needs_two_qubits(self):
        with self.assertRaises(ValueError):
            simulate_cat_protocol(1, 0.1, 2)

    def test_register_matches_the_spin_cat_flip(self):
        for intervals in (7, 20):
            register, _, _ = simulate_cat_protocol(10, math.pi / 40, intervals)
            up, down = cat_subspace_amplitudes(register)
            spin = cat_state(SpinSpace.from_j(5), 1.0, intervals * math.pi / 40).amplitudes
            self.assertLess(abs(up - spin[-1]), 1e-9)
            self.assertLess(abs(down - spin[0]), 1e-9)

    def test_gate_log_replays_bit_exactly(self):
        register, log, _ = simulate_cat_protocol(6, 0.37, 5)
        restored = GateLog.from_json_lines(log.to_json_lines())
        replayed = restored.replay(QubitRegister.basis("111111"))
        self.assertTrue(np.array_equal(replayed.amplitudes, register.amplitudes))

    def test_gate_count_scaling_is_linear(self):
        table = gate_count_scaling([4, 8, 16], 20, math.pi / 40)
        self.assertEqual(table.steady_counts(), {4: 7, 8: 15, 16: 31})
        self.assertAlmostEqual(table.slope, 2.0, places=9)

    def test_single_interval_costs_one_gate_per_qubit(self):
        table = gate_count_scaling([4, 8], 1)
        self.assertEqual(table.rows, ((4, 1, 4), (8, 1, 8)))
        self.assertAlmostEqual(table.slope, 1.0, places=9)

    def test_single_register_size_has_no_slope(self):
        table = gate_count_scaling([4], 5)
        self.assertEqual([gates for _, _, gates in table.rows], [4, 7, 7, 7, 7])
        self.assertIsNone(table.slope)

    def test_global_rotation_counts_one_step(self):
        register = simulate_global_rotation(5, 0.8)
        self.assertEqual(len(register.log.gates), 5)
        self.assertEqual(register.log.global_steps, 1)
        self.assertAlmostEqual(register.amplitude("11111").real, math.cos(0.8) ** 5, places=12)

    def test_global_rotation_is_the_tensor_power(self):
        omega_dt = 0.3
        single = np.array([math.sin(omega_dt), math.cos(omega_dt)])
        expected = single
        for _ in range(3):
            expected = np.kron(expected, single)
        register = simulate_global_rotation(4, omega_dt)
        self.assertLess(np.max(np.abs(register.amplitudes - expected)), 1e-12)
        self.assertTrue(np.array_equal(simulate_global_rotation(4, 0.0).amplitudes, QubitRegister.basis("1111").amplitudes))

    def test_global_rotation_on_two_qubits_spreads_weight_evenly(self):
        register = simulate_global_rotation(2, math.pi / 4)
        for bits in ("00", "01", "10", "11"):
            self.assertAlmostEqual(abs(register.amplitude(bits)) ** 2, 0.25, places=12)

    def test_product_state_differs_from_the_cat(self):
        for n in (2, 5, 8):
            for omega_dt in (0.2, math.pi / 4, 1.3):
                product = simulate_global_rotation(n, omega_dt).amplitudes
                overlap = np.vdot(cat_target(n, omega_dt), product).real
                expected = math.cos(omega_dt) ** (n + 1) + math.sin(omega_dt) ** (n + 1)
                self.assertAlmostEqual(overlap, expected, places=12)
                self.assertLess(overlap, 1.0)


class ExperimentCommandTests(TestCase):

    def run_command(self, name, *args):
        out = StringIO()
        with patch.object(experiments.logger, "info"):
            call_command(name, *args, stdout=out)
        return out.getvalue()

    def read_csv(self, path):
        with open(path, "r", encoding="utf-8") as csv_file:
            return list(csv.reader(csv_file))

    def read_manifest(self, run_dir):
        with open(os.path.join(run_dir, "manifest.json"), "r", encoding="utf-8") as manifest_file:
            return json.load(manifest_file)

    def write_config(self, temp_dir, config):
        path = os.path.join(temp_dir, "config.json")
        with open(path, "w", encoding="utf-8") as config_file:
            json.dump(config, config_file)
        return path

    def test_two_level_preset_writes_scan_and_manifest(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            output = self.run_command("lgi_scan", "--preset", "two-level-lgi", "--out", temp_dir)
            rows = self.read_csv(os.path.join(temp_dir, "lgi_scan.csv"))
            manifest = self.read_manifest(temp_dir)

        self.assertIn("Wrote lgi_scan.csv", output)
        self.assertEqual(rows[0], ["dt", "C12", "C23", "C13", "K", "protocol", "K_two_level"])
        self.assertEqual(len(rows), 401)
        self.assertTrue(manifest["passed"])
        self.assertEqual({check["name"] for check in manifest["checks"]}, {"max_k", "overlay_agreement"})
        self.assertEqual(manifest["outputs"], ["lgi_scan.csv"])

    def test_scan_is_deterministic_across_thread_counts(self):
        with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
            self.run_command("lgi_scan", "--preset", "cat-lgi", "--out", first)
            self.run_command("lgi_scan", "--preset", "cat-lgi", "--out", second, "--threads", "4")
            with open(os.path.join(first, "lgi_scan.csv"), "rb") as a, open(os.path.join(second, "lgi_scan.csv"), "rb") as b:
                self.assertEqual(a.read(), b.read())
            self.assertEqual(self.read_manifest(second)["config"]["threads"], 4)

    def test_manifest_config_reruns_to_identical_output(self):
        with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
            self.run_command("lgi_scan", "--preset", "cat-lgi", "--out", first)
            config_path = self.write_config(second, self.read_manifest(first)["config"])
            self.run_command("lgi_scan", "--config", config_path, "--out", second)
            with open(os.path.join(first, "lgi_scan.csv"), "rb") as a, open(os.path.join(second, "lgi_scan.csv"), "rb") as b:
                self.assertEqual(a.read(), b.read())

    def test_empty_time_grid_is_a_config_error(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            config_path = self.write_config(temp_dir, {
                "j": 1, "hamiltonian": {"kind": "cat-flip"}, "n_points": 0,
            })
            with self.assertRaises(CommandError) as raised:
                self.run_command("lgi_scan", "--config", config_path, "--out", temp_dir)
        self.assertEqual(raised.exception.returncode, 1)
        self.assertIn("n_points", str(raised.exception))

    def test_unknown_config_fields_are_rejected(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            config_path = self.write_config(temp_dir, {"j": 1, "hamiltonian": {"kind": "cat-flip"}, "colour": "red"})
            with self.assertRaises(CommandError) as raised:
                self.run_command("lgi_scan", "--config", config_path, "--out", temp_dir)
        self.assertEqual(raised.exception.returncode, 1)
        self.assertIn("colour", str(raised.exception))

    def test_negative_threshold_is_rejected(self):
        with self.assertRaises(forms.ValidationError):
            experiments.load_config("classify", preset="rotation-classical", overrides={"threshold": -0.1})

    def test_preset_must_belong_to_the_command(self):
        with self.assertRaises(forms.ValidationError):
            experiments.load_config("classify", preset="cat-lgi")

    def test_contract_violation_exits_with_code_two(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            with patch("macrorealapp.experiments.lgi_projective", side_effect=ContractViolation("broken")):
                with self.assertRaises(CommandError) as raised:
                    self.run_command("lgi_scan", "--preset", "two-level-lgi", "--out", temp_dir)
        self.assertEqual(raised.exception.returncode, 2)

    def test_failed_check_exits_with_code_two(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            config_path = self.write_config(temp_dir, {"expect": {"max_k_range": [2.0, 3.0]}})
            with self.assertRaises(CommandError) as raised:
                self.run_command("lgi_scan", "--preset", "cat-lgi", "--config", config_path, "--out", temp_dir)
            manifest = self.read_manifest(temp_dir)
        self.assertEqual(raised.exception.returncode, 2)
        self.assertFalse(manifest["passed"])

    def test_phase_space_preset_renders_four_distributions(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            self.run_command("qpf_render", "--preset", "cat-phase-space", "--out", temp_dir)
            manifest = self.read_manifest(temp_dir)
            p_sup = self.read_csv(os.path.join(temp_dir, "p_sup.csv"))

        self.assertEqual(
            sorted(manifest["outputs"]),
            ["p_mix.csv", "p_sup.csv", "q_mix.csv", "q_sup.csv", "summary.json"],
        )
        self.assertTrue(manifest["passed"])
        self.assertEqual(p_sup[0], ["theta", "phi", "weight", "value"])

    def test_small_render_has_normalised_q_files(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            config_path = self.write_config(temp_dir, {"j": 1, "omega_t": 0.4})
            self.run_command("qpf_render", "--config", config_path, "--out", temp_dir)
            for name in ("q_sup.csv", "q_mix.csv"):
                rows = self.read_csv(os.path.join(temp_dir, name))[1:]
                total = sum(float(weight) * float(value) for _, _, weight, value in rows)
                self.assertAlmostEqual(total, 1.0, delta=1e-8)

    def test_render_rejects_large_spins(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            config_path = self.write_config(temp_dir, {"j": 25})
            with self.assertRaises(CommandError) as raised:
                self.run_command("qpf_render", "--config", config_path, "--out", temp_dir)
        self.assertEqual(raised.exception.returncode, 1)

    def test_classify_presets(self):
        for preset in ("rotation-classical", "cat-classify"):
            with tempfile.TemporaryDirectory() as temp_dir:
                self.run_command("classify", "--preset", preset, "--out", temp_dir)
                manifest = self.read_manifest(temp_dir)
                with open(os.path.join(temp_dir, "classification.json"), "r", encoding="utf-8") as report_file:
                    reports = json.load(report_file)["reports"]
            self.assertTrue(manifest["passed"], manifest["checks"])
            self.assertEqual(len(reports), len(manifest["config"]["partitions"]))

    def test_cond_check_border_preset(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            self.run_command("cond_check", "--preset", "border-overlap", "--out", temp_dir)
            manifest = self.read_manifest(temp_dir)
        self.assertTrue(manifest["passed"], manifest["checks"])

    def test_circuit_scaling_preset(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            self.run_command("circuit_bench", "--preset", "circuit-scaling", "--out", temp_dir)
            manifest = self.read_manifest(temp_dir)
            counts = self.read_csv(os.path.join(temp_dir, "gate_counts.csv"))

        self.assertTrue(manifest["passed"], manifest["checks"])
        self.assertIn("gates_n16.jsonl", manifest["outputs"])
        self.assertIn("spin_mapping", {check["name"] for check in manifest["checks"]})
        self.assertEqual(counts[0], ["n", "interval", "gates"])
        self.assertEqual(counts[-1], ["16", "20", "31"])

    def test_circuit_bench_reports_the_global_rotation(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            config_path = self.write_config(temp_dir, {"n_qubits": [5], "intervals": 1, "omega_dt": 0.4})
            self.run_command("circuit_bench", "--config", config_path, "--out", temp_dir)
            with open(os.path.join(temp_dir, "scaling.json"), "r", encoding="utf-8") as scaling_file:
                scaling = json.load(scaling_file)
            counts = self.read_csv(os.path.join(temp_dir, "gate_counts.csv"))

        self.assertEqual(scaling["global_rotation"], [{"n": 5, "global_steps": 1, "gates": 5}])
        self.assertIsNone(scaling["slope"])
        self.assertEqual(counts[1:], [["5", "1", "5"]])

    def test_parallel_map_preserves_order(self):
        self.assertEqual(experiments.parallel_map(lambda x: x * x, range(10), threads=3), [x * x for x in range(10)])


class PersistenceAndMaintenanceTests(TestCase):

    def test_lab_logger_configuration_is_idempotent(self):
        handler_count = len(lab_models.logger.handlers)

        lab_models.configure_lab_logger()

        self.assertEqual(len(lab_models.logger.handlers), handler_count)

    def test_write_text_file_atomic_creates_readable_file(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            path = os.path.join(temp_dir, "nested", "gates.jsonl")

            lab_models.write_text_file_atomic(path, '{"kind": "cnot"}\n')

            with open(path, "r", encoding="utf-8") as text_file:
                self.assertEqual(text_file.read(), '{"kind": "cnot"}\n')

    @patch("macrorealapp.models.os.replace", side_effect=OSError("replace failed"))
    def test_write_text_file_atomic_removes_temp_file_on_replace_failure(self, mock_replace):
        with tempfile.TemporaryDirectory() as temp_dir:
            path = os.path.join(temp_dir, "nested", "manifest.json")

            with self.assertRaises(OSError):
                lab_models.write_json_file_atomic(path, {"passed": True})

            temp_path = mock_replace.call_args.args[0]
            self.assertFalse(os.path.exists(temp_path))

    def test_json_writer_accepts_numpy_values(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            path = os.path.join(temp_dir, "report.json")

            lab_models.write_json_file_atomic(path, {"k": np.float64(1.5), "n": np.int64(3), "ok": np.bool_(True)})

            with open(path, "r", encoding="utf-8") as json_file:
                self.assertEqual(json.load(json_file), {"k": 1.5, "n": 3, "ok": True})

    def test_csv_floats_round_trip_exactly(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            path = os.path.join(temp_dir, "scan.csv")

            lab_models.write_csv_file_atomic(path, ["dt", "K"], [(0.1 + 0.2, np.float64(1 / 3))])

            with open(path, "r", encoding="utf-8") as csv_file:
                self.assertEqual(csv_file.read(), "dt,K\n0.30000000000000004,0.3333333333333333\n")

    def test_output_paths_cannot_escape_the_run_directory(self):
        for malicious_name in ("../../../etc/passwd", "nested/../../secret.csv", "/etc/passwd"):
            path = lab_models.output_path("/tmp/run", malicious_name)
            self.assertEqual(os.path.dirname(path), "/tmp/run")
            self.assertNotIn("..", path)

    def test_manifest_records_checks_and_outputs(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            manifest = lab_models.RunManifest("lgi_scan", {"j": 1.0}, preset=None)
            manifest.add_output(os.path.join(temp_dir, "lgi_scan.csv"))
            with patch.object(manifest.logger, "log"):
                manifest.add_check("max_k", 1.5, [1.49, 1.5], True)
                manifest.add_check("overlay_agreement", 0.1, 1e-9, False)
            manifest.write(temp_dir)
            with open(os.path.join(temp_dir, "manifest.json"), "r", encoding="utf-8") as manifest_file:
                written = json.load(manifest_file)

        self.assertEqual(written["outputs"], ["lgi_scan.csv"])
        self.assertFalse(written["passed"])
        self.assertEqual(manifest.failed_checks(), ["overlay_agreement"])
        self.assertIn("duration_seconds", written)

    def write_run(self, root, name, manifest):
        run_dir = os.path.join(root, name)
        os.makedirs(run_dir)
        if manifest is not None:
            with open(os.path.join(run_dir, "manifest.json"), "w", encoding="utf-8") as manifest_file:
                json.dump(manifest, manifest_file)
        return run_dir

    def test_cleanup_runs_dry_run_and_delete(self):
        now = datetime.now(timezone.utc)
        with tempfile.TemporaryDirectory() as temp_dir:
            old_dir = self.write_run(temp_dir, "lgi_scan-old", {
                "command": "lgi_scan", "started": (now - timedelta(days=40)).isoformat(),
            })
            new_dir = self.write_run(temp_dir, "lgi_scan-new", {
                "command": "lgi_scan", "started": (now - timedelta(days=2)).isoformat(),
            })
            # file times must not matter, only the recorded start
            stale_time = time.time() - (90 * 24 * 60 * 60)
            os.utime(os.path.join(new_dir, "manifest.json"), (stale_time, stale_time))

            out = StringIO()
            with patch.object(cleanup_runs, "RESULTS_ROOT", temp_dir):
                call_command("cleanup_runs", "--older-than-days", "30", "--dry-run", stdout=out)
                self.assertTrue(os.path.isdir(old_dir))
                self.assertIn("Would remove", out.getvalue())

                call_command("cleanup_runs", "--older-than-days", "30", stdout=StringIO())

            self.assertFalse(os.path.exists(old_dir))
            self.assertTrue(os.path.exists(new_dir))

    def test_cleanup_runs_leaves_folders_without_a_manifest(self):
        started = (datetime.now(timezone.utc) - timedelta(days=100)).isoformat()
        with tempfile.TemporaryDirectory() as temp_dir:
            bare_dir = self.write_run(temp_dir, "notes", None)
            broken_dir = self.write_run(temp_dir, "classify-broken", {"command": "classify"})
            other_dir = self.write_run(temp_dir, "classify-old", {"command": "classify", "started": started})
            scan_dir = self.write_run(temp_dir, "lgi_scan-old", {"command": "lgi_scan", "started": started})

            out = StringIO()
            with patch.object(cleanup_runs, "RESULTS_ROOT", temp_dir):
                call_command("cleanup_runs", "--older-than-days", "30", "--command", "lgi_scan", stdout=out)

            self.assertTrue(os.path.isdir(bare_dir))
            self.assertTrue(os.path.isdir(broken_dir))
            self.assertTrue(os.path.isdir(other_dir))
            self.assertFalse(os.path.exists(scan_dir))
            self.assertIn("no readable run manifest", out.getvalue())
            self.assertIn("Removed 1 run folder(s); skipped 3.", out.getvalue())
