import numpy as np
import pytest

from scream.control import ControlConfig, run_scream_control
from scream.dac import ClosedLoop, QuadraticTrackingCost, lipschitz_constants
from scream.lds import DisturbanceGenerator, LinearSystem, certify_strong_stability, preset
from scream.oco import ContractViolation
from scream.sysid import (IdentificationConfig, InsufficientExcitation, default_exploration_rounds,
                          identify_system, moments_from_exploration, run_unknown_pipeline,
                          smallest_controllability_index)


def scalar_plant():
    return LinearSystem(np.array([[0.5]]), np.array([[1.0]]), w_bound=0.0)


class TestIdentification:
    def test_noiseless_scalar_moments_converge(self):
        # N_j -> A^j B = 0.5^j as the exploration budget grows
        plant = scalar_plant()
        K = np.zeros((1, 1))
        errors = []
        for T0 in (1000, 8000, 64000):
            _, moments = identify_system(plant, K, IdentificationConfig(T0, 2),
                                         np.zeros((T0, 1)), seed=7)
            errors.append(max(abs(moments.N[j, 0, 0] - 0.5 ** j) for j in range(3)))
        assert errors[0] > errors[-1]
        assert errors[-1] <= 0.05

    def test_moment_estimates_unbiased(self):
        # empirical mean over 100 independent identifications within 3 standard errors
        p = preset("sysid-3x2", seed=0)
        a_k = p.system.A  # K = 0
        expected = np.stack([np.linalg.matrix_power(a_k, j) @ p.system.B for j in range(3)])
        samples = []
        for seed in range(100):
            gen = DisturbanceGenerator("gaussian-clipped", 3, amplitude=0.1, seed=seed + 500)
            _, moments = identify_system(p.system, p.K, IdentificationConfig(400, 2),
                                         gen.sequence(400), seed=seed)
            samples.append(moments.N)
        samples = np.asarray(samples)
        mean = samples.mean(axis=0)
        se = samples.std(axis=0, ddof=1) / np.sqrt(len(samples))
        assert np.all(np.abs(mean - expected) <= 3 * se + 1e-12)

    def test_reconstruction_identity(self, rng):
        p = preset("sysid-3x2", seed=0)
        K = rng.standard_normal((2, 3)) * 0.05
        gen = DisturbanceGenerator("gaussian-clipped", 3, amplitude=0.1, seed=9)
        ident, _ = identify_system(p.system, K, IdentificationConfig(2000, 2),
                                   gen.sequence(2000), seed=3)
        assert ident.reconstruction_residual() <= 1e-12

    def test_error_decreases_with_budget(self):
        p = preset("sysid-3x2", seed=0)
        medians = []
        for T0 in (1000, 4000, 16000):
            errs = []
            for seed in range(20):
                gen = DisturbanceGenerator("gaussian-clipped", 3, amplitude=0.1, seed=seed + 31)
                ident, _ = identify_system(p.system, p.K, IdentificationConfig(T0, 2),
                                           gen.sequence(T0), seed=seed)
                errs.append(float(np.linalg.norm(ident.A_hat - p.system.A)))
            medians.append(float(np.median(errs)))
        assert medians[0] >= medians[1] >= medians[2]

    def test_insufficient_excitation_raises(self):
        # second state is unreachable and undisturbed: the moment Gram is singular
        plant = LinearSystem(np.diag([0.5, 0.3]), np.array([[1.0], [0.0]]), w_bound=0.0)
        with pytest.raises(InsufficientExcitation):
            identify_system(plant, np.zeros((1, 2)), IdentificationConfig(500, 2),
                            np.zeros((500, 2)), seed=1)

    def test_bad_config_rejected(self):
        with pytest.raises(ContractViolation):
            IdentificationConfig(5, 5)
        with pytest.raises(ContractViolation):
            IdentificationConfig(10, 0)

    def test_controllability_index_of_preset(self):
        p = preset("sysid-3x2", seed=0)
        assert smallest_controllability_index(p.system, p.K) == 2

    def test_fictitious_disturbance_error_identity(self, rng):
        # || w - w_hat || <= ||A - A_hat|| ||x|| + ||B - B_hat|| ||u|| (algebraic)
        p = preset("sysid-3x2", seed=0)
        gen = DisturbanceGenerator("gaussian-clipped", 3, amplitude=0.1, seed=77)
        ident, _ = identify_system(p.system, p.K, IdentificationConfig(3000, 2),
                                   gen.sequence(3000), seed=5)
        da = np.linalg.norm(ident.A_hat - p.system.A, 2)
        db = np.linalg.norm(ident.B_hat - p.system.B, 2)
        from scream.lds import recover_disturbance, step_dynamics
        estimate = ident.as_system()
        for _ in range(100):
            x = rng.standard_normal(3)
            u = rng.standard_normal(2)
            w = rng.standard_normal(3) * 0.1
            x_next = step_dynamics(p.system, x, u, w)
            w_hat = recover_disturbance(estimate, x_next, x, u)
            cap = da * np.linalg.norm(x) + db * np.linalg.norm(u)
            assert np.linalg.norm(w - w_hat) <= cap + 1e-10

    def test_moments_average_the_documented_products(self, rng):
        # direct check of N_j against a naive double loop
        states = rng.standard_normal((11, 3))
        signs = rng.choice([-1.0, 1.0], size=(10, 2))
        k = 2
        moments = moments_from_exploration(states, signs, k)
        n = 10 - k
        for j in range(k + 1):
            expected = sum(np.outer(states[t + j + 1], signs[t]) for t in range(n)) / n
            assert np.allclose(moments.N[j], expected, atol=1e-12)


def pipeline_pieces(T=260, T0=60, H=2, seed=0):
    p = preset("sysid-3x2", seed=seed)
    loop_truth = ClosedLoop(p.system, p.K, p.certificate)
    constants = lipschitz_constants(loop_truth.kappa, loop_truth.gamma, p.system.kappa_B,
                                    0.1, 2.0, H, 2, 3)
    config = ControlConfig(T=T - T0, constants=constants, lam_multiplier=1e-4)
    rng = np.random.default_rng(seed + 11)
    costs = [QuadraticTrackingCost(rng.uniform(-0.3, 0.3, 3)) for _ in range(T)]
    gen = DisturbanceGenerator("piecewise-step", 3, amplitude=0.1, seed=seed + 12, period=40)
    return p, loop_truth, config, costs, gen.sequence(T)


class TestPipeline:
    def test_default_budget_is_two_thirds_power(self):
        assert default_exploration_rounds(1000) == int(np.ceil(1000 ** (2 / 3)))
        assert default_exploration_rounds(64000) == 1600

    def test_perfect_injection_matches_known_system_run(self):
        p, loop_truth, config, costs, w = pipeline_pieces()
        T0 = 60
        pipe = run_unknown_pipeline(p.system, p.K, IdentificationConfig(T0, 2), config,
                                    costs, w, seed=4,
                                    inject_system=LinearSystem(p.system.A.copy(),
                                                               p.system.B.copy(),
                                                               w_bound=p.system.w_bound))
        reference_costs = [QuadraticTrackingCost(c.target, c.control_weight) for c in costs]
        believed = ClosedLoop(p.system, p.K, certify_strong_stability(p.system, p.K))
        reference = run_scream_control(believed, p.system, w[T0:], reference_costs[T0:],
                                       config, x0=pipe.identified.exploration.states[-1])
        assert np.array_equal(pipe.control_run.states, reference.states)
        assert np.array_equal(pipe.control_run.actions, reference.actions)
        assert np.array_equal(pipe.control_run.params, reference.params)

    def test_estimated_run_bookkeeping(self):
        p, loop_truth, config, costs, w = pipeline_pieces(seed=2)
        pipe = run_unknown_pipeline(p.system, p.K, IdentificationConfig(60, 2), config,
                                    costs, w, seed=8)
        # independent re-summation of both phases
        explore_total = float(np.sum(pipe.identified.exploration.costs))
        control_total = float(np.sum(pipe.control_run.cost_values))
        assert pipe.total_cost == pytest.approx(explore_total + control_total, rel=1e-12)
        assert pipe.exploration_cost == pytest.approx(explore_total, rel=1e-12)
        assert pipe.control_run.T == 260 - 60

    def test_estimated_run_recovers_fictitious_disturbances(self):
        p, loop_truth, config, costs, w = pipeline_pieces(seed=3)
        pipe = run_unknown_pipeline(p.system, p.K, IdentificationConfig(60, 2), config,
                                    costs, w, seed=9)
        run = pipe.control_run
        da = np.linalg.norm(pipe.identified.A_hat - p.system.A, 2)
        db = np.linalg.norm(pipe.identified.B_hat - p.system.B, 2)
        gaps = np.linalg.norm(run.believed_disturbances - run.disturbances, axis=1)
        caps = (da * np.linalg.norm(run.states[:-1], axis=1)
                + db * np.linalg.norm(run.actions, axis=1))
        assert np.all(gaps <= caps + 1e-10)

    def test_budget_must_leave_learning_rounds(self):
        p, loop_truth, config, costs, w = pipeline_pieces()
        with pytest.raises(ContractViolation):
            run_unknown_pipeline(p.system, p.K, IdentificationConfig(260, 2), config,
                                 costs, w, seed=1)
