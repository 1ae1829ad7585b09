import numpy as np
import pytest

from conftest import ball_samples, closed_loop_rollout
from sdrsynth import lmi
from sdrsynth.data import membership
from sdrsynth.errors import InfeasibleProblem
from sdrsynth.fixtures import EXAMPLE1_REFERENCE
from sdrsynth.model import SdrModel, build_basis_vertices, build_model_vertices
from sdrsynth.sim import make_stepper
from sdrsynth.synth import (
    RoaFormulaError,
    SynthesisOptions,
    load_result,
    roa_radius,
    save_result,
    synthesize_data,
    synthesize_data_saturated,
    synthesize_model,
    synthesize_model_saturated,
)


class TestRoaRadius:
    def test_reference_certificate_hits_design_radius(self):
        pub = EXAMPLE1_REFERENCE
        assert roa_radius(pub["Gamma"], pub["eps_gamma"], 1.1) == pytest.approx(1.1, abs=0)

    def test_anisotropic_value_against_scalar_oracle(self):
        # min{1, sqrt(4*1 / (16 - 0.5*1))} computed independently
        oracle = min(1.0, float(np.sqrt((4.0 * 1.0) / (4.0**2 - 0.5 * 1.0))))
        got = roa_radius(np.diag([1.0, 4.0]), 0.5, 1.0)
        assert got == pytest.approx(oracle, abs=1e-12)
        assert got == pytest.approx(0.508, abs=1e-3)

    def test_isotropic_small_epsilon_limit(self):
        for eps in (1e-4, 1e-8, 1e-12):
            assert roa_radius(3.0 * np.eye(2), eps, 2.5) == pytest.approx(2.5, abs=0)

    def test_scale_invariance(self):
        rng = np.random.default_rng(0)
        M = rng.normal(size=(3, 3))
        Gamma = M @ M.T + np.eye(3)
        for tau in (1e-3, 1.0, 1e3):
            assert roa_radius(tau * Gamma, tau * 0.05, 1.3) == pytest.approx(
                roa_radius(Gamma, 0.05, 1.3), rel=1e-12
            )

    def test_error_cases(self):
        with pytest.raises(RoaFormulaError):
            roa_radius(-np.eye(2), 0.1, 1.0)
        with pytest.raises(RoaFormulaError):
            roa_radius(np.eye(2), 0.0, 1.0)
        with pytest.raises(RoaFormulaError):
            roa_radius(np.eye(2), 1.5, 1.0)  # eps >= lmax^2/lmin


class TestModelSynthesis:
    def test_example1_feasible_with_full_radius(self, example1, ex1_result):
        res = ex1_result
        assert res.mode == "model"
        assert res.vertex_count == 16
        assert res.r0 == pytest.approx(1.1, abs=1e-6)
        assert res.residual <= 1e-6
        # invariants: K Gamma = Y, r0 <= r, eps > 0
        assert np.linalg.norm(res.K @ res.Gamma - res.Y) <= 1e-8 * (
            1 + np.linalg.norm(res.Y)
        )
        assert res.r0 <= res.r
        assert res.eps_gamma > 0

    def test_example1_closed_loop_converges_with_monotone_V(self, example1, ex1_result):
        step = make_stepper(example1.model)
        P = ex1_result.P
        for x0 in ball_samples(2, ex1_result.r0, 25, seed=101):
            traj = closed_loop_rollout(step, ex1_result.K, x0, 200)
            assert np.linalg.norm(traj[-1]) <= 1e-3
            V = np.einsum("ki,ij,kj->k", traj, P, traj)
            assert np.all(np.diff(V) <= 1e-9)

    def test_stable_lti_with_zero_input_column(self):
        m = SdrModel.from_entries([["0.5", "0.1"], ["0", "0.6"]], [["0"], ["0"]])
        res = synthesize_model(m, 1.0)
        assert res.r0 > 0

    def test_uncontrollable_unstable_scalar_infeasible(self):
        m = SdrModel.from_entries([["2"]], [["0"]])
        with pytest.raises(InfeasibleProblem):
            synthesize_model(m, 1.0)

    def test_max_epsilon_objective_switch(self, example1, ex1_result):
        res = synthesize_model(
            example1.model, example1.radius, SynthesisOptions(objective="max-epsilon")
        )
        # pure maximization reaches a larger eps than the regularized default
        # (both under the same lmax(Gamma) <= 1 normalization)
        assert res.eps_gamma > ex1_result.eps_gamma
        assert res.residual <= 1e-6

    def test_vertex_lmi_implies_lyapunov_margin(self, example1, ex1_result):
        # the whole chain (entry bounds -> vertices -> block LMI -> Schur)
        # guarantees V(x+) - V(x) <= -eps_P |x|^2 on B_r with
        # eps_P = eps_gamma / lmax(Gamma)^2
        res = ex1_result
        P = res.P
        eps_P = res.eps_gamma / np.linalg.eigvalsh(res.Gamma).max() ** 2
        step = make_stepper(example1.model)
        rng = np.random.default_rng(77)
        for _ in range(500):
            v = rng.normal(size=2)
            v /= np.linalg.norm(v)
            x = v * rng.uniform(0, example1.radius)
            xp = step(x, res.K @ x)
            decrease = xp @ P @ xp - x @ P @ x
            assert decrease <= -eps_P * float(x @ x) + 1e-9

    def test_data_vertex_lmi_implies_lyapunov_margin(self, example3, ex3_result):
        # same margin chain for the data-driven certificate on the true system
        res = ex3_result
        P = res.P
        eps_P = res.eps_gamma / np.linalg.eigvalsh(res.Gamma).max() ** 2
        step = make_stepper((example3.library, example3.truth))
        rng = np.random.default_rng(78)
        for _ in range(500):
            v = rng.normal(size=2)
            v /= np.linalg.norm(v)
            x = v * rng.uniform(0, example3.radius)
            xp = step(x, res.K @ x)
            decrease = xp @ P @ xp - x @ P @ x
            assert decrease <= -eps_P * float(x @ x) + 1e-9

    def test_certificate_resubstitution_external(self, example1, ex1_result):
        verts = build_model_vertices(example1.model, example1.radius)
        worst = max(
            np.linalg.eigvalsh(
                lmi.model_stability_block(
                    G, ex1_result.Gamma, ex1_result.Y, ex1_result.eps_gamma
                )
            ).max()
            for G in verts.vertices
        )
        assert worst <= 1e-6 * (1 + np.linalg.norm(ex1_result.Gamma, 2))


class TestModelSaturated:
    def test_large_authority_feasible(self, example1):
        res = synthesize_model_saturated(example1.model, example1.radius, [4.0])
        assert res.mode == "model-sat"
        assert res.W is not None and res.S is not None
        assert res.S[0, 0] > 0

    def test_certified_set_invariant_and_clipping(self, example1, ex1_sat_result):
        res = ex1_sat_result
        step = make_stepper(example1.model)
        P = res.P
        sqrt_gamma = np.linalg.cholesky(res.Gamma)
        count = 0
        for z in ball_samples(2, 1.0, 60, seed=7):
            x0 = sqrt_gamma @ z  # inside the ellipsoid x'Px <= 1
            if np.linalg.norm(x0) > res.r0:
                continue
            count += 1
            traj = closed_loop_rollout(step, res.K, x0, 300, u_max=res.u_max)
            V = np.einsum("ki,ij,kj->k", traj, P, traj)
            assert np.all(np.diff(V) <= 1e-9)
            assert np.all(np.linalg.norm(traj, axis=1) <= res.r + 1e-9)
            assert np.all(V <= 1.0 + 1e-9)
        assert count >= 10

    def test_huge_level_behaves_like_unsaturated(self, example1, ex1_result):
        res = synthesize_model_saturated(example1.model, example1.radius, [1e6])
        step = make_stepper(example1.model)
        for x0 in ball_samples(2, min(res.r0, ex1_result.r0), 10, seed=3):
            sat_traj = closed_loop_rollout(step, res.K, x0, 150, u_max=res.u_max)
            free_traj = closed_loop_rollout(step, res.K, x0, 150, u_max=None)
            assert np.max(np.abs(sat_traj - free_traj)) <= 1e-9

    def test_zero_authority_infeasible(self, example1):
        with pytest.raises(InfeasibleProblem):
            synthesize_model_saturated(example1.model, example1.radius, [0.0])


class TestDataSynthesis:
    def test_example3_feasible_full_radius(self, example3, ex3_result):
        res = ex3_result
        assert res.mode == "data"
        assert res.vertex_count == 2**7
        # solver returns near-isotropic Gamma; the sqrt factor sits within
        # 1e-3 of 1, so r0bar reproduces the design radius to that accuracy
        assert res.r0 == pytest.approx(0.92, abs=1e-3)
        assert res.residual <= 1e-6
        assert res.member_residual is not None

    def test_truth_is_member(self, example3, ex3_cset):
        E = np.hstack([example3.truth.E_A, example3.truth.E_B])
        assert membership(ex3_cset, E)

    def test_sampled_members_satisfy_lemma_lmi(self, example3, ex3_cset, ex3_result):
        verts = build_basis_vertices(example3.library, example3.radius)
        scale = 1.0 + np.linalg.norm(ex3_result.Gamma, 2)
        for Z in ex3_cset.sample_members(50, seed=77):
            worst = max(
                np.linalg.eigvalsh(
                    lmi.model_stability_block(
                        Z @ Q, ex3_result.Gamma, ex3_result.Y, ex3_result.eps_gamma
                    )
                ).max()
                for Q in verts.vertices
            )
            assert worst <= 1e-6 * scale

    def test_true_closed_loop_converges(self, example3, ex3_result):
        step = make_stepper((example3.library, example3.truth))
        for x0 in ball_samples(2, ex3_result.r0, 25, seed=5):
            traj = closed_loop_rollout(step, ex3_result.K, x0, 200)
            assert np.linalg.norm(traj[-1]) <= 1e-3

    def test_noise_free_lti_degenerate_set(self):
        from sdrsynth.data import assemble, build_consistency_set
        from sdrsynth.model import BasisLibrary, GroundTruthCoefficients
        from sdrsynth.sim import generate_experiments

        lib = BasisLibrary.from_entries([["1"], ["1"]], [["1"]])
        A = np.array([[0.7, 0.2], [0.0, 0.5]])
        B = np.array([[1.0], [0.3]])
        truth = GroundTruthCoefficients.for_library(lib, A, B)
        batch = generate_experiments(
            lib, truth, ("uniform", -1, 1), np.zeros((2, 2)),
            count=4, length=6, seed=11, x0_spec=("uniform", 1.0),
        )
        data = assemble(
            [(t["states"], t["inputs"]) for t in batch.trajectories], lib,
            np.zeros((2, 2)),
        )
        cset = build_consistency_set(data)
        assert np.linalg.norm(cset.Qmat) <= 1e-10  # C = {Zc}
        res = synthesize_data(lib, data, 1.0)
        assert res.r0 > 0

    def test_inflated_theta_trades_feasibility(self, example3, ex3_dataset, ex3_result):
        from sdrsynth.data import ExperimentData

        inflated = ExperimentData(
            X0=ex3_dataset.X0, X1=ex3_dataset.X1, U0=ex3_dataset.U0,
            theta=1e6 * ex3_dataset.theta,
        )
        try:
            res = synthesize_data(example3.library, inflated, example3.radius)
        except InfeasibleProblem:
            return
        # if still feasible the certified margin must have collapsed
        assert res.eps_gamma / np.linalg.eigvalsh(res.Gamma).max() <= 1e-3 * (
            ex3_result.eps_gamma / np.linalg.eigvalsh(ex3_result.Gamma).max()
        )


class TestDataSaturated:
    def test_example3_saturated_feasible(self, ex3_sat_result):
        res = ex3_sat_result
        assert res.mode == "data-sat"
        assert res.W is not None
        assert res.residual <= 1e-6
        assert res.member_residual is not None

    def test_zero_authority_infeasible(self, example3, ex3_dataset):
        with pytest.raises(InfeasibleProblem):
            synthesize_data_saturated(example3.library, ex3_dataset, example3.radius, [0.0])


class TestResultDocument:
    def test_round_trip(self, tmp_path, ex1_result):
        path = tmp_path / "result.json"
        save_result(path, ex1_result)
        back = load_result(path)
        assert back.mode == ex1_result.mode
        assert np.allclose(back.Gamma, ex1_result.Gamma, atol=0)
        assert np.allclose(back.K, ex1_result.K, atol=0)
        assert back.r0 == ex1_result.r0

    def test_roa_description(self, ex1_result, ex1_sat_result):
        plain = ex1_result.roa()
        assert plain.algebra == "ball"
        assert plain.contains(np.array([ex1_result.r0 * 0.99, 0.0]))
        sat = ex1_sat_result.roa()
        assert sat.algebra == "ball-intersect-ellipsoid"
        assert sat.ellipsoid_matrix is not None
