import numpy as np
import pytest

from sdrsynth.errors import ConfigError, VertexCapExceeded
from sdrsynth.expr import evaluate
from sdrsynth.fixtures import get_fixture
from sdrsynth.model import (
    BasisLibrary,
    GroundTruthCoefficients,
    SdrModel,
    build_basis_vertices,
    build_model_vertices,
    evaluate_dynamics,
    reconstruct_AB,
)


@pytest.fixture(scope="module")
def ex1():
    return get_fixture("example1")


@pytest.fixture(scope="module")
def ex3():
    return get_fixture("example3")


class TestDynamics:
    def test_equilibrium(self, ex1):
        assert np.allclose(evaluate_dynamics(ex1.model, [0, 0], [0]), [0, 0])

    def test_hand_evaluation_state(self, ex1):
        # x1+ = 0 + 0 + 0.2*1, x2+ = 0 + 0.9*1 + 0
        assert np.allclose(evaluate_dynamics(ex1.model, [0, 1], [0]), [0.2, 0.9], atol=1e-15)

    def test_input_column_at_origin(self, ex1):
        assert np.allclose(evaluate_dynamics(ex1.model, [0, 0], [1]), [0.1, 0.1], atol=1e-15)

    def test_batch_matches_pointwise(self, ex1):
        rng = np.random.default_rng(5)
        X = rng.uniform(-1, 1, size=(2, 40))
        A, B = ex1.model.eval_AB_batch(X)
        for k in range(X.shape[1]):
            assert np.allclose(A[k], ex1.model.eval_A(X[:, k]), atol=1e-14)
            assert np.allclose(B[k], ex1.model.eval_B(X[:, k]), atol=1e-14)


class TestModelVertices:
    def test_example1_count(self, ex1):
        vs = build_model_vertices(ex1.model, 1.1)
        assert len(vs) == 16
        free = sum(1 for d in vs.degenerate_mask if not d)
        assert free == 4

    def test_lti_single_vertex(self):
        m = SdrModel.from_entries([["0.5", "0"], ["0", "0.25"]], [["1"], ["0"]])
        vs = build_model_vertices(m, 2.0)
        assert len(vs) == 1
        assert np.allclose(vs.vertices[0], [[0.5, 0, 1], [0, 0.25, 0]])

    def test_zero_radius_single_vertex(self, ex1):
        vs = build_model_vertices(ex1.model, 0.0)
        assert len(vs) == 1
        A0, B0 = ex1.model.eval_A([0, 0]), ex1.model.eval_B([0, 0])
        assert np.allclose(vs.vertices[0], np.hstack([A0, B0]), atol=1e-15)

    def test_containment_of_random_states(self, ex1):
        vs = build_model_vertices(ex1.model, 1.1)
        rng = np.random.default_rng(11)
        for _ in range(1000):
            v = rng.normal(size=2)
            v /= np.linalg.norm(v)
            x = v * rng.uniform(0, 1.1)
            G = np.hstack([ex1.model.eval_A(x), ex1.model.eval_B(x)])
            assert vs.interval_hull_contains(G)

    def test_vertices_distinct(self, ex1):
        vs = build_model_vertices(ex1.model, 1.1)
        keys = {v.tobytes() for v in vs.vertices}
        assert len(keys) == len(vs)

    def test_deterministic_order(self, ex1):
        a = build_model_vertices(ex1.model, 1.1)
        b = build_model_vertices(ex1.model, 1.1)
        for va, vb in zip(a.vertices, b.vertices):
            assert np.array_equal(va, vb)

    def test_cap_enforced(self, ex1):
        with pytest.raises(VertexCapExceeded):
            build_model_vertices(ex1.model, 1.1, cap=8)

    def test_grid_mode_nested_in_sound_mode(self, ex1):
        sound = build_model_vertices(ex1.model, 1.1, mode="sound")
        grid = build_model_vertices(ex1.model, 1.1, mode="grid")
        assert grid.mode == "grid" and not grid.sound
        assert sound.mode == "sound" and sound.sound
        assert len(grid) == len(sound)
        for gs, gg in zip(sound.entry_intervals, grid.entry_intervals):
            assert gs.encloses(gg, slack=1e-9)


class TestBasisVertices:
    def test_example3_count(self, ex3):
        vs = build_basis_vertices(ex3.library, 0.92)
        # independent count: basis entries that actually vary over the ball
        free = 0
        rng = np.random.default_rng(3)
        X = rng.uniform(-0.92, 0.92, size=(2, 4000))
        for col in ex3.library.basis_A + ex3.library.basis_B:
            for e in col:
                vals = np.asarray(evaluate(e, X))
                if np.ptp(vals) > 1e-12:
                    free += 1
        assert free == 7
        assert len(vs) == 2**free

    def test_all_constant_library(self):
        lib = BasisLibrary.from_entries([["1"], ["1"]], [["1"]])
        vs = build_basis_vertices(lib, 1.0)
        assert len(vs) == 1

    def test_quadrotor_count(self):
        quad = get_fixture("quadrotor")
        vs = build_basis_vertices(quad.library, 0.4)
        free = 0
        rng = np.random.default_rng(4)
        X = rng.uniform(-0.4, 0.4, size=(6, 4000))
        for col in quad.library.basis_A + quad.library.basis_B:
            for e in col:
                if np.ptp(np.asarray(evaluate(e, X))) > 1e-12:
                    free += 1
        # 9 varying entries: x6; sin x1 tan x2, cos x1, sin x1/cos x2, x4;
        # cos x1 tan x2, sin x1, cos x1/cos x2, x5
        assert free == 9
        assert len(vs) == 2**9

    def test_block_structure(self, ex3):
        vs = build_basis_vertices(ex3.library, 0.92)
        Q = vs.vertices[0]
        assert Q.shape == (10, 3)
        assert np.all(Q[0:2, 1:] == 0)
        assert np.all(Q[2:5, [0, 2]] == 0)
        assert np.all(Q[5:10, :2] == 0)

    def test_containment_of_Q_of_x(self, ex3):
        vs = build_basis_vertices(ex3.library, 0.92)
        rng = np.random.default_rng(12)
        for _ in range(500):
            v = rng.normal(size=2)
            v /= np.linalg.norm(v)
            x = v * rng.uniform(0, 0.92)
            assert vs.interval_hull_contains(ex3.library.Q_of(x))


class TestReconstruct:
    def test_example3_truth_matches_entry_model_at_zero(self, ex3):
        A, B = reconstruct_AB(ex3.library, ex3.truth.E_A, ex3.truth.E_B, np.zeros(2))
        assert np.allclose(A, ex3.model.eval_A([0, 0]), atol=1e-14)
        assert np.allclose(B, ex3.model.eval_B([0, 0]), atol=1e-14)

    def test_zero_coefficients(self, ex3):
        A, B = reconstruct_AB(
            ex3.library, np.zeros((2, 5)), np.zeros((2, 5)), np.array([0.3, -0.4])
        )
        assert not A.any() and not B.any()

    def test_random_coefficients_against_dense_oracle(self, ex3):
        rng = np.random.default_rng(9)
        lib = ex3.library
        for _ in range(20):
            E_A = rng.normal(size=(2, lib.n_A))
            E_B = rng.normal(size=(2, lib.n_B))
            x = rng.uniform(-0.9, 0.9, size=2)
            A, B = reconstruct_AB(lib, E_A, E_B, x)
            # dense oracle: build Xi blocks by direct per-entry evaluation
            XiA = np.zeros((lib.n_A, 2))
            XiA[0, 0], XiA[1, 0] = 1.0, np.sin(x[0]) / x[0] if x[0] else 1.0
            XiA[2, 1], XiA[3, 1], XiA[4, 1] = 1.0, x[0], x[0] ** 2
            XiB = np.array(
                [[1.0], [abs(x[0])], [abs(x[1])], [np.exp(x[0])], [np.exp(x[1])]]
            )
            assert np.allclose(A, E_A @ XiA, atol=1e-12)
            assert np.allclose(B, E_B @ XiB, atol=1e-12)

    def test_reconstruction_matches_entries_at_random_points(self, ex3):
        rng = np.random.default_rng(10)
        for _ in range(20):
            x = rng.uniform(-0.92, 0.92, size=2)
            A, B = reconstruct_AB(ex3.library, ex3.truth.E_A, ex3.truth.E_B, x)
            assert np.max(np.abs(A - ex3.model.eval_A(x))) <= 1e-10
            assert np.max(np.abs(B - ex3.model.eval_B(x))) <= 1e-10

    def test_shape_mismatch(self, ex3):
        with pytest.raises(ConfigError):
            reconstruct_AB(ex3.library, np.zeros((2, 4)), np.zeros((2, 5)), np.zeros(2))

    def test_quadrotor_truth_matches_entry_model(self):
        quad = get_fixture("quadrotor")
        rng = np.random.default_rng(2)
        for _ in range(20):
            x = rng.uniform(-0.4, 0.4, size=6)
            A, B = reconstruct_AB(quad.library, quad.truth.E_A, quad.truth.E_B, x)
            assert np.max(np.abs(A - quad.model.eval_A(x))) <= 1e-12
            assert np.max(np.abs(B - quad.model.eval_B(x))) <= 1e-12


class TestValidation:
    def test_non_square_A_rejected(self):
        with pytest.raises(ConfigError):
            SdrModel.from_entries([["1", "0"]], [["1"]])

    def test_variable_out_of_range_rejected(self):
        with pytest.raises(ConfigError):
            SdrModel.from_entries([["x3"]], [["1"]])

    def test_truth_shape_validated(self):
        lib = BasisLibrary.from_entries([["1"], ["1"]], [["1"]])
        with pytest.raises(ConfigError):
            GroundTruthCoefficients.for_library(lib, np.zeros((2, 3)), np.zeros((2, 1)))
