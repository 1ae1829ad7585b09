import numpy as np
import pytest

from sdrsynth.data import assemble
from sdrsynth.errors import ConfigError, UsageError
from sdrsynth.fixtures import (
    EXAMPLE1_REFERENCE,
    generate_fixture_experiments,
    get_fixture,
)
from sdrsynth.sim import (
    SimConfig,
    dead_zone,
    generate_experiments,
    phase_portrait,
    rollout,
    saturate,
    step,
)


@pytest.fixture(scope="module")
def ex1():
    return get_fixture("example1")


@pytest.fixture(scope="module")
def ex3():
    return get_fixture("example3")


class TestStep:
    def test_disturbance_at_equilibrium(self, ex1):
        x = step(ex1.model, [0, 0], [0], w=[0.1, -0.1])
        assert np.allclose(x, [0.1, -0.1], atol=1e-15)

    def test_dead_zone_definition(self):
        assert saturate(np.array([1.5]), np.array([1.0]))[0] == 1.0
        assert dead_zone(np.array([1.5]), np.array([1.0]))[0] == -0.5

    def test_saturation_bitexact_inside_levels(self):
        rng = np.random.default_rng(0)
        u = rng.uniform(-1, 1, size=100)
        out = saturate(u, np.ones(1))
        assert np.array_equal(out, u)
        big = rng.uniform(1, 5, size=100) * np.sign(rng.normal(size=100))
        clipped = saturate(big, 1.0)
        assert np.array_equal(clipped, np.sign(big) * np.minimum(np.abs(big), 1.0))

    def test_quadrotor_rest_is_fixed_point(self):
        quad = get_fixture("quadrotor")
        x = step(quad.model, np.zeros(6), np.zeros(3))
        assert np.allclose(x, np.zeros(6), atol=1e-15)
        x2 = step((quad.library, quad.truth), np.zeros(6), np.zeros(3))
        assert np.allclose(x2, np.zeros(6), atol=1e-15)

    def test_library_and_entry_steps_agree(self, ex3):
        rng = np.random.default_rng(1)
        for _ in range(20):
            x = rng.uniform(-1, 1, size=2)
            u = rng.uniform(-1, 1, size=1)
            a = step(ex3.model, x, u)
            b = step((ex3.library, ex3.truth), x, u)
            assert np.allclose(a, b, atol=1e-12)


class TestRollout:
    def test_reference_gain_converges(self, ex1):
        cfg = SimConfig(horizon=200, x0=np.array([-0.5, -0.5]), gain=EXAMPLE1_REFERENCE["K"])
        traj = rollout(ex1.model, cfg)
        assert traj.converged
        assert np.linalg.norm(traj.states[-1]) <= 1e-3

    def test_open_loop_diverges(self, ex1):
        cfg = SimConfig(
            horizon=2000, x0=np.array([0.5, 0.5]), input_signal=lambda k: np.zeros(1)
        )
        traj = rollout(ex1.model, cfg)
        assert traj.diverged

    def test_bounded_under_disturbance(self, ex1):
        cfg = SimConfig(
            horizon=400,
            x0=np.array([-0.5, -0.5]),
            gain=EXAMPLE1_REFERENCE["K"],
            disturbance=("uniform", 0.1),
            seed=3,
        )
        traj = rollout(ex1.model, cfg)
        assert not traj.diverged
        assert np.max(np.linalg.norm(traj.states, axis=1)) <= 1.1

    def test_determinism(self, ex1):
        cfg = SimConfig(
            horizon=100, x0=np.array([0.2, -0.3]), gain=EXAMPLE1_REFERENCE["K"],
            disturbance=("uniform", 0.05), seed=17,
        )
        a = rollout(ex1.model, cfg, stream=4)
        b = rollout(ex1.model, cfg, stream=4)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.disturbances, b.disturbances)
        c = rollout(ex1.model, cfg, stream=5)
        assert not np.array_equal(a.disturbances, c.disturbances)

    def test_saturated_inputs_clip(self, ex1):
        cfg = SimConfig(
            horizon=50, x0=np.array([0.9, 0.9]), gain=EXAMPLE1_REFERENCE["K"],
            u_max=np.array([0.5]),
        )
        traj = rollout(ex1.model, cfg)
        assert np.max(np.abs(traj.inputs_post)) <= 0.5
        over = np.abs(traj.inputs_pre) > 0.5
        assert np.all(np.abs(traj.inputs_post[over]) == 0.5)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            SimConfig(horizon=0, x0=np.zeros(2), gain=np.zeros((1, 2)))
        with pytest.raises(ConfigError):
            SimConfig(horizon=5, x0=np.zeros(2))
        with pytest.raises(ConfigError):
            SimConfig(horizon=5, x0=np.zeros(2), gain=np.zeros((1, 2)), u_max=np.array([0.0]))


class TestPhasePortrait:
    def test_planar_field(self, ex1):
        field = phase_portrait(ex1.model, EXAMPLE1_REFERENCE["K"], region=(-1.5, 1.5), density=9)
        assert field["points"].shape == (81, 2)
        assert field["next_points"].shape == (81, 2)

    def test_contraction_for_stable_linear(self):
        from sdrsynth.model import SdrModel

        m = SdrModel.from_entries([["0.5", "0"], ["0", "0.5"]], [["0"], ["0"]])
        field = phase_portrait(m, np.zeros((1, 2)), region=(-1, 1), density=7)
        norms0 = np.linalg.norm(field["points"], axis=1)
        norms1 = np.linalg.norm(field["next_points"], axis=1)
        assert np.all(norms1 <= norms0 + 1e-12)

    def test_saturated_samples_clip(self, ex1):
        field = phase_portrait(
            ex1.model, EXAMPLE1_REFERENCE["K"], region=(-1.5, 1.5), density=9,
            u_max=np.array([0.5]),
        )
        assert np.max(np.abs(field["inputs_post"])) <= 0.5

    def test_dimension_guard(self):
        quad = get_fixture("quadrotor")
        with pytest.raises(UsageError):
            phase_portrait(quad.model, np.zeros((3, 6)), region=(-1, 1))


class TestGenerateExperiments:
    def test_example3_batch(self, ex3):
        batch = generate_fixture_experiments(ex3, seed=1)
        assert len(batch.trajectories) == 10
        assert all(t["inputs"].shape == (13, 1) for t in batch.trajectories)
        assert all(t["states"].shape == (14, 2) for t in batch.trajectories)
        assert batch.theta_margin >= 0.0
        # data relation: X1 - E_A X0 - E_B U0 = D0 exactly
        data = assemble(
            [(t["states"], t["inputs"]) for t in batch.trajectories],
            ex3.library, ex3.theta,
        )
        E = np.hstack([ex3.truth.E_A, ex3.truth.E_B])
        D0 = data.X1 - E @ data.regressors
        assert np.allclose(D0, batch.noise_matrix, atol=1e-12)
        gram = batch.noise_matrix @ batch.noise_matrix.T
        assert np.linalg.eigvalsh(ex3.theta - gram).min() >= 0

    def test_zero_noise(self, ex3):
        batch = generate_experiments(
            ex3.library, ex3.truth, ("uniform", -1.3, 1.3),
            np.zeros((2, 2)), count=3, length=5, seed=0,
            x0_spec=("uniform", 0.5), state_cap=4.0,
        )
        assert not batch.noise_matrix.any()

    def test_determinism(self, ex3):
        a = generate_fixture_experiments(ex3, seed=1)
        b = generate_fixture_experiments(ex3, seed=1)
        assert np.array_equal(a.noise_matrix, b.noise_matrix)
        for ta, tb in zip(a.trajectories, b.trajectories):
            assert np.array_equal(ta["states"], tb["states"])
