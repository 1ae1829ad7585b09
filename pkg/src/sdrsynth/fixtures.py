"""Built-in example systems: the planar benchmark (model and library forms)
and the desk-scale quadrotor attitude model, with their experiment recipes.

The planar system:

    x1+ = x1 + 0.1 sin x1 + 0.2 x2 + (0.1 + 0.1|x2|) u
    x2+ = 0.2 x1 + 0.9 x2 + 0.1 x1^2 x2 + 0.1 e^{x1} u

appears twice: entry form ("example1", design ball r = 1.1) for the
model-based path and library form ("example3", r = 0.92, energy bound
0.0021 I) for the data-driven path.  "quadrotor" is the forward-Euler
attitude model (h = 0.002) with inertia diag(0.01668, 0.01772, 0.02966),
sinusoidal torque experiments and energy bound 3.5e-5 I.

Initial-state boxes and escape caps below are fixture choices, tuned so the
open-loop experiments stay numerically tame while exciting every basis
direction (identical restarts at the origin leave the regressor Gram badly
conditioned).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import ExperimentData, assemble
from .errors import ConfigError
from .model import BasisLibrary, GroundTruthCoefficients, SdrModel
from .sim import ExperimentBatch, generate_experiments


@dataclass(frozen=True)
class Fixture:
    name: str
    radius: float
    model: SdrModel | None = None
    library: BasisLibrary | None = None
    truth: GroundTruthCoefficients | None = None
    theta: np.ndarray | None = None
    experiment_count: int = 0
    experiment_length: int = 0
    input_spec: object = None
    x0_half_width: float = 0.0
    state_cap: float | None = None
    dt: float = 1.0
    default_seed: int = 7
    sat_levels: tuple = ()

    @property
    def has_data_path(self) -> bool:
        return self.library is not None and self.truth is not None


_EX1_ENTRIES_A = (
    ("1 + 0.1*sinc(x1)", "0.2"),
    ("0.2", "0.9 + 0.1*x1^2"),
)
_EX1_ENTRIES_B = (("0.1 + 0.1*abs(x2)",), ("0.1*exp(x1)",))

_EX3_BASIS_A = (("1", "sinc(x1)"), ("1", "x1", "x1^2"))
_EX3_BASIS_B = (("1", "abs(x1)", "abs(x2)", "exp(x1)", "exp(x2)"),)
_EX3_EA = np.array([[1.0, 0.1, 0.2, 0.0, 0.0], [0.2, 0.0, 0.9, 0.0, 0.1]])
_EX3_EB = np.array([[0.1, 0.0, 0.1, 0.0, 0.0], [0.0, 0.0, 0.0, 0.1, 0.0]])

# reference certificate for the planar benchmark, from an independent solver
# run; tests re-substitute it, they never use it as a solver oracle
EXAMPLE1_REFERENCE = {
    "Gamma": 34.3888 * np.eye(2),
    "Y": np.array([[-65.0340, -78.9831]]),
    "eps_gamma": 0.1402,
    "K": np.array([[-1.8911, -2.2968]]),
    "r0": 1.1,
}

QUADROTOR_H = 0.002
QUADROTOR_J = (0.01668, 0.01772, 0.02966)


def _example1_model() -> SdrModel:
    return SdrModel.from_entries(_EX1_ENTRIES_A, _EX1_ENTRIES_B, domain_radius_default=1.1)


def _example3_library():
    lib = BasisLibrary.from_entries(_EX3_BASIS_A, _EX3_BASIS_B)
    truth = GroundTruthCoefficients.for_library(lib, _EX3_EA, _EX3_EB)
    return lib, truth


def _quadrotor_model() -> SdrModel:
    h = QUADROTOR_H
    J1, J2, J3 = QUADROTOR_J
    a46 = h * (J2 - J3) / J1
    a54 = h * (J3 - J1) / J2
    a65 = h * (J1 - J2) / J3
    A = (
        ("1", "0", "0", f"{h!r}", f"{h!r}*sin(x1)*tan(x2)", f"{h!r}*cos(x1)*tan(x2)"),
        ("0", "1", "0", "0", f"{h!r}*cos(x1)", f"-{h!r}*sin(x1)"),
        ("0", "0", "1", "0", f"{h!r}*sin(x1)/cos(x2)", f"{h!r}*cos(x1)/cos(x2)"),
        ("0", "0", "0", "1", "0", f"{a46!r}*x5"),
        ("0", "0", "0", f"{a54!r}*x6", "1", "0"),
        ("0", "0", "0", "0", f"{a65!r}*x4", "1"),
    )
    B = (
        ("0", "0", "0"),
        ("0", "0", "0"),
        ("0", "0", "0"),
        (f"{h / J1!r}", "0", "0"),
        ("0", f"{h / J2!r}", "0"),
        ("0", "0", f"{h / J3!r}"),
    )
    return SdrModel.from_entries(A, B, domain_radius_default=0.4)


def _quadrotor_library():
    h = QUADROTOR_H
    J1, J2, J3 = QUADROTOR_J
    basis_A = (
        ("1",),
        ("1",),
        ("1",),
        ("1", "x6"),
        ("1", "sin(x1)*tan(x2)", "cos(x1)", "sin(x1)/cos(x2)", "x4"),
        ("1", "cos(x1)*tan(x2)", "sin(x1)", "cos(x1)/cos(x2)", "x5"),
    )
    basis_B = (("1",), ("1",), ("1",))
    lib = BasisLibrary.from_entries(basis_A, basis_B)
    E_A = np.zeros((6, lib.n_A))
    # column blocks: [0] [1] [2] [3,4] [5..9] [10..14]
    E_A[0, 0] = 1.0
    E_A[1, 1] = 1.0
    E_A[2, 2] = 1.0
    E_A[3, 3] = 1.0
    E_A[0, 3] = h
    E_A[4, 4] = h * (J3 - J1) / J2
    E_A[4, 5] = 1.0
    E_A[0, 6] = h
    E_A[1, 7] = h
    E_A[2, 8] = h
    E_A[5, 9] = h * (J1 - J2) / J3
    E_A[5, 10] = 1.0
    E_A[0, 11] = h
    E_A[1, 12] = -h
    E_A[2, 13] = h
    E_A[3, 14] = h * (J2 - J3) / J1
    E_B = np.zeros((6, 3))
    E_B[3, 0] = h / J1
    E_B[4, 1] = h / J2
    E_B[5, 2] = h / J3
    truth = GroundTruthCoefficients.for_library(lib, E_A, E_B)
    return lib, truth


def _quadrotor_inputs(k):
    t = k * QUADROTOR_H
    return np.array(
        [
            math.sin(50 * math.pi * t + math.pi / 10),
            math.sin(37 * math.pi * t + math.pi / 3),
            math.sin(21 * math.pi * t + math.pi / 2),
        ]
    )


def get_fixture(name: str) -> Fixture:
    if name == "example1":
        return Fixture(
            name="example1",
            radius=1.1,
            model=_example1_model(),
            sat_levels=(4.0, 2.0, 1.0, 0.5),
        )
    if name == "example3":
        lib, truth = _example3_library()
        return Fixture(
            name="example3",
            radius=0.92,
            model=_example1_model(),  # same plant, entry form, for oracles
            library=lib,
            truth=truth,
            theta=0.0021 * np.eye(2),
            experiment_count=10,
            experiment_length=13,
            input_spec=("uniform", -1.3, 1.3),
            x0_half_width=1.2,
            state_cap=4.0,
            default_seed=1,
            sat_levels=(2.0, 1.0, 0.5, 0.25),
        )
    if name == "quadrotor":
        lib, truth = _quadrotor_library()
        return Fixture(
            name="quadrotor",
            radius=0.4,
            model=_quadrotor_model(),
            library=lib,
            truth=truth,
            theta=3.5e-5 * np.eye(6),
            experiment_count=20,
            experiment_length=500,
            input_spec=_quadrotor_inputs,
            x0_half_width=0.3,
            state_cap=1.3,
            dt=QUADROTOR_H,
            default_seed=42,
        )
    raise ConfigError(f"unknown fixture {name!r} (example1 | example3 | quadrotor)")


def generate_fixture_experiments(fix: Fixture, seed: int | None = None) -> ExperimentBatch:
    if not fix.has_data_path:
        raise ConfigError(f"fixture {fix.name!r} has no data-generation recipe")
    return generate_experiments(
        fix.library,
        fix.truth,
        fix.input_spec,
        fix.theta,
        count=fix.experiment_count,
        length=fix.experiment_length,
        seed=fix.default_seed if seed is None else seed,
        x0_spec=("uniform", fix.x0_half_width),
        state_cap=fix.state_cap,
    )


def fixture_dataset(fix: Fixture, seed: int | None = None) -> ExperimentData:
    batch = generate_fixture_experiments(fix, seed)
    return assemble(
        [(t["states"], t["inputs"]) for t in batch.trajectories], fix.library, fix.theta
    )
