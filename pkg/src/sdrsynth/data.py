"""Experiment data matrices, assumption checks, and the data-consistency set.

Data from T transitions is arranged as

    X0 = [Xi_A(x(0))x(0) ... Xi_A(x(T-1))x(T-1)]      (n_A x T)
    X1 = [x(1) ... x(T)]                              (n  x T)
    U0 = [Xi_B(x(0))u(0) ... Xi_B(x(T-1))u(T-1)]      (n_B x T)

so that X1 = E_A X0 + E_B U0 + D0 with the unknown noise D0 bounded in energy
by D0 D0' <= Theta.  All coefficient pairs Z = [E_A E_B] consistent with the
data form

    C = {Z : Z A Z' + Z B' + B Z' + C <= 0}
      = {Z_c + Q^(1/2) Y A^(-1/2) : ||Y|| <= 1}        (full row rank [X0;U0])

with A = [X0;U0][X0;U0]', B = -X1[X0;U0]', C = X1 X1' - Theta,
Z_c = -B A^(-1), Q = B A^(-1) B' - C.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import ConfigError, DataError
from .model import BasisLibrary

RANK_RTOL = 1e-8
PSD_CLIP_RTOL = 1e-8
MEMBERSHIP_RTOL = 1e-8

DATASET_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ExperimentData:
    X0: np.ndarray
    X1: np.ndarray
    U0: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        T = self.X0.shape[1]
        if self.X1.shape[1] != T or self.U0.shape[1] != T:
            raise DataError("X0, X1, U0 must have the same number of columns")
        n = self.X1.shape[0]
        if self.theta.shape != (n, n):
            raise DataError(f"theta must be {n} x {n}")
        if not np.allclose(self.theta, self.theta.T, atol=1e-12):
            raise DataError("theta must be symmetric")
        if np.linalg.eigvalsh(self.theta).min() < -1e-12:
            raise DataError("theta must be positive semidefinite")

    @property
    def T(self) -> int:
        return self.X0.shape[1]

    @property
    def regressors(self) -> np.ndarray:
        """Stacked [X0; U0], shape (n_A + n_B, T)."""
        return np.vstack([self.X0, self.U0])


def assemble(trajectories, lib: BasisLibrary, theta) -> ExperimentData:
    """Arrange raw experiments into (X0, X1, U0).

    Each trajectory is a (states, inputs) pair with states of shape
    (T_e + 1, n) and inputs of shape (T_e, m); dicts with 'states'/'inputs'
    keys are also accepted.  Columns are concatenated across experiments in
    order.
    """
    cols_X0, cols_X1, cols_U0 = [], [], []
    for traj in trajectories:
        if isinstance(traj, dict):
            states, inputs = traj["states"], traj["inputs"]
        else:
            states, inputs = traj
        states = np.asarray(states, dtype=float)
        inputs = np.asarray(inputs, dtype=float)
        if states.ndim != 2 or states.shape[0] < 2:
            raise DataError("each trajectory needs at least two states")
        if states.shape[1] != lib.n:
            raise DataError(f"state dimension {states.shape[1]} != library n = {lib.n}")
        inputs = inputs.reshape(states.shape[0] - 1, lib.m)
        X = states[:-1].T  # (n, T_e)
        cols_X0.append(lib.stack_A(X))
        cols_U0.append(lib.stack_B(X, inputs.T))
        cols_X1.append(states[1:].T)
    if not cols_X0:
        raise DataError("no trajectories given")
    theta = np.asarray(theta, dtype=float)
    return ExperimentData(
        X0=np.hstack(cols_X0),
        X1=np.hstack(cols_X1),
        U0=np.hstack(cols_U0),
        theta=theta,
    )


def check_full_row_rank(data: ExperimentData, rtol: float = RANK_RTOL):
    """Full-row-rank check of [X0; U0]; returns (ok, sigma_min)."""
    Z = data.regressors
    sv = np.linalg.svd(Z, compute_uv=False)
    if sv.size == 0 or data.T < Z.shape[0]:
        return False, 0.0 if sv.size < Z.shape[0] else float(sv[-1])
    ok = sv.size == Z.shape[0] and sv[-1] > rtol * sv[0]
    return bool(ok), float(sv[-1])


def _psd_sqrt(M, label):
    """Symmetric PSD square root with small negative eigenvalues clipped."""
    M = 0.5 * (M + M.T)
    w, V = np.linalg.eigh(M)
    scale = max(abs(w[-1]), 1.0)
    if w[0] < -PSD_CLIP_RTOL * scale:
        raise DataError(
            f"{label} is indefinite (min eigenvalue {w[0]:.3e}); "
            "the noise bound theta is too small for this data"
        )
    return V @ np.diag(np.sqrt(np.clip(w, 0.0, None))) @ V.T


@dataclass(frozen=True)
class ConsistencySet:
    """Quadratic-matrix-inequality form and center/radius form of C."""

    A_mat: np.ndarray
    B_mat: np.ndarray
    C_mat: np.ndarray
    Zc: np.ndarray
    Qmat: np.ndarray
    Q_half: np.ndarray
    A_inv_half: np.ndarray

    @property
    def n(self) -> int:
        return self.B_mat.shape[0]

    @property
    def p(self) -> int:
        """Number of stacked regressor rows n_A + n_B."""
        return self.A_mat.shape[0]

    def scale(self) -> float:
        return 1.0 + float(np.linalg.norm(self.A_mat, 2))

    def sample_members(self, count, seed):
        """Members Z_c + Q^(1/2) Y A^(-1/2) with ||Y|| <= 1, seeded."""
        rng = np.random.default_rng([seed, 0x5E7])
        out = []
        for _ in range(count):
            raw = rng.normal(size=(self.n, self.p))
            norm = np.linalg.norm(raw, 2)
            radius = rng.uniform(0.0, 1.0)
            Y = raw / norm * radius if norm > 0 else raw
            out.append(self.Zc + self.Q_half @ Y @ self.A_inv_half)
        return out


def build_consistency_set(data: ExperimentData) -> ConsistencySet:
    ok, smin = check_full_row_rank(data)
    if not ok:
        raise DataError(
            f"[X0; U0] is rank deficient (sigma_min = {smin:.3e}); "
            "collect richer experiments"
        )
    Z0 = data.regressors
    A_mat = Z0 @ Z0.T
    B_mat = -data.X1 @ Z0.T
    C_mat = data.X1 @ data.X1.T - data.theta
    try:
        cho = scipy.linalg.cho_factor(A_mat)
    except scipy.linalg.LinAlgError as exc:
        raise DataError(f"Gram matrix not positive definite: {exc}") from exc
    AinvBt = scipy.linalg.cho_solve(cho, B_mat.T)
    Zc = -AinvBt.T
    raw_Q = B_mat @ AinvBt - C_mat
    Qmat = 0.5 * (raw_Q + raw_Q.T)
    Q_half = _psd_sqrt(Qmat, "Q = B A^-1 B' - C")
    w, V = np.linalg.eigh(A_mat)
    A_inv_half = V @ np.diag(w**-0.5) @ V.T
    return ConsistencySet(A_mat, B_mat, C_mat, Zc, Qmat, Q_half, A_inv_half)


def membership(cset: ConsistencySet, Z, rtol: float = MEMBERSHIP_RTOL) -> bool:
    """True iff Z A Z' + Z B' + B Z' + C <= 0 up to rtol * scale."""
    Z = np.asarray(Z, dtype=float)
    if Z.shape != (cset.n, cset.p):
        raise DataError(f"candidate must be {cset.n} x {cset.p}, got {Z.shape}")
    M = Z @ cset.A_mat @ Z.T + Z @ cset.B_mat.T + cset.B_mat @ Z.T + cset.C_mat
    return bool(np.linalg.eigvalsh(M).max() <= rtol * cset.scale())


# ---------------------------------------------------------------------------
# CSV / manifest interchange
# ---------------------------------------------------------------------------


def write_trajectory_csv(path, states, inputs, dt=1.0):
    """One experiment per file: columns t, x1..xn, u1..um.

    Row k holds x(k) and the input applied at step k; the final row carries
    the terminal state with zero-filled input columns.
    """
    states = np.asarray(states, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    n = states.shape[1]
    m = inputs.shape[1]
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i+1}" for i in range(n)] + [f"u{j+1}" for j in range(m)])
        for k in range(states.shape[0]):
            row = [f"{k * dt:.10g}"] + [f"{v:.17g}" for v in states[k]]
            u = inputs[k] if k < inputs.shape[0] else np.zeros(m)
            row += [f"{v:.17g}" for v in u]
            w.writerow(row)


def read_trajectory_csv(path):
    """Inverse of write_trajectory_csv; returns (states, inputs)."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path} is empty")
    header = rows[0]
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    ucols = [i for i, h in enumerate(header) if h.startswith("u")]
    if not xcols:
        raise DataError(f"{path} has no state columns")
    body = np.asarray([[float(v) for v in row] for row in rows[1:]], dtype=float)
    states = body[:, xcols]
    inputs = body[:-1, ucols] if ucols else np.zeros((states.shape[0] - 1, 0))
    return states, inputs


def write_manifest(path, csv_files, theta, dt=1.0):
    path = Path(path)
    doc = {
        "format_version": DATASET_FORMAT_VERSION,
        "dt": dt,
        "theta": np.asarray(theta, dtype=float).tolist(),
        "files": [str(f) for f in csv_files],
    }
    path.write_text(json.dumps(doc, indent=2) + "\n")


def load_dataset(manifest_path, lib: BasisLibrary) -> ExperimentData:
    """Assemble an ExperimentData from a dataset manifest."""
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest {manifest_path}: {exc}") from exc
    if doc.get("format_version") != DATASET_FORMAT_VERSION:
        raise ConfigError(
            f"unsupported dataset format_version {doc.get('format_version')!r}"
        )
    theta = np.asarray(doc["theta"], dtype=float)
    trajectories = []
    for name in doc["files"]:
        fpath = Path(name)
        if not fpath.is_absolute():
            fpath = manifest_path.parent / fpath
        if not fpath.exists():
            raise ConfigError(f"manifest references missing file {fpath}")
        trajectories.append(read_trajectory_csv(fpath))
    return assemble(trajectories, lib, theta)
