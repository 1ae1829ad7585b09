"""Synthesis entry points: vertex LMIs in, certified gains and ROA radii out.

All four modes share the pattern: enumerate a sound vertex set, assemble the
block LMIs, solve, recover K = Y Gamma^-1, and compute

    r0 = min{ r, sqrt( lmax(G) lmin(G) / (lmax(G)^2 - eps lmin(G)) ) * r }.

Every returned certificate is re-substituted into the literal vertex blocks
with an independent eigenvalue check; data-driven results are additionally
validated on sampled members of the consistency set (the single gain must
stabilize each of them on every vertex).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import lmi
from .data import ConsistencySet, ExperimentData, build_consistency_set, check_full_row_rank
from .errors import ConfigError, DataError, NumericalFailure, SdrsynthError
from .model import (
    BasisLibrary,
    SdrModel,
    VertexSet,
    build_basis_vertices,
    build_model_vertices,
)

RESULT_FORMAT_VERSION = 1
MEMBER_CHECK_TOL = 1e-6


class RoaFormulaError(SdrsynthError):
    """roa_radius preconditions violated (non-SPD Gamma or eps too large)."""


def roa_radius(Gamma, eps_gamma, r) -> float:
    """Certified ball radius from (Gamma, eps_Gamma) on the design ball B_r."""
    Gamma = np.asarray(Gamma, dtype=float)
    w = np.linalg.eigvalsh(0.5 * (Gamma + Gamma.T))
    lmin, lmax = float(w[0]), float(w[-1])
    if lmin <= 0:
        raise RoaFormulaError(f"Gamma is not positive definite (lmin = {lmin:.3e})")
    if eps_gamma <= 0:
        raise RoaFormulaError("eps_gamma must be positive")
    den = lmax * lmax - eps_gamma * lmin
    if den <= 0:
        raise RoaFormulaError(
            f"eps_gamma = {eps_gamma:.3e} >= lmax^2/lmin; radius formula undefined"
        )
    return float(min(r, np.sqrt(lmax * lmin / den) * r))


@dataclass(frozen=True)
class RoaDescription:
    """Certified region: a ball, optionally intersected with an ellipsoid or
    united with a sublevel ellipsoid found numerically later."""

    ball_radius: float
    algebra: str  # 'ball' | 'ball-intersect-ellipsoid' | 'ball-union-sublevel'
    ellipsoid_matrix: np.ndarray | None = None
    level: float | None = None

    def __post_init__(self):
        if self.ball_radius <= 0:
            raise ConfigError("ball radius must be positive")
        if self.ellipsoid_matrix is not None:
            w = np.linalg.eigvalsh(self.ellipsoid_matrix)
            if w[0] <= 0:
                raise ConfigError("ellipsoid matrix must be positive definite")

    def contains(self, x, slack=1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        if np.linalg.norm(x) > self.ball_radius + slack:
            return False
        if self.ellipsoid_matrix is not None:
            return float(x @ self.ellipsoid_matrix @ x) <= self.level + slack
        return True


@dataclass
class SynthesisOptions:
    objective: str | None = None      # None -> per-mode default
    objective_c1: float | None = None
    objective_c2: float | None = None
    vertex_cap: int = 4096
    vertex_mode: str = "sound"
    gamma_floor: float = lmi.DEFAULT_GAMMA_FLOOR
    epsilon_floor: float = lmi.DEFAULT_EPSILON_FLOOR
    normalization_cap: float | None = None  # None -> per-mode default
    recheck_tol: float = lmi.DEFAULT_RECHECK_TOL
    member_checks: int = 50
    member_seed: int = 2024
    alpha: float | None = None        # data-mode variable scale; None -> auto
    solver_ladder: object = None

    def resolved_objective(self, mode):
        kind = self.objective
        c1, c2 = self.objective_c1, self.objective_c2
        if kind is None:
            if mode == "model-sat":
                kind, c1, c2 = "spread", 1.0, 0.1
            elif mode == "data-sat":
                kind, c1, c2 = "spread", 0.0, 2.0
            else:
                kind = "feasibility"
        cap = self.normalization_cap
        if cap is None:
            cap = 1.0 if mode == "model" else 1e6
        return lmi.Objective(
            kind=kind,
            c1=c1 if c1 is not None else 0.0,
            c2=c2 if c2 is not None else 0.0,
            cap=cap,
        )


@dataclass
class SynthesisResult:
    mode: str
    r: float
    r0: float
    Gamma: np.ndarray
    Y: np.ndarray
    eps_gamma: float
    K: np.ndarray
    residual: float
    vertex_count: int
    solver_stats: dict = field(default_factory=dict)
    W: np.ndarray | None = None
    S: np.ndarray | None = None
    u_max: np.ndarray | None = None
    alpha: float = 1.0
    member_residual: float | None = None

    @property
    def n(self) -> int:
        return self.Gamma.shape[0]

    @property
    def m(self) -> int:
        return self.K.shape[0]

    @property
    def P(self) -> np.ndarray:
        """Lyapunov matrix V(x) = x' P x with P = Gamma^-1."""
        return np.linalg.inv(self.Gamma)

    @property
    def saturated(self) -> bool:
        return self.mode.endswith("-sat")

    def roa(self) -> RoaDescription:
        if self.saturated:
            return RoaDescription(self.r0, "ball-intersect-ellipsoid", self.P, 1.0)
        return RoaDescription(self.r0, "ball")

    def lyapunov(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ self.P @ x)

    def to_dict(self) -> dict:
        def mat(M):
            if M is None:
                return None
            M = np.asarray(M, dtype=float)
            return {"rows": M.shape[0], "cols": M.shape[1], "data": M.ravel().tolist()}

        return {
            "format_version": RESULT_FORMAT_VERSION,
            "mode": self.mode,
            "r": self.r,
            "r0": self.r0,
            "eps_gamma": self.eps_gamma,
            "residual": self.residual,
            "vertex_count": self.vertex_count,
            "alpha": self.alpha,
            "member_residual": self.member_residual,
            "Gamma": mat(self.Gamma),
            "Y": mat(self.Y),
            "K": mat(self.K),
            "W": mat(self.W),
            "S": mat(self.S),
            "u_max": None if self.u_max is None else np.asarray(self.u_max).tolist(),
            "solver_stats": self.solver_stats,
        }

    @staticmethod
    def from_dict(doc: dict) -> "SynthesisResult":
        if doc.get("format_version") != RESULT_FORMAT_VERSION:
            raise ConfigError(
                f"unsupported result format_version {doc.get('format_version')!r}"
            )

        def unmat(entry):
            if entry is None:
                return None
            return np.asarray(entry["data"], dtype=float).reshape(
                entry["rows"], entry["cols"]
            )

        return SynthesisResult(
            mode=doc["mode"],
            r=doc["r"],
            r0=doc["r0"],
            Gamma=unmat(doc["Gamma"]),
            Y=unmat(doc["Y"]),
            eps_gamma=doc["eps_gamma"],
            K=unmat(doc["K"]),
            residual=doc["residual"],
            vertex_count=doc["vertex_count"],
            solver_stats=doc.get("solver_stats", {}),
            W=unmat(doc.get("W")),
            S=unmat(doc.get("S")),
            u_max=None if doc.get("u_max") is None else np.asarray(doc["u_max"], dtype=float),
            alpha=doc.get("alpha", 1.0),
            member_residual=doc.get("member_residual"),
        )


def save_result(path, result: SynthesisResult):
    Path(path).write_text(json.dumps(result.to_dict(), indent=2) + "\n")


def load_result(path) -> SynthesisResult:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read result document {path}: {exc}") from exc
    return SynthesisResult.from_dict(doc)


def _gain_from(Gamma, Y):
    return np.linalg.solve(Gamma.T, Y.T).T


def _summarize(mode, r, assignment, verts, sol, u_max=None, alpha=1.0, scale=1.0):
    Gamma = scale * assignment["Gamma"]
    Y = scale * assignment["Y"]
    eps = scale * assignment["eps_gamma"]
    K = _gain_from(Gamma, Y)
    result = SynthesisResult(
        mode=mode,
        r=r,
        r0=roa_radius(Gamma, eps, r),
        Gamma=Gamma,
        Y=Y,
        eps_gamma=eps,
        K=K,
        residual=sol.max_scaled_violation,
        vertex_count=len(verts),
        solver_stats=sol.solver_stats,
        u_max=None if u_max is None else np.atleast_1d(np.asarray(u_max, dtype=float)),
        alpha=alpha,
    )
    if "W" in assignment:
        result.W = scale * assignment["W"]
        result.S = scale * assignment["S"]
    return result


# ---------------------------------------------------------------------------
# Model-based synthesis (known A(x), B(x))
# ---------------------------------------------------------------------------


def synthesize_model(
    model: SdrModel, r: float, options: SynthesisOptions | None = None
) -> SynthesisResult:
    options = options or SynthesisOptions()
    verts = build_model_vertices(model, r, options.vertex_mode, options.vertex_cap)
    p = lmi.SdpProblem("model-stability")
    p.sym_var("Gamma", model.n)
    p.rect_var("Y", model.m, model.n)
    p.scalar_var("eps_gamma")
    p.add_eigen_floor("Gamma", options.gamma_floor)
    p.add_eigen_floor("eps_gamma", options.epsilon_floor)
    for G in verts.vertices:
        p.add_model_stability_block(G)
    sol = p.solve(options.resolved_objective("model"), options.recheck_tol,
                  options.solver_ladder)
    return _summarize("model", r, sol.assignment, verts, sol)


def synthesize_model_saturated(
    model: SdrModel, r: float, u_max, options: SynthesisOptions | None = None
) -> SynthesisResult:
    options = options or SynthesisOptions()
    u_max = np.atleast_1d(np.asarray(u_max, dtype=float))
    if u_max.shape != (model.m,):
        raise ConfigError(f"u_max must have {model.m} entries")
    verts = build_model_vertices(model, r, options.vertex_mode, options.vertex_cap)
    p = lmi.SdpProblem("model-saturation")
    p.sym_var("Gamma", model.n)
    p.rect_var("Y", model.m, model.n)
    p.rect_var("W", model.m, model.n)
    p.diag_var("S", model.m)
    p.scalar_var("eps_gamma")
    p.add_eigen_floor("Gamma", options.gamma_floor)
    p.add_eigen_floor("eps_gamma", options.epsilon_floor)
    p.add_eigen_floor("S", options.epsilon_floor)
    for G in verts.vertices:
        p.add_saturation_blocks(G, u_max)
    sol = p.solve(options.resolved_objective("model-sat"), options.recheck_tol,
                  options.solver_ladder)
    return _summarize("model-sat", r, sol.assignment, verts, sol, u_max=u_max)


# ---------------------------------------------------------------------------
# Data-driven synthesis (library + noisy experiments)
# ---------------------------------------------------------------------------


def _auto_alpha(cset: ConsistencySet, verts: VertexSet) -> float:
    """Variable scale for the data LMIs: geometric mean of the Gamma-scale
    floor (lmax(Q), how much uncertainty must be dominated) and ceiling
    (lmin(A)/max||Q_vertex||^2, where the quadratic term takes over)."""
    qmax2 = max(float(np.linalg.norm(Q, 2)) ** 2 for Q in verts.vertices)
    ceiling = float(np.linalg.eigvalsh(cset.A_mat).min()) / (1.0 + qmax2)
    floor = max(float(np.linalg.eigvalsh(cset.Qmat).max()), 1e-9 * ceiling)
    alpha = float(np.sqrt(floor * ceiling))
    if not np.isfinite(alpha) or alpha <= 0:
        return 1.0
    return alpha


def _prepare_data(lib, data, r, options):
    ok, smin = check_full_row_rank(data)
    if not ok:
        raise DataError(
            f"assumption violated: [X0; U0] not full row rank (sigma_min = {smin:.3e})"
        )
    cset = build_consistency_set(data)
    verts = build_basis_vertices(lib, r, options.vertex_mode, options.vertex_cap)
    alpha = options.alpha if options.alpha is not None else _auto_alpha(cset, verts)
    return cset, verts, alpha


def _literal_data_recheck(cset, verts, assignment, u_max, options):
    """Re-substitute the unscaled certificate into the raw paper blocks."""
    check = lmi.SdpProblem("data-recheck")
    n = assignment["Gamma"].shape[0]
    m = assignment["Y"].shape[0]
    check.sym_var("Gamma", n)
    check.rect_var("Y", m, n)
    if u_max is not None:
        check.rect_var("W", m, n)
        check.diag_var("S", m)
    check.scalar_var("eps_gamma")
    for Q in verts.vertices:
        if u_max is None:
            check.add_data_stability_block(cset, Q)
        else:
            check.add_data_saturation_block(cset, Q, u_max)
    ok, max_v, max_sv = check.verify(assignment, options.recheck_tol)
    if not ok:
        raise NumericalFailure(
            f"certificate failed raw-block re-substitution "
            f"(scaled violation {max_sv:.3e} > {options.recheck_tol:.1e})"
        )
    return max_sv


def _member_recheck(cset, verts, result, options):
    """Sampled consistency-set members must satisfy the per-system vertex LMI
    with the single returned gain (saturated runs use the saturated block)."""
    if options.member_checks <= 0:
        return None
    members = cset.sample_members(options.member_checks, options.member_seed)
    worst = -np.inf
    for Z in members:
        for Q in verts.vertices:
            G = Z @ Q
            if result.saturated:
                blk = lmi.model_saturation_block(
                    G, result.Gamma, result.Y, result.W, result.S, result.eps_gamma
                )
            else:
                blk = lmi.model_stability_block(
                    G, result.Gamma, result.Y, result.eps_gamma
                )
            worst = max(worst, float(np.linalg.eigvalsh(blk).max()))
    scale = 1.0 + float(np.linalg.norm(result.Gamma, 2))
    if worst > MEMBER_CHECK_TOL * scale:
        raise NumericalFailure(
            f"sampled consistency-set member violates the closed-loop LMI "
            f"(residual {worst:.3e})"
        )
    return worst


def synthesize_data(
    lib: BasisLibrary,
    data: ExperimentData,
    r: float,
    options: SynthesisOptions | None = None,
) -> SynthesisResult:
    options = options or SynthesisOptions()
    cset, verts, alpha = _prepare_data(lib, data, r, options)
    p = lmi.SdpProblem("data-stability")
    p.sym_var("Gamma", lib.n)
    p.rect_var("Y", lib.m, lib.n)
    p.scalar_var("eps_gamma")
    p.add_eigen_floor("Gamma", options.gamma_floor / alpha)
    p.add_eigen_floor("eps_gamma", options.epsilon_floor / alpha)
    for Q in verts.vertices:
        p.add_custom_block(
            f"data-stab[{len(p._constraints)}]", "nsd",
            lambda env, lin, Q=Q: lmi.data_stability_center_block(
                cset.Zc, cset.Qmat, cset.A_inv_half, alpha, Q,
                env["Gamma"], env["Y"], env["eps_gamma"], lin,
            ),
        )
    sol = p.solve(options.resolved_objective("data"), options.recheck_tol,
                  options.solver_ladder)
    result = _summarize("data", r, sol.assignment, verts, sol, alpha=alpha, scale=alpha)
    unscaled = {"Gamma": result.Gamma, "Y": result.Y, "eps_gamma": result.eps_gamma}
    result.residual = _literal_data_recheck(cset, verts, unscaled, None, options)
    result.member_residual = _member_recheck(cset, verts, result, options)
    return result


def synthesize_data_saturated(
    lib: BasisLibrary,
    data: ExperimentData,
    r: float,
    u_max,
    options: SynthesisOptions | None = None,
) -> SynthesisResult:
    options = options or SynthesisOptions()
    u_max = np.atleast_1d(np.asarray(u_max, dtype=float))
    if u_max.shape != (lib.m,):
        raise ConfigError(f"u_max must have {lib.m} entries")
    cset, verts, alpha = _prepare_data(lib, data, r, options)
    p = lmi.SdpProblem("data-saturation")
    p.sym_var("Gamma", lib.n)
    p.rect_var("Y", lib.m, lib.n)
    p.rect_var("W", lib.m, lib.n)
    p.diag_var("S", lib.m)
    p.scalar_var("eps_gamma")
    p.add_eigen_floor("Gamma", options.gamma_floor / alpha)
    p.add_eigen_floor("eps_gamma", options.epsilon_floor / alpha)
    p.add_eigen_floor("S", options.epsilon_floor / alpha)
    for i in range(lib.m):
        # scaled (input-bound) block: [[Gt, Wt_i'], [Wt_i, u_i^2 / alpha]] >= 0
        p.add_custom_block(
            f"ubound[{i}]", "psd",
            lambda env, lin, i=i: lmi.input_bound_block(
                env["Gamma"], env["W"][i : i + 1, :], float(u_max[i]) / np.sqrt(alpha), lin
            ),
        )
    for Q in verts.vertices:
        p.add_custom_block(
            f"data-sat[{len(p._constraints)}]", "nsd",
            lambda env, lin, Q=Q: lmi.data_saturation_center_block(
                cset.Zc, cset.Qmat, cset.A_inv_half, alpha, Q,
                env["Gamma"], env["Y"], env["W"], env["S"], env["eps_gamma"], lin,
            ),
        )
    sol = p.solve(options.resolved_objective("data-sat"), options.recheck_tol,
                  options.solver_ladder)
    result = _summarize(
        "data-sat", r, sol.assignment, verts, sol, u_max=u_max, alpha=alpha, scale=alpha
    )
    unscaled = {
        "Gamma": result.Gamma,
        "Y": result.Y,
        "W": result.W,
        "S": result.S,
        "eps_gamma": result.eps_gamma,
    }
    result.residual = _literal_data_recheck(cset, verts, unscaled, u_max, options)
    result.member_residual = _member_recheck(cset, verts, result, options)
    return result
