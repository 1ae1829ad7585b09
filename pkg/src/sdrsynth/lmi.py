"""Block LMIs for vertex-polytope controller synthesis, plus the solver contract.

Every synthesis condition is a finite family of symmetric blocks, one per
polytope vertex, affine in the decision variables:

* model stability (block size 2n):

      [ -G   V[G;Y] ]
      [  *   -G+eI  ]  <= 0        V = [A B] vertex, u = Kx, K = Y G^-1

* model saturation: per input row i the (n+1) block [[G, W_i'], [W_i, u_i^2]]
  >= 0 and per vertex the (n+m+n) block

      [ -G+eI   -Y'-W'   [G;Y]'V' ]
      [ -Y-W     -2S     [0;S]'V' ]
      [ V[G;Y]  V[0;S]     -G     ]  <= 0

* data stability (block size 2n + n_A + n_B), constants from the data Gram:

      [ -G-C    0      B   ]
      [  0    -G+eI  -R'   ]        R = Q [G; Y], Q a basis vertex
      [  B'    -R     -A   ]  <= 0

* data saturation: input-row blocks as above plus the (n+m+n+n_A+n_B) block

      [ -G+eI  -Y'-W'   0     R' ]
      [ -Y-W    -2S     0     T' ]        T = Q [0; S]
      [  0       0    -G-C   -B  ]
      [  R       T     -B'   -A  ]  <= 0

The data blocks are *solved* in an equivalent center form over
(Z_c, Q, A^(-1/2)) obtained by a Schur complement of the Gram block; the raw
forms mix constants that dwarf the variables and defeat interior-point
scaling.  Returned points are always re-substituted into the raw blocks.

Backend contract: problems are assembled once and handed to a conic solver
(CLARABEL, then fallbacks); any point the solver claims feasible must pass an
independent dense-eigenvalue re-substitution before it is returned.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .errors import ConfigError, InfeasibleProblem, NumericalFailure

DEFAULT_RECHECK_TOL = 1e-6
DEFAULT_GAMMA_FLOOR = 1e-6
DEFAULT_EPSILON_FLOOR = 1e-8


class _NumpyLin:
    """Dense backend for block assembly (re-substitution path)."""

    @staticmethod
    def bmat(rows):
        return np.block([[np.atleast_2d(b) for b in row] for row in rows])

    @staticmethod
    def vstack(mats):
        return np.vstack([np.atleast_2d(m) for m in mats])

    @staticmethod
    def scalar_matrix(v):
        return np.array([[float(v)]])


class _CvxpyLin:
    """cvxpy backend for the same builders."""

    @staticmethod
    def bmat(rows):
        return cp.bmat(rows)

    @staticmethod
    def vstack(mats):
        return cp.vstack(mats)

    @staticmethod
    def scalar_matrix(v):
        return cp.reshape(v, (1, 1), order="F") if isinstance(v, cp.Expression) else np.array([[float(v)]])


NUMPY_LIN = _NumpyLin()
CVXPY_LIN = _CvxpyLin()


# ---------------------------------------------------------------------------
# Pure block builders (backend-agnostic)
# ---------------------------------------------------------------------------


def model_stability_block(G, Gamma, Y, eps, lin=NUMPY_LIN):
    n = G.shape[0]
    top = G @ lin.vstack([Gamma, Y])
    return lin.bmat([[-Gamma, top], [top.T, -Gamma + eps * np.eye(n)]])


def input_bound_block(Gamma, W_row, u_level, lin=NUMPY_LIN):
    return lin.bmat([[Gamma, W_row.T], [W_row, lin.scalar_matrix(u_level**2)]])


def model_saturation_block(G, Gamma, Y, W, S, eps, lin=NUMPY_LIN):
    n = G.shape[0]
    m = S.shape[0]
    R = G @ lin.vstack([Gamma, Y])
    T = G @ lin.vstack([np.zeros((n, m)), S])
    return lin.bmat(
        [
            [-Gamma + eps * np.eye(n), -Y.T - W.T, R.T],
            [-Y - W, -2 * S, T.T],
            [R, T, -Gamma],
        ]
    )


def data_stability_block(A_mat, B_mat, C_mat, Q, Gamma, Y, eps, lin=NUMPY_LIN):
    n = B_mat.shape[0]
    R = Q @ lin.vstack([Gamma, Y])
    Znn = np.zeros((n, n))
    return lin.bmat(
        [
            [-Gamma - C_mat, Znn, B_mat],
            [Znn, -Gamma + eps * np.eye(n), -R.T],
            [B_mat.T, -R, -A_mat],
        ]
    )


def data_saturation_block(A_mat, B_mat, C_mat, Q, Gamma, Y, W, S, eps, lin=NUMPY_LIN):
    n = B_mat.shape[0]
    m = S.shape[0]
    R = Q @ lin.vstack([Gamma, Y])
    T = Q @ lin.vstack([np.zeros((n, m)), S])
    Znn = np.zeros((n, n))
    Znm = np.zeros((n, m))
    return lin.bmat(
        [
            [-Gamma + eps * np.eye(n), -Y.T - W.T, Znn, R.T],
            [-Y - W, -2 * S, Znm.T, T.T],
            [Znn, Znm, -Gamma - C_mat, -B_mat],
            [R, T, -B_mat.T, -A_mat],
        ]
    )


def data_stability_center_block(Zc, Qmat, A_inv_half, alpha, Q, Gamma, Y, eps, lin=NUMPY_LIN):
    """Schur-equivalent of data_stability_block for variables scaled by alpha.

    With (G, Y, e) = alpha * (Gamma, Y, eps) the raw block is NSD iff this
    one is; constants here are O(1) regardless of the Gram magnitude.
    """
    n = Zc.shape[0]
    p = A_inv_half.shape[0]
    R = Q @ lin.vstack([Gamma, Y])
    ZR = Zc @ R
    AR = np.sqrt(alpha) * (A_inv_half @ R)
    Znp = np.zeros((n, p))
    return lin.bmat(
        [
            [-Gamma + Qmat / alpha, ZR, Znp],
            [ZR.T, -Gamma + eps * np.eye(n), AR.T],
            [Znp.T, AR, -np.eye(p)],
        ]
    )


def data_saturation_center_block(
    Zc, Qmat, A_inv_half, alpha, Q, Gamma, Y, W, S, eps, lin=NUMPY_LIN
):
    n = Zc.shape[0]
    m = S.shape[0]
    p = A_inv_half.shape[0]
    R = Q @ lin.vstack([Gamma, Y])
    T = Q @ lin.vstack([np.zeros((n, m)), S])
    AR = np.sqrt(alpha) * (A_inv_half @ R)
    AT = np.sqrt(alpha) * (A_inv_half @ T)
    Znp = np.zeros((n, p))
    return lin.bmat(
        [
            [-Gamma + eps * np.eye(n), -Y.T - W.T, (Zc @ R).T, AR.T],
            [-Y - W, -2 * S, (Zc @ T).T, AT.T],
            [Zc @ R, Zc @ T, -Gamma + Qmat / alpha, Znp],
            [AR, AT, Znp.T, -np.eye(p)],
        ]
    )


# ---------------------------------------------------------------------------
# Problem container
# ---------------------------------------------------------------------------


@dataclass
class _Constraint:
    label: str
    sense: str  # 'nsd' | 'psd'
    builder: object  # callable(env, lin) -> block
    const_norm: float | None = None


@dataclass
class SdpSolution:
    status: str  # 'optimal' | 'feasible' | 'infeasible' | 'numerical-failure'
    assignment: dict
    max_violation: float
    max_scaled_violation: float
    solver_stats: dict = field(default_factory=dict)


@dataclass
class Objective:
    """Objective for solve().

    * 'feasibility': maximize eps - (lmax - lmin); the regularized epsilon
      maximization used by the plain synthesis modes (keeps the ROA radius
      formula non-degenerate and the certificate near-isotropic).
    * 'max-epsilon': maximize eps alone.
    * 'spread': minimize lmax - lmin - c1*eps - c2*trace(Gamma) (the
      saturated-mode objectives).

    ``cap`` bounds lmax(Gamma); homogeneous problems need it as a
    normalization, the others as a numerical guard.
    """

    kind: str = "feasibility"
    c1: float = 0.0
    c2: float = 0.0
    spectrum_var: str = "Gamma"
    epsilon_var: str = "eps_gamma"
    cap: float | None = None


class SdpProblem:
    """Named-variable SDP with affine PSD/NSD block constraints."""

    def __init__(self, name="sdp"):
        self.name = name
        self._vars = {}  # name -> (kind, dims)
        self._cvx = {}
        self._constraints = []

    # -- variables ---------------------------------------------------------

    def sym_var(self, name, n):
        self._register(name, ("sym", n), cp.Variable((n, n), symmetric=True))

    def rect_var(self, name, rows, cols):
        self._register(name, ("rect", (rows, cols)), cp.Variable((rows, cols)))

    def diag_var(self, name, m):
        self._register(name, ("diag", m), cp.Variable(m, nonneg=True))

    def scalar_var(self, name, nonneg=True):
        self._register(name, ("scalar", 1), cp.Variable(nonneg=nonneg))

    def _register(self, name, spec, var):
        if name in self._vars:
            raise ConfigError(f"variable {name!r} already declared")
        self._vars[name] = spec
        self._cvx[name] = var

    def var_names(self):
        return tuple(self._vars)

    def _cvx_env(self):
        env = {}
        for name, (kind, _) in self._vars.items():
            v = self._cvx[name]
            env[name] = cp.diag(v) if kind == "diag" else v
        return env

    # -- constraints --------------------------------------------------------

    def add_custom_block(self, label, sense, builder):
        if sense not in ("nsd", "psd"):
            raise ConfigError(f"sense must be 'nsd' or 'psd', got {sense!r}")
        self._constraints.append(_Constraint(label, sense, builder))
        return label

    def add_model_stability_block(self, G, names=("Gamma", "Y", "eps_gamma"), label=None):
        G = np.asarray(G, dtype=float)
        g, y, e = names
        label = label or f"stab[{len(self._constraints)}]"
        return self.add_custom_block(
            label, "nsd",
            lambda env, lin, G=G: model_stability_block(G, env[g], env[y], env[e], lin),
        )

    def add_input_bound_block(self, row, u_level, names=("Gamma", "W"), label=None):
        g, w = names
        label = label or f"ubound[{row}]"
        return self.add_custom_block(
            label, "psd",
            lambda env, lin, i=row, u=float(u_level): input_bound_block(
                env[g], env[w][i : i + 1, :], u, lin
            ),
        )

    def add_saturation_blocks(
        self, G, u_bar, names=("Gamma", "Y", "W", "S", "eps_gamma"), label=None
    ):
        """(14a)-style input blocks (added once) plus the per-vertex NSD block."""
        G = np.asarray(G, dtype=float)
        g, y, w, s, e = names
        u_bar = np.atleast_1d(np.asarray(u_bar, dtype=float))
        handles = []
        for i in range(u_bar.shape[0]):
            lbl = f"ubound[{i}]"
            if not any(c.label == lbl for c in self._constraints):
                handles.append(self.add_input_bound_block(i, u_bar[i], (g, w), lbl))
        label = label or f"sat[{len(self._constraints)}]"
        handles.append(
            self.add_custom_block(
                label, "nsd",
                lambda env, lin, G=G: model_saturation_block(
                    G, env[g], env[y], env[w], env[s], env[e], lin
                ),
            )
        )
        return handles

    def add_data_stability_block(
        self, cset, Q, names=("Gamma", "Y", "eps_gamma"), label=None
    ):
        Q = np.asarray(Q, dtype=float)
        g, y, e = names
        label = label or f"data-stab[{len(self._constraints)}]"
        return self.add_custom_block(
            label, "nsd",
            lambda env, lin, Q=Q: data_stability_block(
                cset.A_mat, cset.B_mat, cset.C_mat, Q, env[g], env[y], env[e], lin
            ),
        )

    def add_data_saturation_block(
        self, cset, Q, u_bar, names=("Gamma", "Y", "W", "S", "eps_gamma"), label=None
    ):
        Q = np.asarray(Q, dtype=float)
        g, y, w, s, e = names
        u_bar = np.atleast_1d(np.asarray(u_bar, dtype=float))
        handles = []
        for i in range(u_bar.shape[0]):
            lbl = f"ubound[{i}]"
            if not any(c.label == lbl for c in self._constraints):
                handles.append(self.add_input_bound_block(i, u_bar[i], (g, w), lbl))
        label = label or f"data-sat[{len(self._constraints)}]"
        handles.append(
            self.add_custom_block(
                label, "nsd",
                lambda env, lin, Q=Q: data_saturation_block(
                    cset.A_mat, cset.B_mat, cset.C_mat, Q,
                    env[g], env[y], env[w], env[s], env[e], lin,
                ),
            )
        )
        return handles

    def add_eigen_floor(self, name, floor, label=None):
        """X >= floor * I as an explicit PSD block."""
        label = label or f"floor[{name}]"
        kind, _ = self._vars[name]
        if kind == "scalar":
            return self.add_custom_block(
                label, "psd",
                lambda env, lin: lin.scalar_matrix(env[name] - floor),
            )
        dim = self._matrix_dim(name)
        return self.add_custom_block(
            label, "psd",
            lambda env, lin: env[name] - floor * np.eye(dim),
        )

    def _matrix_dim(self, name):
        kind, dims = self._vars[name]
        if kind == "sym":
            return dims
        if kind == "diag":
            return dims
        raise ConfigError(f"{name!r} is not a square matrix variable")

    # -- verification --------------------------------------------------------

    def _numeric_env(self, assignment):
        env = {}
        for name, (kind, dims) in self._vars.items():
            if name not in assignment:
                raise ConfigError(f"assignment is missing {name!r}")
            v = assignment[name]
            env[name] = float(v) if kind == "scalar" else np.asarray(v, dtype=float)
        return env

    def _const_norm(self, c):
        if c.const_norm is None:
            zero_env = {}
            for name, (kind, dims) in self._vars.items():
                if kind == "sym":
                    zero_env[name] = np.zeros((dims, dims))
                elif kind == "rect":
                    zero_env[name] = np.zeros(dims)
                elif kind == "diag":
                    zero_env[name] = np.zeros((dims, dims))
                else:
                    zero_env[name] = 0.0
            c.const_norm = float(np.linalg.norm(c.builder(zero_env, NUMPY_LIN), 2))
        return c.const_norm

    def violations(self, assignment):
        """Per-constraint (label, violation, scaled_violation); independent of
        any solver certificate (dense eigenvalue check)."""
        env = self._numeric_env(assignment)
        out = []
        for c in self._constraints:
            block = np.asarray(c.builder(env, NUMPY_LIN), dtype=float)
            ev = np.linalg.eigvalsh(0.5 * (block + block.T))
            violation = float(ev[-1]) if c.sense == "nsd" else float(-ev[0])
            out.append((c.label, violation, violation / (1.0 + self._const_norm(c))))
        return out

    def verify(self, assignment, tol=DEFAULT_RECHECK_TOL):
        """(ok, max_violation, max_scaled_violation) under tol * (1 + ||consts||)."""
        rows = self.violations(assignment)
        if not rows:
            return True, 0.0, 0.0
        max_v = max(v for _, v, _ in rows)
        max_sv = max(sv for _, _, sv in rows)
        return max_sv <= tol, max_v, max_sv

    # -- solving --------------------------------------------------------------

    def _build_cvxpy(self, objective: Objective):
        env = self._cvx_env()
        cons = []
        for c in self._constraints:
            block = c.builder(env, CVXPY_LIN)
            cons.append(block << 0 if c.sense == "nsd" else block >> 0)
        obj = cp.Minimize(0)
        if objective.kind != "none" and objective.spectrum_var in self._vars:
            G = env[objective.spectrum_var]
            n = G.shape[0]
            t = cp.Variable()
            s = cp.Variable()
            cons += [G << t * np.eye(n), G >> s * np.eye(n)]
            if objective.cap is not None:
                cons.append(t <= objective.cap)
            e = env.get(objective.epsilon_var, 0.0)
            if objective.kind == "feasibility":
                obj = cp.Minimize(t - s - e)
            elif objective.kind == "max-epsilon":
                obj = cp.Maximize(e)
            elif objective.kind == "spread":
                obj = cp.Minimize(t - s - objective.c1 * e - objective.c2 * cp.trace(G))
            else:
                raise ConfigError(f"unknown objective kind {objective.kind!r}")
        return cp.Problem(obj, cons)

    def _extract(self):
        out = {}
        for name, (kind, dims) in self._vars.items():
            v = self._cvx[name].value
            if v is None:
                return None
            if kind == "scalar":
                out[name] = float(v)
            elif kind == "diag":
                out[name] = np.diag(np.asarray(v, dtype=float).ravel())
            else:
                out[name] = np.asarray(v, dtype=float)
        return out

    def solve(
        self,
        objective: Objective | None = None,
        recheck_tol: float = DEFAULT_RECHECK_TOL,
        ladder=None,
    ) -> SdpSolution:
        """Solve, then accept only points that survive re-substitution.

        Solver failures and points that fail the independent re-check walk a
        ladder of backends; exhausted means NumericalFailure, never a silent
        downgrade.  Infeasibility reported by a solver is raised immediately.
        """
        objective = objective or Objective()
        problem = self._build_cvxpy(objective)
        attempts = ladder if ladder is not None else default_solver_ladder()
        stats = {"attempts": [], "recheck_tol": recheck_tol}
        for solver, opts in attempts:
            t0 = time.time()
            try:
                with warnings.catch_warnings():
                    # inaccurate-solution warnings are expected on the reduced-
                    # tolerance rungs; the independent re-check decides anyway
                    warnings.simplefilter("ignore", UserWarning)
                    problem.solve(solver=solver, **opts)
                status = problem.status
            except cp.error.SolverError:
                status = "solver_error"
            except Exception as exc:  # canonicalization/driver failure
                status = f"error:{type(exc).__name__}"
            elapsed = time.time() - t0
            stats["attempts"].append({"solver": solver, "status": status, "time": elapsed})
            if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
                raise InfeasibleProblem(
                    f"{self.name}: solver {solver} reports status {status}"
                )
            if status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
                assignment = self._extract()
                if assignment is None:
                    continue
                ok, max_v, max_sv = self.verify(assignment, recheck_tol)
                if ok:
                    final = "optimal" if status == cp.OPTIMAL else "feasible"
                    stats["solver"] = solver
                    stats["objective_value"] = problem.value
                    return SdpSolution(final, assignment, max_v, max_sv, stats)
        raise NumericalFailure(
            f"{self.name}: no solver produced a point passing re-substitution "
            f"(attempts: {stats['attempts']})"
        )

    # -- problem dump -----------------------------------------------------------

    def dump_text(self, path, precision=17):
        """Write the assembled problem in a sparse block-matrix text format.

        Format (one problem per file)::

            sdrsynth-sdp 1
            var <name> <kind> <dims...>          # flattening order, see below
            constraint <label> <sense> <size>
            const <i> <j> <value>                # F0 sparse entries, i <= j
            coef <k> <i> <j> <value>             # dBlock/dx_k sparse entries

        Scalar components x_k enumerate the variables in declaration order:
        symmetric n x n -> upper triangle (i <= j) row-major, rectangle ->
        row-major, diagonal -> diagonal entries, scalar -> itself.  A block is
        reconstructed as F0 + sum_k x_k * F_k; 'nsd' blocks must be <= 0 and
        'psd' blocks >= 0.  Intended for cross-checking with external tools.
        """
        units = []
        for name, (kind, dims) in self._vars.items():
            if kind == "sym":
                for i in range(dims):
                    for j in range(i, dims):
                        units.append((name, ("sym", i, j)))
            elif kind == "rect":
                r, c = dims
                for i in range(r):
                    for j in range(c):
                        units.append((name, ("rect", i, j)))
            elif kind == "diag":
                for i in range(dims):
                    units.append((name, ("diag", i)))
            else:
                units.append((name, ("scalar",)))

        def env_with(unit=None):
            env = {}
            for name, (kind, dims) in self._vars.items():
                if kind == "sym":
                    env[name] = np.zeros((dims, dims))
                elif kind == "rect":
                    env[name] = np.zeros(dims)
                elif kind == "diag":
                    env[name] = np.zeros((dims, dims))
                else:
                    env[name] = 0.0
            if unit is not None:
                name, spec = unit
                if spec[0] == "sym":
                    _, i, j = spec
                    env[name][i, j] = 1.0
                    env[name][j, i] = 1.0
                elif spec[0] == "rect":
                    _, i, j = spec
                    env[name][i, j] = 1.0
                elif spec[0] == "diag":
                    env[name][spec[1], spec[1]] = 1.0
                else:
                    env[name] = 1.0
            return env

        def sparse_lines(tag, M, k=None):
            lines = []
            M = np.asarray(M, dtype=float)
            for i in range(M.shape[0]):
                for j in range(i, M.shape[1]):
                    if M[i, j] != 0.0:
                        head = f"{tag} {k} " if k is not None else f"{tag} "
                        lines.append(f"{head}{i} {j} {M[i, j]:.{precision}g}")
            return lines

        out = ["sdrsynth-sdp 1", f"problem {self.name}"]
        for name, (kind, dims) in self._vars.items():
            d = f"{dims[0]} {dims[1]}" if kind == "rect" else f"{dims}"
            out.append(f"var {name} {kind} {d}")
        zero = env_with()
        for c in self._constraints:
            F0 = np.asarray(c.builder(zero, NUMPY_LIN), dtype=float)
            out.append(f"constraint {c.label} {c.sense} {F0.shape[0]}")
            out.extend(sparse_lines("const", F0))
            for k, unit in enumerate(units):
                Fk = np.asarray(c.builder(env_with(unit), NUMPY_LIN), dtype=float) - F0
                out.extend(sparse_lines("coef", Fk, k))
        with open(path, "w") as fh:
            fh.write("\n".join(out) + "\n")


def default_solver_ladder():
    reduced = dict(
        reduced_tol_gap_abs=5e-2,
        reduced_tol_gap_rel=5e-2,
        reduced_tol_feas=1e-7,
        reduced_tol_ktratio=1e-2,
    )
    return [
        ("CLARABEL", dict(reduced)),
        ("CLARABEL", dict(reduced, static_regularization_constant=1e-7, max_iter=400)),
        ("SCS", dict(eps=1e-7, max_iters=40000)),
    ]
