"""State-dependent models x+ = A(x)x + B(x)u and their finite vertex over-approximations.

Two representations are supported:

* entry form: every entry a_ij(x), b_ij(x) is an expression (model-based path);
* basis-library form: column j of A is E_Aj @ xi_Aj(x) for a known vector of
  basis expressions xi_Aj and unknown constant coefficients (data-driven path).

Both paths reduce the infinite family {[A(x) B(x)] : |x| <= r} to a finite
vertex set by bounding every scalar entry over the ball and taking all
combinations of interval endpoints.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .errors import ConfigError, VertexCapExceeded

DEGENERATE_TOL = 1e-12
DEFAULT_VERTEX_CAP = 4096


def _as_expr(e):
    return ex.parse(e) if isinstance(e, str) else e


@dataclass(frozen=True)
class SdrModel:
    """Known state-dependent representation with per-entry expressions."""

    n: int
    m: int
    entries_A: tuple  # n x n of Expr
    entries_B: tuple  # n x m of Expr
    domain_radius_default: float = 1.0

    @staticmethod
    def from_entries(entries_A, entries_B, domain_radius_default=1.0) -> "SdrModel":
        A = tuple(tuple(_as_expr(e) for e in row) for row in entries_A)
        B = tuple(tuple(_as_expr(e) for e in row) for row in entries_B)
        n = len(A)
        if n == 0 or any(len(row) != n for row in A):
            raise ConfigError("entries_A must be a square n x n grid")
        if len(B) != n:
            raise ConfigError("entries_B must have n rows")
        m = len(B[0])
        if m == 0 or any(len(row) != m for row in B):
            raise ConfigError("entries_B rows must all have m entries")
        model = SdrModel(n, m, A, B, domain_radius_default)
        for e in model._all_entries():
            bad = [i for i in e.variables() if i >= n]
            if bad:
                raise ConfigError(
                    f"entry {ex.to_source(e)!r} references x{bad[0] + 1} but n = {n}"
                )
        # the origin must be in the domain of every entry
        model.eval_A(np.zeros(n))
        model.eval_B(np.zeros(n))
        return model

    def _all_entries(self):
        for row in self.entries_A:
            yield from row
        for row in self.entries_B:
            yield from row

    def eval_A(self, x) -> np.ndarray:
        return np.array(
            [[ex.evaluate(e, x) for e in row] for row in self.entries_A], dtype=float
        )

    def eval_B(self, x) -> np.ndarray:
        return np.array(
            [[ex.evaluate(e, x) for e in row] for row in self.entries_B], dtype=float
        )

    def eval_AB_batch(self, X):
        """Evaluate (A(x), B(x)) over a batch X of shape (n, N).

        Returns arrays of shape (N, n, n) and (N, n, m).
        """
        X = np.asarray(X, dtype=float)
        N = X.shape[1]
        A = np.empty((N, self.n, self.n))
        B = np.empty((N, self.n, self.m))
        for i, row in enumerate(self.entries_A):
            for j, e in enumerate(row):
                A[:, i, j] = ex.evaluate(e, X)
        for i, row in enumerate(self.entries_B):
            for j, e in enumerate(row):
                B[:, i, j] = ex.evaluate(e, X)
        return A, B


def evaluate_dynamics(model: SdrModel, x, u) -> np.ndarray:
    """One step of x+ = A(x)x + B(x)u."""
    x = np.asarray(x, dtype=float).reshape(model.n)
    u = np.asarray(u, dtype=float).reshape(model.m)
    return model.eval_A(x) @ x + model.eval_B(x) @ u


@dataclass(frozen=True)
class BasisLibrary:
    """Known basis functions xi_Aj (one vector per state column) and xi_Bj."""

    n: int
    m: int
    basis_A: tuple  # length n, each a tuple of Expr
    basis_B: tuple  # length m, each a tuple of Expr

    @staticmethod
    def from_entries(basis_A, basis_B) -> "BasisLibrary":
        A = tuple(tuple(_as_expr(e) for e in col) for col in basis_A)
        B = tuple(tuple(_as_expr(e) for e in col) for col in basis_B)
        n, m = len(A), len(B)
        if n == 0 or m == 0:
            raise ConfigError("basis library needs at least one A column and one B column")
        if any(len(col) == 0 for col in A) or any(len(col) == 0 for col in B):
            raise ConfigError("every basis column needs at least one function")
        lib = BasisLibrary(n, m, A, B)
        for e in lib._all_entries():
            bad = [i for i in e.variables() if i >= n]
            if bad:
                raise ConfigError(
                    f"basis function {ex.to_source(e)!r} references x{bad[0] + 1} but n = {n}"
                )
        return lib

    def _all_entries(self):
        for col in self.basis_A:
            yield from col
        for col in self.basis_B:
            yield from col

    @property
    def n_A(self) -> int:
        return sum(len(col) for col in self.basis_A)

    @property
    def n_B(self) -> int:
        return sum(len(col) for col in self.basis_B)

    @property
    def block_sizes_A(self):
        return tuple(len(col) for col in self.basis_A)

    @property
    def block_sizes_B(self):
        return tuple(len(col) for col in self.basis_B)

    def xi_A(self, x) -> np.ndarray:
        """Block-diagonal Xi_A(x) of shape (n_A, n)."""
        out = np.zeros((self.n_A, self.n))
        row = 0
        for j, col in enumerate(self.basis_A):
            for e in col:
                out[row, j] = ex.evaluate(e, x)
                row += 1
        return out

    def xi_B(self, x) -> np.ndarray:
        """Block-diagonal Xi_B(x) of shape (n_B, m)."""
        out = np.zeros((self.n_B, self.m))
        row = 0
        for j, col in enumerate(self.basis_B):
            for e in col:
                out[row, j] = ex.evaluate(e, x)
                row += 1
        return out

    def Q_of(self, x) -> np.ndarray:
        """blkdiag(Xi_A(x), Xi_B(x)), shape (n_A + n_B, n + m)."""
        Q = np.zeros((self.n_A + self.n_B, self.n + self.m))
        Q[: self.n_A, : self.n] = self.xi_A(x)
        Q[self.n_A :, self.n :] = self.xi_B(x)
        return Q

    def stack_A(self, X) -> np.ndarray:
        """Columns Xi_A(x)x for a state batch X of shape (n, N) -> (n_A, N)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty((self.n_A, X.shape[1]))
        row = 0
        for j, col in enumerate(self.basis_A):
            for e in col:
                out[row] = np.asarray(ex.evaluate(e, X)) * X[j]
                row += 1
        return out

    def stack_B(self, X, U) -> np.ndarray:
        """Columns Xi_B(x)u for batches X (n, N), U (m, N) -> (n_B, N)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        U = np.atleast_2d(np.asarray(U, dtype=float))
        out = np.empty((self.n_B, X.shape[1]))
        row = 0
        for j, col in enumerate(self.basis_B):
            for e in col:
                out[row] = np.asarray(ex.evaluate(e, X)) * U[j]
                row += 1
        return out


@dataclass(frozen=True)
class GroundTruthCoefficients:
    """True (E_A, E_B); used only by the simulator and data generator."""

    E_A: np.ndarray  # n x n_A
    E_B: np.ndarray  # n x n_B

    @staticmethod
    def for_library(lib: BasisLibrary, E_A, E_B) -> "GroundTruthCoefficients":
        E_A = np.asarray(E_A, dtype=float)
        E_B = np.asarray(E_B, dtype=float)
        if E_A.shape != (lib.n, lib.n_A):
            raise ConfigError(f"E_A must be {lib.n} x {lib.n_A}, got {E_A.shape}")
        if E_B.shape != (lib.n, lib.n_B):
            raise ConfigError(f"E_B must be {lib.n} x {lib.n_B}, got {E_B.shape}")
        return GroundTruthCoefficients(E_A, E_B)


def reconstruct_AB(lib: BasisLibrary, E_A, E_B, x):
    """(A(x), B(x)) = (E_A @ Xi_A(x), E_B @ Xi_B(x))."""
    E_A = np.asarray(E_A, dtype=float)
    E_B = np.asarray(E_B, dtype=float)
    if E_A.shape != (lib.n, lib.n_A) or E_B.shape != (lib.n, lib.n_B):
        raise ConfigError("coefficient shapes do not match the library")
    return E_A @ lib.xi_A(x), E_B @ lib.xi_B(x)


@dataclass(frozen=True)
class VertexSet:
    """Finite matrix set whose convex hull covers the state-dependent family.

    ``vertices[k]`` has every scalar entry at an interval endpoint; entries
    whose interval collapses to a point (within DEGENERATE_TOL) are fixed and
    do not contribute a factor 2.  Ordering is lexicographic over the interval
    choices (low endpoint first), taken in row-major entry order.
    """

    vertices: tuple
    radius: float
    mode: str  # 'sound' | 'grid'
    kind: str  # 'model' | 'basis'
    entry_intervals: tuple = field(repr=False)  # flat tuple of Interval
    degenerate_mask: tuple = field(repr=False)

    def __len__(self):
        return len(self.vertices)

    @property
    def sound(self) -> bool:
        return self.mode == "sound"

    def interval_hull_contains(self, M, slack=1e-9) -> bool:
        """Componentwise check that M sits inside the entrywise interval hull."""
        lo = np.minimum.reduce(self.vertices)
        hi = np.maximum.reduce(self.vertices)
        M = np.asarray(M, dtype=float)
        return bool(np.all(M >= lo - slack) and np.all(M <= hi + slack))


def _entry_bounds(entries, r, n, mode, samples_per_axis, margin):
    bound_mode = "interval" if mode == "sound" else "grid"
    out = []
    for e in entries:
        out.append(
            ex.bound_over_ball(
                e, r, n=n, mode=bound_mode, samples_per_axis=samples_per_axis, margin=margin
            )
        )
    return out


def _enumerate_vertices(bounds, assemble, cap):
    intervals = list(bounds)
    degenerate = [iv.is_point(DEGENERATE_TOL) for iv in intervals]
    free = [i for i, d in enumerate(degenerate) if not d]
    count = 2 ** len(free)
    if count > cap:
        raise VertexCapExceeded(count, cap)
    base = [iv.lo for iv in intervals]
    vertices = []
    seen = set()
    for combo in itertools.product(*(((intervals[i].lo, intervals[i].hi)) for i in free)):
        vals = list(base)
        for i, v in zip(free, combo):
            vals[i] = v
        M = assemble(np.asarray(vals, dtype=float))
        key = M.tobytes()
        if key not in seen:
            seen.add(key)
            vertices.append(M)
    return tuple(vertices), tuple(intervals), tuple(degenerate)


def build_model_vertices(
    model: SdrModel,
    r: float,
    mode: str = "sound",
    cap: int = DEFAULT_VERTEX_CAP,
    samples_per_axis: int = 201,
    margin: float = 0.0,
) -> VertexSet:
    """Vertices of the polytope covering {[A(x) B(x)] : |x| <= r}.

    Entry order is row-major over A, then row-major over B.
    """
    if mode not in ("sound", "grid"):
        raise ConfigError(f"unknown vertex mode {mode!r}")
    entries = list(model._all_entries())
    bounds = _entry_bounds(entries, r, model.n, mode, samples_per_axis, margin)
    n, m = model.n, model.m

    def assemble(vals):
        A = vals[: n * n].reshape(n, n)
        B = vals[n * n :].reshape(n, m)
        return np.hstack([A, B])

    vertices, intervals, degenerate = _enumerate_vertices(bounds, assemble, cap)
    return VertexSet(vertices, r, mode, "model", intervals, degenerate)


def build_basis_vertices(
    lib: BasisLibrary,
    r: float,
    mode: str = "sound",
    cap: int = DEFAULT_VERTEX_CAP,
    samples_per_axis: int = 201,
    margin: float = 0.0,
) -> VertexSet:
    """Vertices covering {blkdiag(Xi_A(x), Xi_B(x)) : |x| <= r}.

    Entry order follows the stacked rows: xi_A1 .. xi_An, then xi_B1 .. xi_Bm.
    """
    if mode not in ("sound", "grid"):
        raise ConfigError(f"unknown vertex mode {mode!r}")
    entries = list(lib._all_entries())
    bounds = _entry_bounds(entries, r, lib.n, mode, samples_per_axis, margin)
    n_A, n_B, n, m = lib.n_A, lib.n_B, lib.n, lib.m
    rows_A = []
    row = 0
    for j, col in enumerate(lib.basis_A):
        for _ in col:
            rows_A.append((row, j))
            row += 1
    rows_B = []
    row = 0
    for j, col in enumerate(lib.basis_B):
        for _ in col:
            rows_B.append((row, j))
            row += 1

    def assemble(vals):
        Q = np.zeros((n_A + n_B, n + m))
        for k, (i, j) in enumerate(rows_A):
            Q[i, j] = vals[k]
        for k, (i, j) in enumerate(rows_B):
            Q[n_A + i, n + j] = vals[n_A + k]
        return Q

    vertices, intervals, degenerate = _enumerate_vertices(bounds, assemble, cap)
    return VertexSet(vertices, r, mode, "basis", intervals, degenerate)
