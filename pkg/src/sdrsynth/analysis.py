"""Disturbance-robustness certificates and sublevel-set ROA refinement.

Certificates quantify how large an initial state and a persistent disturbance
may be before the closed loop can leave the design ball:

    |x(0)|^2 <= r^2   and   delta_x0 |x(0)|^2 + delta_w |w|_inf^2 <= r^2

with, in terms of lM = lmax(Gamma), lm = lmin(Gamma), e = eps_Gamma and the
closed-loop norm bound g = max_{|x|<=r} ||A(x) + B(x)K||:

    delta_x0 = (2 lM^2 - e lm) / (2 lm lM)
    delta_w  = (4 g^2 lM^5 + 2 e lm lM^3) / (e^2 lm^3)

and the explicit trajectory bound, with mu_w = 1 - e lm / (2 lM^2) and
c_w = 2 g^2 lM^2 / (lm^2 e) + 1/lm:

    |x(k)|^2 <= (lM/lm) mu_w^k |x(0)|^2
                + (1 - mu_w^k)/(1 - mu_w) * c_w * lM * |w|_inf^2.

In the data-driven case g is not computable; the certificate instead uses

    g_bar = (||Zc|| + ||Q^(1/2)|| ||A^(-1/2)||) * max_{|x|<=r} ||(Xi_A(x)x; Xi_B(x)Kx)||

which only needs the data.  Maxima over the ball are taken on a dense grid
(n <= 3) or a seeded uniform ball sample (n >= 4), inflated by a 2% heuristic
margin; enlarging the max only makes the certificate more conservative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ConsistencySet
from .errors import NumericalFailure, UsageError
from .model import BasisLibrary, SdrModel
from .sim import saturate
from .synth import SynthesisResult

BALL_MAX_MARGIN = 0.02
ORIGIN_EXCLUSION_FRAC = 1e-3


# ---------------------------------------------------------------------------
# Maxima over the ball
# ---------------------------------------------------------------------------


def ball_sample_points(n, r, seed=0, grid_axis=201, sample_count=40_000):
    """Points covering B_r: a tensor grid for n <= 3, ball sampling beyond."""
    if n <= 3:
        axis_count = grid_axis if n <= 2 else min(grid_axis, 51)
        axes = [np.linspace(-r, r, axis_count)] * n
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh])
        keep = np.einsum("ij,ij->j", pts, pts) <= r * r * (1 + 1e-12)
        return pts[:, keep]
    rng = np.random.default_rng([seed, n])
    raw = rng.normal(size=(n, sample_count))
    raw /= np.linalg.norm(raw, axis=0, keepdims=True)
    radii = r * rng.uniform(0.0, 1.0, size=sample_count) ** (1.0 / n)
    pts = raw * radii
    extremes = np.hstack([r * np.eye(n), -r * np.eye(n), np.zeros((n, 1))])
    return np.hstack([pts, extremes])


def max_closed_loop_norm(model: SdrModel, K, r, margin=BALL_MAX_MARGIN, seed=0):
    """gamma_Acl = max over B_r of ||A(x) + B(x)K|| (sampled, inflated)."""
    K = np.asarray(K, dtype=float)
    X = ball_sample_points(model.n, r, seed)
    A, B = model.eval_AB_batch(X)
    Acl = A + B @ K
    norms = np.linalg.svd(Acl, compute_uv=False)[:, 0]
    return float(norms.max() * (1.0 + margin))


def regressor_stack(lib: BasisLibrary, K, X, u_max=None):
    """Columns (Xi_A(x)x; Xi_B(x) sat(Kx)) for a state batch X."""
    K = np.asarray(K, dtype=float)
    U = K @ X
    if u_max is not None:
        U = saturate(U.T, u_max).T
    return np.vstack([lib.stack_A(X), lib.stack_B(X, U)])


def max_regressor_norm(lib: BasisLibrary, K, r, margin=BALL_MAX_MARGIN, seed=0):
    """max over B_r of ||(Xi_A(x)x; Xi_B(x)Kx)|| (sampled, inflated)."""
    X = ball_sample_points(lib.n, r, seed)
    rho = regressor_stack(lib, K, X)
    return float(np.linalg.norm(rho, axis=0).max() * (1.0 + margin))


# ---------------------------------------------------------------------------
# Robustness certificates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RobustnessCertificate:
    mode: str              # 'model' | 'data'
    r: float
    delta_x0: float
    delta_w: float
    gamma_acl: float       # bound used in delta_w (upper bound in data mode)
    gamma_is_bound: bool
    mu_w: float
    c_w: float
    lmax_gamma: float
    lmin_gamma: float
    eps_gamma: float

    @property
    def lmax_P(self) -> float:
        return 1.0 / self.lmin_gamma

    @property
    def lmin_P(self) -> float:
        return 1.0 / self.lmax_gamma

    def admissible(self, x0, w_inf) -> bool:
        x0sq = float(np.dot(x0, x0))
        return (
            x0sq <= self.r**2 + 1e-12
            and self.delta_x0 * x0sq + self.delta_w * w_inf**2 <= self.r**2 + 1e-12
        )

    def max_disturbance(self, x0) -> float:
        """Largest |w|_inf admissible together with this initial state."""
        x0sq = float(np.dot(x0, x0))
        slack = self.r**2 - self.delta_x0 * x0sq
        return float(np.sqrt(max(slack, 0.0) / self.delta_w))

    def decay_bound(self, x0_norm, w_inf, k) -> float:
        """Explicit bound on |x(k)|^2."""
        lM, lm = self.lmax_gamma, self.lmin_gamma
        mw = self.mu_w
        geo = (1.0 - mw**k) / (1.0 - mw) if mw < 1.0 else float(k)
        return (lM / lm) * mw**k * x0_norm**2 + geo * self.c_w * lM * w_inf**2


def _certificate(mode, result: SynthesisResult, gamma, gamma_is_bound):
    w = np.linalg.eigvalsh(result.Gamma)
    lm, lM = float(w[0]), float(w[-1])
    e = result.eps_gamma
    delta_x0 = (2 * lM**2 - e * lm) / (2 * lm * lM)
    delta_w = (4 * gamma**2 * lM**5 + 2 * e * lm * lM**3) / (e**2 * lm**3)
    mu_w = 1.0 - e * lm / (2 * lM**2)
    c_w = 2 * gamma**2 * lM**2 / (lm**2 * e) + 1.0 / lm
    return RobustnessCertificate(
        mode=mode,
        r=result.r,
        delta_x0=float(delta_x0),
        delta_w=float(delta_w),
        gamma_acl=float(gamma),
        gamma_is_bound=gamma_is_bound,
        mu_w=float(mu_w),
        c_w=float(c_w),
        lmax_gamma=lM,
        lmin_gamma=lm,
        eps_gamma=float(e),
    )


def robustness_model(result: SynthesisResult, model: SdrModel) -> RobustnessCertificate:
    if result.mode != "model":
        raise UsageError(
            "robustness_model needs a plain model-mode result (the disturbance "
            "analysis covers the unsaturated closed loop)"
        )
    gamma = max_closed_loop_norm(model, result.K, result.r)
    return _certificate("model", result, gamma, gamma_is_bound=False)


def robustness_data(
    result: SynthesisResult, cset: ConsistencySet, lib: BasisLibrary
) -> RobustnessCertificate:
    if not result.mode.startswith("data"):
        raise UsageError("robustness_data needs a data-mode synthesis result")
    coeff_norm = float(
        np.linalg.norm(cset.Zc, 2)
        + np.linalg.norm(cset.Q_half, 2) * np.linalg.norm(cset.A_inv_half, 2)
    )
    gamma_bar = coeff_norm * max_regressor_norm(lib, result.K, result.r)
    return _certificate("data", result, gamma_bar, gamma_is_bound=True)


# ---------------------------------------------------------------------------
# Lyapunov decrease values and sublevel-set ROA
# ---------------------------------------------------------------------------


def decrease_values_model(model: SdrModel, K, P, X, u_max=None):
    """v(x) = V(x+) - V(x) on a state batch X for the true closed loop."""
    X = np.asarray(X, dtype=float)
    K = np.asarray(K, dtype=float)
    A, B = model.eval_AB_batch(X)
    U = K @ X
    if u_max is not None:
        U = saturate(U.T, u_max).T
    Xp = np.einsum("kij,jk->ik", A, X) + np.einsum("kij,jk->ik", B, U)
    return np.einsum("ik,ij,jk->k", Xp, P, Xp) - np.einsum("ik,ij,jk->k", X, P, X)


def decrease_values_library(lib: BasisLibrary, truth, K, P, X, u_max=None):
    """Same as decrease_values_model but through a basis library + truth."""
    X = np.asarray(X, dtype=float)
    rho = regressor_stack(lib, K, X, u_max=u_max)
    E = np.hstack([truth.E_A, truth.E_B])
    Xp = E @ rho
    return np.einsum("ik,ij,jk->k", Xp, P, Xp) - np.einsum("ik,ij,jk->k", X, P, X)


def decrease_values_data(
    cset: ConsistencySet, lib: BasisLibrary, K, Gamma_bar, X, u_max=None
):
    """Data-only upper bound v_data(x) on the Lyapunov difference (scaled by
    the positive proof constant):

        v_data = -x' Gb^-1 x + v1 + v2 + v3
        v1 = rho' Zc' Gb^-1 Zc rho
        v2 = 2 |Q^(1/2) Gb^-1 Zc rho| |A^(-1/2) rho|
        v3 = ||Q^(1/2) Gb^-1 Q^(1/2)|| |A^(-1/2) rho|^2

    with rho = (Xi_A(x)x; Xi_B(x)Kx); all terms computable from data alone.
    """
    X = np.asarray(X, dtype=float)
    P = np.linalg.inv(Gamma_bar)
    rho = regressor_stack(lib, K, X, u_max=u_max)
    M1 = cset.Zc.T @ P @ cset.Zc
    v1 = np.einsum("ik,ij,jk->k", rho, M1, rho)
    QPZ = cset.Q_half @ P @ cset.Zc
    v2 = 2.0 * np.linalg.norm(QPZ @ rho, axis=0) * np.linalg.norm(
        cset.A_inv_half @ rho, axis=0
    )
    v3 = float(np.linalg.norm(cset.Q_half @ P @ cset.Q_half, 2)) * (
        np.linalg.norm(cset.A_inv_half @ rho, axis=0) ** 2
    )
    base = -np.einsum("ik,ij,jk->k", X, P, X)
    return base + v1 + v2 + v3


@dataclass
class SublevelRoa:
    """Largest certified Lyapunov sublevel ellipsoid E(P, gamma) inside the
    sampled negative-decrease set, plus the union ROA description."""

    gamma: float
    P: np.ndarray
    grid_radius: float
    resolution: int
    points: np.ndarray       # (n, N) grid samples
    values: np.ndarray       # decrease values at the samples
    algebra: str
    extrapolated: bool = False
    coarse: bool = False

    def ellipsoid_boundary(self, count=256):
        """Boundary samples of E(P, gamma) (n = 2 only), for plotting."""
        n = self.P.shape[0]
        if n != 2:
            raise UsageError("boundary sampling implemented for n = 2 only")
        theta = np.linspace(0, 2 * np.pi, count, endpoint=False)
        circle = np.vstack([np.cos(theta), np.sin(theta)])
        L = np.linalg.cholesky(self.P)
        return np.sqrt(self.gamma) * np.linalg.solve(L.T, circle)


def _sublevel_gamma(points, values, P, exclusion, cap, iters=60):
    """Largest gamma <= cap with v < 0 on all grid points of E(P, gamma)
    outside the origin-exclusion radius, by bisection."""
    levels = np.einsum("ik,ij,jk->k", points, P, points)
    outside = np.einsum("ij,ij->j", points, points) > exclusion**2
    bad = outside & (values >= 0.0)

    def ok(gamma):
        return not np.any(bad & (levels <= gamma))

    if not ok(0.0):
        return 0.0
    lo, hi = 0.0, cap
    if ok(hi):
        return hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def sublevel_roa(
    result: SynthesisResult,
    oracle,
    grid_radius: float | None = None,
    resolution: int = 101,
    origin_exclusion_frac: float = ORIGIN_EXCLUSION_FRAC,
) -> SublevelRoa:
    """Numerically certify the largest sublevel ellipsoid of V = x'Gamma^-1 x
    inside the negative-decrease region.

    ``oracle`` selects how the Lyapunov difference is evaluated:

    * ("model", SdrModel): true closed loop (saturation applied when the
      synthesis result carries saturation levels);
    * ("data", ConsistencySet, BasisLibrary): the data-only upper bound
      v_data; in saturated mode the direct analogue with sat(Kx) in the
      regressor stack is used (extrapolated, flagged on the result).
    """
    n = result.n
    if n > 3:
        raise UsageError(f"sublevel grid search supports n <= 3, got n = {n}")
    coarse = resolution < 50
    grid_radius = grid_radius if grid_radius is not None else 1.5 * result.r
    axes = [np.linspace(-grid_radius, grid_radius, resolution)] * n
    mesh = np.meshgrid(*axes, indexing="ij")
    X = np.stack([m.ravel() for m in mesh])
    u_max = result.u_max if result.saturated else None
    extrapolated = False
    if oracle[0] == "model":
        values = decrease_values_model(oracle[1], result.K, result.P, X, u_max=u_max)
    elif oracle[0] == "data":
        _, cset, lib = oracle
        values = decrease_values_data(cset, lib, result.K, result.Gamma, X, u_max=u_max)
        extrapolated = result.saturated
    else:
        raise UsageError(f"unknown oracle kind {oracle[0]!r}")
    if not np.any(values < 0):
        raise NumericalFailure("empty decrease set: v(x) >= 0 on the whole grid")
    P = result.P
    # ellipsoid must stay inside the sampled box: gamma <= R^2 / max_i Gamma_ii
    cap = grid_radius**2 / float(np.max(np.diag(result.Gamma)))
    gamma = _sublevel_gamma(
        X, values, P, origin_exclusion_frac * result.r, cap
    )
    algebra = (
        "ball-intersect-ellipsoid-union-sublevel"
        if result.saturated
        else "ball-union-sublevel"
    )
    return SublevelRoa(
        gamma=float(gamma),
        P=P,
        grid_radius=grid_radius,
        resolution=resolution,
        points=X,
        values=values,
        algebra=algebra,
        extrapolated=extrapolated,
        coarse=coarse,
    )
