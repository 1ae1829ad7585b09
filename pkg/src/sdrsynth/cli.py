"""Command-line front end.

Subcommands: synth, analyze, simulate, gendata.  The plant comes either from
a JSON config (--config) or a built-in fixture (--example example1 | example3
| quadrotor).  Exit codes: 0 ok, 1 infeasible, 2 config error, 3 usage error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analysis, synth
from .config import ToolkitConfig, load_config
from .data import (
    assemble,
    build_consistency_set,
    load_dataset,
    write_manifest,
    write_trajectory_csv,
)
from .errors import (
    ConfigError,
    DataError,
    InfeasibleProblem,
    NumericalFailure,
    SdrsynthError,
    UsageError,
)
from .expr import DomainError
from .fixtures import (
    Fixture,
    fixture_dataset,
    generate_fixture_experiments,
    get_fixture,
)
from .sim import SimConfig, generate_experiments, phase_portrait, rollout

EXIT_OK = 0
EXIT_INFEASIBLE = 1
EXIT_CONFIG = 2
EXIT_USAGE = 3
EXIT_NUMERICAL = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class _Context:
    model: object
    library: object
    truth: object
    radius: float | None
    theta: object
    fixture: Fixture | None
    config: ToolkitConfig | None
    outdir: Path
    seed: int

    def require_model(self):
        if self.model is not None:
            return self.model
        if self.library is not None and self.truth is not None:
            return (self.library, self.truth)
        raise ConfigError("this command needs model entries or library coefficients")


def _load_context(args) -> _Context:
    fixture = None
    config = None
    if getattr(args, "example", None):
        fixture = get_fixture(args.example)
        model, library, truth = fixture.model, fixture.library, fixture.truth
        radius, theta = fixture.radius, fixture.theta
        seed = fixture.default_seed
    elif getattr(args, "config", None):
        config = load_config(args.config)
        model, library, truth = config.model, config.library, config.truth
        radius = config.synthesis.get("radius")
        n = model.n if model is not None else library.n
        theta = config.theta_matrix(n)
        seed = int(config.generation.get("seed", 0))
    else:
        raise UsageError("give --example NAME or --config PATH")
    if getattr(args, "radius", None) is not None:
        radius = args.radius
    if getattr(args, "seed", None) is not None:
        seed = args.seed
    outdir = Path(getattr(args, "out", None) or
                  (config.output.get("directory") if config else None) or
                  "sdrsynth_out")
    outdir.mkdir(parents=True, exist_ok=True)
    return _Context(model, library, truth, radius, theta, fixture, config, outdir, seed)


def _dataset_for(ctx: _Context, args):
    manifest = getattr(args, "dataset", None) or (
        ctx.config.data.get("manifest") if ctx.config else None
    )
    if ctx.library is None:
        raise ConfigError("data-driven commands need a basis library")
    if manifest:
        return load_dataset(manifest, ctx.library)
    if ctx.fixture is not None and ctx.fixture.has_data_path:
        return fixture_dataset(ctx.fixture, ctx.seed)
    if ctx.truth is not None and ctx.config is not None and ctx.config.generation:
        batch = _generate_from_config(ctx)
        return assemble(
            [(t["states"], t["inputs"]) for t in batch.trajectories],
            ctx.library,
            batch.theta,
        )
    raise ConfigError("no dataset: give --dataset, a data.manifest entry, or ground truth + generation settings")


def _generate_from_config(ctx: _Context):
    gen = ctx.config.generation
    n = ctx.library.n
    theta = ctx.config.theta_matrix(n)
    if theta is None:
        raise ConfigError("generation section needs a theta entry")
    inp = gen.get("input", {})
    if inp.get("kind", "uniform") != "uniform":
        raise ConfigError(f"unknown input kind {inp.get('kind')!r}")
    spec = ("uniform", float(inp.get("lo", -1.0)), float(inp.get("hi", 1.0)))
    return generate_experiments(
        ctx.library,
        ctx.truth,
        spec,
        theta,
        count=int(gen.get("count", 10)),
        length=int(gen.get("length", 10)),
        seed=ctx.seed,
        x0_spec=("uniform", float(gen.get("x0_half_width", 0.0))),
        state_cap=gen.get("state_cap"),
    )


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    ctx = _load_context(args)
    mode = args.mode or (ctx.config.synthesis.get("mode") if ctx.config else None)
    if mode is None:
        if ctx.fixture is not None and ctx.fixture.has_data_path:
            mode = "data"
        else:
            mode = "model" if ctx.model is not None else "data"
    if ctx.radius is None:
        raise ConfigError("no design radius: set synthesis.radius or --radius")
    options = ctx.config.synthesis_options() if ctx.config else synth.SynthesisOptions()
    u_max = args.u_max if args.u_max else (
        ctx.config.synthesis.get("u_max") if ctx.config else None
    )
    if mode in ("model", "model-sat"):
        if ctx.model is None:
            raise ConfigError("model modes need entries_A/entries_B")
        if mode == "model":
            result = synth.synthesize_model(ctx.model, ctx.radius, options)
        else:
            if u_max is None:
                raise ConfigError("model-sat needs u_max")
            result = synth.synthesize_model_saturated(ctx.model, ctx.radius, u_max, options)
    elif mode in ("data", "data-sat"):
        dataset = _dataset_for(ctx, args)
        if mode == "data":
            result = synth.synthesize_data(ctx.library, dataset, ctx.radius, options)
        else:
            if u_max is None:
                raise ConfigError("data-sat needs u_max")
            result = synth.synthesize_data_saturated(
                ctx.library, dataset, ctx.radius, u_max, options
            )
    else:
        raise UsageError(f"unknown mode {mode!r}")
    out = ctx.outdir / "synth_result.json"
    synth.save_result(out, result)
    _print_result_summary(result, out)
    return EXIT_OK


def _print_result_summary(result, path):
    solver = result.solver_stats.get("solver", "?")
    print(f"mode: {result.mode}")
    print(f"status: feasible (solver {solver}, re-check residual {result.residual:.2e})")
    print(f"vertices: {result.vertex_count}")
    with np.printoptions(precision=4, suppress=True):
        print(f"K = {result.K}")
    print(f"eps_gamma = {result.eps_gamma:.6g}")
    print(f"r0 = {result.r0:.6g} (design radius r = {result.r:.6g})")
    if result.saturated:
        print(f"certified set: ball r0 intersect ellipsoid x'Gamma^-1 x <= 1")
    print(f"result document: {path}")


# ---------------------------------------------------------------------------
# gendata
# ---------------------------------------------------------------------------


def cmd_gendata(args) -> int:
    ctx = _load_context(args)
    if ctx.fixture is not None and ctx.fixture.has_data_path:
        batch = generate_fixture_experiments(ctx.fixture, ctx.seed)
        dt = ctx.fixture.dt
    elif ctx.config is not None and ctx.truth is not None:
        batch = _generate_from_config(ctx)
        dt = float(ctx.config.generation.get("dt", 1.0))
    else:
        raise ConfigError("gendata needs a fixture with a data recipe or "
                          "a config with coefficients + generation settings")
    files = []
    for i, traj in enumerate(batch.trajectories):
        name = f"experiment_{i:02d}.csv"
        write_trajectory_csv(ctx.outdir / name, traj["states"], traj["inputs"], dt=dt)
        files.append(name)
    manifest = ctx.outdir / "manifest.json"
    write_manifest(manifest, files, batch.theta, dt=dt)
    print(f"experiments: {len(files)} x {batch.trajectories[0]['inputs'].shape[0]} samples")
    print(f"noise energy margin (min eig(Theta - D0 D0')): {batch.theta_margin:.3e}")
    print(f"manifest: {manifest}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    ctx = _load_context(args)
    dynamics = ctx.require_model()
    n = ctx.model.n if ctx.model is not None else ctx.library.n
    result = synth.load_result(args.result) if args.result else None
    if args.phase_portrait:
        if result is None:
            raise UsageError("--phase-portrait needs --result for the gain")
        r = ctx.radius or 1.0
        field = phase_portrait(
            dynamics, result.K, region=(-1.5 * r, 1.5 * r),
            density=args.density, u_max=result.u_max,
        )
        path = ctx.outdir / "phase_portrait.csv"
        write_phase_csv(path, field)
        print(f"phase portrait samples: {field['points'].shape[0]} -> {path}")
        return EXIT_OK
    if args.x0 is not None:
        x0 = np.asarray(args.x0, dtype=float)
    elif ctx.config is not None and "x0" in ctx.config.simulation:
        x0 = np.asarray(ctx.config.simulation["x0"], dtype=float)
    else:
        raise ConfigError("no initial state: give --x0")
    if x0.shape != (n,):
        raise ConfigError(f"x0 must have {n} entries")
    horizon = args.horizon or int(
        (ctx.config.simulation.get("horizon", 200) if ctx.config else 200)
    )
    bound = args.disturbance_bound
    if bound is None and ctx.config is not None:
        bound = ctx.config.simulation.get("disturbance_bound")
    disturbance = ("uniform", float(bound)) if bound else None
    if args.open_loop:
        m = ctx.model.m if ctx.model is not None else ctx.library.m
        cfg = SimConfig(horizon=horizon, x0=x0, input_signal=lambda k: np.zeros(m),
                        disturbance=disturbance, seed=ctx.seed)
    else:
        if result is None:
            raise UsageError("closed-loop simulation needs --result (or use --open-loop)")
        cfg = SimConfig(horizon=horizon, x0=x0, gain=result.K,
                        u_max=result.u_max if result.saturated else None,
                        disturbance=disturbance, seed=ctx.seed)
    traj = rollout(dynamics, cfg)
    dt = ctx.fixture.dt if ctx.fixture is not None else (
        float(ctx.config.generation.get("dt", 1.0)) if ctx.config else 1.0
    )
    path = ctx.outdir / "trajectory.csv"
    write_sim_csv(path, traj, dt=dt)
    status = "diverged" if traj.diverged else (
        "converged" if traj.converged else "bounded"
    )
    print(f"trajectory: {traj.horizon} steps, {status}"
          + (f" (|x| <= 1e-3 from step {traj.convergence_step})" if traj.converged else ""))
    print(f"final |x| = {np.linalg.norm(traj.states[-1]):.3e}")
    print(f"trajectory CSV: {path}")
    return EXIT_OK


def write_sim_csv(path, traj, dt=1.0):
    """Header contract: t,x1..xn,u1..um_pre,u1..um_post,w1..wn; the final row
    carries the terminal state with zero-filled input/disturbance columns."""
    states = traj.states
    n = states.shape[1]
    m = traj.inputs_pre.shape[1]
    T = traj.inputs_pre.shape[0]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["t"] + [f"x{i+1}" for i in range(n)]
            + [f"u{j+1}_pre" for j in range(m)]
            + [f"u{j+1}_post" for j in range(m)]
            + [f"w{i+1}" for i in range(n)]
        )
        for k in range(states.shape[0]):
            upre = traj.inputs_pre[k] if k < T else np.zeros(m)
            upost = traj.inputs_post[k] if k < T else np.zeros(m)
            dist = traj.disturbances[k] if k < T else np.zeros(n)
            w.writerow(
                [f"{k * dt:.10g}"]
                + [f"{v:.17g}" for v in states[k]]
                + [f"{v:.17g}" for v in upre]
                + [f"{v:.17g}" for v in upost]
                + [f"{v:.17g}" for v in dist]
            )


def write_phase_csv(path, field):
    """Header contract: x1,x2,x1_next,x2_next,u1..um_pre,u1..um_post."""
    pts, nxt = field["points"], field["next_points"]
    upre, upost = field["inputs_pre"], field["inputs_post"]
    m = upre.shape[1]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["x1", "x2", "x1_next", "x2_next"]
            + [f"u{j+1}_pre" for j in range(m)]
            + [f"u{j+1}_post" for j in range(m)]
        )
        for i in range(pts.shape[0]):
            w.writerow(
                [f"{v:.17g}" for v in pts[i]]
                + [f"{v:.17g}" for v in nxt[i]]
                + [f"{v:.17g}" for v in upre[i]]
                + [f"{v:.17g}" for v in upost[i]]
            )


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------


def cmd_analyze(args) -> int:
    ctx = _load_context(args)
    result = synth.load_result(args.result)
    cset = None
    if result.mode.startswith("data"):
        dataset = _dataset_for(ctx, args)
        cset = build_consistency_set(dataset)
    if result.mode == "model":
        if ctx.model is None:
            raise ConfigError("model-mode analysis needs model entries")
        cert = analysis.robustness_model(result, ctx.model)
    elif result.mode.startswith("data"):
        cert = analysis.robustness_data(result, cset, ctx.library)
    else:
        # the disturbance analysis covers unsaturated model loops only
        cert = None
        print("robustness certificate: not defined for model-sat results")
    if cert is not None:
        cert_doc = {
            "format_version": 1,
            "mode": cert.mode,
            "r": cert.r,
            "delta_x0": cert.delta_x0,
            "delta_w": cert.delta_w,
            "gamma_acl": cert.gamma_acl,
            "gamma_is_upper_bound": cert.gamma_is_bound,
            "mu_w": cert.mu_w,
            "c_w": cert.c_w,
            "lmax_gamma": cert.lmax_gamma,
            "lmin_gamma": cert.lmin_gamma,
        }
        cert_path = ctx.outdir / "robustness.json"
        cert_path.write_text(json.dumps(cert_doc, indent=2) + "\n")
        print(f"delta_x0 = {cert.delta_x0:.6g}")
        print(f"delta_w  = {cert.delta_w:.6g}")
        print(f"gamma_Acl{' (upper bound)' if cert.gamma_is_bound else ''} = {cert.gamma_acl:.6g}")
        print(f"robustness document: {cert_path}")
    n = result.n
    if n <= 3 and not args.skip_sublevel:
        if result.mode.startswith("model"):
            if ctx.model is None:
                raise ConfigError("model-mode analysis needs model entries")
            oracle = ("model", ctx.model)
        else:
            oracle = ("data", cset, ctx.library)
        res = int(args.grid_resolution or
                  (ctx.config.analysis.get("grid_resolution", 101) if ctx.config else 101))
        roa = analysis.sublevel_roa(result, oracle, resolution=res)
        sub_path = ctx.outdir / "sublevel_decrease.csv"
        write_decrease_csv(sub_path, roa)
        print(f"sublevel gamma = {roa.gamma:.6g} ({roa.algebra}"
              + (", extrapolated" if roa.extrapolated else "") + ")")
        print(f"decrease samples: {sub_path}")
        if n == 2:
            bpath = ctx.outdir / "sublevel_boundary.csv"
            write_boundary_csv(bpath, roa)
            print(f"ellipsoid boundary: {bpath}")
    return EXIT_OK


def write_decrease_csv(path, roa):
    """Header contract: x1..xn,decrease,level (level = x'Gamma^-1 x)."""
    X, v = roa.points, roa.values
    n = X.shape[0]
    levels = np.einsum("ik,ij,jk->k", X, roa.P, X)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i+1}" for i in range(n)] + ["decrease", "level"])
        for k in range(X.shape[1]):
            w.writerow([f"{X[i, k]:.17g}" for i in range(n)]
                       + [f"{v[k]:.17g}", f"{levels[k]:.17g}"])


def write_boundary_csv(path, roa):
    """Header contract: x1,x2 boundary samples of the certified ellipsoid."""
    B = roa.ellipsoid_boundary()
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2"])
        for k in range(B.shape[1]):
            w.writerow([f"{B[0, k]:.17g}", f"{B[1, k]:.17g}"])


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    p = _Parser(prog="sdrsynth", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, radius=True):
        sp.add_argument("--example", choices=("example1", "example3", "quadrotor"))
        sp.add_argument("--config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        if radius:
            sp.add_argument("--radius", type=float)

    sp = sub.add_parser("synth", help="synthesize a feedback gain with certificates")
    common(sp)
    sp.add_argument("--mode", choices=("model", "model-sat", "data", "data-sat"))
    sp.add_argument("--u-max", type=float, nargs="+", dest="u_max")
    sp.add_argument("--dataset", help="dataset manifest for the data modes")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("gendata", help="generate experiments and a dataset manifest")
    common(sp, radius=False)
    sp.set_defaults(func=cmd_gendata)

    sp = sub.add_parser("simulate", help="roll out the (closed) loop, export CSV")
    common(sp)
    sp.add_argument("--result", help="synthesis result document (for the gain)")
    sp.add_argument("--x0", type=float, nargs="+")
    sp.add_argument("--horizon", type=int)
    sp.add_argument("--disturbance-bound", type=float, dest="disturbance_bound")
    sp.add_argument("--open-loop", action="store_true", dest="open_loop")
    sp.add_argument("--phase-portrait", action="store_true", dest="phase_portrait")
    sp.add_argument("--density", type=int, default=21)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("analyze", help="robustness certificate + sublevel ROA")
    common(sp)
    sp.add_argument("--result", required=True)
    sp.add_argument("--dataset")
    sp.add_argument("--grid-resolution", type=int, dest="grid_resolution")
    sp.add_argument("--skip-sublevel", action="store_true", dest="skip_sublevel")
    sp.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args) or EXIT_OK
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleProblem as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, DataError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SdrsynthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
