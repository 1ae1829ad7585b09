"""Toolkit configuration: a JSON document describing the plant, the synthesis
run, data locations, and analysis/simulation settings.

Schema (format_version 1)::

    {
      "format_version": 1,
      "model": {
        "entries_A": [["1 + 0.1*sinc(x1)", "0.2"], ...],   # entry form
        "entries_B": [["0.1 + 0.1*abs(x2)"], ...],
        # OR basis form (exactly one of the two):
        "basis_A": [["1", "sinc(x1)"], ["1", "x1", "x1^2"]],
        "basis_B": [["1", "abs(x1)", ...]],
        "coefficients_A": [[...]],       # optional ground truth (simulation
        "coefficients_B": [[...]]        # and data generation only)
      },
      "synthesis": {
        "mode": "model" | "model-sat" | "data" | "data-sat",
        "radius": 1.1,
        "u_max": [0.5],                  # saturated modes
        "objective": {"kind": "feasibility" | "max-epsilon" | "spread",
                       "c1": 1.0, "c2": 0.1},
        "vertex_cap": 4096
      },
      "data": {"manifest": "dataset/manifest.json"},
      "generation": {"count": 10, "length": 13, "seed": 7,
                      "input": {"kind": "uniform", "lo": -1.3, "hi": 1.3},
                      "theta": 0.0021,   # scalar or full matrix
                      "x0_half_width": 1.2, "state_cap": 4.0, "dt": 1.0},
      "simulation": {"horizon": 200, "x0": [-0.5, -0.5], "seed": 0,
                      "disturbance_bound": 0.1},
      "analysis": {"grid_resolution": 101, "grid_radius": 1.65},
      "output": {"directory": "out"}
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .model import BasisLibrary, GroundTruthCoefficients, SdrModel
from .synth import SynthesisOptions

CONFIG_FORMAT_VERSION = 1


@dataclass
class ToolkitConfig:
    model: SdrModel | None
    library: BasisLibrary | None
    truth: GroundTruthCoefficients | None
    synthesis: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    generation: dict = field(default_factory=dict)
    simulation: dict = field(default_factory=dict)
    analysis: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    def synthesis_options(self) -> SynthesisOptions:
        opts = SynthesisOptions()
        obj = self.synthesis.get("objective")
        if obj:
            opts.objective = obj.get("kind")
            opts.objective_c1 = obj.get("c1")
            opts.objective_c2 = obj.get("c2")
        if "vertex_cap" in self.synthesis:
            opts.vertex_cap = int(self.synthesis["vertex_cap"])
        if "recheck_tol" in self.synthesis:
            opts.recheck_tol = float(self.synthesis["recheck_tol"])
        return opts

    def theta_matrix(self, n) -> np.ndarray | None:
        theta = self.generation.get("theta")
        if theta is None:
            return None
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 0:
            theta = float(theta) * np.eye(n)
        if theta.shape != (n, n):
            raise ConfigError(f"theta must be a scalar or an {n} x {n} matrix")
        if np.linalg.eigvalsh(0.5 * (theta + theta.T)).min() < 0:
            raise ConfigError("theta must be positive semidefinite")
        return theta


def _parse_model_section(section) -> tuple:
    if not isinstance(section, dict):
        raise ConfigError("config needs a 'model' section")
    has_entries = "entries_A" in section or "entries_B" in section
    has_basis = "basis_A" in section or "basis_B" in section
    if has_entries == has_basis:
        raise ConfigError(
            "model section must contain exactly one of entries_A/entries_B "
            "or basis_A/basis_B"
        )
    if has_entries:
        if "entries_A" not in section or "entries_B" not in section:
            raise ConfigError("entry form needs both entries_A and entries_B")
        model = SdrModel.from_entries(section["entries_A"], section["entries_B"])
        return model, None, None
    if "basis_A" not in section or "basis_B" not in section:
        raise ConfigError("basis form needs both basis_A and basis_B")
    library = BasisLibrary.from_entries(section["basis_A"], section["basis_B"])
    truth = None
    if "coefficients_A" in section or "coefficients_B" in section:
        if "coefficients_A" not in section or "coefficients_B" not in section:
            raise ConfigError("give both coefficients_A and coefficients_B or neither")
        truth = GroundTruthCoefficients.for_library(
            library,
            np.asarray(section["coefficients_A"], dtype=float),
            np.asarray(section["coefficients_B"], dtype=float),
        )
    return None, library, truth


def load_config(path) -> ToolkitConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    version = doc.get("format_version")
    if version != CONFIG_FORMAT_VERSION:
        raise ConfigError(f"unsupported config format_version {version!r}")
    model, library, truth = _parse_model_section(doc.get("model"))
    cfg = ToolkitConfig(
        model=model,
        library=library,
        truth=truth,
        synthesis=doc.get("synthesis", {}) or {},
        data=doc.get("data", {}) or {},
        generation=doc.get("generation", {}) or {},
        simulation=doc.get("simulation", {}) or {},
        analysis=doc.get("analysis", {}) or {},
        output=doc.get("output", {}) or {},
        base_dir=path.parent,
    )
    manifest = cfg.data.get("manifest")
    if manifest is not None:
        mpath = Path(manifest)
        if not mpath.is_absolute():
            mpath = cfg.base_dir / mpath
        if not mpath.exists():
            raise ConfigError(f"data manifest {mpath} does not exist")
        cfg.data["manifest"] = str(mpath)
    return cfg
