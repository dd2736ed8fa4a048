"""Batch experiment runner: reproducible sweeps over the package's models
and validators, with CSV artifacts and a digest manifest.

Configuration is a flat key = value text file; command-line flags override
file keys, which override defaults.  Identical config and seed produce
byte-identical CSV bodies; the manifest lists every output with its content
digest.

Exit codes: 0 ok, 1 usage/config, 2 runtime failure, 3 a validator reported
a violation (a theorem-falsifying measurement, as opposed to a broken run).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields as dc_fields

import numpy as np

from . import __version__
from .errors import ConfigError, VarlabError
from .excess import CylinderSpec, cylindrical_excess, excess_reports_csv
from .fields import bump_vector_field, radial_bump
from .grassmann import ProjectionPlane
from .models import (
    CatenoidSpec,
    GraphSheet,
    catenoid_d_constants,
    generate_catenoid,
    generate_graph,
    generate_plane,
)
from .approx import build_lipschitz_approximant, estimate_rows_csv, height_bands, \
    validate_lip_estimates, validate_lipen
from .regularity import decay_profile, predecay_step
from .varifold import first_variation, harmonicity_residual, monotonicity_residual

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_VIOLATION = 3

EXPERIMENTS = ("generate", "excess", "height", "lipapprox", "lipen", "decay",
               "catenoid", "validators")
MODELS = ("plane", "catenoid", "harmonic-graph", "tilted-graph", "cone")


@dataclass
class ExperimentConfig:
    experiment: str = ""
    model: str = "plane"
    m: int = 2
    n: int = 1
    q: int = 1
    eps: float = 0.05
    theta: float = 0.2
    R: float = 10.0
    h: float = 0.02
    circ_h: float = 0.0          # 0 = same as h
    r_max: float = 4.0
    radius: float = 4.0
    lam: float = 0.02
    delta: float = 0.25
    eta_grid: tuple = (0.05, 0.1, 0.2)
    beta: float = 0.25
    p: float = 4.0
    r_cutoff: float = 1e6
    r0: float = 0.5
    levels: int = 5
    grid_h: float = 0.0          # 0 = default (4 mesh cells)
    out: str = "out"
    seed: int = 0
    plot: bool = False
    threads: int = 0             # 0 = available parallelism

    RANGES = {
        "lam": (0.0, 1.0, "lambda in (0,1) required"),
        "delta": (0.0, 1.0, "delta in (0,1) required"),
        "beta": (0.0, 0.5, "beta in (0,1/2) required"),
    }

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; "
                              f"choose one of {', '.join(EXPERIMENTS)}")
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; "
                              f"choose one of {', '.join(MODELS)}")
        for key, (lo, hi, msg) in self.RANGES.items():
            v = getattr(self, key)
            if not lo < v < hi:
                raise ConfigError(f"{key} = {v:g}: {msg}")
        for key in ("h", "R", "r_max", "radius", "r0", "eps"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be positive")
        if self.q < 1:
            raise ConfigError("q must be a positive integer")
        if self.p <= 2:
            raise ConfigError("p > 2 required")
        if self.levels < 1:
            raise ConfigError("levels must be >= 1")
        return self


_BOOL = {"1": True, "true": True, "yes": True, "0": False, "false": False, "no": False}

# per-experiment defaults for keys the user leaves unset (resolution floors
# and model choices differ too much for one global default to make sense)
EXPERIMENT_DEFAULTS = {
    "decay": {"h": 1.0 / 160, "r0": 1.6, "model": "harmonic-graph", "q": 1},
    "lipapprox": {"h": 1.0 / 128, "model": "tilted-graph", "q": 2, "eps": 0.05},
    "lipen": {"h": 1.0 / 128, "model": "tilted-graph", "q": 2, "eps": 0.05},
    "height": {"model": "catenoid", "h": 1.0 / 64, "r_max": 4.0, "q": 2},
    "excess": {"model": "catenoid", "h": 1.0 / 64, "r_max": 4.0},
    "validators": {"h": 1.0 / 64},
}


def _coerce(name: str, raw: str, kind):
    try:
        if kind is bool:
            return _BOOL[raw.strip().lower()]
        if kind is tuple:
            return tuple(float(x) for x in raw.replace(",", " ").split())
        return kind(raw)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"field {name}: cannot parse {raw!r}") from exc


def parse_config_file(path: str) -> dict:
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, raw = (part.strip() for part in line.split("=", 1))
            values[key] = raw
    return values


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    kinds = {f.name: (tuple if f.name == "eta_grid" else
                      (bool if f.name == "plot" else
                       (int if f.name in ("m", "n", "q", "seed", "levels", "threads")
                        else (str if f.name in ("experiment", "model", "out")
                              else float))))
             for f in dc_fields(ExperimentConfig)}
    cfg = ExperimentConfig()
    explicit = set()
    if args.config:
        for key, raw in parse_config_file(args.config).items():
            if key not in kinds:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(cfg, key, _coerce(key, raw, kinds[key]))
            explicit.add(key)
    cfg.experiment = args.experiment
    for key in kinds:
        flag = getattr(args, key, None)
        if flag is not None and key != "experiment":
            setattr(cfg, key, _coerce(key, str(flag), kinds[key]) if isinstance(flag, str)
                    else flag)
            explicit.add(key)
    for key, val in EXPERIMENT_DEFAULTS.get(cfg.experiment, {}).items():
        if key not in explicit:
            setattr(cfg, key, val)
    if cfg.threads == 0:
        cfg.threads = int(os.environ.get("VARLAB_THREADS", os.cpu_count() or 1))
    return cfg.validate()


# ---------------------------------------------------------------------------
# model construction


def harmonic_graph_sheets(eps: float):
    return [GraphSheet(
        fn=lambda x, e=eps: e * (x[:, 0] ** 2 - x[:, 1] ** 2),
        grad=lambda x, e=eps: np.stack([2 * e * x[:, 0], -2 * e * x[:, 1]], axis=1),
    )]


def tilted_sheets(eps: float, q: int):
    sheets = [
        GraphSheet(fn=lambda x, e=eps: e * x[:, 0],
                   grad=lambda x, e=eps: np.stack(
                       [np.full(len(x), e), np.zeros(len(x))], axis=1)),
        GraphSheet(fn=lambda x, e=eps: -e * x[:, 0],
                   grad=lambda x, e=eps: np.stack(
                       [np.full(len(x), -e), np.zeros(len(x))], axis=1)),
        GraphSheet(fn=lambda x: np.full(len(x), 0.4),
                   grad=lambda x: np.zeros((len(x), 2))),
    ]
    return sheets[:q]


def crossing_planes(theta: float, h: float, radius: float):
    """Two unit planes through the origin at opening angle theta: a
    genuinely singular stationary cone."""
    up = generate_plane(2, 1, q=1, h=h, radius=radius,
                        plane=ProjectionPlane.spanning(
                            [[math.cos(theta / 2), 0.0, math.sin(theta / 2)],
                             [0.0, 1.0, 0.0]]))
    down = generate_plane(2, 1, q=1, h=h, radius=radius,
                          plane=ProjectionPlane.spanning(
                              [[math.cos(theta / 2), 0.0, -math.sin(theta / 2)],
                               [0.0, 1.0, 0.0]]))
    return up.concatenate(down)


def make_model(cfg: ExperimentConfig):
    if cfg.model == "plane":
        return generate_plane(cfg.m, cfg.n, q=cfg.q, h=cfg.h, radius=cfg.radius)
    if cfg.model == "catenoid":
        spec = CatenoidSpec(m=2, scale=1.0, r_max=cfg.r_max)
        return generate_catenoid(spec, cfg.h, circ_h=cfg.circ_h or None)
    if cfg.model == "harmonic-graph":
        return generate_graph(harmonic_graph_sheets(cfg.eps), h=cfg.h, radius=cfg.radius)
    if cfg.model == "tilted-graph":
        return generate_graph(tilted_sheets(cfg.eps, cfg.q), h=cfg.h, radius=cfg.radius)
    if cfg.model == "cone":
        return crossing_planes(cfg.theta, cfg.h, cfg.radius)
    raise ConfigError(f"unknown model {cfg.model!r}")


def _parallel_map(fn, items, threads: int):
    """Map preserving input order; sweep points run concurrently."""
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# experiment runners: each returns (violation flag, {filename: text})


def run_catenoid(cfg: ExperimentConfig):
    dc = catenoid_d_constants(beta=cfg.beta, p=cfg.p, r_cutoff=cfg.r_cutoff)
    artifacts = {}
    summary = ["constant, value, err_estimate, converged"]
    for name in ("d1", "d2", "d3", "d4"):
        est = getattr(dc, name)
        lines = ["R, ratio, extrapolated, err_estimate"]
        for R, raw in est.sequence:
            lines.append(f"{R:.17g}, {raw:.17g}, {est.value:.17g}, {est.error:.17g}")
        artifacts[f"{name}.csv"] = "\n".join(lines) + "\n"
        summary.append(f"{name}, {est.value:.17g}, {est.error:.17g}, {int(est.converged)}")
    artifacts["summary.csv"] = "\n".join(summary) + "\n"
    violation = not all(getattr(dc, k).converged for k in ("d1", "d2", "d3", "d4"))
    return violation, artifacts


def run_excess(cfg: ExperimentConfig):
    V = make_model(cfg)
    radii = [cfg.radius * f for f in (0.125, 0.25, 0.5, 0.75, 1.0)]

    def point(r):
        cyl = CylinderSpec(np.zeros(cfg.m), r)
        return cyl, cylindrical_excess(V, cyl)

    rows = _parallel_map(point, radii, cfg.threads)
    return False, {"excess.csv": excess_reports_csv(rows)}


def run_height(cfg: ExperimentConfig):
    V = make_model(cfg)
    bands = height_bands(V, r=min(1.0, cfg.radius / 2), q=cfg.q)
    lines = ["cluster_count, halfwidth, coverage, excess, width_target, violation"]
    lines.append(
        f"{bands.cluster_count}, {bands.halfwidth:.17g}, "
        f"{bands.coverage_fraction:.17g}, {bands.excess:.17g}, "
        f"{bands.width_target:.17g}, {int(bands.violation)}"
    )
    return bands.violation, {"height.csv": "\n".join(lines) + "\n"}


def _build(cfg: ExperimentConfig):
    sheets = tilted_sheets(cfg.eps, cfg.q)
    V = generate_graph(sheets, h=cfg.h, radius=4.2)
    app = build_lipschitz_approximant(V, cfg.lam, cfg.q,
                                      grid_h=cfg.grid_h or None)
    return V, app, sheets


def run_lipapprox(cfg: ExperimentConfig):
    V, app, sheets = _build(cfg)
    rows = validate_lip_estimates(V, app, truth_sheets=sheets)
    return bool(app.violations), {"lipapprox.csv": estimate_rows_csv(rows)}


def run_lipen(cfg: ExperimentConfig):
    V, app, _ = _build(cfg)
    rows = validate_lipen(V, app)
    return bool(app.violations), {"lipen.csv": estimate_rows_csv(rows)}


def run_decay(cfg: ExperimentConfig):
    if cfg.model == "cone":
        V = make_model(cfg)
    else:
        V = generate_graph(harmonic_graph_sheets(cfg.eps), h=cfg.h, radius=5.2)
    profile = decay_profile(V, np.zeros(3), cfg.r0, cfg.levels, q=cfg.q)
    step = predecay_step(V, cfg.delta, cfg.q, eta_grid=cfg.eta_grid)
    summary = ["fitted_exponent, fit_residual, flat",
               f"{profile.fitted_exponent:.17g}, {profile.fit_residual:.17g}, "
               f"{int(profile.flat)}"]
    artifacts = {
        "decay_profile.csv": profile.csv(),
        "decay_summary.csv": "\n".join(summary) + "\n",
        "predecay.csv": step.csv(),
    }
    violation = step.applicable and not step.passed
    return violation, artifacts


def run_validators(cfg: ExperimentConfig):
    hs = [cfg.h * 4, cfg.h * 2, cfg.h]
    bump = bump_vector_field(np.array([0.3, -0.2, 0.1]), 0.8,
                             np.array([0.2, 0.5, 1.0]) / math.sqrt(1.29))
    phi = radial_bump(np.array([0.1, 0.05, 0.0]), 0.9)
    center = np.array([0.11317, -0.07243, 0.0])
    pairs = [(0.3, 1.0), (0.45, 1.4), (0.25, 0.8)]

    def point(item):
        model, h = item
        if model == "plane":
            V = generate_plane(2, 1, h=h, radius=2.5)
            x = center
        else:
            V = generate_catenoid(CatenoidSpec(r_max=4.0), h)
            x = np.array([1.0, 0.0, 0.0])
        fv = abs(first_variation(V, bump))
        mono = math.sqrt(np.mean([monotonicity_residual(V, x, s, r) ** 2
                                  for s, r in pairs]))
        harm = abs(harmonicity_residual(V, 2, phi))
        return [f"{model}, {name}, {h:.17g}, {val:.17g}"
                for name, val in (("first_variation", fv), ("monotonicity", mono),
                                  ("harmonicity", harm))]

    sweep = [(model, h) for model in ("plane", "catenoid") for h in hs]
    rows = ["model, validator, h, residual"]
    for chunk in _parallel_map(point, sweep, cfg.threads):
        rows.extend(chunk)
    return False, {"validators.csv": "\n".join(rows) + "\n"}


def run_generate(cfg: ExperimentConfig):
    V = make_model(cfg)
    return False, {"model.varf": V.dumps()}


RUNNERS = {
    "catenoid": run_catenoid,
    "excess": run_excess,
    "height": run_height,
    "lipapprox": run_lipapprox,
    "lipen": run_lipen,
    "decay": run_decay,
    "validators": run_validators,
    "generate": run_generate,
}


# ---------------------------------------------------------------------------
# plotting (optional; derived solely from the CSV text)


def _plot_csv(name: str, text: str, out_dir: str):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = [c.strip() for c in lines[0].split(",")]
    try:
        data = np.array([[float(v) for v in ln.split(",")[: len(header)]]
                         for ln in lines[1:]])
    except ValueError:
        return None
    if data.shape[0] < 2 or data.shape[1] < 2:
        return None
    x, y = data[:, 0], data[:, 1]
    if (x <= 0).any() or (y <= 0).any():
        return None
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(x, y, "o-")
    ax.set_xlabel(header[0])
    ax.set_ylabel(header[1])
    ax.grid(True, which="both", alpha=0.4)
    svg = os.path.join(out_dir, name.replace(".csv", ".svg"))
    fig.savefig(svg, format="svg")
    plt.close(fig)
    return svg


# ---------------------------------------------------------------------------
# run driver


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def run(cfg: ExperimentConfig, config_path: str | None = None) -> int:
    violation, artifacts = RUNNERS[cfg.experiment](cfg)
    os.makedirs(cfg.out, exist_ok=True)
    outputs = {}
    for name in sorted(artifacts):
        path = os.path.join(cfg.out, name)
        with open(path, "w") as fh:
            fh.write(artifacts[name])
        outputs[name] = _digest(artifacts[name])
    if cfg.plot:
        for name in sorted(artifacts):
            if name.endswith(".csv"):
                svg = _plot_csv(name, artifacts[name], cfg.out)
                if svg:
                    with open(svg) as fh:
                        outputs[os.path.basename(svg)] = _digest(fh.read())
    manifest = {
        "tool": f"varlab {__version__}",
        "config": {f.name: (list(getattr(cfg, f.name))
                            if isinstance(getattr(cfg, f.name), tuple)
                            else getattr(cfg, f.name))
                   for f in dc_fields(cfg)},
        "inputs": {},
        "outputs": outputs,
    }
    if config_path:
        with open(config_path) as fh:
            manifest["inputs"][os.path.basename(config_path)] = _digest(fh.read())
    with open(os.path.join(cfg.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return EXIT_VIOLATION if violation else EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="varlab",
        description="Varifold regularity experiments: generators, excess sweeps, "
                    "Lipschitz approximation, decay fits, catenoid asymptotics.",
    )
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat key = value config file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="sweep parallelism (default: available cores, "
                            "or VARLAB_THREADS)")
        p.add_argument("--plot", action="store_true", default=None,
                       help="emit SVG log-log plots derived from the CSVs")
        p.add_argument("--model", default=None, choices=MODELS)
        p.add_argument("--seed", type=int, default=None)
        for key in ("m", "n", "q", "levels"):
            p.add_argument(f"--{key}", type=int, default=None)
        for key in ("eps", "theta", "R", "h", "circ_h", "r-max", "radius", "lam",
                    "delta", "beta", "p", "r-cutoff", "r0", "grid-h"):
            p.add_argument(f"--{key}", dest=key.replace("-", "_"), type=float,
                           default=None)
        p.add_argument("--eta-grid", dest="eta_grid", default=None,
                       help="comma-separated eta values")
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = build_config(args)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return run(cfg, config_path=args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 2
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
