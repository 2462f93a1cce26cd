"""Config file parsing, writing, and initial-data construction.

The config format is TOML with four sections: ``[model]`` (constants plus
one subsection per model function), ``[grid]``, ``[run]``, and
``[solver]``.  Parsing is strict: unknown keys, missing keys, type
mismatches, out-of-range constants, and failed model assumptions all
produce a ConfigError whose diagnostics list (key, line, reason) tuples,
with assumption failures cited by their check label.  A config written
back out re-parses to an identical RunConfig.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .energy import FieldPair
from .errors import ConfigError, InvalidParameterError
from .mesh import Mesh, MeshSpec
from .model import FunctionSpec, ModelParams, validate_assumptions
from .scheme import SolverOptions, State

INITIAL_SELECTORS = ("two_grain", "ground", "random", "from_file")

_MODEL_SCALARS = ("kappa", "kappa_gamma", "epsilon", "delta", "tau", "r0", "r1")
_MODEL_FUNCTIONS = ("g", "g_gamma", "alpha", "alpha0", "alpha_gamma0")


@dataclass
class RunConfig:
    params: ModelParams
    n_steps: int = 500
    snapshot_interval: int = 100
    output_dir: str = "out"
    seed: int = 0
    initial: str = "two_grain"
    initial_file: str = ""
    solver: SolverOptions = field(default_factory=SolverOptions)


def _key_line(text: str, key: str) -> int:
    """Best-effort line number of a key in the raw config text (1-based)."""
    leaf = key.split(".")[-1]
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if stripped.startswith(leaf) and "=" in stripped:
            return i
        if stripped == f"[{key}]" or stripped == f"[{leaf}]":
            return i
    return 0


def parse_config(path) -> RunConfig:
    """Parse and fully validate a run configuration."""
    with open(path, "rb") as fh:
        text_bytes = fh.read()
    text = text_bytes.decode("utf-8")
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"not valid TOML: {err}", [("", 0, str(err))]) from err

    diags = []

    def need(section: dict, sec_name: str, key: str, types):
        full = f"{sec_name}.{key}" if sec_name else key
        if key not in section:
            diags.append((full, _key_line(text, full), "missing key"))
            return None
        v = section[key]
        if not isinstance(v, types) or isinstance(v, bool):
            diags.append(
                (full, _key_line(text, full), f"expected {types}, got {type(v).__name__}")
            )
            return None
        return v

    for sec in ("model", "grid", "run"):
        if sec not in doc:
            diags.append((sec, _key_line(text, sec), "missing section"))
    if diags:
        raise ConfigError("config rejected", diags)

    model = doc["model"]
    scalars = {k: need(model, "model", k, (int, float)) for k in _MODEL_SCALARS}
    fns = {}
    for name in _MODEL_FUNCTIONS:
        sub = model.get(name)
        if not isinstance(sub, dict):
            diags.append((f"model.{name}", _key_line(text, f"model.{name}"), "missing function table"))
            continue
        kind = need(sub, f"model.{name}", "kind", str)
        coef = need(sub, f"model.{name}", "coef", list)
        if kind is None or coef is None:
            continue
        try:
            fns[name] = FunctionSpec(kind, tuple(float(c) for c in coef))
        except (InvalidParameterError, TypeError, ValueError) as err:
            diags.append((f"model.{name}", _key_line(text, f"model.{name}"), str(err)))

    grid_sec = doc["grid"]
    geometry = need(grid_sec, "grid", "geometry", str)
    nx = need(grid_sec, "grid", "nx", int)
    ny = grid_sec.get("ny", 1)
    lx = float(grid_sec.get("lx", 1.0))
    ly = float(grid_sec.get("ly", 1.0))
    grid = None
    if geometry is not None and nx is not None:
        try:
            grid = MeshSpec(geometry, nx, int(ny), lx, ly)
        except InvalidParameterError as err:
            diags.append(("grid", _key_line(text, "grid"), str(err)))

    if diags or grid is None or len(fns) != len(_MODEL_FUNCTIONS) or None in scalars.values():
        raise ConfigError("config rejected", diags)

    try:
        params = ModelParams(
            kappa=float(scalars["kappa"]),
            kappa_gamma=float(scalars["kappa_gamma"]),
            epsilon=float(scalars["epsilon"]),
            delta=float(scalars["delta"]),
            tau=float(scalars["tau"]),
            r0=float(scalars["r0"]),
            r1=float(scalars["r1"]),
            g_spec=fns["g"],
            g_gamma_spec=fns["g_gamma"],
            alpha_spec=fns["alpha"],
            alpha0_spec=fns["alpha0"],
            alpha_gamma0_spec=fns["alpha_gamma0"],
            grid=grid,
        )
    except InvalidParameterError as err:
        raise ConfigError("config rejected", [("model", _key_line(text, "model"), str(err))]) from err

    report = validate_assumptions(params)
    for check in report.failures:
        diags.append(
            (f"({check.label})", _key_line(text, "model"), f"{check.description} fails")
        )
    if diags:
        raise ConfigError("config rejected", diags)

    run = doc["run"]
    n_steps = need(run, "run", "n_steps", int)
    initial = run.get("initial", "two_grain")
    if initial not in INITIAL_SELECTORS:
        diags.append(
            ("run.initial", _key_line(text, "run.initial"), f"unknown selector {initial!r}")
        )
    initial_file = str(run.get("initial_file", ""))
    if initial == "from_file" and not initial_file:
        diags.append(("run.initial_file", _key_line(text, "run.initial_file"), "missing key"))
    snapshot_interval = int(run.get("snapshot_interval", 100))
    output_dir = str(run.get("output_dir", "out"))
    seed = int(run.get("seed", 0))
    if n_steps is None or n_steps < 1:
        diags.append(("run.n_steps", _key_line(text, "run.n_steps"), "must be a positive integer"))

    solver = SolverOptions()
    if "solver" in doc:
        ssec = doc["solver"]
        known = set(SolverOptions.__dataclass_fields__)
        for k, v in ssec.items():
            if k not in known:
                diags.append((f"solver.{k}", _key_line(text, f"solver.{k}"), "unknown key"))
                continue
            cur = getattr(solver, k)
            setattr(solver, k, type(cur)(v))

    if diags:
        raise ConfigError("config rejected", diags)

    return RunConfig(
        params=params,
        n_steps=int(n_steps),
        snapshot_interval=snapshot_interval,
        output_dir=output_dir,
        seed=seed,
        initial=str(initial),
        initial_file=initial_file,
        solver=solver,
    )


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v) if v != int(v) or abs(v) >= 1e16 else f"{v:.1f}"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise InvalidParameterError(f"cannot serialize {type(v).__name__} to config")


def write_config(cfg: RunConfig, path):
    """Write a config that re-parses to an identical RunConfig."""
    p = cfg.params
    lines = ["[model]"]
    for k in _MODEL_SCALARS:
        lines.append(f"{k} = {_toml_value(float(getattr(p, k)))}")
    for name in _MODEL_FUNCTIONS:
        spec = getattr(p, f"{name}_spec")
        lines.append(f"\n[model.{name}]")
        lines.append(f'kind = "{spec.kind}"')
        lines.append(f"coef = {_toml_value(list(spec.coef))}")
    g = p.grid
    lines.append("\n[grid]")
    lines.append(f'geometry = "{g.geometry}"')
    lines.append(f"nx = {g.nx}")
    lines.append(f"ny = {g.ny}")
    lines.append(f"lx = {_toml_value(float(g.lx))}")
    lines.append(f"ly = {_toml_value(float(g.ly))}")
    lines.append("\n[run]")
    lines.append(f"n_steps = {cfg.n_steps}")
    lines.append(f"snapshot_interval = {cfg.snapshot_interval}")
    lines.append(f'output_dir = "{cfg.output_dir}"')
    lines.append(f"seed = {cfg.seed}")
    lines.append(f'initial = "{cfg.initial}"')
    if cfg.initial_file:
        lines.append(f'initial_file = "{cfg.initial_file}"')
    lines.append("\n[solver]")
    s = cfg.solver
    lines.append(f"tol_inner = {_toml_value(s.tol_inner)}")
    lines.append(f"max_outer = {s.max_outer}")
    lines.append(f"cg_tol = {_toml_value(s.cg_tol)}")
    lines.append(f"cg_max_iter = {s.cg_max_iter}")
    lines.append(f'linear_solver = "{s.linear_solver}"')
    lines.append(f"direct_threshold = {s.direct_threshold}")
    lines.append(f"newton_max_halvings = {s.newton_max_halvings}")
    lines.append(f"anderson_depth = {s.anderson_depth}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def two_grain_state(mesh: Mesh, params: ModelParams) -> State:
    """Smoothed two-grain data: the angle steps from r0 to r1 across a
    vertical interface of width 4h at the domain midline, and the order
    parameter dips from 1 to 0.2 along it (Gaussian of width 2h)."""
    x = mesh.coords[:, 0]
    lx = mesh.spec.lx
    h = lx / mesh.spec.nx if mesh.spec.geometry == "periodic_strip" else lx / (
        mesh.spec.nx - 1
    )
    d = x - 0.5 * lx
    s = np.clip(d / (4.0 * h) + 0.5, 0.0, 1.0)
    smooth = s * s * (3.0 - 2.0 * s)
    theta = params.r0 + (params.r1 - params.r0) * smooth
    eta = 1.0 - 0.8 * np.exp(-(d * d) / (2.0 * (2.0 * h) ** 2))
    return State(FieldPair(eta), FieldPair(theta))


def build_initial_state(mesh: Mesh, params: ModelParams, cfg: RunConfig) -> State:
    if cfg.initial == "two_grain":
        return two_grain_state(mesh, params)
    if cfg.initial == "ground":
        n = mesh.n_nodes
        return State(FieldPair(np.ones(n)), FieldPair(np.full(n, params.r0)))
    if cfg.initial == "random":
        rng = np.random.default_rng(cfg.seed)
        eta = rng.uniform(0.0, 1.0, mesh.n_nodes)
        theta = rng.uniform(params.r0, params.r1, mesh.n_nodes)
        return State(FieldPair(eta), FieldPair(theta))
    if cfg.initial == "from_file":
        if not os.path.exists(cfg.initial_file):
            raise ConfigError(
                f"initial-data file {cfg.initial_file!r} does not exist",
                [("run.initial_file", 0, "file not found")],
            )
        with np.load(cfg.initial_file, allow_pickle=False) as data:
            eta, theta = data["eta"], data["theta"]
        return State(FieldPair(np.asarray(eta, dtype=float)),
                     FieldPair(np.asarray(theta, dtype=float)))
    raise ConfigError(f"unknown initial selector {cfg.initial!r}")
