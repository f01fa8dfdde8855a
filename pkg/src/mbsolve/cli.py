"""Command-line interface: config parsing, dispatch, outputs, verifiers.

Configs are TOML with tables [model], [grid], [noise], [solver],
[initial], [output].  Parsing collects every violation (unknown keys
included) rather than stopping at the first, and refuses to default any
physical parameter; only numerical-tolerance knobs have defaults.  The
effective config -- after defaults -- is echoed into the output
directory and re-parses to the identical configuration, and every CSV
output is byte-reproducible for a fixed config and seed (timestamps
live only in the metadata sidecar).

Exit codes: 0 success, 1 run error, 2 config error, 3 verification
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, replace

import numpy as np
import tomli

from . import __version__
from .frame import TestFunction, bump_family, toy_verify, weak_refinement_study
from .grid import Grid, make_grid
from .model import CoefficientSet, preset_burgers, preset_lob, preset_stefan
from .mc import ensemble, fit_order, heat_convergence_study
from .noise import NoiseKernel, gaussian_convolution_kernel
from .operators import (
    build_robin_operator,
    check_kato_first,
    form_value,
    low_frequency_ratio_max,
    norm_equivalence,
    parabolicity_constant,
)
from .solver import PathRecord, SolverConfig, run
from .grid import cell_inner, discrete_inner, forward_diff

__all__ = ["ConfigError", "RunConfig", "parse_config", "emit_toml", "main"]


class ConfigError(Exception):
    """Carries the complete list of configuration violations."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass
class RunConfig:
    """Validated configuration plus the constructed model objects."""

    effective: dict
    coeffs: CoefficientSet
    grid: Grid
    solver: SolverConfig
    seed: int
    out_dir: str
    out_stride: int


_PRESETS = {
    "stefan": "melting-front dynamics: zero bulk drift, proportional noise, trace-difference interface drift",
    "burgers": "stefan plus the quadratic transport drift u * grad u in both phases",
    "lob": "order-book densities: order-flow drift, cancellation, volume-imbalance price drift (bounded)",
    "custom": "arbitrary CoefficientSet built in code against the documented callable signatures",
}
_CONFIG_PRESETS = ("stefan", "burgers", "lob")

_PROFILE_KINDS = {"constant": ("scale",), "exp-decay": ("scale", "rate")}
_RHO_KINDS = {"tanh": ("scale", "slope"), "linear-capped": ("scale", "cap")}
_INITIAL_KINDS = {
    "zero": (),
    "constant": ("amplitude",),
    "exp": ("amplitude", "rate"),
    "gaussian": ("amplitude", "center", "width"),
}


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _take_number(
    table: dict,
    key: str,
    path: str,
    problems: list[str],
    required: bool = True,
    default: float | None = None,
    minimum: float | None = None,
    strict: bool = False,
):
    if key not in table:
        if required:
            problems.append(f"{path}.{key}: required (no silent default)")
            return None
        return default
    v = table[key]
    if not _is_number(v):
        problems.append(f"{path}.{key}: expected a number, got {v!r}")
        return None
    v = float(v)
    if minimum is not None and (v <= minimum if strict else v < minimum):
        rel = ">" if strict else ">="
        problems.append(f"{path}.{key}: must be {rel} {minimum}, got {v:g}")
        return None
    return v


def _take_int(
    table: dict,
    key: str,
    path: str,
    problems: list[str],
    required: bool = True,
    default: int | None = None,
    minimum: int | None = None,
):
    if key not in table:
        if required:
            problems.append(f"{path}.{key}: required (no silent default)")
            return None
        return default
    v = table[key]
    if isinstance(v, bool) or not isinstance(v, int):
        problems.append(f"{path}.{key}: expected an integer, got {v!r}")
        return None
    if minimum is not None and v < minimum:
        problems.append(f"{path}.{key}: must be >= {minimum}, got {v}")
        return None
    return int(v)


def _take_bool(table: dict, key: str, path: str, problems: list[str], default: bool):
    if key not in table:
        return default
    v = table[key]
    if not isinstance(v, bool):
        problems.append(f"{path}.{key}: expected true/false, got {v!r}")
        return default
    return v


def _take_str(
    table: dict,
    key: str,
    path: str,
    problems: list[str],
    choices=None,
    required: bool = True,
    default: str | None = None,
):
    if key not in table:
        if required:
            problems.append(f"{path}.{key}: required")
            return None
        return default
    v = table[key]
    if not isinstance(v, str):
        problems.append(f"{path}.{key}: expected a string, got {v!r}")
        return None
    if choices is not None and v not in choices:
        problems.append(f"{path}.{key}: {v!r} not one of {sorted(choices)}")
        return None
    return v


def _check_unknown(table: dict, known, path: str, problems: list[str]) -> None:
    for key in table:
        if key not in known:
            problems.append(f"{path}: unknown key {key!r} (known: {sorted(known)})")


def _parse_kinded(
    table,
    path: str,
    kinds: dict,
    problems: list[str],
) -> dict | None:
    """Validate a {kind = ..., params...} subtable against a kind registry."""
    if not isinstance(table, dict):
        problems.append(f"{path}: expected a table with a 'kind' key")
        return None
    kind = _take_str(table, "kind", path, problems, choices=set(kinds))
    if kind is None:
        return None
    params = kinds[kind]
    _check_unknown(table, {"kind", *params}, path, problems)
    out = {"kind": kind}
    for pkey in params:
        val = _take_number(table, pkey, path, problems)
        if val is None:
            return None
        out[pkey] = val
    if kind in ("exp-decay", "exp", "gaussian"):
        width_key = {"exp-decay": "rate", "exp": "rate", "gaussian": "width"}[kind]
        if out[width_key] <= 0.0:
            problems.append(f"{path}.{width_key}: must be > 0, got {out[width_key]:g}")
            return None
    return out


def _profile_callable(params: dict):
    if params["kind"] == "constant":
        s = params["scale"]
        return lambda d: np.full_like(np.asarray(d, dtype=float), s)
    s, r = params["scale"], params["rate"]
    return lambda d: s * np.exp(-r * np.asarray(d, dtype=float))


def _rho_callable(params: dict):
    if params["kind"] == "tanh":
        s, k = params["scale"], params["slope"]
        return lambda vi: s * math.tanh(k * vi)
    s, cap = params["scale"], params["cap"]
    return lambda vi: s * min(max(vi, -cap), cap)


def _initial_array(params: dict, x: np.ndarray) -> np.ndarray:
    kind = params["kind"]
    if kind == "zero":
        return np.zeros_like(x)
    if kind == "constant":
        return np.full_like(x, params["amplitude"])
    if kind == "exp":
        return params["amplitude"] * np.exp(-params["rate"] * x)
    return params["amplitude"] * np.exp(
        -((x - params["center"]) ** 2) / (2.0 * params["width"] ** 2)
    )


def parse_config(path: str) -> RunConfig:
    """Read, validate, and construct a run configuration.

    Raises ConfigError carrying every violation found: unknown keys at
    any level, missing required keys, type and range errors, and the
    numeric constraints of the downstream modules (grid size, step-size
    guard, parabolicity, noise coverage), all checked before any
    computation.
    """
    problems: list[str] = []
    try:
        with open(path, "rb") as f:
            raw = tomli.load(f)
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"]) from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError([f"TOML syntax: {exc}"]) from None

    _check_unknown(
        raw, {"model", "grid", "noise", "solver", "initial", "output"}, "config", problems
    )
    missing = [
        name
        for name in ("model", "grid", "solver", "noise", "initial")
        if not isinstance(raw.get(name), dict)
    ]
    for name in missing:
        problems.append(f"config: missing required table [{name}]")
    if missing:
        raise ConfigError(problems)

    model_t = raw["model"]
    grid_t = raw["grid"]
    noise_t = raw["noise"]
    solver_t = raw["solver"]
    initial_t = raw["initial"]
    output_t = raw.get("output", {})

    # ---- model --------------------------------------------------------
    preset = _take_str(
        model_t, "preset", "model", problems, choices=set(_CONFIG_PRESETS)
    )

    kernel_params = None
    if "kernel" in model_t:
        kt = model_t["kernel"]
        if not isinstance(kt, dict):
            problems.append("model.kernel: expected a table with ell and amplitude")
        else:
            _check_unknown(kt, {"ell", "amplitude"}, "model.kernel", problems)
            ell = _take_number(kt, "ell", "model.kernel", problems, minimum=0.0, strict=True)
            amp = _take_number(kt, "amplitude", "model.kernel", problems)
            if ell is not None and amp is not None:
                kernel_params = {"ell": ell, "amplitude": amp}

    eff_model: dict = {}
    lob_profiles: dict = {}
    if preset in ("stefan", "burgers"):
        _check_unknown(
            model_t,
            {"preset", "rho", "sigma", "kappa", "eta_plus", "eta_minus", "sigma_star", "kernel"},
            "model",
            problems,
        )
        vals = {
            key: _take_number(model_t, key, "model", problems, minimum=mn, strict=st)
            for key, mn, st in (
                ("rho", 0.0, True),
                ("sigma", 0.0, False),
                ("kappa", 0.0, True),
                ("eta_plus", 0.0, True),
                ("eta_minus", 0.0, True),
                ("sigma_star", 0.0, False),
            )
        }
        eff_model = {"preset": preset, **{k: v for k, v in vals.items() if v is not None}}
    elif preset == "lob":
        known = {
            "preset", "eta_plus", "eta_minus", "kappa_plus", "kappa_minus",
            "sigma_star", "alpha_plus", "alpha_minus", "abs_gradient", "kernel",
            "f_plus", "f_minus", "g_plus", "g_minus", "sigma_plus", "sigma_minus",
            "rho_imbalance",
        }
        _check_unknown(model_t, known, "model", problems)
        vals = {
            key: _take_number(model_t, key, "model", problems, minimum=mn, strict=st)
            for key, mn, st in (
                ("eta_plus", 0.0, True),
                ("eta_minus", 0.0, True),
                ("kappa_plus", 0.0, True),
                ("kappa_minus", 0.0, True),
                ("sigma_star", 0.0, False),
                ("alpha_plus", 0.0, False),
                ("alpha_minus", 0.0, False),
            )
        }
        abs_grad = _take_bool(model_t, "abs_gradient", "model", problems, default=False)
        for pname in ("f_plus", "f_minus", "g_plus", "g_minus", "sigma_plus", "sigma_minus"):
            if pname not in model_t:
                problems.append(f"model.{pname}: required profile table")
                continue
            params = _parse_kinded(model_t[pname], f"model.{pname}", _PROFILE_KINDS, problems)
            if params is not None:
                lob_profiles[pname] = params
        if "rho_imbalance" not in model_t:
            problems.append("model.rho_imbalance: required table")
        else:
            params = _parse_kinded(
                model_t["rho_imbalance"], "model.rho_imbalance", _RHO_KINDS, problems
            )
            if params is not None:
                lob_profiles["rho_imbalance"] = params
        eff_model = {
            "preset": "lob",
            **{k: v for k, v in vals.items() if v is not None},
            "abs_gradient": abs_grad,
            **lob_profiles,
        }
    if kernel_params is not None:
        eff_model["kernel"] = dict(kernel_params)

    # ---- grid ---------------------------------------------------------
    _check_unknown(grid_t, {"length", "n"}, "grid", problems)
    length = _take_number(grid_t, "length", "grid", problems, minimum=0.0, strict=True)
    n_cells = _take_int(grid_t, "n", "grid", problems, minimum=8)

    # ---- noise --------------------------------------------------------
    _check_unknown(noise_t, {"seed", "modes", "z_max"}, "noise", problems)
    seed = _take_int(noise_t, "seed", "noise", problems, minimum=0)
    modes = _take_int(noise_t, "modes", "noise", problems, required=False, default=64, minimum=8)
    z_max = _take_number(
        noise_t, "z_max", "noise", problems, required=False, minimum=0.0, strict=True
    )

    # ---- solver -------------------------------------------------------
    _check_unknown(
        solver_t,
        {"dt", "t_final", "n_max", "snapshot_stride", "retain_increments", "presmooth"},
        "solver",
        problems,
    )
    dt = _take_number(solver_t, "dt", "solver", problems, minimum=0.0, strict=True)
    t_final = _take_number(solver_t, "t_final", "solver", problems, minimum=0.0, strict=True)
    n_max = _take_number(
        solver_t, "n_max", "solver", problems, required=False, default=math.inf,
        minimum=0.0, strict=True,
    )
    snapshot_stride = _take_int(
        solver_t, "snapshot_stride", "solver", problems, required=False, default=0, minimum=0
    )
    retain = _take_bool(solver_t, "retain_increments", "solver", problems, default=False)
    presmooth = _take_bool(solver_t, "presmooth", "solver", problems, default=True)

    # ---- initial ------------------------------------------------------
    _check_unknown(initial_t, {"p", "plus", "minus"}, "initial", problems)
    initial_p = _take_number(initial_t, "p", "initial", problems, required=False, default=0.0)
    side_profiles = {}
    for side in ("plus", "minus"):
        if side not in initial_t:
            problems.append(f"initial.{side}: required profile table")
            continue
        params = _parse_kinded(initial_t[side], f"initial.{side}", _INITIAL_KINDS, problems)
        if params is not None:
            side_profiles[side] = params

    # ---- output -------------------------------------------------------
    if not isinstance(output_t, dict):
        problems.append("output: expected a table")
        output_t = {}
    _check_unknown(output_t, {"directory", "stride"}, "output", problems)
    out_dir = _take_str(
        output_t, "directory", "output", problems, required=False, default="mbsolve-out"
    )
    out_stride = _take_int(
        output_t, "stride", "output", problems, required=False, default=1, minimum=1
    )

    if problems:
        raise ConfigError(problems)

    # ---- construction and cross-module constraints --------------------
    grid = make_grid(length, n_cells)
    kernel: NoiseKernel | None = None
    if kernel_params is not None:
        kernel = gaussian_convolution_kernel(
            ell=kernel_params["ell"], amplitude=kernel_params["amplitude"]
        )
    if z_max is None:
        z_max = length + 3.0 * kernel.ell if kernel is not None else length

    coeffs = None
    try:
        if preset == "stefan":
            coeffs = preset_stefan(
                rho=eff_model["rho"], sigma=eff_model["sigma"], kappa=eff_model["kappa"],
                eta_plus=eff_model["eta_plus"], eta_minus=eff_model["eta_minus"],
                sigma_star=eff_model["sigma_star"], kernel=kernel,
            )
        elif preset == "burgers":
            coeffs = preset_burgers(
                rho=eff_model["rho"], sigma=eff_model["sigma"], kappa=eff_model["kappa"],
                eta_plus=eff_model["eta_plus"], eta_minus=eff_model["eta_minus"],
                sigma_star=eff_model["sigma_star"], kernel=kernel,
            )
        else:
            coeffs = preset_lob(
                f_plus=(lambda prof: (lambda d, y: prof(d)))(_profile_callable(lob_profiles["f_plus"])),
                f_minus=(lambda prof: (lambda d, y: prof(d)))(_profile_callable(lob_profiles["f_minus"])),
                alpha_plus=eff_model["alpha_plus"],
                alpha_minus=eff_model["alpha_minus"],
                g_plus=_profile_callable(lob_profiles["g_plus"]),
                g_minus=_profile_callable(lob_profiles["g_minus"]),
                sigma_plus=_profile_callable(lob_profiles["sigma_plus"]),
                sigma_minus=_profile_callable(lob_profiles["sigma_minus"]),
                rho_imbalance=_rho_callable(lob_profiles["rho_imbalance"]),
                sigma_star=eff_model["sigma_star"],
                eta_plus=eff_model["eta_plus"], eta_minus=eff_model["eta_minus"],
                kappa_plus=eff_model["kappa_plus"], kappa_minus=eff_model["kappa_minus"],
                kernel=kernel, abs_gradient=eff_model["abs_gradient"],
            )
    except ValueError as exc:
        problems.append(f"model: {exc}")

    if coeffs is not None:
        try:
            parabolicity_constant(coeffs.eta_plus, coeffs.eta_minus, coeffs.sigma_star)
        except (ValueError, ArithmeticError) as exc:
            problems.append(f"model: parabolicity: {exc}")

    u_plus = _initial_array(side_profiles["plus"], grid.nodes)
    u_minus = _initial_array(side_profiles["minus"], grid.nodes)
    solver_config = None
    try:
        solver_config = SolverConfig(
            grid=grid, dt=dt, t_final=t_final,
            initial_u1=u_plus, initial_u2=u_minus, initial_p=initial_p,
            n_max=n_max, snapshot_stride=snapshot_stride,
            retain_increments=retain, presmooth=presmooth,
            noise_modes=modes, z_max=z_max,
        )
    except ValueError as exc:
        problems.append(f"solver: {exc}")

    if coeffs is not None and solver_config is not None:
        guard = solver_config.stability_guard(coeffs.sigma_star)
        if dt > guard * (1.0 + 1e-12):
            problems.append(
                f"solver.dt: {dt:g} exceeds the gradient-noise stability guard "
                f"{guard:g} = h^2/(2 sigma_star^2)"
            )
        if kernel is not None and z_max < length + abs(initial_p):
            problems.append(
                f"noise.z_max: {z_max:g} cannot cover evaluation points for "
                f"|p| = {abs(initial_p):g} on a grid of length {length:g}"
            )
    if problems:
        raise ConfigError(problems)

    effective = {
        "model": eff_model,
        "grid": {"length": float(length), "n": int(n_cells)},
        "noise": {"seed": int(seed), "modes": int(modes), "z_max": float(z_max)},
        "solver": {
            "dt": float(dt), "t_final": float(t_final), "n_max": float(n_max),
            "snapshot_stride": int(snapshot_stride),
            "retain_increments": bool(retain), "presmooth": bool(presmooth),
        },
        "initial": {
            "p": float(initial_p),
            "plus": side_profiles["plus"],
            "minus": side_profiles["minus"],
        },
        "output": {"directory": out_dir, "stride": int(out_stride)},
    }
    return RunConfig(
        effective=effective, coeffs=coeffs, grid=grid, solver=solver_config,
        seed=int(seed), out_dir=out_dir, out_stride=int(out_stride),
    )


# ---------------------------------------------------------------- TOML out


def _toml_scalar(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_scalar(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v).__name__} to TOML")


def emit_toml(table: dict) -> str:
    """Serialize a nested dict of scalars to TOML (round-trips via tomli)."""
    lines: list[str] = []

    def walk(prefix: str, tab: dict) -> None:
        scalars = {k: v for k, v in tab.items() if not isinstance(v, dict)}
        subtables = {k: v for k, v in tab.items() if isinstance(v, dict)}
        if prefix:
            lines.append(f"[{prefix}]")
        for k, v in scalars.items():
            lines.append(f"{k} = {_toml_scalar(v)}")
        if prefix or scalars:
            lines.append("")
        for k, v in subtables.items():
            walk(f"{prefix}.{k}" if prefix else k, v)

    walk("", table)
    while lines and lines[-1] == "":
        lines.pop()
    return "\n".join(lines) + "\n"


def config_hash(effective: dict) -> str:
    return hashlib.sha256(emit_toml(effective).encode()).hexdigest()


# ----------------------------------------------------------------- writers


def _csv_cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    s = str(v)
    if "," in s or "\n" in s:
        raise ValueError(f"CSV cell may not contain separators: {s!r}")
    return s


def write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_csv_cell(v) for v in row) + "\n")


def write_metadata(path: str, entries: list[tuple[str, object]]) -> None:
    """key=value sidecar; the created= line carries the only timestamp."""
    with open(path, "w", newline="\n") as f:
        for key, val in entries:
            f.write(f"{key}={val}\n")
        f.write(f"created={time.strftime('%Y-%m-%dT%H:%M:%S%z')}\n")


def _write_path_csv(path: str, rec: PathRecord, stride: int) -> None:
    idx = list(range(0, rec.times.size, stride))
    if idx[-1] != rec.times.size - 1:
        idx.append(rec.times.size - 1)
    l2 = np.sqrt(rec.l2_sq)
    h1 = np.sqrt(rec.l2_sq + rec.grad_sq)
    write_csv(
        path,
        ["t", "p", "y_plus", "y_minus", "g_plus", "g_minus", "l2_u", "h1_u"],
        (
            (
                rec.times[i], rec.p[i], rec.y_plus[i], rec.y_minus[i],
                rec.g_plus[i], rec.g_minus[i], l2[i], h1[i],
            )
            for i in idx
        ),
    )


def _write_fields_csv(out_dir: str, rec: PathRecord, grid: Grid) -> list[str]:
    names = []
    for step, u1, u2 in rec.snapshots:
        name = f"fields_{step}.csv"
        rows = [(x, "plus", u1[i]) for i, x in enumerate(grid.nodes)]
        rows += [(x, "minus", u2[i]) for i, x in enumerate(grid.nodes)]
        write_csv(os.path.join(out_dir, name), ["x", "side", "value"], rows)
        names.append(name)
    return names


def _emit_run_outputs(rc: RunConfig, out_dir: str, command: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "effective_config.toml"), "w", newline="\n") as f:
        f.write(emit_toml(rc.effective))
    write_metadata(
        os.path.join(out_dir, "metadata.txt"),
        [
            ("version", __version__),
            ("command", command),
            ("seed", rc.seed),
            ("config_sha256", config_hash(rc.effective)),
        ],
    )


# ------------------------------------------------------------- subcommands


def _apply_seed_override(rc: RunConfig, seed) -> RunConfig:
    if seed is None:
        return rc
    rc = replace(rc, seed=int(seed))
    rc.effective["noise"] = dict(rc.effective["noise"], seed=int(seed))
    return rc


def cmd_simulate(args) -> int:
    rc = _apply_seed_override(parse_config(args.config), args.seed)
    out_dir = args.out if args.out is not None else rc.out_dir
    rec = run(rc.coeffs, rc.solver, rc.seed, path_index=args.path_index)
    os.makedirs(out_dir, exist_ok=True)
    _write_path_csv(os.path.join(out_dir, "path.csv"), rec, rc.out_stride)
    fields = _write_fields_csv(out_dir, rec, rc.grid)
    _emit_run_outputs(rc, out_dir, "simulate")
    print(
        f"simulate: {rec.stop} at t={rec.times[-1]:g}, p={rec.p[-1]:g}; "
        f"wrote path.csv and {len(fields)} field snapshots to {out_dir}"
    )
    return 0


def _thread_count(args) -> int | None:
    if getattr(args, "threads", None) is not None:
        return args.threads
    env = os.environ.get("MBSOLVE_THREADS")
    if env is None:
        return None
    try:
        return int(env)
    except ValueError:
        raise ConfigError([f"MBSOLVE_THREADS: expected an integer, got {env!r}"]) from None


def cmd_ensemble(args) -> int:
    rc = _apply_seed_override(parse_config(args.config), args.seed)
    out_dir = args.out if args.out is not None else rc.out_dir
    stats = ensemble(
        rc.coeffs, rc.solver, args.paths, rc.seed, threads=_thread_count(args)
    )
    os.makedirs(out_dir, exist_ok=True)

    by_index = {s.path_index: s for s in stats.summaries}
    failed = dict(stats.errors)
    rows = []
    for i in range(args.paths):
        if i in by_index:
            s = by_index[i]
            rows.append(
                (
                    i, s.stop.kind,
                    math.nan if s.stop.threshold is None else s.stop.threshold,
                    math.nan if s.stop.time is None else s.stop.time,
                    s.final_time, s.final_p,
                    s.sup_moment[-1], s.dissipation[-1],
                )
            )
        else:
            rows.append((i, "error", math.nan, math.nan, math.nan, math.nan, math.nan, math.nan))
    write_csv(
        os.path.join(out_dir, "ensemble.csv"),
        ["path", "stop_kind", "stop_threshold", "stop_time", "final_time",
         "final_p", "sup_moment", "dissipation"],
        rows,
    )
    k_hat = stats.k_hat if stats.k_hat is not None else [math.nan] * stats.checkpoints.size
    k_ci = (
        stats.k_hat_ci
        if stats.k_hat_ci is not None
        else np.full((2, stats.checkpoints.size), math.nan)
    )
    write_csv(
        os.path.join(out_dir, "stats.csv"),
        ["checkpoint", "n_paths", "n_errors", "mean_sup", "se_sup",
         "mean_dissipation", "se_dissipation", "blowup_fraction",
         "mean_blowup_time", "initial_norm", "k_hat", "k_hat_lo", "k_hat_hi"],
        (
            (
                stats.checkpoints[j], len(stats.summaries), len(stats.errors),
                stats.mean_sup[j], stats.se_sup[j],
                stats.mean_dissipation[j], stats.se_dissipation[j],
                stats.blowup_fraction, stats.mean_blowup_time,
                stats.initial_norm, k_hat[j], k_ci[0][j], k_ci[1][j],
            )
            for j in range(stats.checkpoints.size)
        ),
    )
    _emit_run_outputs(rc, out_dir, "ensemble")
    for i, msg in stats.errors:
        print(f"path {i} failed: {msg}", file=sys.stderr)
    print(
        f"ensemble: {len(stats.summaries)}/{args.paths} paths, "
        f"blow-up fraction {stats.blowup_fraction:g}; wrote ensemble.csv and "
        f"stats.csv to {out_dir}"
    )
    return 0


def cmd_presets(args) -> int:
    for name, desc in _PRESETS.items():
        print(f"{name:8s} {desc}")
    return 0


def _verify_out(args, name: str, header, rows) -> None:
    if getattr(args, "out", None):
        os.makedirs(args.out, exist_ok=True)
        write_csv(os.path.join(args.out, name), header, rows)
        write_metadata(
            os.path.join(args.out, "metadata.txt"),
            [("version", __version__), ("command", f"verify {name.split('.')[0]}")],
        )


def cmd_verify_operators(args) -> int:
    triples = [(1.0, 1.0, 2.02), (0.5, 2.0, 2.2), (2.0, 0.5, 1.01)]
    rows = []
    rng = np.random.default_rng(0)

    for eta, kappa, c in triples:
        for n in (64, 128):
            grid = make_grid(1.0, n)
            op = build_robin_operator(grid, eta, kappa, c)
            vecs = rng.standard_normal((200, n + 1))
            worst_rel = 0.0
            worst_kato = 0.0
            for u in vecs:
                du = forward_diff(u, grid)
                direct = (
                    c * discrete_inner(u, u, grid)
                    + eta * cell_inner(du, du, grid)
                    + eta * kappa * u[0] ** 2
                )
                via_form = form_value(op, u)
                worst_rel = max(worst_rel, abs(via_form - direct) / max(direct, 1e-300))
                k1 = check_kato_first(op, u)
                worst_kato = max(worst_kato, k1["lhs"] / max(k1["rhs"], 1e-300))
            rows.append(
                ("sqrt-identity", n, eta, kappa, c, worst_rel, 1e-12,
                 worst_rel / 1e-12, worst_rel <= 1e-12)
            )
            rows.append(
                ("kato-first", n, eta, kappa, c, worst_kato, 1.0, worst_kato,
                 worst_kato <= 1.0 + 1e-13)
            )

    for eta, kappa, c in triples:
        ratios = {}
        for n in (128, 256, 512):
            op = build_robin_operator(make_grid(1.0, n), eta, kappa, c)
            r = low_frequency_ratio_max(op, n_random=100, seed=1)
            ratios[n] = r
            rows.append(
                ("kato-second", n, eta, kappa, c, r, 1.05, r / 1.05, r <= 1.05)
            )
        gaps = [abs(1.0 - ratios[n]) for n in (128, 256, 512)]
        rows.append(
            ("kato-second-refinement", 512, eta, kappa, c, gaps[2], gaps[0],
             gaps[2] / max(gaps[0], 1e-300), gaps[2] < gaps[1] < gaps[0])
        )

    for eta, kappa, c in triples:
        grid = make_grid(1.0, 128)
        op = build_robin_operator(grid, eta, kappa, c)
        ok = True
        worst_low = math.inf
        worst_up = 0.0
        for u in rng.standard_normal((100, 129)):
            ne = norm_equivalence(op, u)
            ok = ok and ne["satisfied"]
            worst_low = min(worst_low, ne["value"] / max(ne["lower"], 1e-300))
            worst_up = max(worst_up, ne["value"] / max(ne["upper"], 1e-300))
        rows.append(
            ("norm-equivalence", 128, eta, kappa, c, worst_low, worst_up,
             worst_up, ok)
        )

    for eta_min, sigma_star in ((1.0, 0.5), (0.1, 3.0), (1e-6, 1000.0)):
        res = parabolicity_constant(eta_min, eta_min, sigma_star)
        rows.append(
            ("parabolicity", 0, eta_min, math.nan, math.nan, res["L_star"],
             math.sqrt(2.0), res["guard"], res["L_star"] < math.sqrt(2.0))
        )

    header = ["check", "n", "eta", "kappa", "c", "lhs", "rhs", "ratio", "pass"]
    _verify_out(args, "operators.csv", header, rows)
    ok = all(r[-1] for r in rows)
    for r in rows:
        print(
            f"{r[0]:<24s} n={r[1]:<4d} eta={r[2]:g} kappa={r[3]:g} c={r[4]:g} "
            f"ratio={r[7]:.4g} {'pass' if r[8] else 'FAIL'}"
        )
    print(f"verify operators: {'all checks passed' if ok else 'FAILURES above'}")
    return 0 if ok else 3


def cmd_verify_weak(args) -> int:
    coeffs = preset_stefan(
        rho=0.5, sigma=0.3, kappa=1.0, sigma_star=0.5,
        kernel=gaussian_convolution_kernel(ell=0.3, amplitude=0.4),
    )
    seeds = list(range(args.seeds))
    out = weak_refinement_study(
        coeffs, length=4.0, n_coarse=64, dt_coarse=4e-3, t_final=0.24,
        seeds=seeds, bumps=bump_family(3.0),
        initial_profile=lambda x: 0.8 * np.exp(-x / 2.0),
        noise_modes=48,
    )
    rows = [
        (r["phi_center"], r["phi_width"], r["seed"], r["resid_coarse"],
         r["resid_fine"], r["improved"])
        for r in out["rows"]
    ]
    _verify_out(
        args, "weak.csv",
        ["phi_center", "phi_width", "seed", "resid_coarse", "resid_fine", "improved"],
        rows,
    )
    for r in out["per_phi"]:
        print(
            f"bump c={r['phi_center']:+.3g} w={r['phi_width']:.3g}: "
            f"max residual {r['resid_coarse']:.3e} -> {r['resid_fine']:.3e} "
            f"{'pass' if r['improved'] else 'FAIL'}"
        )
    print(
        "verify weak: refinement "
        + ("shrinks the residual for every test function" if out["all_improved"]
           else "FAILED to shrink some residuals")
    )
    return 0 if out["all_improved"] else 3


def cmd_verify_toy(args) -> int:
    dts = sorted((float(s) for s in args.dts.split(",")), reverse=True)
    if len(dts) < 3:
        raise ConfigError([f"--dts: need at least 3 step sizes, got {dts}"])
    dt_min = dts[-1]
    ratios = [dt / dt_min for dt in dts]
    if any(abs(r - round(r)) > 1e-9 for r in ratios):
        raise ConfigError(
            [f"--dts: each step must be an integer multiple of the finest, got {dts}"]
        )
    sigma_star, t_final = 0.5, 1.0
    phi = TestFunction(0.1, 0.6)
    seeds = list(range(args.seeds))
    exact_ok = True
    means = []
    maxes = []
    for dt in dts:
        vals = []
        for seed in seeds:
            rng = np.random.Generator(np.random.Philox(key=[seed, 0]))
            fine_db = rng.standard_normal(int(round(t_final / dt_min))) * math.sqrt(dt_min)
            db = fine_db.reshape(-1, int(round(dt / dt_min))).sum(axis=1)
            res = toy_verify(
                sigma_star, t_final, dt, seed, phi, d_b=db,
                check_exact=(dt == dts[0]),
            )
            exact_ok = exact_ok and res["exact_ok"]
            vals.append(res["max_ito_residual"])
        means.append(float(np.mean(vals)))
        maxes.append(float(np.max(vals)))
    rep = fit_order(dts, means)
    cap = 0.02 * math.exp(-1.0)  # 2% of the bump's peak value
    cap_ok = means[-1] <= cap
    order_ok = rep.order is not None and rep.order >= 0.4
    _verify_out(
        args, "toy.csv", ["dt", "mean_residual", "max_residual"],
        zip(dts, means, maxes),
    )
    print(
        f"verify toy: exact identity {'pass' if exact_ok else 'FAIL'}; "
        f"fitted order {rep.order:.3f} ({'pass' if order_ok else 'FAIL'} >= 0.4); "
        f"finest mean residual {means[-1]:.3e} "
        f"({'pass' if cap_ok else 'FAIL'} <= {cap:.3e})"
    )
    return 0 if (exact_ok and order_ok and cap_ok) else 3


def cmd_verify_convergence(args) -> int:
    rep_t = heat_convergence_study("temporal")
    rep_s = heat_convergence_study("spatial")
    rows = [("temporal", lv, er) for lv, er in zip(rep_t.levels, rep_t.errors)]
    rows += [("spatial", lv, er) for lv, er in zip(rep_s.levels, rep_s.errors)]
    _verify_out(args, "convergence.csv", ["kind", "level", "error"], rows)
    ok_t = rep_t.order is not None and rep_t.order >= 0.9
    ok_s = rep_s.order is not None and rep_s.order >= 1.9
    print(
        f"verify convergence: temporal order {rep_t.order:.3f} "
        f"({'pass' if ok_t else 'FAIL'} >= 0.9), spatial order {rep_s.order:.3f} "
        f"({'pass' if ok_s else 'FAIL'} >= 1.9)"
    )
    return 0 if (ok_t and ok_s) else 3


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mbsolve",
        description="Stochastic moving-boundary system: simulation and verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="integrate one path and write CSV outputs")
    sim.add_argument("config", help="TOML configuration file")
    sim.add_argument("--out", help="output directory (default: output.directory)")
    sim.add_argument("--seed", type=int, help="override noise.seed")
    sim.add_argument("--path-index", type=int, default=0, help="RNG substream index")
    sim.set_defaults(func=cmd_simulate)

    ens = sub.add_parser("ensemble", help="run many paths and aggregate statistics")
    ens.add_argument("config")
    ens.add_argument("--paths", type=int, required=True, help="number of paths (>= 2)")
    ens.add_argument("--threads", type=int, help="worker threads (default: MBSOLVE_THREADS)")
    ens.add_argument("--out", help="output directory (default: output.directory)")
    ens.add_argument("--seed", type=int, help="override noise.seed")
    ens.set_defaults(func=cmd_ensemble)

    ver = sub.add_parser("verify", help="run a built-in verification battery")
    vsub = ver.add_subparsers(dest="target", required=True)
    vop = vsub.add_parser("operators", help="square-root identity, gradient bounds, parabolicity")
    vop.add_argument("--out", help="write operators.csv here")
    vop.set_defaults(func=cmd_verify_operators)
    vwk = vsub.add_parser("weak", help="weak-identity residual shrinks under refinement")
    vwk.add_argument("--out", help="write weak.csv here")
    vwk.add_argument("--seeds", type=int, default=2, help="number of coupled seeds")
    vwk.set_defaults(func=cmd_verify_weak)
    vtoy = vsub.add_parser("toy", help="closed-form Brownian-interface identities")
    vtoy.add_argument("--out", help="write toy.csv here")
    vtoy.add_argument("--seeds", type=int, default=10)
    vtoy.add_argument("--dts", default="1e-2,1e-3,1e-4", help="comma-separated step ladder")
    vtoy.set_defaults(func=cmd_verify_toy)
    vcv = vsub.add_parser("convergence", help="deterministic heat-oracle rates")
    vcv.add_argument("--out", help="write convergence.csv here")
    vcv.set_defaults(func=cmd_verify_convergence)

    pre = sub.add_parser("presets", help="list the built-in coefficient presets")
    pre.set_defaults(func=cmd_presets)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return int(args.func(args))
    except ConfigError as exc:
        print("configuration errors:", file=sys.stderr)
        for v in exc.violations:
            print(f"  - {v}", file=sys.stderr)
        return 2
    except Exception as exc:  # run errors: anything the computation raises
        print(f"run error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
