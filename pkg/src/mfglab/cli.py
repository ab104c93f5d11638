"""Batch front end: validate a JSON config, run one workflow, write artifacts.

Four commands: ``solve`` (conventional forward solve), ``verify`` (weighted
inequality fit/verify incl. the rectangular-domain identity), ``stability``
(Holder floor experiments), ``reconstruct`` (regularized reconstruction
with scoring).  Every run writes ``report.json``, flat CSV tables, and a
``manifest.json`` holding the echoed config and a content hash of every
emitted file; timestamps appear only in the manifest, so repeated runs
with the same config and seed are byte-identical elsewhere.

Exit codes: 0 all pass flags true, 1 a pass flag false, 2 config error,
3 numerical abort.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import math
import os
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

__all__ = ["RunConfig", "ConfigError", "parse_config", "run", "main"]


class ConfigError(ValueError):
    pass


_SWEEP = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "lo": {"type": "number", "exclusiveMinimum": 0},
        "hi": {"type": "number", "exclusiveMinimum": 0},
        "count": {"type": "integer", "minimum": 1},
    },
}

_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["command", "grid"],
    "properties": {
        "command": {"enum": ["solve", "verify", "stability", "reconstruct"]},
        "seed": {"type": "integer", "minimum": 0},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["extents", "nodes", "T", "time_nodes"],
            "properties": {
                "extents": {
                    "type": "array",
                    "minItems": 1,
                    "maxItems": 2,
                    "items": {
                        "type": "array",
                        "minItems": 2,
                        "maxItems": 2,
                        "items": {"type": "number"},
                    },
                },
                "nodes": {
                    "type": "array",
                    "minItems": 1,
                    "maxItems": 2,
                    "items": {"type": "integer", "minimum": 3},
                },
                "T": {"type": "number", "exclusiveMinimum": 0},
                "time_nodes": {"type": "integer", "minimum": 3},
            },
        },
        "problem": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "beta": {"type": "number", "exclusiveMinimum": 0},
                "r": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["constant", "cosine"]},
                        "value": {"type": "number"},
                        "offset": {"type": "number"},
                        "amplitude": {"type": "number"},
                        "mode": {"type": "integer", "minimum": 1},
                    },
                },
                "interaction": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "kernel": {
                            "type": "object",
                            "additionalProperties": False,
                            "properties": {
                                "kind": {"enum": ["zero", "gaussian"]},
                                "amplitude": {"type": "number"},
                                "sigma": {"type": "number", "exclusiveMinimum": 0},
                            },
                        },
                        "f": {
                            "type": "object",
                            "additionalProperties": False,
                            "properties": {
                                "family": {"enum": ["zero", "linear", "tanh"]},
                                "gamma1": {"type": "number"},
                                "gamma2": {"type": "number"},
                            },
                        },
                    },
                },
                "manufactured": {"enum": ["linear_heat", "decay_cosine", "drift_mix"]},
                "bounds": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "D1": {"type": "number", "exclusiveMinimum": 0},
                        "D2": {"type": "number", "exclusiveMinimum": 0},
                        "D3": {"type": "number", "exclusiveMinimum": 0},
                        "D4": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
            },
        },
        "solve": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "picard": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "max_outer": {"type": "integer", "minimum": 1},
                        "damping": {"type": "number"},
                        "tol_res": {"type": "number", "minimum": 0},
                        "initial_guess": {"enum": ["zero"]},
                    },
                }
            },
        },
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "estimates": {
                    "type": "array",
                    "minItems": 1,
                    "items": {"enum": ["T3.1", "T3.2", "T3.3", "T3.4", "L3.1"]},
                },
                "beta": {"type": "number", "exclusiveMinimum": 0},
                "fields": {"type": "integer", "minimum": 1},
                "mode_cap": {"type": "integer", "minimum": 1},
                "k": {"type": "number"},
                "k0": {"type": "number"},
                "b": {"type": "number", "exclusiveMinimum": 0},
                "c": {"type": "number"},
                "slack": {"type": "number", "exclusiveMinimum": 1},
                "sweep_increasing": _SWEEP,
                "sweep_decreasing": _SWEEP,
                "l31_tol": {"type": "number", "exclusiveMinimum": 0},
                "l31_fields": {"type": "integer", "minimum": 1},
            },
        },
        "stability": {
            "type": "object",
            "additionalProperties": False,
            "required": ["problem_id"],
            "properties": {
                "problem_id": {"enum": ["P1", "P2"]},
                "epsilon": {"type": "number"},
                "k": {"type": "number"},
                "c": {"type": "number"},
                "delta_levels": {
                    "type": "array",
                    "minItems": 4,
                    "items": {"type": "number"},
                },
                "delta0": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "targets": {
                    "type": "array",
                    "items": {"enum": ["u_T", "m0", "G1", "G2"]},
                },
                "mode_cap": {"type": "integer", "minimum": 1},
                "decay": {"type": "number", "minimum": 0},
                "picard": {"type": "object"},
            },
        },
        "reconstruct": {
            "type": "object",
            "additionalProperties": False,
            "required": ["problem_id"],
            "properties": {
                "problem_id": {"enum": ["P1", "P2"]},
                "lambda": {"type": "number", "exclusiveMinimum": 0},
                "k": {"type": "number"},
                "b": {"type": "number", "exclusiveMinimum": 0},
                "c": {"type": "number"},
                "alpha": {"type": "number", "minimum": 0},
                "epsilon": {"type": "number"},
                "delta_levels": {"type": "array", "items": {"type": "number"}},
                "cg": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "max_iters": {"type": "integer", "minimum": 1},
                        "tol": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
                "outer": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"max_iters": {"type": "integer", "minimum": 1}},
                },
                "pass_threshold": {"type": "number", "exclusiveMinimum": 0},
            },
        },
    },
}

_DEFAULTS = {
    "problem": {
        "beta": 0.1,
        "r": {"kind": "constant", "value": 0.0},
        "interaction": {"kernel": {"kind": "zero"}, "f": {"family": "zero"}},
        "manufactured": "decay_cosine",
    },
    "solve": {
        "picard": {"max_outer": 30, "damping": 0.5, "tol_res": 0.05, "initial_guess": "zero"}
    },
    "verify": {
        "estimates": ["T3.1", "T3.2", "T3.3", "T3.4", "L3.1"],
        "beta": 0.1,
        "fields": 20,
        "mode_cap": 8,
        "k": 3.0,
        "k0": 4.0,
        "b": 1.0,
        "slack": 1.5,
        "sweep_increasing": {"lo": 5.0, "hi": 40.0, "count": 8},
        "sweep_decreasing": {"lo": 3.0, "hi": 10.0, "count": 8},
        "l31_tol": 1e-6,
        "l31_fields": 50,
    },
    "stability": {
        "epsilon": 0.5,
        "k": 3.0,
        "delta_levels": [1e-2, 1e-3, 1e-4, 1e-5],
        "delta0": 0.1,
        "targets": ["u_T", "m0", "G1", "G2"],
        "mode_cap": 6,
        "decay": 2.0,
        "picard": {"max_outer": 40, "damping": 0.5, "tol_res": 0.05},
    },
    "reconstruct": {
        "lambda": 2.0,
        "k": 3.0,
        "b": 1.0,
        "alpha": 1e-8,
        "epsilon": 0.2,
        "delta_levels": [],
        "cg": {"max_iters": 200, "tol": 1e-10},
        "outer": {"max_iters": 6},
        "pass_threshold": 1e-2,
    },
}


def _fill_defaults(target: dict, defaults: dict) -> dict:
    out = dict(defaults)
    for key, val in target.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _fill_defaults(val, out[key])
        else:
            out[key] = val
    return out


@dataclass
class RunConfig:
    command: str
    data: dict
    seed: int

    @property
    def grid_spec(self) -> dict:
        return self.data["grid"]


def parse_config(text: str) -> RunConfig:
    """Validate the JSON config, fill defaults, apply range checks."""
    import jsonschema

    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(raw, _SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {path}: {exc.message}") from exc

    command = raw["command"]
    data = dict(raw)
    data["problem"] = _fill_defaults(raw.get("problem", {}), _DEFAULTS["problem"])
    if command in _DEFAULTS:
        data[command] = _fill_defaults(raw.get(command, {}), _DEFAULTS[command])

    grid = data["grid"]
    if len(grid["extents"]) != len(grid["nodes"]):
        raise ConfigError("grid extents and nodes must have equal length")
    for a, b in grid["extents"]:
        if not b > a:
            raise ConfigError(f"degenerate grid extent [{a}, {b}]")
    T = grid["T"]

    if command == "verify":
        blk = data["verify"]
        if blk["k"] <= 2 or blk["k0"] <= 2:
            raise ConfigError("k must exceed 2 (weight family validity)")
        if blk.get("c") is not None and blk["c"] <= 2:
            raise ConfigError("c must exceed 2 (weight family validity)")
        for key in ("sweep_increasing", "sweep_decreasing"):
            blk[key] = _fill_defaults(blk.get(key, {}), _DEFAULTS["verify"][key])
    if command == "stability":
        blk = data["stability"]
        if not 0 < blk["epsilon"] < T:
            raise ConfigError(f"epsilon must lie in (0, T) = (0, {T})")
        if blk["k"] <= 2:
            raise ConfigError("k must exceed 2 (weight family validity)")
        levels = blk["delta_levels"]
        if any(d <= 0 for d in levels):
            raise ConfigError("delta levels must be positive")
        if any(b_ >= a_ for a_, b_ in zip(levels, levels[1:])):
            raise ConfigError("delta levels must be strictly decreasing")
        if levels[0] >= blk["delta0"]:
            raise ConfigError("delta levels must stay below delta0")
    if command == "reconstruct":
        blk = data["reconstruct"]
        if not 0 < blk["epsilon"] < T:
            raise ConfigError(f"epsilon must lie in (0, T) = (0, {T})")
        if blk["k"] <= 2:
            raise ConfigError("k must exceed 2 (weight family validity)")
        if any(d <= 0 for d in blk["delta_levels"]):
            raise ConfigError("delta levels must be positive")

    return RunConfig(command=command, data=data, seed=int(raw.get("seed", 0)))


# ---------------------------------------------------------------------------
# artifact writing


def _fmt(value) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{value:.16e}"
    return str(value)


def _write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("", encoding="utf-8")
        return
    header = list(rows[0].keys())
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(row[h]) for h in header))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(
        json.dumps(payload, sort_keys=True, indent=2, allow_nan=True) + "\n",
        encoding="utf-8",
    )


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _build_grid(cfg: RunConfig):
    from mfglab.grid import build_grid

    g = cfg.grid_spec
    return build_grid(g["extents"], g["nodes"], g["T"], g["time_nodes"])


def _run_solve(cfg: RunConfig, out: Path) -> tuple[bool, list[Path]]:
    from mfglab.forward import PicardOptions, solve_conventional
    from mfglab.mfg import problem_from_config

    grid = _build_grid(cfg)
    case = problem_from_config(cfg.data["problem"], grid)
    p = cfg.data["solve"]["picard"]
    opts = PicardOptions(
        max_outer=p["max_outer"],
        damping=p["damping"],
        tol_res=p["tol_res"],
        initial_guess=p["initial_guess"],
    )
    u, m, rep = solve_conventional(case.problem, case.u_T, case.m_0, opts)
    report = {
        "command": "solve",
        "converged": rep.converged,
        "iterations": rep.iterations,
        "residual_u_history": rep.residual_u_history,
        "residual_m_history": rep.residual_m_history,
        "final_residual": rep.final_residual,
        "in_K3": rep.admissibility.in_K3,
        "in_K4": rep.admissibility.in_K4,
        "pass": rep.converged,
    }
    files = [out / "report.json", out / "residuals.csv", out / "solution.csv"]
    _write_json(files[0], report)
    _write_csv(
        files[1],
        [
            {"iter": i + 1, "residual_u": a, "residual_m": b}
            for i, (a, b) in enumerate(zip(rep.residual_u_history, rep.residual_m_history))
        ],
    )
    rows = []
    for idx in itertools.product(*map(range, grid.shape)):
        row = {"x": grid.axes[0][idx[0]]}
        if grid.dim == 2:
            row["y"] = grid.axes[1][idx[1]]
        row["t"] = grid.times[idx[-1]]
        row["u"] = u.values[idx]
        row["m"] = m.values[idx]
        rows.append(row)
    _write_csv(files[2], rows)
    return rep.converged, files


def _run_verify(cfg: RunConfig, out: Path) -> tuple[bool, list[Path]]:
    import numpy as np

    from mfglab.carleman import fit_and_verify, margin_table_rows

    grid = _build_grid(cfg)
    blk = cfg.data["verify"]
    s1 = np.linspace(
        blk["sweep_increasing"]["lo"], blk["sweep_increasing"]["hi"],
        blk["sweep_increasing"]["count"],
    )
    s2 = np.linspace(
        blk["sweep_decreasing"]["lo"], blk["sweep_decreasing"]["hi"],
        blk["sweep_decreasing"]["count"],
    )
    all_pass = True
    summary = {}
    rows = []
    for est in blk["estimates"]:
        kwargs = dict(
            beta=blk["beta"],
            n_fields=blk["fields"] if est != "L3.1" else blk["l31_fields"],
            mode_cap=blk["mode_cap"],
            seed=cfg.seed,
            slack=blk["slack"],
            l31_tol=blk["l31_tol"],
        )
        sweep = None if est == "L3.1" else (s1 if est in ("T3.1", "T3.2") else s2)
        # the second inequality is only claimed for exponents at least k0
        k_est = blk["k0"] if est == "T3.2" else blk["k"]
        rep = fit_and_verify(est, grid, sweep, k=k_est, b=blk["b"], c=blk.get("c"), **kwargs)
        ok = rep.verified and (est == "L3.1" or not rep.degenerate)
        all_pass &= ok
        summary[est] = {
            "verified": rep.verified,
            "degenerate": rep.degenerate,
            "C_fit": rep.c_fit,
            "max_gap": rep.max_gap if est == "L3.1" else None,
            "pass": ok,
        }
        rows.extend(margin_table_rows(rep))
    report = {"command": "verify", "estimates": summary, "pass": all_pass}
    files = [out / "report.json", out / "margins.csv"]
    _write_json(files[0], report)
    _write_csv(files[1], rows)
    return all_pass, files


def _run_stability(cfg: RunConfig, out: Path) -> tuple[bool, list[Path]]:
    from mfglab.forward import PicardOptions
    from mfglab.mfg import problem_from_config
    from mfglab.stability import PerturbationSpec, SpectrumSpec, holder_experiment

    grid = _build_grid(cfg)
    case = problem_from_config(cfg.data["problem"], grid)
    blk = cfg.data["stability"]
    pert = PerturbationSpec(
        seed=cfg.seed,
        delta_levels=tuple(blk["delta_levels"]),
        spectrum=SpectrumSpec(mode_cap=blk["mode_cap"], decay=blk["decay"]),
        targets=tuple(blk["targets"]),
        delta0=blk["delta0"],
    )
    p = blk["picard"]
    opts = PicardOptions(
        max_outer=p.get("max_outer", 40),
        damping=p.get("damping", 0.5),
        tol_res=p.get("tol_res", 0.05),
    )
    rep = holder_experiment(
        blk["problem_id"],
        case,
        pert,
        blk["epsilon"],
        k=blk["k"] if blk["problem_id"] == "P1" else None,
        c=blk.get("c"),
        opts=opts,
    )
    files = [out / "report.json", out / "stability.csv"]
    payload = rep.to_dict()
    payload["command"] = "stability"
    _write_json(files[0], payload)
    _write_csv(files[1], rep.csv_rows())
    return rep.passed, files


def _run_reconstruct(cfg: RunConfig, out: Path) -> tuple[bool, list[Path]]:
    from mfglab.mfg import problem_from_config
    from mfglab.reconstruct import ReconstructionConfig, reconstruct_and_score

    grid = _build_grid(cfg)
    case = problem_from_config(cfg.data["problem"], grid)
    blk = cfg.data["reconstruct"]
    rc = ReconstructionConfig(
        problem_id=blk["problem_id"],
        lam=blk["lambda"],
        k=blk["k"],
        b=blk["b"],
        c=blk.get("c"),
        alpha=blk["alpha"],
        cg_tol=blk["cg"]["tol"],
        cg_max_iters=blk["cg"]["max_iters"],
        max_outer=blk["outer"]["max_iters"],
    )
    rep = reconstruct_and_score(
        case,
        rc,
        epsilon=blk["epsilon"],
        delta_levels=tuple(blk["delta_levels"]),
        seed=cfg.seed,
    )
    threshold = blk["pass_threshold"]
    ok = (
        rep.noiseless_errors["u_l2_rel"] < threshold
        and rep.noiseless_errors["m_l2_rel"] < threshold
    )
    errs = [e["u_l2_rel"] + e["m_l2_rel"] for e in rep.noisy_errors]
    ok &= all(b <= a * (1 + 1e-9) for a, b in zip(errs, errs[1:]))
    payload = rep.to_dict()
    payload["command"] = "reconstruct"
    payload["pass"] = ok
    files = [out / "report.json", out / "iterations.csv"]
    _write_json(files[0], payload)
    _write_csv(files[1], rep.iteration_rows)
    return ok, files


def run(cfg: RunConfig, out_dir: str | os.PathLike, threads: int | None = None) -> int:
    """Dispatch the configured workflow and write artifacts + manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runners = {
        "solve": _run_solve,
        "verify": _run_verify,
        "stability": _run_stability,
        "reconstruct": _run_reconstruct,
    }
    try:
        passed, files = runners[cfg.command](cfg, out)
    except (ValueError, NotImplementedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3
    manifest = {
        "config": cfg.data,
        "seed": cfg.seed,
        "threads": threads,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "files": {f.name: _sha256(f) for f in files},
        "pass": passed,
    }
    _write_json(out / "manifest.json", manifest)
    return 0 if passed else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mfglab", description="batch experiments for the coupled system laboratory"
    )
    parser.add_argument("--config", required=True, help="path to the JSON run config")
    parser.add_argument("--out", required=True, help="output directory for artifacts")
    parser.add_argument("--seed", type=int, default=None, help="seed override")
    parser.add_argument("--threads", type=int, default=None, help="BLAS thread hint")
    args = parser.parse_args(argv)

    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(args.threads))

    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(text)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.seed = args.seed
    return run(cfg, args.out, threads=args.threads)


if __name__ == "__main__":
    sys.exit(main())
