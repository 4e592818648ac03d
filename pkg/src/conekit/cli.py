"""Command line runner: ``conekit {solve,audit,oracle,compare,transport} --config FILE``.

Exit codes: 0 success, 1 usage error, 2 invalid config, 3 solver or I/O
failure, 4 assumption audit failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import errors
from .audit import audit_assumptions
from .diagnostics import emit_csv, emit_summary
from .kinetic_models import KernelSpec, LinearEnvelope, build_model, load_kernel_csv
from .monotone_solver import SolverConfig, TimeGrid, solve
from .oracle import closed_form_constant_kernel, compare, rk4_solve, split_step_transport_oracle
from .ordered_space import StateVec
from .transport import TransportSpec, solve_mild

__all__ = ["main", "run", "load_config", "CONFIG_SCHEMA", "EXIT_OK", "EXIT_USAGE", "EXIT_CONFIG",
           "EXIT_SOLVER", "EXIT_AUDIT"]

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_SOLVER, EXIT_AUDIT = 0, 1, 2, 3, 4
DEFAULT_SEED = 0

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_envelope = {
    "type": "object",
    "properties": {"alpha": _nonneg, "beta": _nonneg},
    "additionalProperties": False,
}
_matrix = {"type": "array", "items": {"type": "array", "items": _nonneg}}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["schema", "model"],
    "additionalProperties": False,
    "properties": {
        "schema": {"const": "conekit/1"},
        "model": {
            "type": "object",
            "required": ["kernel", "K"],
            "additionalProperties": False,
            "properties": {
                "kernel": {
                    "type": "object",
                    "required": ["family"],
                    "additionalProperties": False,
                    "properties": {
                        "family": {"enum": ["constant", "additive", "multiplicative", "tabulated"]},
                        "kappa": _nonneg,
                        "table": _matrix,
                        "table_file": {"type": "string"},
                    },
                },
                "K": {"type": "integer", "minimum": 1},
                "lambda0": _pos,
                "envelopes": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "a": _envelope,
                        "rho": _envelope,
                        "lambda1": {"enum": ["lambda", "lambda_squared"]},
                    },
                },
                "spatial": {
                    "type": "object",
                    "required": ["L"],
                    "additionalProperties": False,
                    "properties": {
                        "L": {"type": "integer", "minimum": 1},
                        "c": _num,
                        "modulation": {"type": "array", "items": _pos, "minItems": 1},
                    },
                },
            },
        },
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "minProperties": 1,
            "maxProperties": 1,
            "properties": {
                "monodisperse": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "N0": _nonneg,
                        "cell_weights": {"type": "array", "items": _nonneg, "minItems": 1},
                    },
                },
                "vector": {"type": "array", "items": {"anyOf": [_nonneg, {"type": "array", "items": _nonneg}]}},
                "file": {"type": "string"},
            },
        },
        "grid": {
            "type": "object",
            "required": ["T", "M"],
            "additionalProperties": False,
            "properties": {"T": _pos, "M": {"type": "integer", "minimum": 1}},
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tol_abs": _pos,
                "tol_rel": _pos,
                "max_iters": {"type": "integer", "minimum": 3},
                "audit_first": {"type": "boolean"},
                "audit_samples": {"type": "integer", "minimum": 1},
                "scheme": {"enum": ["trapezoid", "exponential"]},
            },
        },
        "audit": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "samples": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "oracle": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "refine": {"type": "integer", "minimum": 1},
                "substeps": {"type": "integer", "minimum": 1},
            },
        },
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string"},
                "emit_trajectory": {"type": "boolean"},
            },
        },
    },
}


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _Usage(message)


def _bundled(name: str) -> Path | None:
    stem = name[:-5] if name.endswith(".json") else name
    res = resources.files("conekit") / "benchmarks" / f"{stem}.json"
    return Path(str(res)) if res.is_file() else None


def load_config(path) -> tuple[dict, Path]:
    """Read and validate a config; a missing path falls back to a bundled benchmark name."""
    p = Path(path)
    if not p.is_file():
        alt = _bundled(p.name)
        if alt is None:
            raise errors.ConfigError(f"config file not found: {path}")
        p = alt
    try:
        cfg = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise errors.ConfigError(f"{p}: cannot parse config: {exc}") from exc
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        raise errors.ConfigError(f"{p}: {where}: {exc.message}") from exc
    return cfg, p.parent


def _model(cfg: dict, base: Path):
    m = cfg["model"]
    kern = m["kernel"]
    spatial = m.get("spatial", {})
    mod = spatial.get("modulation")
    L = spatial.get("L", 1)
    if mod is not None and len(mod) != L:
        raise errors.ConfigError(f"modulation has {len(mod)} entries, spatial.L is {L}")
    kappa = kern.get("kappa", 1.0)
    if kern["family"] == "tabulated":
        if ("table" in kern) == ("table_file" in kern):
            raise errors.ConfigError("tabulated kernel needs exactly one of 'table' or 'table_file'")
        if "table_file" in kern:
            kernel = load_kernel_csv(base / kern["table_file"], kappa=kappa, modulation=mod)
        else:
            kernel = KernelSpec("tabulated", kappa=kappa, table=np.array(kern["table"], dtype=float),
                                modulation=mod)
    else:
        if "table" in kern or "table_file" in kern:
            raise errors.ConfigError(f"family {kern['family']!r} takes no rate table")
        kernel = KernelSpec(kern["family"], kappa=kappa, modulation=mod)
    env = m.get("envelopes", {})
    a = LinearEnvelope(**env["a"]) if "a" in env else None
    rho = LinearEnvelope(**env["rho"]) if "rho" in env else None
    return build_model(kernel, m["K"], m.get("lambda0", 1.0), a, rho, env.get("lambda1")), L


def _initial(cfg: dict, base: Path, K: int, L: int) -> StateVec:
    init = cfg.get("initial", {"monodisperse": {}})
    if "monodisperse" in init:
        spec = init["monodisperse"]
        n0 = spec.get("N0", 1.0)
        w = np.asarray(spec.get("cell_weights", np.ones(L)), dtype=float)
        if w.size != L:
            raise errors.ConfigError(f"cell_weights has {w.size} entries, spatial.L is {L}")
        if not w.sum() > 0:
            raise errors.ConfigError("cell_weights must not all be zero")
        arr = np.zeros((K, L))
        arr[0] = n0 * w / w.sum()
        return StateVec(arr)
    if "vector" in init:
        arr = np.array(init["vector"], dtype=float)
    else:
        try:
            arr = np.loadtxt(base / init["file"], delimiter=",", ndmin=2)
        except (OSError, ValueError) as exc:
            raise errors.ConfigError(f"cannot read initial datum: {exc}") from exc
        if arr.shape[0] == 1 and L == 1:
            arr = arr.T
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape != (K, L):
        raise errors.ConfigError(f"initial datum has shape {arr.shape}, model needs {(K, L)}")
    return StateVec(arr)


def _solver_cfg(cfg: dict, seed: int) -> SolverConfig:
    s = cfg.get("solver", {})
    return SolverConfig(
        tol_abs=s.get("tol_abs", 1e-10),
        tol_rel=s.get("tol_rel", 1e-8),
        max_iters=s.get("max_iters", 200),
        audit_first=s.get("audit_first", True),
        audit_samples=s.get("audit_samples", 256),
        audit_seed=seed,
        scheme=s.get("scheme", "trapezoid"),
    )


def _grid(cfg: dict) -> TimeGrid:
    if "grid" not in cfg:
        raise errors.ConfigError("this command needs a 'grid' section")
    return TimeGrid(cfg["grid"]["T"], cfg["grid"]["M"])


def _write_json(path: Path, obj) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    tmp = None
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        if tmp is not None and os.path.exists(tmp):
            os.unlink(tmp)
        raise errors.ReportIOError(f"cannot write {path}: {exc}", path) from exc


def _write_trajectory(path: Path, traj) -> None:
    states = np.asarray(traj.states)
    lines = ["t,size,cell,value"]
    for m, t in enumerate(traj.grid.nodes):
        for k in range(states.shape[1]):
            for x in range(states.shape[2]):
                lines.append(f"{float(t)!r},{k + 1},{x},{float(states[m, k, x])!r}")
    tmp = None
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write("\n".join(lines) + "\n")
        os.replace(tmp, path)
    except OSError as exc:
        if tmp is not None and os.path.exists(tmp):
            os.unlink(tmp)
        raise errors.ReportIOError(f"cannot write {path}: {exc}", path) from exc


def _emit_run(out: Path, result, cfg: dict, extra: dict | None = None) -> str:
    ledger = result.diagnostics
    emit_csv(ledger, out / "ledger_nodes.csv")
    emit_csv(ledger, out / "ledger_sweeps.csv", table="sweeps")
    if cfg.get("outputs", {}).get("emit_trajectory", False):
        _write_trajectory(out / "trajectory.csv", result.trajectory)
    summary = emit_summary(ledger)
    doc = {
        "verdict": summary,
        "iterations_used": result.iterations_used,
        "a_f0": result.a_f0,
        "scheme": result.scheme,
        "final_increment": result.increment_history[-1] if result.increment_history else 0.0,
        "checks": {k: {"passed": ok, "worst": w} for k, (ok, w) in ledger.checks().items()},
    }
    doc.update(extra or {})
    _write_json(out / "summary.json", doc)
    return summary


def _cmd_solve(cfg, base, out, seed):
    model, L = _model(cfg, base)
    f0 = _initial(cfg, base, model.sizes, L)
    result = solve(model, f0, _grid(cfg), _solver_cfg(cfg, seed))
    return _emit_run(out, result, cfg)


def _cmd_audit(cfg, base, out, seed):
    model, _ = _model(cfg, base)
    samples = cfg.get("audit", {}).get("samples", 10_000)
    report = audit_assumptions(model, samples, seed)
    _write_json(out / "audit.json", report.to_dict())
    if not report.passed:
        raise errors.AssumptionViolation(f"audit failed: {', '.join(report.failed())}", report)
    return report.summary()


def _cmd_oracle(cfg, base, out, seed):
    model, L = _model(cfg, base)
    f0 = _initial(cfg, base, model.sizes, L)
    grid = _grid(cfg)
    fine = grid.refine(cfg.get("oracle", {}).get("refine", 8))
    traj = rk4_solve(model, f0, fine, grid)
    states = np.asarray(traj.states)
    doc = {
        "fine_M": fine.M,
        "N_final": float(states[-1].sum()),
        "mass_final": float(np.sum(np.arange(1, model.sizes + 1)[:, None] * states[-1])),
    }
    mono = np.count_nonzero(f0.entries[1:]) == 0 and L == 1
    if model.kernel.family == "constant" and mono:
        k = np.arange(1, model.sizes + 1)[None, :]
        exact = closed_form_constant_kernel(model.kernel.kappa, float(f0.entries[0, 0]), k,
                                            grid.nodes[:, None])
        doc["closed_form_sup_error"] = float(np.max(np.abs(states[:, :, 0] - exact)))
    if cfg.get("outputs", {}).get("emit_trajectory", False):
        _write_trajectory(out / "oracle_trajectory.csv", traj)
    _write_json(out / "oracle.json", doc)
    return f"oracle N(T)={doc['N_final']!r}"


def _compare_doc(rep) -> dict:
    return {"sup": rep.sup, "argmax_node": rep.argmax, "t": rep.t.tolist(), "distance": rep.per_node.tolist()}


def _cmd_compare(cfg, base, out, seed):
    model, L = _model(cfg, base)
    f0 = _initial(cfg, base, model.sizes, L)
    grid = _grid(cfg)
    result = solve(model, f0, grid, _solver_cfg(cfg, seed))
    fine = grid.refine(cfg.get("oracle", {}).get("refine", 8))
    rep = compare(result.trajectory, rk4_solve(model, f0, fine, grid))
    summary = _emit_run(out, result, cfg, {"oracle": {"fine_M": fine.M, "sup_distance": rep.sup}})
    _write_json(out / "compare.json", _compare_doc(rep))
    return f"{summary} oracle_sup={rep.sup:.3g}"


def _cmd_transport(cfg, base, out, seed):
    model, L = _model(cfg, base)
    spatial = cfg["model"].get("spatial")
    if spatial is None or "c" not in spatial:
        raise errors.ConfigError("transport needs model.spatial with 'L' and 'c'")
    f0 = _initial(cfg, base, model.sizes, L)
    grid = _grid(cfg)
    tr = TransportSpec(L, spatial["c"])
    result = solve_mild(model, tr, f0, grid, _solver_cfg(cfg, seed))
    substeps = cfg.get("oracle", {}).get("substeps", 8)
    rep = compare(result.trajectory, split_step_transport_oracle(model, tr, f0, grid, substeps))
    summary = _emit_run(out, result, cfg, {"oracle": {"substeps": substeps, "sup_distance": rep.sup}})
    _write_json(out / "compare.json", _compare_doc(rep))
    return f"{summary} oracle_sup={rep.sup:.3g}"


COMMANDS = {
    "solve": _cmd_solve,
    "audit": _cmd_audit,
    "oracle": _cmd_oracle,
    "compare": _cmd_compare,
    "transport": _cmd_transport,
}

_CONFIG_ERRORS = (errors.ConfigError, errors.DomainError, errors.ShapeMismatch, errors.NoDefault,
                  errors.ConeViolation, errors.IncompatibleGrid, errors.StiffGrid, errors.GridMismatch)
_SOLVER_ERRORS = (errors.MaxItersExceeded, errors.NonfiniteState, errors.ClampBudgetExceeded,
                  errors.InternalOrderError, errors.ReportIOError)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="conekit", description="Monotone iteration solver for truncated coagulation models.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON config, or the name of a bundled benchmark")
    p.add_argument("--out", help="output directory (overrides outputs.directory)")
    p.add_argument("--seed", type=int, help="audit sampling seed (overrides audit.seed)")
    p.add_argument("--quiet", action="store_true", help="print nothing on success")
    return p


def _thread_limit():
    raw = os.environ.get("CONEKIT_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise errors.ConfigError(f"CONEKIT_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise errors.ConfigError(f"CONEKIT_THREADS must be a positive integer, got {raw!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def run(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except _Usage as exc:
        print(f"conekit: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is not None and args.seed < 0:
        print("conekit: usage error: --seed must be >= 0", file=sys.stderr)
        return EXIT_USAGE
    try:
        limiter = _thread_limit()
        cfg, base = load_config(args.config)
        seed = args.seed if args.seed is not None else cfg.get("audit", {}).get("seed", DEFAULT_SEED)
        out = Path(args.out or cfg.get("outputs", {}).get("directory", "conekit_out"))
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise errors.ReportIOError(f"cannot create {out}: {exc}", out) from exc
        try:
            line = COMMANDS[args.command](cfg, base, out, seed)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except _CONFIG_ERRORS as exc:
        print(f"conekit: invalid config [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except errors.AssumptionViolation as exc:
        print(f"conekit: assumption audit failed [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_AUDIT
    except _SOLVER_ERRORS as exc:
        print(f"conekit: solver failure [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    if not args.quiet:
        print(line)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
