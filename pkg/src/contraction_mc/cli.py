"""Command-line front end: simulate, distance, experiment, report.

Exit codes: 0 success, 2 invalid input, 3 runtime failure.  Errors are also
written to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import re
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path as FsPath

import numpy as np

from . import __version__
from .donsker import (
    IncrementLaw,
    bm_grid_ensemble,
    donsker_spec,
    linearized_bm_ensemble,
    random_walk_ensemble,
)
from .ensemble import Ensemble, digest
from .experiments import DEFAULTS, EXPERIMENTS, ExperimentConfig, run
from .metrics import fdd_distance, path_lp_distance
from .recursion import ImproperSamplerError, RecursionDivergenceError, sample_ensemble

OUT_ENV = "CONTRACTION_MC_OUT"
MODELS = ("walk_recursion", "walk", "linearized_bm", "bm_grid")


class ValidationError(Exception):
    def __init__(self, message, details=()):
        super().__init__(message)
        self.details = list(details)


# ---------------------------------------------------------------------------
# config loading


def _key_line(text: str, key: str) -> int | None:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def load_config(path: str) -> tuple[dict, str]:
    try:
        text = FsPath(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise ValidationError(f"{path}:1: config must be a JSON object")
    return cfg, text


def _field_errors(path: str, text: str, problems) -> ValidationError:
    details = []
    for key, msg in problems:
        line = _key_line(text, key) if text else None
        where = f"{path}:{line}" if line else path
        details.append(f"{where}: {key}: {msg}")
    return ValidationError(details[0] if len(details) == 1 else f"{len(details)} invalid fields", details)


@dataclass(frozen=True)
class SimulateConfig:
    seed: int
    n: int
    size: int
    model: str = "walk_recursion"
    increment: dict = field(default_factory=lambda: {"kind": "rademacher"})
    interpolation: str = "linear"
    n0: int = 2

    def problems(self):
        out = []
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            out.append(("seed", "must be a nonnegative integer"))
        if not isinstance(self.n, int) or self.n < 1:
            out.append(("n", "must be a positive integer"))
        if not isinstance(self.size, int) or self.size < 1:
            out.append(("size", "must be a positive integer"))
        if self.model not in MODELS:
            out.append(("model", f"must be one of {', '.join(MODELS)}"))
        if self.interpolation not in ("linear", "constant"):
            out.append(("interpolation", "must be 'linear' or 'constant'"))
        if not isinstance(self.n0, int) or self.n0 < 1:
            out.append(("n0", "must be a positive integer"))
        elif self.model == "walk_recursion" and self.n0 != 2:
            out.append(("n0", "the walk recursion has base cases n = 0, 1, so n0 must be 2"))
        try:
            IncrementLaw.from_dict(self.increment)
        except (ValueError, KeyError, TypeError) as exc:
            out.append(("increment", str(exc)))
        return out


def experiment_config(name: str, raw: dict, path="<config>", text="", threads=None) -> ExperimentConfig:
    merged = {**DEFAULTS.get(name, {}), **raw}
    if threads is not None:
        merged["threads"] = threads
    if "seed" not in merged:
        raise ValidationError(f"{path}: missing required field: seed")
    probe = {k: v for k, v in merged.items() if k in ExperimentConfig.__dataclass_fields__}
    unknown = [k for k in merged if k not in ExperimentConfig.__dataclass_fields__]
    if unknown:
        raise _field_errors(path, text, [(k, "unknown field") for k in unknown])
    try:
        return ExperimentConfig.from_dict(probe)
    except (ValueError, TypeError, KeyError) as exc:
        msg = str(exc)
        probs = [tuple(p.split(": ", 1)) for p in msg.split("; ") if ": " in p]
        raise _field_errors(path, text, probs or [("config", msg)]) from None


def simulate_config(raw: dict, path="<config>", text="") -> SimulateConfig:
    missing = [k for k in ("seed", "n", "size") if k not in raw]
    if missing:
        raise ValidationError(f"{path}: missing required field(s): {', '.join(missing)}")
    unknown = [k for k in raw if k not in SimulateConfig.__dataclass_fields__]
    if unknown:
        raise _field_errors(path, text, [(k, "unknown field") for k in unknown])
    cfg = SimulateConfig(**raw)
    probs = cfg.problems()
    if probs:
        raise _field_errors(path, text, probs)
    return cfg


# ---------------------------------------------------------------------------
# manifest and output


@dataclass
class RunManifest:
    command: str
    config_digest: str
    seed: int | None
    version: str = __version__
    started: float = 0.0
    finished: float = 0.0
    files: list = field(default_factory=list)

    def write(self, out_dir: FsPath) -> FsPath:
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _file_entry(path: FsPath, root: FsPath) -> dict:
    return {"path": str(path.relative_to(root)), "sha256": hashlib.sha256(path.read_bytes()).hexdigest()}


def out_root(arg: str | None) -> FsPath:
    root = FsPath(arg or os.environ.get(OUT_ENV) or "runs")
    root.mkdir(parents=True, exist_ok=True)
    return root


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return str(v)


def write_csv(path: FsPath, columns, rows, append=False) -> None:
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


# ---------------------------------------------------------------------------
# verbs


def cmd_simulate(args) -> int:
    raw, text = load_config(args.config)
    cfg = simulate_config(raw, args.config, text)
    law = IncrementLaw.from_dict(cfg.increment)
    started = time.time()
    if cfg.model == "walk_recursion":
        spec = donsker_spec(law, cfg.interpolation)
        ens = sample_ensemble(spec, cfg.n, cfg.size, cfg.seed, threads=args.threads)
    elif cfg.model == "walk":
        ens = random_walk_ensemble(cfg.n, cfg.size, cfg.seed, law, cfg.interpolation)
    elif cfg.model == "linearized_bm":
        ens = linearized_bm_ensemble(cfg.n, cfg.size, cfg.seed)
    else:
        ens = bm_grid_ensemble(cfg.size, cfg.seed, n=cfg.n)
    cfg_digest = digest(asdict(cfg))
    out = out_root(args.out) / f"simulate-{cfg_digest[:12]}"
    out.mkdir(parents=True, exist_ok=True)
    path = out / "ensemble.jsonl"
    ens.write_jsonl(path, {"model": cfg.model, "n": cfg.n, "config_digest": cfg_digest})
    man = RunManifest("simulate", cfg_digest, cfg.seed, started=started, finished=time.time())
    man.files.append(_file_entry(path, out))
    man.write(out)
    print(json.dumps({"ensemble": str(path), "size": ens.size, "grid_points": int(ens.grid.size)}))
    return 0


def _parse_grid(s: str | None):
    if s is None:
        return None
    try:
        times = [float(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise ValidationError(f"--grid: cannot parse {s!r} as comma-separated times") from None
    if not times or any(not 0 <= t <= 1 for t in times):
        raise ValidationError("--grid: need at least one time, all in [0, 1]")
    return times


def _read_ensemble(path: str) -> Ensemble:
    try:
        return Ensemble.read_jsonl(path)
    except OSError as exc:
        raise ValidationError(f"cannot read ensemble {path}: {exc.strerror}") from None
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{path}: not an ensemble file ({exc})") from None


def cmd_distance(args) -> int:
    a, b = _read_ensemble(args.file_a), _read_ensemble(args.file_b)
    times = _parse_grid(args.grid)
    if args.resample is not None:
        if args.resample < 1 or args.resample > min(a.size, b.size):
            raise ValidationError(f"--resample must lie in [1, {min(a.size, b.size)}]")
        a, b = a.take(np.arange(args.resample)), b.take(np.arange(args.resample))
    if a.size != b.size:
        raise ValidationError(
            f"ensemble sizes differ ({a.size} vs {b.size})",
            [f"rerun with --resample {min(a.size, b.size)} to compare the first samples of each file"],
        )
    if a.kind is not b.kind:
        raise ValidationError("ensembles hold different path kinds")
    if args.p < 1:
        raise ValidationError("--p must be >= 1")
    est = args.estimator
    try:
        if times is None:
            if est != "assignment":
                raise ValidationError(
                    f"--estimator {est} needs finite-dimensional inputs; give --grid "
                    "(whole-path distances use the assignment estimator)"
                )
            rep = path_lp_distance(a, b, args.p, block=args.block, bootstrap=args.bootstrap, seed=args.seed)
        else:
            if est == "exact_1d" and len(times) != 1:
                raise ValidationError(f"--estimator exact_1d needs a one-point --grid, got {len(times)} points")
            rep = fdd_distance(a, b, times, args.p, estimator=est, block=args.block, bootstrap=args.bootstrap, seed=args.seed)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    d = rep.to_dict()
    d["files"] = [args.file_a, args.file_b]
    text = _dump(d)
    if args.output:
        FsPath(args.output).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    if args.csv:
        write_csv(
            FsPath(args.csv),
            ("file_a", "file_b", "estimator", "p", "value", "stderr", "grid"),
            [(args.file_a, args.file_b, rep.estimator, rep.p_or_s, rep.value, rep.stderr, " ".join(map(repr, rep.grid)))],
            append=True,
        )
    return 0


def write_report(report, out: FsPath) -> list[FsPath]:
    out.mkdir(parents=True, exist_ok=True)
    files = [out / "summary.json"]
    files[0].write_text(_dump(report.summary), encoding="utf-8")
    for name, (cols, rows) in report.tables.items():
        p = out / f"{name}.csv"
        write_csv(p, cols, rows)
        files.append(p)
    return files


def cmd_experiment(args) -> int:
    if args.name not in EXPERIMENTS:
        raise ValidationError(
            f"unknown experiment {args.name!r}", [f"available: {', '.join(sorted(EXPERIMENTS))}"]
        )
    raw, text, path = {}, "", "<flags>"
    if args.config:
        raw, text = load_config(args.config)
        path = args.config
    if args.seed is not None:
        raw = {**raw, "seed": args.seed}
    cfg = experiment_config(args.name, raw, path, text, threads=args.threads)
    started = time.time()
    report = run(args.name, cfg)
    cfg_digest = digest({"experiment": args.name, **cfg.to_dict()})
    out = out_root(args.out) / f"{args.name}-{cfg_digest[:12]}"
    files = write_report(report, out)
    man = RunManifest(f"experiment {args.name}", cfg_digest, cfg.seed, started=started, finished=time.time())
    man.files = [_file_entry(f, out) for f in files]
    man.write(out)
    print(json.dumps({"experiment": args.name, "output": str(out)}))
    return 0


def cmd_report(args) -> int:
    if args.acceptance:
        from .acceptance import run_all

        crit = None
        if args.criteria:
            try:
                crit = [int(c) for c in args.criteria.split(",")]
            except ValueError:
                raise ValidationError("--criteria: comma-separated criterion numbers") from None
        results = run_all(crit)
        out = out_root(args.out) / "acceptance"
        out.mkdir(parents=True, exist_ok=True)
        write_csv(
            out / "acceptance.csv",
            ("criterion", "passed", "runtime_s", "budget_s", "detail"),
            [(r.number, r.passed, round(r.runtime, 3), r.budget, r.detail) for r in results],
        )
        for r in results:
            print(r.line())
        return 0 if all(r.passed for r in results) else 1
    if not args.run_dir:
        raise ValidationError("report needs a run directory or --acceptance")
    root = FsPath(args.run_dir)
    summaries = sorted(root.rglob("summary.json"))
    if not summaries:
        raise ValidationError(f"no summary.json under {root}")
    for s in summaries:
        data = json.loads(s.read_text(encoding="utf-8"))
        print(f"== {s.parent}")
        for k, v in data.items():
            if k != "config":
                print(f"  {k}: {json.dumps(v)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="contraction-mc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("simulate", help="sample an ensemble to a JSON-lines file")
    s.add_argument("config")
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_simulate)

    d = sub.add_parser("distance", help="distance between two ensemble files")
    d.add_argument("file_a")
    d.add_argument("file_b")
    d.add_argument("--estimator", default="assignment", choices=("assignment", "exact_1d", "per_marginal_bound"))
    d.add_argument("--p", type=float, default=2.0)
    d.add_argument("--grid", help="comma-separated times; omit for the whole-path sup-norm distance")
    d.add_argument("--bootstrap", type=int, default=0)
    d.add_argument("--block", type=int)
    d.add_argument("--resample", type=int, help="use only the first N samples of each file")
    d.add_argument("--seed", type=int, default=0, help="bootstrap seed")
    d.add_argument("--output")
    d.add_argument("--csv", help="append a result row to this CSV file")
    d.set_defaults(fn=cmd_distance)

    e = sub.add_parser("experiment", help=f"run one of: {', '.join(sorted(EXPERIMENTS))}")
    e.add_argument("name")
    e.add_argument("--config")
    e.add_argument("--seed", type=int)
    e.add_argument("--threads", type=int, default=1)
    e.add_argument("--out")
    e.set_defaults(fn=cmd_experiment)

    r = sub.add_parser("report", help="summarize run directories or run the acceptance suite")
    r.add_argument("run_dir", nargs="?")
    r.add_argument("--acceptance", action="store_true")
    r.add_argument("--criteria", help="comma-separated criterion numbers (default: all)")
    r.add_argument("--out")
    r.set_defaults(fn=cmd_report)
    return p


def _fail(kind: str, code: int, message: str, details=()) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "details": list(details)}) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) is not None and getattr(args, "threads", 1) < 1:
        return _fail("validation", 2, "--threads must be positive")
    try:
        return args.fn(args)
    except ValidationError as exc:
        return _fail("validation", 2, str(exc), exc.details)
    except (RecursionDivergenceError, ImproperSamplerError, MemoryError) as exc:
        return _fail("runtime", 3, f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
