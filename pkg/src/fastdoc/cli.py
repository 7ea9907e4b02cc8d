"""Command-line entry point: ``bench``, ``verify``, ``demo`` and ``replay``.

Exit codes: 0 success, 1 config or IO error, 2 partial failure, 3
verification failure. Every run writes ``manifest.json`` into its output
directory; ``replay`` re-runs a manifest and compares the non-timing outputs
byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("fastdoc")

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL, EXIT_VERIFY = 0, 1, 2, 3
MANIFEST = "manifest.json"

# columns that carry wall-clock measurements and are excluded from replay checks
TIMING_COLUMNS = {"build_ns", "step1_ns", "step2_ns", "step3_ns", "step4_ns", "total_ns", "solve_ns"}


class ConfigError(Exception):
    pass


def git_hash(data: bytes) -> str:
    """Content hash in the form git uses for blobs."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err}") from err


def _write_manifest(out: Path, command, params, inputs, outputs, timing_outputs=()):
    doc = {
        "command": command,
        "version": __version__,
        "params": params,
        "seed": params.get("seed"),
        "config": params.get("config"),
        "inputs": inputs,
        "input_hash": git_hash(_canonical({"params": params, "inputs": inputs})),
        "out": str(out),
        "outputs": {name: git_hash(_stable_bytes(out / name)) for name in outputs},
        "timing_outputs": list(timing_outputs),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    (out / MANIFEST).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc


def _stable_bytes(path: Path) -> bytes:
    """File content with timing columns blanked (CSV) or dropped (JSON)."""
    data = path.read_bytes()
    if path.suffix == ".csv":
        rows = list(csv.reader(data.decode().splitlines()))
        if not rows:
            return data
        keep = [i for i, name in enumerate(rows[0]) if name not in TIMING_COLUMNS]
        return "\n".join(",".join(r[i] for i in keep if i < len(r)) for r in rows).encode()
    if path.suffix == ".json":
        return _canonical(_drop_timing(json.loads(data)))
    return data


def _drop_timing(obj):
    if isinstance(obj, dict):
        return {k: _drop_timing(v) for k, v in obj.items() if k not in TIMING_COLUMNS and k != "elapsed_s"}
    if isinstance(obj, list):
        return [_drop_timing(v) for v in obj]
    return obj


def _outdir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise ConfigError(f"cannot create output directory {out}: {err}") from err
    return out


def _input_record(path):
    return {"path": str(path), "sha256": hashlib.sha256(_read_bytes(path)).hexdigest()}


# ---------------------------------------------------------------------------
# commands


def cmd_bench(params, out: Path) -> int:
    from .bench import BenchConfig, run_sweep, speedup_summary
    from .exceptions import MissingPair

    inputs = {}
    doc = {}
    if params.get("config"):
        raw = _read_bytes(params["config"])
        inputs["config"] = _input_record(params["config"])
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}") from err
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
    if params.get("solvers"):
        doc["solvers"] = params["solvers"]
    if params.get("seed") is not None:
        doc["seed"] = params["seed"]
    try:
        cfg = BenchConfig.from_dict(doc)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid bench config: {err}") from err

    def progress(sweep, value, trial):
        log.debug("bench %s=%s trial %d", sweep, value, trial)

    records = run_sweep(cfg, out / "results.csv", progress)
    failed = [r for r in records if r.error is not None and not r.error.startswith("dense skipped")]
    try:
        summary = speedup_summary(records)
    except MissingPair as err:
        summary = {"error": str(err)}
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    # speedup ratios are pure timing, so replay does not compare them
    _write_manifest(out, "bench", params, inputs, ["results.csv", "config.json"], ["summary.json"])
    log.info("bench: %d records, %d failed", len(records), len(failed))
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_verify(params, out: Path) -> int:
    from .verify import DENSE_TOL, FD_TOL, run_verify

    tol = params.get("threshold")
    dense_tol = DENSE_TOL if tol is None else tol
    fd_tol = FD_TOL if tol is None else tol

    def progress(i, report):
        log.debug("verify instance %d: max dense %.2e", i, report.max_dense)

    try:
        report = run_verify(
            params["instances"], params["seed"], params["max_N"], params["max_n"], params["max_d"],
            params["dense_cap"], dense_tol, fd_tol, progress,
        )
    except ValueError as err:
        raise ConfigError(str(err)) from err
    (out / "verify.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    _write_manifest(out, "verify", params, {}, ["verify.json"])
    n_dense = sum(c.kind == "dense" for c in report.checks)
    n_fd = sum(c.kind == "fd" for c in report.checks)
    print(f"verify: {len(report.checks)} checks ({n_dense} dense, {n_fd} finite-difference)")
    print(f"max dense error {report.max_dense:.3e} (tol {dense_tol:.1e})")
    print(f"max fd error    {report.max_fd:.3e} (tol {fd_tol:.1e})")
    if not report.ok:
        seeds = sorted({c.seed for c in report.failures})
        print("failed seeds: " + " ".join(str(s) for s in seeds), file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def _theta_arg(value):
    from .vehicle import DEFAULT_THETA_STAR, N_THETA

    if value is None:
        return DEFAULT_THETA_STAR.copy(), {}
    inputs = {}
    text = value
    if os.path.exists(value):
        inputs["theta_star"] = _input_record(value)
        text = _read_bytes(value).decode()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"--theta-star is neither a file nor JSON: {err}") from err
    if isinstance(doc, dict):
        doc = doc.get("theta")
    theta = np.asarray(doc, dtype=np.float64) if doc is not None else None
    if theta is None or theta.shape != (N_THETA,) or not np.all(np.isfinite(theta)):
        raise ConfigError(f"--theta-star must hold {N_THETA} finite numbers")
    return theta, inputs


def cmd_demo(params, out: Path) -> int:
    from .exceptions import FastDocError, TrainingAborted
    from .vehicle import DEMO_STEPS, Demonstration, TrainingConfig, generate_demo, train

    scenario = params["scenario"]
    if scenario not in DEMO_STEPS:
        raise ConfigError(f"unknown scenario {scenario!r}")
    if params["gen_demo"]:
        theta, inputs = _theta_arg(params.get("theta_star"))
        if not params["noise"] >= 0.0:
            raise ConfigError("--noise must be nonnegative")
        demo = generate_demo(theta, scenario, params["noise"], params["seed"])
        demo.to_json(out / "demo.json")
        _write_manifest(out, "demo", params, inputs, ["demo.json"])
        log.info("demo: wrote %d states", demo.states.shape[0])
        return EXIT_OK

    demo_path = params.get("demo") or str(out / "demo.json")
    inputs = {"demo": _input_record(demo_path)}
    try:
        demo = Demonstration.from_json(demo_path)
    except (ValueError, KeyError, json.JSONDecodeError) as err:
        raise ConfigError(f"bad demonstration file {demo_path}: {err}") from err
    if demo.scenario != scenario:
        raise ConfigError(f"demonstration is for scenario {demo.scenario!r}, not {scenario!r}")
    try:
        cfg = TrainingConfig(scenario, params.get("max_iter"), params.get("lr"), hessian_mode=params["hessian_mode"])
    except ValueError as err:
        raise ConfigError(str(err)) from err

    def progress(i, res):
        if i % 50 == 0:
            log.info("iter %d loss %.6e", i, res.loss)

    try:
        tlog = train(cfg, demo, callback=progress)
    except TrainingAborted as err:
        print(f"training aborted: {err}", file=sys.stderr)
        return EXIT_PARTIAL
    except FastDocError as err:
        print(f"training failed: {err}", file=sys.stderr)
        return EXIT_PARTIAL
    tlog.to_csv(out / "training_log.csv")
    result = {
        "theta": [float(v) for v in tlog.theta],
        "initial_loss": float(tlog.losses[0]),
        "final_loss": float(tlog.losses[-1]),
        "iterations": len(tlog.losses) - 1,
    }
    (out / "theta.json").write_text(json.dumps(result, indent=2) + "\n")
    _write_manifest(out, "demo", params, inputs, ["training_log.csv", "theta.json"])
    print(f"loss {result['initial_loss']:.6e} -> {result['final_loss']:.6e}")
    return EXIT_OK


COMMANDS = {"bench": cmd_bench, "verify": cmd_verify, "demo": cmd_demo}


def cmd_replay(manifest_path, out=None) -> int:
    try:
        doc = json.loads(_read_bytes(manifest_path))
        command, params, inputs, outputs = doc["command"], doc["params"], doc["inputs"], doc["outputs"]
    except (json.JSONDecodeError, KeyError, TypeError) as err:
        raise ConfigError(f"bad manifest {manifest_path}: {err}") from err
    if command not in COMMANDS:
        raise ConfigError(f"manifest names unknown command {command!r}")
    for name, rec in inputs.items():
        digest = hashlib.sha256(_read_bytes(rec["path"])).hexdigest()
        if digest != rec["sha256"]:
            raise ConfigError(f"input {name} ({rec['path']}) changed since the manifest was written")
    if out is None:
        out = Path(tempfile.mkdtemp(prefix="fastdoc-replay-"))
    out = _outdir(out)
    params = dict(params)
    if command == "demo" and not params.get("gen_demo") and not params.get("demo"):
        params["demo"] = inputs["demo"]["path"]
    code = COMMANDS[command](params, out)
    mismatched = []
    for name, digest in outputs.items():
        path = out / name
        if not path.exists() or git_hash(_stable_bytes(path)) != digest:
            mismatched.append(name)
    if mismatched:
        print("replay mismatch: " + ", ".join(mismatched), file=sys.stderr)
        return EXIT_VERIFY
    print(f"replay of {command} reproduced {len(outputs)} output(s) in {out}")
    return code


# ---------------------------------------------------------------------------
# argument parsing


def _solver_list(text):
    from .bench import SOLVERS

    names = [s.strip() for s in text.split(",") if s.strip()]
    bad = [s for s in names if s not in SOLVERS]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"solvers must be a comma list drawn from {','.join(SOLVERS)}")
    return names


def _u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_u64, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS)
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="fastdoc", description=__doc__.splitlines()[0], parents=[common])
    p.add_argument("--version", action="version", version=f"fastdoc {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", parents=[common], help="timing sweep over synthetic instances")
    b.add_argument("--config")
    b.add_argument("--solvers", type=_solver_list)

    v = sub.add_parser("verify", parents=[common], help="cross-check against dense and finite-difference oracles")
    v.add_argument("--instances", type=int, default=100)
    v.add_argument("--max-N", dest="max_N", type=int, default=200)
    v.add_argument("--max-n", dest="max_n", type=int, default=64)
    v.add_argument("--max-d", dest="max_d", type=int, default=100)
    v.add_argument("--dense-cap", dest="dense_cap", type=int, default=5000)
    v.add_argument("--threshold", type=float, default=None, help=argparse.SUPPRESS)

    d = sub.add_parser("demo", parents=[common], help="vehicle imitation-learning demo")
    d.add_argument("--scenario", default="straight")
    mode = d.add_mutually_exclusive_group(required=True)
    mode.add_argument("--gen-demo", dest="gen_demo", action="store_true")
    mode.add_argument("--train", action="store_true")
    d.add_argument("--theta-star", dest="theta_star")
    d.add_argument("--noise", type=float, default=0.0)
    d.add_argument("--demo", help="demonstration JSON to train on (default: <out>/demo.json)")
    d.add_argument("--max-iter", dest="max_iter", type=int)
    d.add_argument("--lr", type=float)
    d.add_argument("--hessian-mode", dest="hessian_mode", choices=("gauss_newton", "exact_fd"), default="gauss_newton")

    r = sub.add_parser("replay", parents=[common], help="re-run a manifest and compare outputs")
    r.add_argument("manifest")
    return p


def _params(ns):
    params = {k: v for k, v in vars(ns).items() if k not in ("command", "out", "quiet", "train")}
    params.setdefault("seed", 0)
    if ns.command == "demo" and params.get("demo"):
        params["demo"] = str(Path(params["demo"]).resolve())
    if params.get("config"):
        params["config"] = str(Path(params["config"]).resolve())
    if params.get("theta_star") and os.path.exists(params["theta_star"]):
        params["theta_star"] = str(Path(params["theta_star"]).resolve())
    return params


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.WARNING if getattr(ns, "quiet", False) else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        if ns.command == "replay":
            return cmd_replay(ns.manifest, getattr(ns, "out", None))
        out = _outdir(getattr(ns, "out", None) or f"fastdoc-{ns.command}")
        return COMMANDS[ns.command](_params(ns), out)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
