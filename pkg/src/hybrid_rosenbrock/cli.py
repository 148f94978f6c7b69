"""Command-line driver.

Every run writes ``manifest.json`` into ``--out-dir``; passing that file back
through ``--config`` re-runs the same command with the same resolved
configuration and seed and reproduces every output byte for byte.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, diagnostics, experiments, io
from .errors import RosenbrockError
from .exact import RngStream, conditional_moment_check, sample_exact
from .mcmc import SamplerConfig, run_chain
from .models import ModelSpec

log = logging.getLogger("hybrid_rosenbrock")

MANIFEST_SCHEMA = 1
COMMANDS = ("constant-check", "validate", "sensitivity", "sample", "mcmc")

EXIT_OK, EXIT_ERROR, EXIT_VALIDATION_FAILED = 0, 1, 2

DEFAULTS = {
    "sample": {"n_samples": 1000, "stream_id": 0, "formats": ["csv", "bin"]},
    "mcmc": {"stream_id": 0, "formats": ["csv", "bin"],
             "sampler": {"algorithm": "smmala", "h": 0.3, "alpha": 1e6, "n_steps": 100_000, "warmup": 5000,
                         "thin": 1, "target_accept": 0.5}},
    "constant-check": {"n_samples": 10_000_000, "stream_id": 0},
    "validate": {"n_exact": 200_000, "qq_tolerance": 0.05, "target_b": None,
                 "sampler": {"algorithm": "smmala", "h": 0.3, "alpha": 1e6, "n_steps": 2_000_000,
                             "warmup": 20_000, "thin": 10, "target_accept": 0.5}},
    "sensitivity": {"models": [1, 2, 3, 4, 5, 6], "repetitions": 5,
                    "sweep": {k: list(v) for k, v in experiments.DEFAULT_SWEEP.items()},
                    "sampler": {"algorithm": "smmala", "h": 0.3, "alpha": 1e6, "n_steps": 100_000,
                                "warmup": 5000, "thin": 1, "target_accept": 0.5}},
}

DEFAULT_MODEL = {"family": "hybrid", "n1": 3, "n2": 2, "mu": 1.0, "a": 0.05, "b": 5.0}


def _floats(text):
    text = text.strip()
    return [float(v) for v in text.split(",")] if text else []


def _ints(text):
    text = text.strip()
    return [int(v) for v in text.split(",")] if text else []


def _add_model_args(p):
    g = p.add_argument_group("model")
    g.add_argument("--model-file", help="JSON model description")
    g.add_argument("--catalog", type=int, choices=sorted(experiments.CATALOG), help="catalog Model 1-6")
    g.add_argument("--family", choices=["twod", "full", "even", "hybrid"])
    g.add_argument("--mu", type=float)
    g.add_argument("--a", type=float)
    g.add_argument("--b", type=float, help="link coefficient (all links)")
    g.add_argument("--n1", type=int)
    g.add_argument("--n2", type=int)
    g.add_argument("--n", type=int, help="dimension of Full / Even kernels")
    g.add_argument("--scale", type=float)
    g.add_argument("--quad-coeff", type=float)
    g.add_argument("--mus", type=_floats, help="comma-separated Even-kernel centres")


def _add_sampler_args(p):
    g = p.add_argument_group("sampler")
    g.add_argument("--algorithm", choices=["rwm", "mala", "smmala"])
    g.add_argument("--h", type=float, help="initial step size")
    g.add_argument("--alpha", type=float, help="Hessian regularisation parameter")
    g.add_argument("--steps", type=int, dest="n_steps", help="post-warmup steps")
    g.add_argument("--warmup", type=int)
    g.add_argument("--thin", type=int)
    g.add_argument("--target-accept", type=float)
    g.add_argument("--regularization", choices=["floor", "multiplicative"])


def _add_global_args(p, suppress):
    # accepted before or after the subcommand; subparser copies only set what was given
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(None), help="master seed (default 0)")
    p.add_argument("--out-dir", default=d("out"), help="output directory (default ./out)")
    p.add_argument("--threads", type=int, default=d(1), help="worker threads for grid runs")
    p.add_argument("--config", default=d(None), help="JSON config or a manifest from a previous run")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybrid-rosenbrock",
                                     description="Rosenbrock-family benchmark densities and MCMC experiments")
    parser.add_argument("--version", action="version", version=__version__)
    _add_global_args(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _add_global_args(common, suppress=True)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("sample", parents=[common], help="exact i.i.d. draws")
    _add_model_args(p)
    p.add_argument("-N", "--n-samples", type=int)
    p.add_argument("--stream-id", type=int)
    p.add_argument("--formats", type=lambda s: s.split(","))

    p = sub.add_parser("mcmc", parents=[common], help="run one MCMC chain")
    _add_model_args(p)
    _add_sampler_args(p)
    p.add_argument("--stream-id", type=int)
    p.add_argument("--formats", type=lambda s: s.split(","))

    p = sub.add_parser("constant-check", parents=[common], help="closed-form constant vs numerical estimate")
    _add_model_args(p)
    p.add_argument("-N", "--n-samples", type=int, help="importance samples (Hybrid)")
    p.add_argument("--stream-id", type=int)

    p = sub.add_parser("validate", parents=[common], help="exact sampler vs sMMALA, per-component QQ and KS")
    _add_model_args(p)
    _add_sampler_args(p)
    p.add_argument("--n-exact", type=int)
    p.add_argument("--qq-tolerance", type=float)
    p.add_argument("--target-b", type=float, help="run the chain on a model with this b (negative control)")

    p = sub.add_parser("sensitivity", parents=[common], help="tau_max over catalog models and parameter sweeps")
    _add_sampler_args(p)
    p.add_argument("--models", type=_ints, help="comma-separated catalog numbers")
    p.add_argument("--repetitions", type=int)
    p.add_argument("--sweep-mu", type=_floats)
    p.add_argument("--sweep-a", type=_floats)
    p.add_argument("--sweep-b", type=_floats)
    return parser


# -- configuration resolution ---------------------------------------------------


def _load_config(path):
    raw = json.loads(Path(path).read_text())
    if "config" in raw and "command" in raw:
        return raw["command"], raw.get("seed"), raw["config"]
    return raw.get("command"), raw.get("seed"), raw


def _model_from_args(args, base):
    if getattr(args, "model_file", None):
        return ModelSpec.from_dict(json.loads(Path(args.model_file).read_text())).to_dict()
    model = dict(base)
    if getattr(args, "catalog", None):
        n1, n2 = experiments.CATALOG[args.catalog]
        model = {"family": "hybrid", "n1": n1, "n2": n2, "mu": 1.0, "a": 0.05, "b": 5.0}
    elif getattr(args, "family", None) and args.family != model.get("family"):
        model = {"family": args.family}
    for key in ("mu", "a", "b", "n1", "n2", "n", "scale", "quad_coeff", "mus"):
        v = getattr(args, key, None)
        if v is not None:
            model[key] = v
    # canonical form: validates and normalises every parameter
    return ModelSpec.from_dict(model).to_dict()


def resolve(args, file_cfg) -> dict:
    cmd = args.command
    cfg = json.loads(json.dumps(DEFAULTS[cmd]))
    for k, v in (file_cfg or {}).items():
        if isinstance(v, dict) and isinstance(cfg.get(k), dict) and k != "sweep":
            cfg[k].update(v)
        else:
            cfg[k] = v
    if cmd != "sensitivity":
        cfg["model"] = _model_from_args(args, cfg.get("model", DEFAULT_MODEL))
    if "sampler" in cfg:
        for key in ("algorithm", "h", "alpha", "n_steps", "warmup", "thin", "target_accept", "regularization"):
            v = getattr(args, key, None)
            if v is not None:
                cfg["sampler"][key] = v
        cfg["sampler"] = SamplerConfig.from_dict(cfg["sampler"]).to_dict()
    for key in ("n_samples", "stream_id", "formats", "n_exact", "qq_tolerance", "target_b",
                "models", "repetitions"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    if cmd == "sensitivity":
        for name in ("mu", "a", "b"):
            v = getattr(args, f"sweep_{name}", None)
            if v is not None:
                cfg["sweep"][name] = v
    return cfg


# -- commands --------------------------------------------------------------------


def _emit(rows, header, out=None):
    out = out or sys.stdout
    out.write(",".join(header) + "\n")
    for r in rows:
        out.write(",".join(io._fmt(v) for v in r) + "\n")


def cmd_sample(cfg, seed, out_dir):
    spec = ModelSpec.from_dict(cfg["model"])
    batch = sample_exact(spec, cfg["n_samples"], RngStream(seed, cfg["stream_id"]))
    files = batch.write(out_dir, formats=cfg["formats"])
    checks = conditional_moment_check(batch)
    io.write_json(out_dir / "residual_check.json", checks)
    _emit(([c["variable"], c["n"], c["mean"], c["variance"], c["skewness"]] for c in checks),
          ["variable", "n", "residual_mean", "residual_variance", "residual_skewness"])
    return EXIT_OK, files + [out_dir / "residual_check.json"]


def cmd_mcmc(cfg, seed, out_dir):
    spec = ModelSpec.from_dict(cfg["model"])
    config = SamplerConfig.from_dict(cfg["sampler"])
    chain = run_chain(spec, config, RngStream(seed, cfg["stream_id"]))
    files = chain.write(out_dir, spec, formats=cfg["formats"])
    if chain.states.shape[0] >= diagnostics.MIN_SERIES_LENGTH:
        try:
            report = diagnostics.run_report(chain, names=spec.variable_names())
        except RosenbrockError as exc:
            log.warning("no report: %s", exc)
        else:
            files.append(io.write_json(out_dir / "report.json", report.to_dict()))
            files.append(report.write_csv(out_dir / "report.csv"))
            d = report.to_dict()
            _emit(([c["component"], c["tau"], c["mean"], c["variance"]] for c in d["components"]),
                  ["component", "tau", "mean", "variance"])
    print(f"acceptance_rate,{chain.acceptance_rate!r}")
    print(f"tuned_h,{chain.tuned_h!r}")
    print(f"divergences,{chain.divergences}")
    return EXIT_OK, files


def cmd_constant_check(cfg, seed, out_dir):
    spec = ModelSpec.from_dict(cfg["model"])
    result = experiments.constant_check(spec, cfg["n_samples"], RngStream(seed, cfg["stream_id"]))
    path = io.write_json(out_dir / "constant_check.json", result)
    if not result["available"]:
        print(f"constant unknown: {result['message']}")
        return EXIT_OK, [path]
    _emit([[result["method"], result["closed_form_log"], result["estimate_log"], result["relative_error"]]],
          ["method", "closed_form_log", "estimate_log", "relative_error"])
    return EXIT_OK, [path]


def cmd_validate(cfg, seed, out_dir):
    spec = ModelSpec.from_dict(cfg["model"])
    target = None
    if cfg.get("target_b") is not None:
        d = dict(cfg["model"])
        d["b"] = cfg["target_b"]
        target = ModelSpec.from_dict(d)
    config = SamplerConfig.from_dict(cfg["sampler"])
    v = experiments.validate(spec, config, cfg["n_exact"], seed, target=target)
    names = spec.variable_names()
    files = [t.write_csv(out_dir / f"qq_{names[t.component]}.csv", labels=("exact", "mcmc")) for t in v.tables]
    summary = v.summary(cfg["qq_tolerance"])
    files.append(io.write_json(out_dir / "validation.json", summary))
    header = ["component", "tau", "ks_statistic", "ks_critical", "ks_reject_1pct", "qq_max_relative_discrepancy"]
    rows = [[c[h] for h in header] for c in summary["components"]]
    files.append(io.write_csv(out_dir / "ks.csv", header, rows))
    _emit(rows, header)
    print(f"acceptance_rate,{summary['acceptance_rate']!r}")
    print(f"validation,{'PASS' if v.passed else 'FAIL'}")
    return (EXIT_OK if v.passed else EXIT_VALIDATION_FAILED), files


def cmd_sensitivity(cfg, seed, out_dir, threads=1):
    cells = experiments.build_grid(cfg["models"], cfg["sweep"])
    template = SamplerConfig.from_dict(cfg["sampler"])
    rows = experiments.sensitivity(cells, cfg["repetitions"], seed, template, threads=threads)
    cols = experiments.SENSITIVITY_COLUMNS
    files = [io.write_csv(out_dir / "sensitivity.csv", cols, ([r[c] for c in cols] for r in rows))]
    summary = []
    for c in cells:
        taus = np.array([r["tau_max"] for r in rows if r["model"] == c.model and r["varied"] == c.varied
                         and r["mu"] == c.mu and r["a"] == c.a and r["b"] == c.b])
        ok = taus[np.isfinite(taus)]
        lo, hi = (np.quantile(ok, [0.025, 0.975]) if ok.size else (float("nan"), float("nan")))
        summary.append([c.model, c.varied, c.mu, c.a, c.b, int(ok.size), int(taus.size - ok.size),
                        float(ok.mean()) if ok.size else float("nan"), float(lo), float(hi)])
    sh = ["model", "varied", "mu", "a", "b", "n_ok", "n_diverged", "tau_max_mean", "tau_max_q025", "tau_max_q975"]
    files.append(io.write_csv(out_dir / "sensitivity_summary.csv", sh, summary))
    _emit(summary, sh)
    claims = experiments.sensitivity_claims(rows, seed=seed)
    if claims:
        files.append(io.write_json(out_dir / "claims.json", claims))
    return EXIT_OK, files


HANDLERS = {"sample": cmd_sample, "mcmc": cmd_mcmc, "constant-check": cmd_constant_check,
            "validate": cmd_validate, "sensitivity": cmd_sensitivity}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        file_cmd, file_seed, file_cfg = (None, None, None)
        if args.config:
            file_cmd, file_seed, file_cfg = _load_config(args.config)
        if args.command is None:
            if file_cmd is None:
                parser.error("a subcommand is required")
            args = parser.parse_args(argv + [file_cmd])
        if file_cmd is not None and file_cmd != args.command:
            raise ValueError(f"config is for {file_cmd!r}, not {args.command!r}")
        seed = args.seed if args.seed is not None else (file_seed if file_seed is not None else 0)
        cfg = resolve(args, file_cfg)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        handler = HANDLERS[args.command]
        if args.command == "sensitivity":
            code, files = handler(cfg, seed, out_dir, threads=max(1, args.threads))
        else:
            code, files = handler(cfg, seed, out_dir)
        manifest = {"schema_version": MANIFEST_SCHEMA, "command": args.command, "seed": seed,
                    "version": __version__, "config": cfg,
                    "outputs": sorted(Path(f).name for f in files)}
        io.write_json(out_dir / "manifest.json", manifest)
        return code
    except (RosenbrockError, ValueError, TypeError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
