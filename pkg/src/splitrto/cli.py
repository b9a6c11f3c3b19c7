"""Command-line front end: ``splitrto run|bench|schema``.

Configurations are INI files.  Every key is listed in ``SCHEMA``; unknown
sections or keys are rejected with a suggestion for the closest valid name.
"""

from __future__ import annotations

import argparse
import configparser
import difflib
import hashlib
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy
from numpy.linalg import LinAlgError

from . import __version__
from .benchmark import EquivalenceError, benchmark, format_table, rows_to_csv
from .bidiag import KrylovConfig
from .hier import gibbs_sample, ias_map
from .linalg import identity
from .matio import read_operator, read_vector, write_csv
from .mcmc import PcnTarget, linearization_phi, pcn_chain, pregenerate_proposals
from .problems import PRESETS, Problem, build_preset
from .sampler import SOLVERS, STRATEGIES, Rng, SampleBatch, posterior_direct
from .whitening import GeneralGaussianModel, sample_general, transform_prior_model, whiten

logger = logging.getLogger(__name__)

ENV_OUTPUT_DIR = "SPLITRTO_OUTPUT_DIR"
ENV_WORKERS = "SPLITRTO_WORKERS"

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_SOLVER = 4

# section -> key -> (type, default, help)
SCHEMA = {
    "problem": {
        "preset": (str, None, f"named problem, one of: {', '.join(PRESETS)}"),
        "seed": (int, 0, "seed used to generate the preset's truth and noisy data"),
        "operator": (str, None, "matrix file with the forward operator A (instead of a preset)"),
        "data": (str, None, "matrix file with the data vector b"),
        "prior_factor": (str, None, "square prior precision factor L (Gamma^-1 = L^T L); identity if omitted"),
        "transform_prior": (str, None, "tall p x n transform prior L with L x ~ N(0, I)"),
        "noise_factor": (str, None, "noise precision factor S (Sigma^-1 = S^T S); identity if omitted"),
        "prior_mean": (str, None, "matrix file with the prior mean x0; zero if omitted"),
    },
    "sampling": {
        "strategy": (str, "auto", f"one of {', '.join(STRATEGIES)}"),
        "solver": (str, "direct", f"one of {', '.join(SOLVERS)}"),
        "K": (int, 1000, "number of posterior draws"),
        "seed": (int, 0, "sampling seed; draw j uses stream j of this seed"),
        "workers": (int, 1, f"worker threads (output does not depend on it); env {ENV_WORKERS}"),
        "ridge": (float, 0.0, "ridge added to A A^T in the prior split"),
        "krylov_steps": (int, 100, "maximum Golub-Kahan steps per solve"),
        "krylov_tol": (float, 1e-8, "relative residual tolerance of the Krylov solves"),
    },
    "output": {
        "dir": (str, "splitrto-out", f"output directory; env {ENV_OUTPUT_DIR} overrides"),
    },
    "benchmark": {
        "sizes": (str, "100, 1000, 10000", "comma-separated sample sizes"),
        "repeats": (int, 1, "timed repetitions per size; the minimum is reported"),
    },
    "hierarchical": {
        "T": (int, 2000, "Gibbs iterations"),
        "burn_in": (int, 0, "Gibbs iterations discarded from the posterior means"),
        "thin": (int, 0, "keep every thin-th x snapshot after burn-in (0: none)"),
        "tol": (float, 1e-6, "IAS relative-change tolerance"),
        "max_iter": (int, 200, "IAS iteration cap"),
    },
    "pcn": {
        "N": (int, 10000, "chain length"),
        "h": (float, 0.05, "step parameter in (0, 1)"),
        "thin": (int, 0, "write the state every thin-th step to the chain CSV (0: none)"),
    },
}


class ConfigError(ValueError):
    pass


def _suggest(name, options):
    close = difflib.get_close_matches(name, list(options), n=1, cutoff=0.0)
    return f"; did you mean {close[0]!r}?" if close else ""


def load_config(path):
    """Parse and type-check an INI config into ``{section: {key: value}}``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file {str(path)!r} not found")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    cfg = {sec: {k: d for k, (_, d, _) in keys.items()} for sec, keys in SCHEMA.items()}
    present = set()
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]{_suggest(sec, SCHEMA)}")
        present.add(sec)
        for key, raw in parser.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]{_suggest(key, SCHEMA[sec])}")
            typ = SCHEMA[sec][key][0]
            try:
                cfg[sec][key] = typ(raw)
            except ValueError:
                raise ConfigError(f"[{sec}] {key} = {raw!r} is not a valid {typ.__name__}") from None
    cfg["_present"] = sorted(present)
    cfg["_text"] = path.read_text()
    _validate(cfg)
    return cfg


def _validate(cfg):
    p, s = cfg["problem"], cfg["sampling"]
    if (p["preset"] is None) == (p["operator"] is None):
        raise ConfigError("[problem] needs exactly one of 'preset' and 'operator'")
    if p["preset"] is not None and p["preset"] not in PRESETS:
        raise ConfigError(f"unknown preset {p['preset']!r}{_suggest(p['preset'], PRESETS)}")
    if p["operator"] is not None:
        if p["data"] is None:
            raise ConfigError("[problem] 'operator' requires 'data'")
        if p["prior_factor"] is not None and p["transform_prior"] is not None:
            raise ConfigError("[problem] give at most one of 'prior_factor' and 'transform_prior'")
        for key in ("operator", "data", "prior_factor", "transform_prior", "noise_factor", "prior_mean"):
            if p[key] is not None and not Path(p[key]).is_file():
                raise ConfigError(f"[problem] {key}: file {p[key]!r} not found")
    if s["strategy"] not in STRATEGIES:
        raise ConfigError(f"unknown strategy {s['strategy']!r}{_suggest(s['strategy'], STRATEGIES)}")
    if s["solver"] not in SOLVERS:
        raise ConfigError(f"unknown solver {s['solver']!r}{_suggest(s['solver'], SOLVERS)}")
    if s["K"] < 1:
        raise ConfigError("[sampling] K must be at least 1")
    if not 0 < cfg["pcn"]["h"] < 1:
        raise ConfigError("[pcn] h must lie in (0, 1)")
    try:
        sizes = [int(v) for v in str(cfg["benchmark"]["sizes"]).split(",") if v.strip()]
    except ValueError:
        raise ConfigError("[benchmark] sizes must be comma-separated integers") from None
    if not sizes or min(sizes) < 1:
        raise ConfigError("[benchmark] sizes must be positive")
    cfg["benchmark"]["sizes"] = sizes


def _apply_env(cfg):
    if os.environ.get(ENV_OUTPUT_DIR):
        cfg["output"]["dir"] = os.environ[ENV_OUTPUT_DIR]
    if os.environ.get(ENV_WORKERS):
        try:
            cfg["sampling"]["workers"] = int(os.environ[ENV_WORKERS])
        except ValueError:
            raise ConfigError(f"{ENV_WORKERS} must be an integer") from None
    return cfg


def build_problem(cfg):
    p = cfg["problem"]
    if p["preset"] is not None:
        return build_preset(p["preset"], seed=p["seed"])
    A = read_operator(p["operator"])
    b = read_vector(p["data"])
    x0 = read_vector(p["prior_mean"]) if p["prior_mean"] else None
    transform = read_operator(p["transform_prior"]) if p["transform_prior"] else None
    prior = None
    if transform is None:
        prior = read_operator(p["prior_factor"]) if p["prior_factor"] else identity(A.cols)
    noise = read_operator(p["noise_factor"]) if p["noise_factor"] else None
    model = GeneralGaussianModel(
        A, b, x0, prior_precision_factor=prior, transform_prior=transform, noise_precision_factor=noise
    )
    return Problem("files", "gaussian", model)


def _krylov(cfg):
    s = cfg["sampling"]
    return KrylovConfig(max_steps=s["krylov_steps"], tol=s["krylov_tol"])


def _standard_form(model):
    return whiten(model) if model.prior_precision_factor is not None else transform_prior_model(model)


def _write_batch(out, batch):
    batch.to_csv(out / "samples.csv")
    batch.summary_to_csv(out / "summary.csv")
    batch.stats_to_csv(out / "stats.csv")


def _run_gaussian(problem, cfg, out, timings):
    s = cfg["sampling"]
    t0 = time.perf_counter()
    batch = sample_general(
        problem.model, s["K"], Rng(s["seed"]), strategy=s["strategy"], solver=s["solver"],
        ridge=s["ridge"], cfg=_krylov(cfg), workers=s["workers"],
    )
    timings["sampling"] = time.perf_counter() - t0
    _write_batch(out, batch)
    return ["samples.csv", "summary.csv", "stats.csv"]


def _run_hierarchical(problem, cfg, out, timings):
    s, h = cfg["sampling"], cfg["hierarchical"]
    model = problem.model
    t0 = time.perf_counter()
    res = ias_map(model, tol=h["tol"], max_iter=h["max_iter"], strategy=s["strategy"], solver=s["solver"], ridge=s["ridge"])
    timings["ias"] = time.perf_counter() - t0
    L = len(model.blocks)
    write_csv(
        out / "ias_map.csv", ["block", "theta", "x_norm"],
        ([l, res.theta[l], float(np.sqrt(v))] for l, v in enumerate(model.block_norms_sq(res.x))),
    )
    t0 = time.perf_counter()
    chain = gibbs_sample(
        model, h["T"], Rng(s["seed"]), burn_in=h["burn_in"], thin=h["thin"],
        strategy=s["strategy"], solver=s["solver"], ridge=s["ridge"],
    )
    timings["gibbs"] = time.perf_counter() - t0
    chain.to_csv(out / "chain.csv")
    files = ["ias_map.csv", "chain.csv"]
    theta_mean = chain.theta_mean()
    write_csv(
        out / "summary.csv", ["block", "theta_mean", "theta_map"],
        ([l, theta_mean[l], res.theta[l]] for l in range(L)),
    )
    files.append("summary.csv")
    if chain.x_snapshots.shape[1]:
        chain.snapshots_to_csv(out / "samples.csv")
        files.append("samples.csv")
    return files


def _run_pcn(problem, cfg, out, timings):
    s, pc = cfg["sampling"], cfg["pcn"]
    model = problem.model
    t0 = time.perf_counter()
    # the Gaussian reference is the linearized posterior; start the chain at its mean
    std = _standard_form(model)
    gbar = std.to_original(posterior_direct(std)[0])
    W = pregenerate_proposals(model, pc["N"], Rng(s["seed"], 2), strategy=s["strategy"], solver=s["solver"],
                              ridge=s["ridge"], workers=s["workers"])
    timings["proposals"] = time.perf_counter() - t0
    phi = linearization_phi(problem.forward, problem.extras["A"], problem.extras["r"])
    t0 = time.perf_counter()
    chain = pcn_chain(PcnTarget(gbar, W, phi, pc["h"]), pc["N"], Rng(s["seed"], 3))
    timings["chain"] = time.perf_counter() - t0
    chain.to_csv(out / "chain.csv", thin=pc["thin"])
    batch = SampleBatch(chain.states[1:].T.copy(), s["seed"], "pcn", "pcn")
    batch.to_csv(out / "samples.csv")
    batch.summary_to_csv(out / "summary.csv")
    timings["acceptance_rate"] = chain.acceptance_rate
    return ["chain.csv", "samples.csv", "summary.csv"]


def _manifest(cfg, out, files, timings, command):
    text = cfg["_text"]
    manifest = {
        "command": command,
        "seed": cfg["sampling"]["seed"],
        "problem_seed": cfg["problem"]["seed"],
        "config_sha256": hashlib.sha256(text.encode()).hexdigest(),
        "config": {k: v for k, v in cfg.items() if not k.startswith("_")},
        "versions": {
            "splitrto": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "timings_seconds": timings,
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def _prepare_output(cfg):
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {str(out)!r} is not writable")
    return out


def cmd_run(config_path):
    cfg = _apply_env(load_config(config_path))
    out = _prepare_output(cfg)
    timings = {}
    t0 = time.perf_counter()
    problem = build_problem(cfg)
    timings["construction"] = time.perf_counter() - t0
    runner = {"gaussian": _run_gaussian, "hierarchical": _run_hierarchical, "pcn": _run_pcn}[problem.kind]
    files = runner(problem, cfg, out, timings)
    _manifest(cfg, out, files, timings, "run")
    print(f"wrote {', '.join(files)} and manifest.json to {out}")
    return 0


def cmd_bench(config_path):
    cfg = _apply_env(load_config(config_path))
    out = _prepare_output(cfg)
    problem = build_problem(cfg)
    if problem.kind != "gaussian":
        raise ConfigError(f"benchmark needs a Gaussian problem, preset is {problem.kind}")
    std = _standard_form(problem.model)
    b = cfg["benchmark"]
    rows = benchmark(std, b["sizes"], seed=cfg["sampling"]["seed"], repeats=b["repeats"], ridge=cfg["sampling"]["ridge"])
    rows_to_csv(out / "benchmark.csv", rows)
    print(format_table(rows))
    timings = {f"K={r.K}": {"normal": r.t_normal, "adjoint": r.t_adjoint} for r in rows}
    _manifest(cfg, out, ["benchmark.csv"], timings, "bench")
    return 0


def config_schema():
    lines = [
        "splitrto configuration (INI format, one [section] per block)",
        "",
        "commands:",
        "  splitrto run <config>     sample and write samples.csv, summary.csv, stats.csv, manifest.json",
        "  splitrto bench <config>   time normal vs adjoint direct sampling, write benchmark.csv",
        "  splitrto schema           print this text",
        "",
        f"environment: {ENV_OUTPUT_DIR} overrides [output] dir; {ENV_WORKERS} overrides [sampling] workers",
        "",
        f"presets: {', '.join(PRESETS)}",
        "",
    ]
    for sec, keys in SCHEMA.items():
        lines.append(f"[{sec}]")
        for key, (typ, default, doc) in keys.items():
            dflt = "" if default is None else f" (default {default})"
            lines.append(f"  {key} : {typ.__name__}{dflt}  {doc}")
        lines.append("")
    return "\n".join(lines)


def _error(kind, exc, code):
    print(json.dumps({"error": kind, "message": str(exc)}), file=sys.stderr)
    return code


def main(argv=None):
    parser = argparse.ArgumentParser(prog="splitrto", description="Gaussian posterior sampling for linear inverse problems")
    sub = parser.add_subparsers(dest="command")
    p_run = sub.add_parser("run", help="run a sampling job")
    p_run.add_argument("config")
    p_bench = sub.add_parser("bench", help="normal vs adjoint timing table")
    p_bench.add_argument("config")
    sub.add_parser("schema", help="document every config key and preset")
    args = parser.parse_args(argv)

    if args.command is None:
        parser.print_usage()
        return 1
    if args.command == "schema":
        print(config_schema())
        return 0
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args.config)
        return cmd_bench(args.config)
    except (ConfigError, KeyError) as exc:
        return _error("config", exc, EXIT_CONFIG)
    except OSError as exc:
        return _error("io", exc, EXIT_IO)
    except (LinAlgError, EquivalenceError, ValueError, RuntimeError) as exc:
        return _error("solver", exc, EXIT_SOLVER)


if __name__ == "__main__":
    sys.exit(main())
