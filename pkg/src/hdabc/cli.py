"""Command-line interface: ``abc <command> ...``.

Exit codes are 0 on success, 2 for configuration or usage errors and 3 for
runtime failures. Failures print a JSON object to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .adjust import MarginalSamples, marginal_adjust, regression_adjust
from .config import ConfigError, RunConfig, dump_config, parse_config
from .copula import GaussianCopulaABC, MetaGaussian
from .core import ParticleSet, RngStream, generate_particles, n_threads
from .evaluation import METHODS, run_table1_benchmark
from .models import make_model
from .rde import RegressionDensityEstimator, load_rde, mcmc_sample
from .rejection import KernelConfig, make_distance, rejection_abc

__all__ = ["main", "run_pipeline", "build_parser"]

log = logging.getLogger("hdabc")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class UsageError(ValueError):
    pass


# -- manifest -----------------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions() -> dict:
    import scipy
    import sklearn

    return {"hdabc": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__, "python": platform.python_version()}


def write_manifest(path: Path, command: str, args: dict, outputs: list, timings: dict, started: float,
                   extra: dict | None = None) -> None:
    """Replay information: arguments, versions, output digests and timings."""
    manifest = {
        "command": command,
        "arguments": args,
        "versions": _versions(),
        "threads": n_threads(),
        "outputs": {str(p): _sha256(Path(p)) for p in outputs if Path(p).exists()},
        "timings": timings,
        "started": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "finished": datetime.now(timezone.utc).isoformat(),
    }
    if extra:
        manifest.update(extra)
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True, default=str) + "\n")


def _manifest_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".manifest.json")


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


# -- argument helpers -----------------------------------------------------------


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _json_arg(text: str) -> dict:
    try:
        value = json.loads(text)
    except json.JSONDecodeError as err:
        raise argparse.ArgumentTypeError(f"invalid JSON: {err}") from None
    if not isinstance(value, dict):
        raise argparse.ArgumentTypeError("expected a JSON object")
    return value


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _model(args):
    try:
        return make_model(args.model, args.params)
    except (TypeError, ValueError) as err:
        raise UsageError(f"model {args.model!r}: {err}") from None


# -- commands -----------------------------------------------------------------------


def cmd_simulate(args):
    model = _model(args)
    pool = generate_particles(model, args.n, RngStream(args.seed))
    pool.to_csv(args.out)
    return [args.out, str(Path(args.out).with_suffix(".meta.json"))], {}


def cmd_reject(args):
    model = _model(args)
    if args.selection is not None and any(not 0 <= i < model.q for i in args.selection):
        raise UsageError(f"--selection indices must lie in [0, {model.q})")
    pool = ParticleSet.from_csv(args.pool) if args.pool else generate_particles(model, args.n, RngStream(args.seed))
    s_obs = model.observed_summaries
    dist = make_distance(pool, args.scale)
    acc = rejection_abc(pool, s_obs, args.selection, KernelConfig(args.kernel, args.bandwidth, args.alpha), dist)
    acc.to_csv(args.out)
    return [args.out], {"accepted": acc.r, "bandwidth": acc.meta["bandwidth"]}


def _read_marginals(directory: Path, p: int) -> MarginalSamples:
    cols = []
    for j in range(p):
        f = directory / f"marginal_{j}.csv"
        if not f.exists():
            raise UsageError(f"{f} not found; the marginal directory needs marginal_0.csv .. marginal_{p - 1}.csv")
        ps = ParticleSet.from_csv(f)
        cols.append(ps.theta[:, 0] if ps.p == 1 else ps.theta[:, j])
    return MarginalSamples.from_columns(cols)


def cmd_adjust(args):
    particles = ParticleSet.from_csv(args.input)
    if not args.regression and args.marginal is None:
        raise UsageError("nothing to do: pass --regression and/or --marginal DIR")
    if args.regression:
        particles = regression_adjust(particles)
    if args.marginal is not None:
        particles = marginal_adjust(particles, _read_marginals(Path(args.marginal), particles.p))
    particles.to_csv(args.out)
    return [args.out], {}


def _selections(model, args):
    marg = model.marginal_selections() if args.marginals == "auto" else None
    if args.pairs == "all":
        return marg, {(i, j): list(range(model.q)) for i in range(model.p) for j in range(i + 1, model.p)}
    # the estimator defaults each pair to the union of its two marginal selections
    return marg, None


def cmd_copula(args):
    model = _model(args)
    pool = ParticleSet.from_csv(args.pool) if args.pool else generate_particles(model, args.n, RngStream(args.seed))
    marg, pairs = _selections(model, args)
    est = GaussianCopulaABC(marg, pairs, kernel=args.kernel, quantile=args.alpha, scale=args.scale,
                            regression=not args.no_regression, grid_size=args.grid_size)
    est.fit(pool, model.observed_summaries)
    out = est.posterior_.to_dict()
    out["raw_correlation"] = est.raw_correlation_.tolist()
    _write_json(args.out, out)
    return [args.out], {}


def cmd_rde_fit(args):
    particles = ParticleSet.from_csv(args.input)
    est = RegressionDensityEstimator(k_max=args.kmax, n_init=args.n_init, random_state=args.seed)
    est.fit_particles(particles)
    est.save(args.out)
    return [args.out], {"components": est.mixture_.n_components}


def cmd_rde_mcmc(args):
    est = load_rde(args.lik)
    model = _model(args)
    s_obs = np.asarray(model.observed_summaries, dtype=float)
    if s_obs.size != est.n_summaries_:
        raise UsageError(f"likelihood was fitted on {est.n_summaries_} summaries; model has {s_obs.size}")
    mix = est.mixture_
    init = args.init if args.init is not None else mix.weights @ mix.means[:, est.n_summaries_:]
    res = mcmc_sample(lambda t: est.score_samples(s_obs, t), model.prior_logdensity, init, args.steps,
                      rng=RngStream(args.seed).generator(), burn_in=args.burn_in)
    chain = ParticleSet(res.chain, np.zeros((res.chain.shape[0], 0)), None,
                        {"source": "mcmc", "model": model.name, "seed": args.seed,
                         "acceptance_rate": res.acceptance_rate, "step_cov": res.step_cov.tolist()})
    chain.to_csv(args.out)
    return [args.out], {"acceptance_rate": res.acceptance_rate, "burn_in_acceptance_rate": res.burn_in_acceptance_rate}


def cmd_benchmark(args):
    report = run_table1_benchmark(args.ps, args.methods, args.reps, args.n, args.alpha, args.seed)
    report.to_csv(args.out)
    summary = Path(args.summary) if args.summary else Path(args.out).with_suffix(".json")
    report.write_summary(summary)
    return [args.out, str(summary)], {"checks": report.trend_checks(), "failures": len(report.failures)}


def _particle_report(ps: ParticleSet) -> dict:
    w = ps.weights / ps.weights.sum()
    mean = w @ ps.theta
    sd = np.sqrt(w @ (ps.theta - mean) ** 2)
    qs = {}
    for j in range(ps.p):
        order = np.argsort(ps.theta[:, j], kind="stable")
        cw = np.cumsum(w[order])
        qs[f"theta_{j}"] = [float(ps.theta[order[min(np.searchsorted(cw, a), ps.r - 1)], j])
                            for a in (0.025, 0.5, 0.975)]
    return {"kind": "particles", "r": ps.r, "p": ps.p, "q": ps.q, "ess": float(1 / np.sum(w * w)),
            "mean": mean.tolist(), "sd": sd.tolist(), "quantiles_2.5_50_97.5": qs,
            "adjustments": ps.meta.get("adjustments", [])}


def _posterior_report(d: dict) -> dict:
    mg = MetaGaussian.from_dict(d)
    means, sds = [], []
    for m in mg.margins:
        x = np.asarray(m.grid)
        f = np.asarray(m.density)
        wts = np.gradient(x) * f
        wts = wts / wts.sum()
        mu = float(wts @ x)
        means.append(mu)
        sds.append(float(np.sqrt(wts @ (x - mu) ** 2)))
    return {"kind": "meta-gaussian", "p": mg.p, "mean": means, "sd": sds,
            "correlation": mg.correlation.matrix.tolist()}


def cmd_report(args):
    path = Path(args.input)
    if path.suffix == ".csv":
        report = _particle_report(ParticleSet.from_csv(path))
    else:
        d = json.loads(path.read_text())
        if "margins" in d:
            report = _posterior_report(d)
        elif "checks" in d:
            report = {"kind": "benchmark", "table": d["table"], "checks": d["checks"], "failures": d["failures"]}
        elif "mixture" in d:
            report = {"kind": "rde", "n_summaries": d["n_summaries"], "n_params": d["n_params"],
                      "components": len(d["mixture"]["weights"]),
                      "marginal_warnings": sum(m["warning"] for m in d["marginals"])}
        else:
            raise UsageError(f"{path}: unrecognised file")
    text = json.dumps(report, indent=1, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        return [args.out], {}
    sys.stdout.write(text)
    return [], {}


# -- pipeline -------------------------------------------------------------------------


class StageError(RuntimeError):
    def __init__(self, stage: str, err: Exception):
        super().__init__(f"stage {stage!r} failed: {type(err).__name__}: {err}")
        self.stage = stage
        self.cause = err


def run_pipeline(cfg: RunConfig) -> dict:
    """Execute ``cfg.pipeline`` and write its artifacts into ``cfg.output.dir``.

    Artifacts: ``accepted.csv`` (reject), ``adjusted.csv`` (regression and/or
    marginal), ``marginals/marginal_<j>.csv`` (marginal), ``posterior.json``
    (copula), ``pool.csv`` when requested, the resolved ``config.json`` and a
    ``manifest.json``. The particle pool is drawn from ``RngStream(seed).child(0)``;
    every later stage is a deterministic function of the pool.
    """
    started = time.time()
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(dump_config(cfg))
    outputs = [out / "config.json"]
    timings = {}
    root = RngStream(cfg.seed)
    model = make_model(cfg.model.id, cfg.model.params)
    s_obs = np.asarray(model.observed_summaries, dtype=float)

    def stage(name, fn):
        t0 = time.time()
        try:
            result = fn()
        except Exception as err:
            raise StageError(name, err) from err
        timings[name] = round(time.time() - t0, 6)
        return result

    pool = stage("simulate", lambda: generate_particles(model, cfg.n, root.child(0)))
    if cfg.output.save_pool:
        pool.to_csv(out / "pool.csv")
        outputs.append(out / "pool.csv")
    dist = make_distance(pool, cfg.scale)
    kernel = KernelConfig(cfg.kernel.kind, cfg.kernel.bandwidth, cfg.kernel.quantile)
    marg_sel = ({int(k): v for k, v in cfg.selections.marginal.items()} if cfg.selections.marginal
                else model.marginal_selections())
    if cfg.selections.pairs:
        pair_sel = {tuple(int(s) for s in k.split(",")): v for k, v in cfg.selections.pairs.items()}
    else:
        pair_sel = {(i, j): sorted(set(marg_sel[i]) | set(marg_sel[j]))
                    for i in range(model.p) for j in range(i + 1, model.p)}

    current = None
    if "reject" in cfg.pipeline:
        current = stage("reject", lambda: rejection_abc(pool, s_obs, cfg.selections.joint, kernel, dist))
        current.to_csv(out / "accepted.csv")
        outputs.append(out / "accepted.csv")
    if "regression" in cfg.pipeline:
        current = stage("regression", lambda: regression_adjust(current))
    if "marginal" in cfg.pipeline:
        def marginal_stage():
            (out / "marginals").mkdir(exist_ok=True)
            cols = []
            for j in range(model.p):
                run = rejection_abc(pool, s_obs, marg_sel[j], kernel, dist)
                run = run.replace(theta=run.theta[:, [j]], parameter=j)
                if cfg.marginal_regression:
                    run = regression_adjust(run, s_obs, marg_sel[j])
                path = out / "marginals" / f"marginal_{j}.csv"
                run.to_csv(path)
                outputs.append(path)
                cols.append(run.theta[:, 0])
            return marginal_adjust(current, cols)

        current = stage("marginal", marginal_stage)
    if "regression" in cfg.pipeline or "marginal" in cfg.pipeline:
        current.to_csv(out / "adjusted.csv")
        outputs.append(out / "adjusted.csv")
    if "copula" in cfg.pipeline:
        def copula_stage():
            est = GaussianCopulaABC(marg_sel, pair_sel, kernel=cfg.kernel.kind, quantile=cfg.kernel.quantile,
                                    bandwidth=cfg.kernel.bandwidth, scale=cfg.scale,
                                    regression=cfg.copula.regression, kde_bandwidth=cfg.copula.kde_bandwidth,
                                    grid_size=cfg.copula.grid_size)
            est.fit(pool, s_obs)
            d = est.posterior_.to_dict()
            d["raw_correlation"] = est.raw_correlation_.tolist()
            return d

        _write_json(out / "posterior.json", stage("copula", copula_stage))
        outputs.append(out / "posterior.json")
    write_manifest(out / "manifest.json", "run", cfg.model_dump(mode="json"), outputs, timings, started,
                   {"seed": cfg.seed})
    return {"outputs": [str(p) for p in outputs], "timings": timings}


def cmd_run(args):
    cfg = parse_config(args.config)
    if args.out_dir:
        cfg = cfg.model_copy(update={"output": cfg.output.model_copy(update={"dir": args.out_dir})})
    if args.dump_config:
        sys.stdout.write(dump_config(cfg))
        return [], {}
    result = run_pipeline(cfg)
    return [], {"manifest_written": True, **result}


# -- parser ------------------------------------------------------------------------------


def _add_model(p, required=True):
    p.add_argument("--model", required=required, help="registered model id (twisted, gk, multigk, qr)")
    p.add_argument("--params", type=_json_arg, default={}, help="model parameters as a JSON object")


def _add_rejection(p):
    p.add_argument("--alpha", type=float, default=0.01, help="fraction of closest particles kept")
    p.add_argument("--bandwidth", type=float, default=None, help="fixed bandwidth (overrides --alpha)")
    p.add_argument("--kernel", default="uniform", choices=["uniform", "epanechnikov", "gaussian"])
    p.add_argument("--scale", default="sd", choices=["sd", "none"], help="summary scaling")
    p.add_argument("--pool", default=None, help="reuse a simulated particle CSV instead of simulating")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="abc", description="Likelihood-free inference from low-dimensional pieces.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate (theta, s) pairs from the prior")
    _add_model(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reject", help="rejection ABC on the model's observed summaries")
    _add_model(p)
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--selection", type=_int_list, default=None, help="summary indices, e.g. 0,1,4")
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--out", required=True)
    _add_rejection(p)
    p.set_defaults(func=cmd_reject)

    p = sub.add_parser("adjust", help="regression and/or marginal adjustment of a particle CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--regression", action="store_true")
    p.add_argument("--marginal", default=None, metavar="DIR", help="directory of marginal_<j>.csv files")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_adjust)

    p = sub.add_parser("copula", help="Gaussian copula ABC posterior")
    _add_model(p)
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--pairs", default="auto", choices=["auto", "all"],
                   help="auto: union of the model's marginal selections; all: every summary")
    p.add_argument("--marginals", default="auto", choices=["auto", "all"])
    p.add_argument("--no-regression", action="store_true")
    p.add_argument("--grid-size", type=int, default=512)
    p.add_argument("--out", required=True)
    _add_rejection(p)
    p.set_defaults(func=cmd_copula)

    rde = sub.add_parser("rde", help="regression density estimation").add_subparsers(dest="rde_command",
                                                                                       required=True)
    p = rde.add_parser("fit", help="fit the likelihood estimate to a particle CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--kmax", type=int, default=5)
    p.add_argument("--n-init", type=int, default=10)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rde_fit)
    p = rde.add_parser("mcmc", help="random-walk Metropolis with a fitted likelihood")
    p.add_argument("--lik", required=True)
    _add_model(p)
    p.add_argument("--steps", type=int, default=100_000)
    p.add_argument("--burn-in", type=int, default=None)
    p.add_argument("--init", type=lambda s: [float(t) for t in s.split(",")], default=None)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rde_mcmc)

    bench = sub.add_parser("benchmark", help="benchmarks").add_subparsers(dest="bench_command", required=True)
    p = bench.add_parser("table1", help="twisted-normal KL study")
    p.add_argument("--ps", type=_int_list, default=[2, 5, 10, 20, 50])
    p.add_argument("--methods", type=lambda s: s.split(","), default=list(METHODS))
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--summary", default=None, help="JSON summary path (default: --out with .json)")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("report", help="summarise a particle CSV, posterior, RDE bundle or benchmark JSON")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", help="run a configured pipeline")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None, help="override output.dir")
    p.add_argument("--dump-config", action="store_true", help="print the resolved configuration and exit")
    p.set_defaults(func=cmd_run)
    return parser


def _fail(code: int, payload: dict) -> int:
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    started = time.time()
    command = " ".join(filter(None, [args.command, getattr(args, "rde_command", None),
                                     getattr(args, "bench_command", None)]))
    try:
        outputs, extra = args.func(args)
    except ConfigError as err:
        return _fail(EXIT_CONFIG, err.to_dict())
    except UsageError as err:
        return _fail(EXIT_CONFIG, {"error": "UsageError", "message": str(err)})
    except StageError as err:
        return _fail(EXIT_RUNTIME, {"error": type(err.cause).__name__, "stage": err.stage, "message": str(err.cause)})
    except Exception as err:
        return _fail(EXIT_RUNTIME, {"error": type(err).__name__, "stage": command, "message": str(err)})
    if outputs:
        arguments = {k: v for k, v in vars(args).items() if k != "func"}
        write_manifest(_manifest_path(outputs[0]), command, arguments, outputs,
                       {"total": round(time.time() - started, 6)}, started, extra)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
