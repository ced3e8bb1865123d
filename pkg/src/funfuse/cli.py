"""Command-line interface: ``funfuse {simulate,fit,replicate,evaluate}``.

Exit codes: 0 success, 2 bad input, 3 solver divergence, 4 tuning failure.
The environment variable ``FUNFUSE_THREADS`` caps the number of worker
processes used by ``replicate``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .baselines import oracle_fit, resi_fit, resp_fit
from .bspline import build_basis
from .design import Dataset, assemble, spherical_weights
from .errors import DivergenceError, FunfuseError, InvalidArgumentError, TuningFailureError
from .io import (
    CURVE_POINTS,
    _clean,
    fit_from_result,
    read_dataset,
    read_json,
    read_truth,
    result_dict,
    write_curves,
    write_dataset,
    write_json,
    write_truth,
)
from .metrics import adjusted_rand_index, coef_mse, k_hat_counts, nmi, prediction_mse
from .simgen import ScenarioSpec, TruthRecord, generate, scenario_coefficients
from .solver import PenaltyConfig
from .tuning import DEFAULT_LAMBDA1, continuation_fit, modified_bic, two_step_tune

logger = logging.getLogger("funfuse")

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED, EXIT_TUNING = 0, 2, 3, 4
METHODS = ("proposed", "oracle", "resp", "resi")


@dataclass
class RunConfig:
    """Serializable record of one command invocation."""

    command: str
    params: Dict[str, object] = field(default_factory=dict)
    version: str = __version__


def _run_config(args: argparse.Namespace) -> RunConfig:
    params = {k: v for k, v in vars(args).items() if k not in ("func", "command")}
    return RunConfig(args.command, params)


def worker_count(requested: Optional[int] = None) -> int:
    """Number of worker processes, capped by ``FUNFUSE_THREADS``."""
    n = requested or os.cpu_count() or 1
    cap = os.environ.get("FUNFUSE_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise InvalidArgumentError(f"FUNFUSE_THREADS must be an integer, got {cap!r}") from None
    return max(1, n)


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InvalidArgumentError(f"cannot create output directory {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise InvalidArgumentError(f"output directory {out} is not writable")
    return out


def _spec(args) -> ScenarioSpec:
    return ScenarioSpec(args.scenario, args.structure, args.n, args.dist,
                        noise_sd=args.noise_sd, seed=args.seed)


# -----------------------------------------------------------------------------
# simulate
# -----------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    spec = _spec(args)
    dataset, truth = generate(spec)
    out = _out_dir(args.out)
    write_dataset(dataset, out / "data.csv", out / "responses.csv")
    ids = dataset.ids
    write_truth([[ids[i] for i in g] for g in truth.partition], spec.scenario, out / "truth.json",
                {s.subject_id: s.coeffs for s in dataset.samples})
    sizes = [int(np.sum(truth.labels == k)) for k in range(spec.n_groups)]
    print("group sizes: " + ",".join(map(str, sizes)))
    return EXIT_OK


# -----------------------------------------------------------------------------
# fit
# -----------------------------------------------------------------------------

def _load(data, responses, truth_path=None) -> Dataset:
    coeffs = None
    if truth_path:
        coeffs = read_truth(truth_path).get("coeffs")
    return read_dataset(data, responses, coeffs=coeffs)


def _penalty(args, **changes) -> PenaltyConfig:
    base = dict(tau=args.tau, delta=args.delta, max_iter=args.max_iter)
    base.update(changes)
    return PenaltyConfig(**base)


def fit_dataset(dataset: Dataset, args):
    """Tune (unless fixed) and fit; returns ``(fit, bic, diagnostics)``."""
    design = assemble(dataset)
    diag: Dict[str, object] = {}
    if args.lambda2 is not None:
        lam1 = DEFAULT_LAMBDA1 if args.lambda1 is None else args.lambda1
        fit = continuation_fit(design, _penalty(args, lambda1=lam1, lambda2=args.lambda2))
    else:
        grid1 = None if args.lambda1 is None else [args.lambda1]
        report = two_step_tune(design, lambda1_grid=grid1, rounds=args.rounds, config=_penalty(args))
        fit = report.fit
        diag.update(lambda2_grid=report.lambda2_grid, bic_values=report.bic_values,
                    k_hats=report.k_hats, lambda1_grid=report.lambda1_grid,
                    gcv_values=report.gcv_values, rounds=report.rounds)
    bic = modified_bic(fit, design.y, design.p)
    diag.update(iters=fit.iters, converged=fit.converged, primal_residual=fit.primal_residual,
                dual_residual=fit.dual_residual, objective=fit.objective,
                objective_init=fit.objective_init)
    return fit, bic, diag


def cmd_fit(args) -> int:
    dataset = _load(args.data, args.responses, args.truth)
    if args.weights == "spherical":
        dataset = dataset.with_weights(spherical_weights(dataset))
    out = _out_dir(args.out)
    fit, bic, diag = fit_dataset(dataset, args)
    write_json(result_dict(fit, bic), out / "result.json")
    write_curves(fit, dataset.basis, out / "curves.csv")
    diag["config"] = asdict(_run_config(args))
    write_json(diag, out / "diagnostics.json")
    if args.plot:
        from .plotting import plot_curves, plot_tuning

        a, b = dataset.basis.domain
        t = np.linspace(a, b, CURVE_POINTS)
        truth = None
        if args.truth:
            try:
                truth = scenario_coefficients(read_truth(args.truth).get("scenario", ""))
            except InvalidArgumentError:
                truth = None
        plot_curves(t, dataset.basis.curve(fit.alpha.T, t), out / "curves.png", truth)
        if "bic_values" in diag:
            plot_tuning(diag["lambda2_grid"], diag["bic_values"], diag["lambda1_grid"],
                        diag["gcv_values"], (fit.lambda1, fit.lambda2), out / "tuning.png")
    print(f"k_hat={fit.k_hat} lambda1={fit.lambda1!r} lambda2={fit.lambda2!r} "
          f"iters={fit.iters} converged={fit.converged}")
    return EXIT_OK


# -----------------------------------------------------------------------------
# replicate
# -----------------------------------------------------------------------------

def run_replicate(spec: ScenarioSpec, methods: Sequence[str]) -> Dict[str, dict]:
    """One simulate-tune-fit-evaluate cycle; returns metrics per method."""
    dataset, truth = generate(spec)
    design = assemble(dataset)
    k = spec.n_groups
    out: Dict[str, dict] = {}
    for m in methods:
        if m == "proposed":
            fit = two_step_tune(design).fit
        elif m == "oracle":
            fit = oracle_fit(design, truth)
        elif m == "resp":
            fit = resp_fit(design, k, seed=spec.seed)
        else:
            fit = resi_fit(design, k, seed=spec.seed)
        ari = float("nan") if m == "oracle" else adjusted_rand_index(truth.labels, fit.labels)
        out[m] = {"ari": ari, "mse": coef_mse(fit, truth, dataset.basis), "k_hat": fit.k_hat}
    return out


def _replicate_job(job):
    spec, methods = job
    try:
        return run_replicate(spec, methods), None
    except FunfuseError as exc:
        return None, f"{type(exc).__name__}: {exc}"


def _mean_sd(values: List[float]):
    v = np.asarray([x for x in values if np.isfinite(x)], dtype=float)
    if v.size == 0:
        return "", ""
    sd = repr(float(np.std(v, ddof=1))) if v.size > 1 else ""
    return repr(float(np.mean(v))), sd


def cmd_replicate(args) -> int:
    methods = [m.strip().lower() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise InvalidArgumentError(f"unknown methods {bad}; choose from {list(METHODS)}")
    if args.reps < 1:
        raise InvalidArgumentError("--reps must be >= 1")
    base = _spec(args)
    out = _out_dir(args.out)
    jobs = [(ScenarioSpec(base.scenario, base.structure, base.n, base.coeff_dist,
                          noise_sd=base.noise_sd, seed=args.seed + r), methods)
            for r in range(args.reps)]
    workers = min(worker_count(args.workers), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate_job, jobs))
    else:
        results = [_replicate_job(j) for j in jobs]

    fh = open(out / "replicates.csv", "w", newline="", encoding="utf-8")
    with fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", "seed", "method", "k_hat", "ari", "mse", "error"])
        for r, ((res, err), (spec, _)) in enumerate(zip(results, jobs)):
            if err is not None:
                print(f"replicate {r} (seed {spec.seed}) failed: {err}", file=sys.stderr)
                w.writerow([r, spec.seed, "", "", "", "", err])
                continue
            for m in methods:
                row = res[m]
                ari = "" if not np.isfinite(row["ari"]) else repr(row["ari"])
                w.writerow([r, spec.seed, m, row["k_hat"], ari, repr(row["mse"]), ""])

    ok = [res for res, err in results if err is None]
    failed = len(results) - len(ok)
    fh = open(out / "summary.csv", "w", newline="", encoding="utf-8")
    with fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["structure", "dist", "method", "ari_mean", "ari_sd", "mse_mean", "mse_sd",
                    "reps", "failed"])
        for m in methods:
            ari = _mean_sd([res[m]["ari"] for res in ok])
            mse = _mean_sd([res[m]["mse"] for res in ok])
            w.writerow([base.structure, base.coeff_dist, m, *ari, *mse, len(ok), failed])
            print(f"{m:9s} ARI {_fmt(ari)}  MSE {_fmt(mse)}")

    counts = k_hat_counts(res["proposed"]["k_hat"] for res in ok) if "proposed" in methods else {}
    fh = open(out / "khat_hist.csv", "w", newline="", encoding="utf-8")
    with fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k_hat", "count"])
        for kv in sorted(counts.items()):
            w.writerow(kv)
    if args.plot and counts:
        from .plotting import plot_k_hat

        plot_k_hat(counts, out / "khat_hist.png")
    return EXIT_OK


def _fmt(pair) -> str:
    mean, sd = pair
    if not mean:
        return "-"
    return f"{float(mean):.3f}" + (f"({float(sd):.3f})" if sd else "")


# -----------------------------------------------------------------------------
# evaluate
# -----------------------------------------------------------------------------

def _truth_record(truth: dict, ids: Sequence[str]) -> TruthRecord:
    index = {sid: i for i, sid in enumerate(ids)}
    labels = np.empty(len(ids), dtype=int)
    for k, g in enumerate(truth["partition"]):
        for sid in g:
            labels[index[sid]] = k
    partition = [np.flatnonzero(labels == k) for k in range(len(truth["partition"]))]
    return TruthRecord(partition, truth["scenario"], labels)


def cmd_evaluate(args) -> int:
    metrics: Dict[str, object] = {}
    result = read_json(args.fit) if args.fit else None
    if result is not None and (args.truth or args.other):
        ref = read_truth(args.truth) if args.truth else read_json(args.other)
        metrics["ari"] = adjusted_rand_index(result["partition"], ref["partition"])
        metrics["nmi"] = nmi(result["partition"], ref["partition"])
        if args.truth and ref.get("scenario"):
            try:
                scenario_coefficients(ref["scenario"])
            except InvalidArgumentError:
                pass
            else:
                ids = sorted(s for g in ref["partition"] for s in g)
                truth = _truth_record(ref, ids)
                fit = fit_from_result(result, ids)
                metrics["coef_mse"] = coef_mse(fit, truth, build_basis(4, 8))

    if args.split is not None:
        if not (args.data and args.responses):
            raise InvalidArgumentError("--split needs --data and --responses")
        if not 0.0 < args.split < 1.0:
            raise InvalidArgumentError("--split must lie in (0, 1)")
        dataset = _load(args.data, args.responses, args.truth_coeffs)
        rng = np.random.default_rng(args.seed)
        perm = rng.permutation(dataset.n)
        n_train = int(round(args.split * dataset.n))
        if not 0 < n_train < dataset.n:
            raise InvalidArgumentError("split leaves an empty training or test set")
        train = dataset.subset(np.sort(perm[:n_train]))
        test = dataset.subset(np.sort(perm[n_train:]))
        if args.weights == "spherical":
            train = train.with_weights(spherical_weights(train))
        fit, _, _ = fit_dataset(train, args)
        metrics.update(prediction_mse=prediction_mse(fit, test, train), n_train=train.n,
                       n_test=test.n, k_hat=fit.k_hat)
    elif args.test_data:
        if result is None or not (args.data and args.responses and args.test_responses):
            raise InvalidArgumentError(
                "prediction needs --fit, --data, --responses, --test-data and --test-responses"
            )
        train = _load(args.data, args.responses, args.truth_coeffs)
        test = read_dataset(args.test_data, args.test_responses)
        fit = fit_from_result(result, train.ids)
        metrics["prediction_mse"] = prediction_mse(fit, test, train)

    if not metrics:
        raise InvalidArgumentError("nothing to evaluate: give --truth/--other, --split or --test-data")
    if args.out:
        write_json(metrics, args.out)
    print(json.dumps(_clean(metrics), indent=2, sort_keys=True))
    return EXIT_OK


# -----------------------------------------------------------------------------
# argument parsing
# -----------------------------------------------------------------------------

def _add_spec_args(p):
    p.add_argument("--scenario", default="s1", help="s1, s2 or ex2")
    p.add_argument("--structure", default="balanced", choices=["balanced", "unbalanced"])
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--dist", default="norm", choices=["norm", "unif"])
    p.add_argument("--noise-sd", type=float, default=1.0)


def _add_fit_args(p):
    p.add_argument("--lambda1", type=float, default=None, help="fix lambda1 (skip GCV)")
    p.add_argument("--lambda2", type=float, default=None, help="fix lambda2 (skip BIC search)")
    p.add_argument("--rounds", type=int, default=1, help="tuning rounds")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=2.0)
    p.add_argument("--max-iter", type=int, default=2000)
    p.add_argument("--weights", default="none", choices=["none", "spherical"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="funfuse", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    _add_spec_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="tune and fit the fusion model")
    p.add_argument("--data", required=True)
    p.add_argument("--responses", required=True)
    p.add_argument("--truth", default=None, help="truth.json with covariate coefficients")
    _add_fit_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.add_argument("--plot", action="store_true", help="also render PNG figures")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("replicate", help="repeat simulate-fit-evaluate over seeds")
    _add_spec_args(p)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--methods", default="proposed")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.add_argument("--plot", action="store_true", help="also render the K histogram")
    p.set_defaults(func=cmd_replicate)

    p = sub.add_parser("evaluate", help="score a fit against truth or held-out data")
    p.add_argument("--fit", default=None, help="result.json")
    p.add_argument("--truth", default=None)
    p.add_argument("--other", default=None, help="second result.json to compare with")
    p.add_argument("--data", default=None)
    p.add_argument("--responses", default=None)
    p.add_argument("--truth-coeffs", default=None, help="truth.json supplying exact design rows")
    p.add_argument("--test-data", default=None)
    p.add_argument("--test-responses", default=None)
    p.add_argument("--split", type=float, default=None, help="training fraction")
    _add_fit_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except TuningFailureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TUNING
    except (FunfuseError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
