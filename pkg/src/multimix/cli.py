"""Command-line interface: ``multimix <command> [options]``.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical
degeneracy, 4 internal error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from . import io as mio
from ._validation import build_design
from .em import fit_path
from .exceptions import DegeneracyError, InvalidInputError
from .mcmc import MCMCConfig, init_from_em, init_random, run_sampler
from .metrics import adjusted_rand_index
from .model import Dataset, identifiability_check
from .relabel import PosteriorSummary, RelabeledTrace, ecr_relabel, select_pivot, summarize
from .simulation import simulate_dataset

logger = logging.getLogger("multimix")

EXIT_OK, EXIT_INVALID, EXIT_DEGENERATE, EXIT_INTERNAL = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _resolve_threads(value) -> int:
    if value is None:
        value = os.environ.get("MULTIMIX_THREADS", "1")
    try:
        n = int(value)
    except ValueError:
        raise InvalidInputError(f"thread count must be an integer, got {value!r}") from None
    if n < 1:
        raise InvalidInputError("thread count must be at least 1")
    return n


def _load_data(args) -> tuple[Dataset, list[str]]:
    y = mio.read_counts(args.counts)
    inputs = [args.counts]
    cov = None
    if args.covariates:
        _, cov = mio.read_covariates(args.covariates)
        inputs.append(args.covariates)
    x = build_design(cov, y.shape[0], add_intercept=not args.no_intercept,
                     standardize=args.standardize)
    return Dataset.from_arrays(y, x), inputs


def _streams(seed: int):
    """Independent generators for EM, chain initialisation and the sampler."""
    return np.random.default_rng(seed).spawn(3)


def _write_em_outputs(out: Path, data: Dataset, scores, runs) -> None:
    fields = ["K", "loglik", "d_K", "BIC", "ICL"]
    mio._write_table(out / "selection.csv", fields,
                     [[mio._fmt(r[f]) for f in fields] for r in scores.as_rows()])
    for run in runs:
        mio.write_json(out / f"params_K{run.K}.json", mio.params_to_dict(run.params))
    best = runs[scores.best_k - 1]
    mio.write_matrix(out / "responsibilities.csv", best.responsibilities, "w")
    mio.write_labels(out / "clustering.csv", best.labels, {"size": data.s})
    sizes = np.bincount(best.labels, minlength=best.K)
    mio.write_json(out / "em_summary.json", {
        "selected_K": int(scores.best_k),
        "loglik": float(best.loglik),
        "cluster_sizes": [int(v) for v in sizes],
        "converged": bool(best.converged),
        "empty_components": [int(k) + 1 for k in best.empty_components],
    })


def _summary_to_dict(summary: PosteriorSummary) -> dict:
    comps = summary.components
    return {
        "k0_distribution": {str(k): float(v) for k, v in summary.k0_distribution.items()},
        "k0_mode": int(summary.k0_mode),
        "level": float(summary.level),
        "n_draws_used": int(summary.n_draws_used),
        "components": [int(k) + 1 for k in comps],
        "pi": [
            {"k": int(k) + 1, "mean": float(summary.pi_mean[a]),
             "lower": float(summary.pi_lower[a]), "upper": float(summary.pi_upper[a])}
            for a, k in enumerate(comps)
        ],
        "beta": [
            {"k": int(k) + 1, "j": j + 1, "p": p + 1,
             "mean": float(summary.beta_mean[a, j, p]),
             "lower": float(summary.beta_lower[a, j, p]),
             "upper": float(summary.beta_upper[a, j, p])}
            for a, k in enumerate(comps)
            for j in range(summary.beta_mean.shape[1])
            for p in range(summary.beta_mean.shape[2])
        ],
        "cluster_sizes": {str(int(k) + 1): int(np.sum(summary.best_clustering == k))
                          for k in comps},
    }


def _write_relabeled(out: Path, rel: RelabeledTrace, iterations) -> None:
    from .mcmc import SamplerTrace
    as_trace = SamplerTrace(z=rel.z, pi=rel.pi, beta=rel.beta, log_target=rel.log_target,
                            k0=rel.k0, cycles=iterations, mala_acceptance=float("nan"),
                            swap_acceptance=float("nan"))
    mio.write_trace(out / "relabeled_trace.csv", as_trace)
    mio.write_allocations(out / "relabeled_allocations.csv", rel.z, iterations)
    header = ["iteration", *[f"k{k + 1}" for k in range(rel.k_max)]]
    mio._write_table(out / "permutations.csv", header,
                     [[str(int(it)), *map(str, perm + 1)]
                      for it, perm in zip(iterations, rel.permutations)])
    mio.write_labels(out / "pivot.csv", rel.pivot)


def _write_summary(out: Path, summary: PosteriorSummary) -> None:
    mio.write_json(out / "summary.json", _summary_to_dict(summary))
    mio.write_labels(out / "clustering.csv", summary.best_clustering)
    mio.write_matrix(out / "membership.csv", summary.membership, "k")


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_simulate(args, ctx) -> dict:
    cfg = mio.load_config(args.config)
    sim_cfg = cfg["simulation"]
    sim_cfg.seed = ctx["seed"]
    sim = simulate_dataset(sim_cfg)
    out = ctx["out"]
    mio.write_counts(out / "counts.csv", sim.data.y)
    mio.write_covariates(out / "covariates.csv", sim.covariates)
    mio.write_labels(out / "true_labels.csv", sim.labels, {"size": sim.data.s})
    true = mio.params_to_dict(sim.params)
    true["sigma"] = sim.sigma
    mio.write_json(out / "true_params.json", true)
    return {"config": {"simulation": sim_cfg.to_dict()},
            "inputs": [args.config] if args.config else []}


def cmd_fit_em(args, ctx) -> dict:
    cfg = mio.load_config(args.config)
    data, inputs = _load_data(args)
    identifiability_check(data, args.kmax)
    em_rng, _, _ = _streams(ctx["seed"])
    scores, runs = fit_path(data, args.kmax, cfg["em"], em_rng, n_jobs=ctx["threads"])
    _write_em_outputs(ctx["out"], data, scores, runs)
    print(f"selected K = {scores.best_k}")
    if args.config:
        inputs.append(args.config)
    return {"config": mio.config_snapshot({"em": cfg["em"]}) | {"kmax": args.kmax},
            "inputs": inputs}


def cmd_fit_mcmc(args, ctx) -> dict:
    cfg = mio.load_config(args.config)
    data, inputs = _load_data(args)
    out = ctx["out"]
    mcmc_cfg: MCMCConfig = cfg["mcmc"]
    mcmc_cfg.k_max = args.kmax
    mcmc_cfg.thin = args.thin
    mcmc_cfg.validate()
    prior = cfg["prior"]
    em_rng, init_rng, chain_rng = _streams(ctx["seed"])
    if args.init_from_em:
        em_kmax = min(args.em_kmax or args.kmax, args.kmax)
        scores, runs = fit_path(data, em_kmax, cfg["em"], em_rng, n_jobs=ctx["threads"])
        em_dir = out / "em"
        em_dir.mkdir(exist_ok=True)
        _write_em_outputs(em_dir, data, scores, runs)
        init = init_from_em(runs[scores.best_k - 1], mcmc_cfg.k_max, mcmc_cfg.n_chains,
                            mcmc_cfg.tau0, init_rng, mcmc_cfg.with_random_permutation)
    else:
        init = init_random(data, mcmc_cfg.k_max, prior, mcmc_cfg.tau0, init_rng)
    trace = run_sampler(data, mcmc_cfg, prior, init, chain_rng, n_jobs=ctx["threads"])
    mio.write_trace(out / "trace.csv", trace)
    mio.write_allocations(out / "allocations.csv", trace.z, trace.cycles)
    rel = ecr_relabel(trace, select_pivot(trace))
    _write_relabeled(out, rel, trace.cycles)
    summary = summarize(rel, args.level)
    _write_summary(out, summary)
    mio.write_json(out / "diagnostics.json", {
        "mala_acceptance_target_chain": trace.mala_acceptance,
        "mala_acceptance_per_chain": trace.chain_acceptance.tolist(),
        "swap_acceptance": trace.swap_acceptance,
        "final_tau": trace.final_tau.tolist(),
        "alphas": prior.alphas.tolist(),
        "retained_draws": int(trace.n_draws),
    })
    print(f"posterior mode of K0 = {summary.k0_mode} "
          f"(probability {summary.k0_distribution[summary.k0_mode]:.4f})")
    if args.config:
        inputs.append(args.config)
    snap = mio.config_snapshot({"mcmc": mcmc_cfg, "prior": prior, "em": cfg["em"]})
    return {"config": snap | {"init_from_em": args.init_from_em, "level": args.level},
            "inputs": inputs}


def _trace_inputs(trace_dir: Path):
    return trace_dir / "trace.csv", trace_dir / "allocations.csv"


def _relabel_from_dir(args):
    trace_dir = Path(args.trace_dir)
    tpath, apath = _trace_inputs(trace_dir)
    trace = mio.read_trace(tpath, apath)
    inputs = [str(tpath), str(apath)]
    if args.pivot:
        pivot = mio.read_labels(args.pivot)
        inputs.append(args.pivot)
    else:
        pivot = select_pivot(trace)
    return trace, ecr_relabel(trace, pivot), inputs


def cmd_relabel(args, ctx) -> dict:
    trace, rel, inputs = _relabel_from_dir(args)
    _write_relabeled(ctx["out"], rel, trace.cycles)
    return {"config": {"pivot": args.pivot}, "inputs": inputs}


def cmd_summarize(args, ctx) -> dict:
    _, rel, inputs = _relabel_from_dir(args)
    summary = summarize(rel, args.level)
    _write_summary(ctx["out"], summary)
    print(f"posterior mode of K0 = {summary.k0_mode}")
    return {"config": {"level": args.level, "pivot": args.pivot}, "inputs": inputs}


def cmd_ari(args, ctx) -> None:
    a = mio.read_labels(args.labels_a)
    b = mio.read_labels(args.labels_b)
    print(repr(adjusted_rand_index(a, b)))
    return None


# --------------------------------------------------------------------------
# parser and entry point
# --------------------------------------------------------------------------


def _add_data_args(p):
    p.add_argument("--counts", required=True, help="counts CSV (header y1..y{J+1})")
    p.add_argument("--covariates", help="covariates CSV with header, no intercept column")
    p.add_argument("--no-intercept", action="store_true", help="do not add an intercept")
    p.add_argument("--standardize", action="store_true",
                   help="scale covariates to zero mean and unit variance")
    p.add_argument("--config", help="INI file with [em_parameters] / [mcmc_parameters]")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="master random seed (drawn and recorded if omitted)")
    common.add_argument("--threads", default=argparse.SUPPRESS,
                        help="worker threads (fallback: $MULTIMIX_THREADS, then 1)")
    common.add_argument("--out", default=argparse.SUPPRESS,
                        help="output directory (default: multimix_out)")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = _Parser(prog="multimix", parents=[common],
                     description="Clustering multinomial count data with mixtures of "
                                 "multinomial logistic regressions.")
    parser.add_argument("--version", action="version", version=f"multimix {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="simulate a synthetic dataset")
    p.add_argument("--config", help="INI file with a [simulation] section")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit-em", parents=[common], help="EM path for K=1..kmax, ICL selection")
    _add_data_args(p)
    p.add_argument("--kmax", type=int, default=10)
    p.set_defaults(func=cmd_fit_em)

    p = sub.add_parser("fit-mcmc", parents=[common], help="overfitting mixture sampler")
    _add_data_args(p)
    p.add_argument("--kmax", type=int, default=MCMCConfig.k_max)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--init-from-em", action="store_true",
                   help="seed the chains from the ICL-selected EM fit")
    p.add_argument("--em-kmax", type=int, help="largest K of the initialising EM path")
    p.add_argument("--level", type=float, default=0.95, help="credible level")
    p.set_defaults(func=cmd_fit_mcmc)

    for name, func, text in (("relabel", cmd_relabel, "relabel a stored trace"),
                             ("summarize", cmd_summarize, "summarize a stored trace")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--trace-dir", required=True,
                       help="directory holding trace.csv and allocations.csv")
        p.add_argument("--pivot", help="labels CSV to use as pivot")
        if name == "summarize":
            p.add_argument("--level", type=float, default=0.95)
        p.set_defaults(func=func)

    p = sub.add_parser("ari", parents=[common], help="adjusted Rand index of two label files")
    p.add_argument("labels_a")
    p.add_argument("labels_b")
    p.set_defaults(func=cmd_ari)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    start = time.perf_counter()
    try:
        seed = getattr(args, "seed", None)
        if seed is None:
            seed = int(np.random.SeedSequence().entropy % (2**63))
        if seed < 0:
            raise InvalidInputError("seed must be non-negative")
        ctx = {"seed": seed, "threads": _resolve_threads(getattr(args, "threads", None))}
        if args.command != "ari":
            out = Path(getattr(args, "out", "multimix_out"))
            out.mkdir(parents=True, exist_ok=True)
            ctx["out"] = out
        info = args.func(args, ctx)
        if info is not None:
            mio.write_json(ctx["out"] / "manifest.json", {
                "command": args.command,
                "argv": list(sys.argv[1:] if argv is None else argv),
                "seed": seed,
                "threads": ctx["threads"],
                "config": info["config"],
                "inputs": {str(p): mio.file_digest(p) for p in info["inputs"]},
                "version": __version__,
                "duration_seconds": time.perf_counter() - start,
            })
    except InvalidInputError as exc:
        print(f"multimix: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except DegeneracyError as exc:
        print(f"multimix: numerical degeneracy: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except Exception:  # noqa: BLE001 - last-resort mapping to exit code 4
        traceback.print_exc()
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
