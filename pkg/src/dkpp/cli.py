"""Command-line front end: desk-scale experiment drivers plus thin wrappers
over the library, all emitting seeded, reproducible CSV files.

Every output starts with a `#` metadata block (tool version, command line,
seed) followed by a header row, so downstream plotting needs no other
context.  Exit codes: 0 success, 2 usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import shlex
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .inference import (
    conditional_prob_between,
    conditional_prob_given_cardinality,
    elbo,
    importance_log_partition,
    mean_field_fit,
    rb_marginal_between,
    rb_marginal_cardinality,
)
from .kernel import (
    EigensolverError,
    Subset,
    affine_phi,
    box_cox,
    gaussian_kernel,
    load_kernel,
    log_phi,
    quadratic_phi,
    random_wishart_kernel,
    save_kernel,
    square_grid,
)
from .learning import BasketDataset, TrainConfig, load_baskets, save_baskets, save_factor, sgd_fit
from .model import (
    BernoulliProduct,
    Dkpp,
    exact_log_partition,
    exact_sample,
    load_model,
    subset_log_weights,
)
from .modeopt import double_greedy, exhaustive_mode, greedy_mode, random_greedy_cardinality
from .sampling import inclusion_frequencies, run_chain, save_chain

USAGE_ERROR = 2
NUMERICAL_ERROR = 3


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path, argv, seed, header, rows, extra_meta=()):
    lines = [f"# dkpp {__version__}", f"# command: {shlex.join(argv)}", f"# seed: {seed}"]
    lines += list(extra_meta)
    lines.append(",".join(header))
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _derived_seed(*tags) -> int:
    """Stable integer seed from a tuple of integers."""
    return int(np.random.SeedSequence([int(t) for t in tags]).generate_state(1)[0])


def _parse_lambdas(text: str):
    try:
        return [float(t) for t in text.split(",") if t.strip() != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad lambda list {text!r}") from exc


def _parse_items(text: str) -> Subset:
    text = text.strip()
    if not text:
        return Subset()
    return Subset(int(t) for t in text.split(","))


def _phi_from_flags(ns):
    if ns.phi == "log":
        return log_phi()
    if ns.phi == "affine":
        return affine_phi(ns.b, ns.c)
    if ns.phi == "quadratic":
        return quadratic_phi(ns.a, ns.b, ns.c)
    return box_cox(ns.lam)


def _add_phi_flags(p, default_kind="boxcox"):
    p.add_argument("--phi", choices=["log", "affine", "quadratic", "boxcox"], default=default_kind)
    p.add_argument("--lambda", dest="lam", type=float, default=0.5, help="boxcox exponent")
    p.add_argument("--a", type=float, default=1.0, help="quadratic coefficient")
    p.add_argument("--b", type=float, default=1.0, help="linear coefficient")
    p.add_argument("--c", type=float, default=0.0, help="constant coefficient")


def _add_model_flags(p):
    p.add_argument("--model", help="model header file (phi descriptor + kernel path)")
    p.add_argument("--kernel", help="kernel file, combined with the phi flags")
    _add_phi_flags(p)


def _model_from_flags(ns, parser):
    if ns.model:
        return load_model(ns.model)
    if ns.kernel:
        return Dkpp(load_kernel(ns.kernel), _phi_from_flags(ns))
    parser.error("one of --model or --kernel is required")


# ---------------------------------------------------------------------------
# Experiment subcommands
# ---------------------------------------------------------------------------


def _gathered_block(side: int, k: int) -> Subset:
    """Centered contiguous ceil(sqrt(k)) square block, truncated to k items."""
    s = math.isqrt(k - 1) + 1 if k > 0 else 0
    r0 = (side - s) // 2
    items = [
        (r0 + dr) * side + (r0 + dc)
        for dr in range(s)
        for dc in range(s)
    ]
    return Subset(items[:k])


def cmd_dependence_sweep(ns, parser, argv) -> int:
    n = ns.grid_side**2
    if ns.k > n:
        parser.error(f"k={ns.k} exceeds the {ns.grid_side}x{ns.grid_side} grid size")
    kernel = gaussian_kernel(square_grid(ns.grid_side), ns.bandwidth)
    scattered = random_greedy_cardinality(Dkpp(kernel, log_phi()), ns.k, seed=ns.seed).subset
    gathered = _gathered_block(ns.grid_side, ns.k)
    rows = []
    for lam in ns.lambdas:
        model = Dkpp(kernel, box_cox(lam))
        for trial in range(ns.seeds):
            seed = ns.seed + trial
            for name, subset in (("scattered", scattered), ("gathered", gathered)):
                est = conditional_prob_given_cardinality(
                    model, subset, n_samples=ns.samples, seed=seed
                )
                log10 = math.log10(est.value) if est.value > 0 else -math.inf
                rows.append((name, lam, seed, est.value, log10, est.std_error, est.n_samples))
    _write_csv(
        ns.out, argv, ns.seed,
        ["config", "lambda", "seed", "value", "log10_value", "std_error", "n_samples"],
        rows,
        extra_meta=[
            f"# scattered: {' '.join(map(str, scattered.items))}",
            f"# gathered: {' '.join(map(str, gathered.items))}",
        ],
    )
    return 0


def cmd_z_comparison(ns, parser, argv) -> int:
    if ns.n > 24:
        parser.error("the exact column needs n <= 24")
    rows = []
    for li, lam in enumerate(ns.lambdas):
        for trial in range(ns.seeds):
            seed = ns.seed + trial
            kernel = random_wishart_kernel(ns.n, _derived_seed(ns.seed, li, trial, 0))
            model = Dkpp(kernel, box_cox(lam))
            exact = exact_log_partition(model)
            q = mean_field_fit(
                model, mc_samples=64, seed=_derived_seed(ns.seed, li, trial, 1)
            )
            elbo_est = elbo(
                model, q, mc_samples=ns.samples,
                seed=_derived_seed(ns.seed, li, trial, 2),
                exact_below=20,
            )
            is_est = importance_log_partition(
                model, q, ns.samples, seed=_derived_seed(ns.seed, li, trial, 3)
            )
            rows.append((
                lam, seed, exact,
                elbo_est.value, elbo_est.std_error,
                is_est.value, is_est.std_error,
                elbo_est.value - exact, is_est.value - exact,
                math.exp(elbo_est.value - exact), math.exp(is_est.value - exact),
            ))
    _write_csv(
        ns.out, argv, ns.seed,
        ["lambda", "seed", "log_z_exact", "elbo", "elbo_se", "is_log_z", "is_se",
         "elbo_gap", "is_gap", "elbo_ratio", "is_ratio"],
        rows,
    )
    return 0


def cmd_z_variance_ablation(ns, parser, argv) -> int:
    # One kernel and one mean-field fit per lambda; the reported variance is
    # across sampling seeds, i.e. pure estimator variance.
    rows = []
    uniform = BernoulliProduct(np.full(ns.n, 0.5))
    for li, lam in enumerate(ns.lambdas):
        kernel = random_wishart_kernel(ns.n, _derived_seed(ns.seed, li, 0))
        model = Dkpp(kernel, box_cox(lam))
        q = mean_field_fit(
            model, mc_samples=48, max_sweeps=30, tol=1e-3,
            seed=_derived_seed(ns.seed, li, 1),
        )
        estimates = {"mean_field": [], "uniform": []}
        for trial in range(ns.seeds):
            is_seed = _derived_seed(ns.seed, li, trial, 2)
            estimates["mean_field"].append(
                importance_log_partition(model, q, ns.samples, seed=is_seed).value
            )
            estimates["uniform"].append(
                importance_log_partition(model, uniform, ns.samples, seed=is_seed).value
            )
        for proposal, values in estimates.items():
            arr = np.asarray(values)
            var = float(arr.var(ddof=1)) if arr.size > 1 else 0.0
            rows.append((lam, proposal, var, float(arr.mean()), ns.seeds))
    _write_csv(
        ns.out, argv, ns.seed,
        ["lambda", "proposal", "var_log_z", "mean_log_z", "n_seeds"],
        rows,
    )
    return 0


def cmd_learn(ns, parser, argv) -> int:
    data = load_baskets(ns.data)
    config = TrainConfig(
        learning_rate=ns.lr, n_iters=ns.iters, batch_size=ns.batch, seed=ns.seed,
        phi=_phi_from_flags(ns), rank=ns.rank, eval_every=ns.eval_every,
    )
    fitted, trace = sgd_fit(data, config)
    model_out = ns.model_out or str(Path(ns.out).with_suffix(".model.txt"))
    save_factor(fitted, config.phi, model_out)
    _write_csv(ns.out, argv, ns.seed, ["iter", "loss", "wall_ms"], trace,
               extra_meta=[f"# model: {model_out}"])
    total_ms = trace[-1][2]
    per_iter = total_ms / max(1, ns.iters)
    print(f"trained {ns.iters} iterations, {per_iter:.3f} ms/iteration (sgd only)")
    print(f"loss {trace[0][1]:.6f} -> {trace[-1][1]:.6f}; model saved to {model_out}")
    return 0


# ---------------------------------------------------------------------------
# Thin wrappers
# ---------------------------------------------------------------------------


def cmd_exact(ns, parser, argv) -> int:
    model = _model_from_flags(ns, parser)
    logw = subset_log_weights(model)
    log_z = exact_log_partition(model)
    probs = np.exp(logw - log_z)
    rows = []
    for mask in range(logw.size):
        items = " ".join(str(i) for i in Subset.from_mask(mask).items)
        rows.append((mask, items, float(logw[mask]), float(probs[mask])))
    _write_csv(ns.out, argv, ns.seed, ["mask", "items", "log_weight", "prob"], rows,
               extra_meta=[f"# log_z: {log_z!r}"])
    print(f"log_z = {log_z!r}")
    return 0


def cmd_estimate(ns, parser, argv) -> int:
    model = _model_from_flags(ns, parser)
    needs_proposal = ns.what in ("logz-is", "elbo", "between-marginal", "cond-between")
    proposal = None
    if needs_proposal:
        proposal = mean_field_fit(model, seed=_derived_seed(ns.seed, 1))
    if ns.what == "logz-is":
        est = importance_log_partition(model, proposal, ns.samples, seed=ns.seed)
    elif ns.what == "elbo":
        est = elbo(model, proposal, mc_samples=ns.samples, seed=ns.seed)
    elif ns.what == "card-marginal":
        est = rb_marginal_cardinality(model, ns.k, n_samples=ns.samples, seed=ns.seed)
    elif ns.what == "between-marginal":
        est = rb_marginal_between(
            model, _parse_items(ns.a_in), _parse_items(ns.a_out), proposal,
            n_samples=ns.samples, seed=ns.seed,
        )
    elif ns.what == "cond-card":
        est = conditional_prob_given_cardinality(
            model, _parse_items(ns.subset), n_samples=ns.samples, seed=ns.seed
        )
    else:
        est = conditional_prob_between(
            model, _parse_items(ns.subset), _parse_items(ns.a_in), _parse_items(ns.a_out),
            proposal, n_samples=ns.samples, seed=ns.seed,
        )
    _write_csv(
        ns.out, argv, ns.seed,
        ["what", "seed", "value", "std_error", "n_samples", "k", "subset", "a_in", "a_out"],
        [(ns.what, ns.seed, est.value, est.std_error, est.n_samples,
          ns.k, ns.subset.replace(",", " "), ns.a_in.replace(",", " "), ns.a_out.replace(",", " "))],
    )
    print(f"{ns.what}: value={est.value!r} std_error={est.std_error!r} n={est.n_samples}")
    return 0


def cmd_sample(ns, parser, argv) -> int:
    model = _model_from_flags(ns, parser)
    init = _parse_items(ns.init)
    chain = run_chain(
        model, init=init, sweeps=ns.sweeps, burn_in=ns.burn_in, thin=ns.thin, seed=ns.seed
    )
    save_chain(chain, ns.out, seed=ns.seed, burn_in=ns.burn_in, thin=ns.thin)
    freqs = inclusion_frequencies(chain, model.n)
    flip_rate = chain.accepted / max(1, chain.proposed)
    print(f"kept {len(chain.states)} states, flip rate {flip_rate:.3f}")
    print("inclusion frequencies:", " ".join(f"{f:.3f}" for f in freqs))
    return 0


def cmd_mode(ns, parser, argv) -> int:
    model = _model_from_flags(ns, parser)
    if ns.method == "exhaustive":
        res = exhaustive_mode(model)
    elif ns.method == "greedy":
        res = greedy_mode(model)
    elif ns.method == "double-greedy":
        res = double_greedy(model, randomized=False)
    elif ns.method == "double-greedy-random":
        res = double_greedy(model, randomized=True, seed=ns.seed)
    else:
        if ns.k is None:
            parser.error("random-greedy needs --k")
        res = random_greedy_cardinality(model, ns.k, seed=ns.seed)
    items = " ".join(str(i) for i in res.subset.items)
    _write_csv(ns.out, argv, ns.seed, ["method", "seed", "objective", "items"],
               [(res.method, ns.seed, res.objective, items)])
    print(f"{res.method}: objective={res.objective!r} items=[{items}]")
    return 0


def cmd_synth(ns, parser, argv) -> int:
    kernel = random_wishart_kernel(ns.n, ns.kernel_seed)
    model = Dkpp(kernel, _phi_from_flags(ns))
    baskets = exact_sample(model, ns.m, ns.seed)
    save_baskets(BasketDataset(ns.n, tuple(baskets)), ns.out)
    if ns.save_kernel:
        save_kernel(kernel, ns.save_kernel)
    print(f"wrote {ns.m} baskets over {ns.n} items to {ns.out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dkpp",
        description="Subset distributions P(A) ~ exp tr phi(L[A]): "
        "exact oracles, inference, sampling, mode search, and learning.",
    )
    parser.add_argument("--version", action="version", version=f"dkpp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dependence-sweep",
                       help="scattered vs gathered conditional probabilities across lambda")
    p.add_argument("--grid-side", type=int, default=10)
    p.add_argument("--bandwidth", type=float, default=1.0)
    p.add_argument("--k", type=int, default=9)
    p.add_argument("--lambdas", type=_parse_lambdas, default="0,0.25,0.5,0.75,1,1.25,1.5,1.75,2")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seeds", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dependence_sweep)

    p = sub.add_parser("z-comparison",
                       help="exact log Z vs mean-field ELBO vs importance sampling")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--lambdas", type=_parse_lambdas, default="0,0.25,0.5,0.75,1,1.25,1.5,1.75,2")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seeds", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_z_comparison)

    p = sub.add_parser("z-variance-ablation",
                       help="importance sampling variance with vs without the mean-field proposal")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--lambdas", type=_parse_lambdas, default="0,0.5,1,1.5,2")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seeds", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_z_variance_ablation)

    p = sub.add_parser("learn", help="ratio-matching SGD on a basket file")
    p.add_argument("--data", required=True)
    _add_phi_flags(p)
    p.add_argument("--rank", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--batch", type=int, default=100)
    p.add_argument("--eval-every", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="trace CSV path")
    p.add_argument("--model-out", help="factor file path (default: out with .model.txt)")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("exact", help="enumerate all subset probabilities")
    _add_model_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_exact)

    p = sub.add_parser("estimate", help="run one estimator")
    _add_model_flags(p)
    p.add_argument("--what", required=True,
                   choices=["logz-is", "elbo", "card-marginal", "between-marginal",
                            "cond-card", "cond-between"])
    p.add_argument("--k", type=int, default=0)
    p.add_argument("--subset", default="", help="subset as comma-separated items")
    p.add_argument("--a-in", default="", help="lower interval bound")
    p.add_argument("--a-out", default="", help="upper interval bound")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("sample", help="run the heat-bath chain")
    _add_model_flags(p)
    p.add_argument("--sweeps", type=int, default=1000)
    p.add_argument("--burn-in", type=int, default=100)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--init", default="", help="initial subset (default empty)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("mode", help="mode search")
    _add_model_flags(p)
    p.add_argument("--method", required=True,
                   choices=["exhaustive", "greedy", "double-greedy",
                            "double-greedy-random", "random-greedy"])
    p.add_argument("--k", type=int, help="cardinality for random-greedy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mode)

    p = sub.add_parser("synth", help="generate a synthetic basket file by exact sampling")
    p.add_argument("--n", type=int, default=8)
    _add_phi_flags(p)
    p.add_argument("--m", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kernel-seed", type=int, default=0)
    p.add_argument("--save-kernel", help="also write the ground-truth kernel here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = _build_parser()
    ns = parser.parse_args(argv)
    try:
        return ns.func(ns, parser, argv)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (EigensolverError, np.linalg.LinAlgError, FloatingPointError, OverflowError,
            RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return NUMERICAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
