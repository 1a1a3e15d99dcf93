"""Command-line front end: ``optrank {rank,predict,train,sweep,report}``.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, OptRankError
from .harness import bundled_spec_path, detect_transitions, load_spec, persist, run_sweep
from .model_zoo import (
    ModelFamily,
    deep_diagonal,
    linear3,
    matrix_factorization,
    reparam_linear4,
    two_layer_cnn,
    two_layer_fc,
)
from .rank import (
    DEFAULT_REL_TOL,
    RankGapWarning,
    closed_form_optimistic,
    generic_max_rank,
    max_rank,
    optimistic_size,
    rank_at_point,
)
from .report import make_report
from .targets import TargetSpec, get_target
from .trainer import TEST, TrainConfig, gd_fit, lr_search, sample_dataset

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3

FAMILIES = ("linear3", "reparam4", "deepdiag", "mf", "fc", "cnn", "cnn-ns", "cnn2d", "cnn2d-ns")

# Families larger than this get the closed-form maximum rank instead of an SVD.
NUMERIC_MAX_RANK_PARAMS = 1500


class UsageError(ConfigError):
    pass


def build_family(args, width: int | None = None) -> ModelFamily:
    """Model family from the shared flags; ``width`` fills in a missing --m."""
    name = args.family
    m = args.m if args.m is not None else width
    if name == "linear3":
        return linear3()
    if name == "reparam4":
        return reparam_linear4()
    if name == "deepdiag":
        return deep_diagonal(_need(args.d, "--d"), args.L, squares=args.squares)
    if name == "mf":
        return matrix_factorization(_need(args.d, "--d"))
    if name == "fc":
        return two_layer_fc(_need(args.d, "--d"), _need(m, "--m"), bias=args.bias)
    conv_dims = 2 if name.startswith("cnn2d") else 1
    return two_layer_cnn(_need(args.d, "--d"), _need(m, "--m"), _need(args.s, "--s"),
                         conv_dims=conv_dims, bias=args.bias, share=not name.endswith("-ns"))


def _need(value, flag):
    if value is None:
        raise UsageError(f"{flag} is required for this family")
    return value


def _add_family_flags(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--family", choices=FAMILIES, required=required)
    p.add_argument("--d", type=int, help="input dimension (side length for 2-D CNNs, matrix size for mf)")
    p.add_argument("--m", type=int, help="hidden width (fc) or kernel count (cnn)")
    p.add_argument("--s", type=int, help="kernel side length")
    p.add_argument("--L", type=int, default=2, help="depth of deepdiag")
    p.add_argument("--squares", action="store_true", help="deepdiag as a*a - b*b")
    p.add_argument("--bias", action="store_true", help="networks with a hidden bias")


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2))


def _read_target(ref: str) -> TargetSpec:
    path = Path(ref)
    if path.suffix in (".json", ".spec", ".target") or path.is_file():
        try:
            return get_target(json.loads(path.read_text()))
        except OSError as exc:
            raise UsageError(f"cannot read target file {ref}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"target file {ref} is not valid JSON: {exc}") from exc
    return get_target(ref)


# --- commands ----------------------------------------------------------------


def cmd_rank(args) -> int:
    family = build_family(args)
    if args.theta_file:
        try:
            text = Path(args.theta_file).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read {args.theta_file}: {exc}") from exc
        try:
            data = json.loads(text)
            theta = np.asarray(data["theta"] if isinstance(data, dict) else data, dtype=float)
        except (json.JSONDecodeError, KeyError):
            theta = np.array(text.split(), dtype=float)
    else:
        theta = np.random.default_rng(args.seed).standard_normal(family.n_params)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RankGapWarning)
        report = rank_at_point(family, theta, args.tol, args.probes, args.seed)
    out = {"family": family.to_dict(), "n_params": family.n_params, **report.to_dict()}
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    _print_json(out)
    return EXIT_OK


def cmd_predict(args) -> int:
    given = [v is not None for v in (args.target, args.rank, args.k, args.sparsity)]
    if sum(given) != 1:
        raise UsageError("give exactly one of --target, --rank, --k, --sparsity")
    if args.target is not None:
        t = _read_target(args.target)
        family = build_family(args, width=t.descriptors.get("intrinsic_kernels", t.descriptors.get("intrinsic_width")))
        if family.bias:
            raise UsageError("closed forms cover bias-free networks; drop --bias")
        optimistic = closed_form_optimistic(family, t)
        complexity = None
    else:
        complexity = next(v for v in (args.rank, args.k, args.sparsity) if v is not None)
        family = build_family(args, width=max(complexity, 1))
        optimistic = optimistic_size(family, complexity)
    if family.n_params <= NUMERIC_MAX_RANK_PARAMS:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RankGapWarning)
            m_i, method = max_rank(family, args.tol, args.seed).value, "numerical"
    else:
        m_i, method = generic_max_rank(family), "closed_form"
    out = {"family": family.to_dict(), "optimistic_n": optimistic, "max_rank": m_i,
           "max_rank_method": method, "n_params": family.n_params}
    if complexity is not None:
        out["complexity"] = complexity
    _print_json(out)
    return EXIT_OK


def cmd_train(args) -> int:
    t = _read_target(args.target)
    family = build_family(args)
    cfg = TrainConfig(init_std=args.init_std, learning_rate=args.lr, stop_train_mse=args.stop,
                      max_iters=args.max_iters, seed=args.seed, warmup_iters=args.warmup,
                      trace_every=args.trace_every if args.trace else 0)
    train = sample_dataset(t, args.n, seed=args.seed)
    test = sample_dataset(t, args.test_size, seed=args.seed + 1, split=TEST)
    if args.lr_grid:
        res = lr_search(family, train, test, cfg, args.lr_grid)
    else:
        res = gd_fit(family, train, test, cfg)
    if args.trace:
        res.write_trace(args.trace)
    out = res.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(out, indent=2) + "\n")
    out.pop("theta")
    _print_json(out)
    return EXIT_OK


def _resolve_spec_path(ref: str) -> Path:
    path = Path(ref)
    if path.is_file():
        return path
    return bundled_spec_path(ref)


def cmd_sweep(args) -> int:
    spec = load_spec(_resolve_spec_path(args.spec))
    env_seed = os.environ.get("OPTRANK_SEED")
    if env_seed:
        try:
            spec = replace(spec, seed=int(env_seed))
        except ValueError as exc:
            raise UsageError(f"OPTRANK_SEED must be an integer, got {env_seed!r}") from exc

    def progress(done, total):
        if args.verbose:
            print(f"\r{done}/{total} cells", end="" if done < total else "\n", file=sys.stderr, flush=True)

    grid = run_sweep(spec, workers=args.workers, progress=progress)
    report = detect_transitions(grid)
    persist(grid, args.out, report)
    print(report.table())
    return EXIT_OK


def cmd_report(args) -> int:
    for path in make_report(args.run, args.format, args.out):
        print(path)
    return EXIT_OK


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="optrank", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rank", help="numerical model rank at a parameter point")
    _add_family_flags(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--theta-file", help="JSON list, {\"theta\": [...]} or whitespace-separated values")
    src.add_argument("--random-point", action="store_true", help="standard-normal parameter point")
    p.add_argument("--tol", type=float, default=DEFAULT_REL_TOL, help="relative singular-value cutoff")
    p.add_argument("--probes", type=int, help="probe count (default max(4M, 64))")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("predict", help="optimistic sample size and maximum model rank")
    _add_family_flags(p)
    p.add_argument("--target", help="target id, linear expression or target JSON file")
    p.add_argument("--rank", type=int, help="matrix rank (mf)")
    p.add_argument("--k", type=int, help="intrinsic width (fc), kernel count (cnn) or x2 flag (reparam4)")
    p.add_argument("--sparsity", type=int, help="nonzero coefficients (deepdiag)")
    p.add_argument("--tol", type=float, default=DEFAULT_REL_TOL)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("train", help="fit one sampled training set by full-batch gradient descent")
    _add_family_flags(p)
    p.add_argument("--target", required=True)
    p.add_argument("--n", type=int, required=True, help="training-set size")
    p.add_argument("--test-size", type=int, default=1000)
    p.add_argument("--init-std", type=float, default=1e-4)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--lr-grid", type=float, nargs="+", help="search these learning rates")
    p.add_argument("--stop", type=float, default=1e-9, help="stop once train MSE is at most this")
    p.add_argument("--max-iters", type=int, default=2_000_000)
    p.add_argument("--warmup", type=int, default=0, help="linear learning-rate warmup iterations")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", help="write (iter, train_mse) CSV here")
    p.add_argument("--trace-every", type=int, default=100)
    p.add_argument("--out", help="write the full result (including theta) as JSON")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="run a sweep spec and write a run directory")
    p.add_argument("--spec", required=True, help="spec file or bundled name (fig1a, fig1b, fig2, fig3a, fig3b, "
                                                "fig4fc, fig4cnn)")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--verbose", "-v", action="store_true", help="progress on stderr")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="heatmap and summary of a run directory")
    p.add_argument("--run", required=True)
    p.add_argument("--format", choices=("svg", "csv"), default="svg")
    p.add_argument("--out", help="output directory (default: the run directory)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except (OptRankError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
