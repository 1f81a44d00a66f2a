"""Command-line front-end: reproducible experiments over the library.

Subcommands: gen-net, train, check, recover, curve, attack.  Every run
writes exactly one manifest (<output>.manifest.json) recording the full
configuration, seed, toolkit version, wall time and oracle query count;
rerunning a command with the flags from its manifest reproduces the primary
outputs byte for byte.

Exit codes: 0 success, 2 usage or configuration error, 3 assumption or
recovery failure, 4 I/O or file-format error.  Flags beat environment
variables (prefix SPANPROBE_), which beat built-in defaults.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .assumptions import (
    check_nondegeneracy,
    check_orthant_probabilities,
    probe_boundary_gradient,
    probe_threshold_reachability,
)
from .attack import (
    IdxFormatError,
    load_idx_images,
    load_idx_labels,
    results_to_json,
    run_attack,
    write_pgm,
)
from .linalg import Subspace, kernel_basis, max_projection_defect, row_space
from .network import (
    Activation,
    HeadKind,
    WeightFormatError,
    accuracy,
    as_blackbox,
    he_scaled,
    load,
    random_network,
    save,
    train_softmax,
    TrainConfig,
)
from .oracle import QueryBudgetError, QueryOracle
from .recovery import (
    AssumptionViolationError,
    ReluRecoveryConfig,
    ThresholdRecoveryConfig,
    recover_span_relu,
    recover_span_threshold,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_ASSUMPTION = 3
EXIT_IO = 4


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    pass


def _env(name, default, cast):
    raw = os.environ.get(f"SPANPROBE_{name}")
    if raw is None:
        return default
    try:
        return cast(raw)
    except ValueError as e:
        raise UsageError(f"bad SPANPROBE_{name}={raw!r}: {e}") from e


def _write_manifest(out_path, command, args, started, query_count, outputs):
    config = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = {
        "command": command,
        "config": config,
        "seed": config.get("seed"),
        "toolkit_version": __version__,
        "wall_time_s": time.monotonic() - started,
        "query_count": query_count,
        "outputs": outputs,
    }
    path = f"{out_path}.manifest.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=str)
        f.write("\n")


def _parse_widths(text):
    try:
        widths = [int(w) for w in text.split(",") if w]
    except ValueError as e:
        raise UsageError(f"bad width list {text!r}") from e
    if not widths or any(w < 1 for w in widths):
        raise UsageError(f"bad width list {text!r}")
    return widths


def _load_net(path):
    try:
        return load(path)
    except FileNotFoundError as e:
        raise UsageError(f"weight file not found: {path}") from e


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_net(args):
    started = time.monotonic()
    if args.k >= args.n:
        raise UsageError("k must be < n")
    widths = _parse_widths(args.widths)
    net = random_network(
        args.n,
        args.k,
        widths,
        activation=Activation(args.activation),
        head=HeadKind(args.head),
        seed=args.seed,
        classes=args.classes,
    )
    save(net, args.out)
    _write_manifest(args.out, "gen-net", args, started, 0, [args.out])
    print(f"wrote {args.out}: inner matrix {args.k}x{args.n}, widths {widths}, "
          f"{args.activation}/{args.head}")
    return EXIT_OK


def cmd_train(args):
    started = time.monotonic()
    net = _load_net(args.net)
    if net.head.kind is not HeadKind.SOFTMAX:
        raise UsageError("train needs a softmax-head network")
    images = load_idx_images(args.images)
    labels = load_idx_labels(args.labels)
    data = images.with_labels(labels)
    X, y = data.flat(), data.labels
    if args.limit and args.limit < data.count:
        X, y = X[: args.limit], y[: args.limit]
    if args.he_init:
        net = he_scaled(net)
    cfg = TrainConfig(
        learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs,
        seed=args.seed,
    )
    trained = train_softmax(net, X, y, cfg)
    save(trained, args.out)
    train_acc = accuracy(trained, X, y)
    print(f"train accuracy: {train_acc:.4f} on {len(y)} images")
    if args.test_images and args.test_labels:
        test = load_idx_images(args.test_images).with_labels(load_idx_labels(args.test_labels))
        test_acc = accuracy(trained, test.flat(), test.labels)
        print(f"test accuracy:  {test_acc:.4f} on {test.count} images")
    _write_manifest(args.out, "train", args, started, 0, [args.out])
    return EXIT_OK


def cmd_check(args):
    started = time.monotonic()
    net = _load_net(args.net)
    queries = 0
    if args.assumption == 1:
        report = check_orthant_probabilities(
            net.inner_weights, args.gamma, args.samples, seed=args.seed,
            sampled=args.sampled,
        )
    elif args.assumption == 2:
        report = check_nondegeneracy(
            net, args.gamma, samples=args.samples,
            subset_trials=args.subset_trials, seed=args.seed,
        )
    elif args.assumption == 3:
        if net.head.kind is not HeadKind.THRESHOLD:
            raise UsageError("assumption 3 probes a thresholded network")
        oracle = QueryOracle(as_blackbox(net))
        report = probe_threshold_reachability(
            oracle, Subspace.empty(net.input_dim), samples=args.samples, seed=args.seed,
        )
        queries = oracle.query_count
    else:
        if net.head.kind is not HeadKind.THRESHOLD:
            raise UsageError("assumption 4 probes a thresholded network")
        report = probe_boundary_gradient(
            net, Subspace.empty(net.input_dim), args.eta,
            samples=args.samples, seed=args.seed,
        )
    doc = report.to_dict()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=2, sort_keys=True)
            f.write("\n")
        _write_manifest(args.out, "check", args, started, queries, [args.out])
    print(f"{report.assumption_id}: {'PASS' if report.passed else 'FAIL'} "
          f"(estimate {report.estimate:.6g}, "
          f"CI [{report.confidence_interval[0]:.6g}, {report.confidence_interval[1]:.6g}])")
    if not report.passed:
        raise CheckFailed(report.assumption_id)
    return EXIT_OK


def _relu_cfg(args, k):
    return ReluRecoveryConfig(
        k=k,
        gamma=args.gamma,
        oversample_c=args.oversample_c,
        fd_step=args.fd_step,
        fd_retries=args.fd_retries,
        directions=args.directions,
        samples=args.samples,
        seed=args.seed,
    )


def cmd_recover(args):
    started = time.monotonic()
    net = _load_net(args.net)
    k = args.k if args.k else net.inner_dim
    target = as_blackbox(net)
    oracle = QueryOracle(target, budget=args.budget)

    if args.algo == "relu":
        if net.head.kind is HeadKind.THRESHOLD:
            raise CheckFailed("the non-adaptive route needs a real-valued output; "
                              "this network is thresholded")
        cfg = _relu_cfg(args, k)
        report = recover_span_relu(oracle, net.input_dim, cfg, threads=args.threads)
    else:
        if net.head.kind is not HeadKind.THRESHOLD:
            raise CheckFailed("the adaptive route needs a thresholded network")
        if any(not layer.activation.smooth for layer in net.layers) and not args.force:
            raise CheckFailed(
                "network has non-smooth (ReLU) activations; the adaptive route's "
                "guarantees do not apply (rerun with --force to try anyway)"
            )
        cfg = ThresholdRecoveryConfig(
            k=k,
            eps=args.eps,
            band_lo=args.band_lo,
            band_hi=args.band_hi,
            perturb_scale=args.perturb_scale,
            search_iters=args.search_iters,
            restart_cap=args.restart_cap,
            gamma=args.gamma,
            eta=args.eta,
            seed=args.seed,
        )
        report = recover_span_threshold(oracle, net.input_dim, cfg)

    doc = report.to_dict()
    if args.truth:
        defect = max_projection_defect(report.subspace, row_space(net.inner_weights))
        doc["defect_vs_truth"] = defect
        print(f"projection defect vs ground truth: {defect:.3e}")
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    _write_manifest(args.out, "recover", args, started, oracle.query_count, [args.out])
    print(f"recovered dimension {report.subspace.dim} (target k={k}) "
          f"in {report.queries_used} queries, {report.restarts} restarts")
    if not report.complete:
        print("recovery incomplete (budget or restart cap hit)", file=sys.stderr)
        return EXIT_ASSUMPTION
    return EXIT_OK


def cmd_curve(args):
    started = time.monotonic()
    net = _load_net(args.net)
    if net.head.kind is HeadKind.THRESHOLD:
        raise CheckFailed("rank curves need a real-valued output head")
    k = args.k if args.k else net.inner_dim
    oracle = QueryOracle(as_blackbox(net))
    cfg = _relu_cfg(args, k)
    cfg = ReluRecoveryConfig(
        **{**cfg.__dict__, "samples": args.max_samples, "directions": args.directions}
    )
    report = recover_span_relu(oracle, net.input_dim, cfg, threads=args.threads)
    points = list(range(args.stride, args.max_samples + 1, args.stride))
    if not points or points[-1] != args.max_samples:
        points.append(args.max_samples)
    by_sample = dict(report.rank_trace)
    with open(args.out, "w", encoding="utf-8", newline="\n") as f:
        f.write("samples,rank\n")
        for s in points:
            f.write(f"{s},{by_sample[s]}\n")
    _write_manifest(args.out, "curve", args, started, oracle.query_count, [args.out])
    print(f"wrote {args.out}: rank {by_sample[args.max_samples]} at "
          f"{args.max_samples} samples")
    return EXIT_OK


def _basis_from_report(path):
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    block = doc["basis"]
    basis = np.array(block["weights"], dtype=np.float64).reshape(
        block["rows"], block["cols"]
    )
    return Subspace(block["cols"], basis)


def cmd_attack(args):
    started = time.monotonic()
    net = _load_net(args.net)
    if args.kernel == "truth":
        kern = kernel_basis(net.inner_weights)
    else:
        if not args.report:
            raise UsageError("--kernel report needs --report")
        span = _basis_from_report(args.report)
        if span.dim == 0:
            raise CheckFailed("recovered span is empty; no kernel to attack with")
        kern = kernel_basis(span.basis)

    if args.images:
        data = load_idx_images(args.images)
        if args.labels:
            data = data.with_labels(load_idx_labels(args.labels))
        if data.rows * data.cols != net.input_dim:
            raise UsageError(
                f"images are {data.rows}x{data.cols} but the network expects "
                f"{net.input_dim} inputs"
            )
        inputs = data.flat()[: args.count]
    else:
        rng = np.random.default_rng(args.seed)
        inputs = rng.standard_normal((args.count, net.input_dim))

    results = run_attack(net, kern, inputs, args.scale, seed=args.seed,
                         clamp=args.clamp)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(results_to_json(results))
        f.write("\n")
    outputs = [args.out]
    if args.pgm_dir:
        os.makedirs(args.pgm_dir, exist_ok=True)
        side = int(round(net.input_dim**0.5))
        for i, r in enumerate(results):
            for tag, vec in (("orig", r.original), ("obf", r.obfuscated)):
                p = os.path.join(args.pgm_dir, f"{i:03d}_{tag}.pgm")
                write_pgm(p, vec.reshape(side, side))
                outputs.append(p)
    _write_manifest(args.out, "attack", args, started, 0, outputs)
    kept = sum(1 for r in results if r.output_preserved)
    print(f"output preserved for {kept}/{len(results)} inputs at scale {args.scale}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="spanprobe",
        description="Blackbox span recovery toolkit: generate, check, recover, attack.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=_env("SEED", 0, int))

    g = sub.add_parser("gen-net", help="generate a random network weight file")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--k", type=int, required=True)
    g.add_argument("--widths", required=True, help="comma-separated hidden widths")
    g.add_argument("--activation", choices=[a.value for a in Activation], default="relu")
    g.add_argument("--head", choices=[h.value for h in HeadKind], default="linear")
    g.add_argument("--classes", type=int, default=10)
    common(g)
    g.add_argument("-o", "--out", required=True)
    g.set_defaults(func=cmd_gen_net)

    t = sub.add_parser("train", help="train a softmax classifier head (demo plumbing)")
    t.add_argument("--net", required=True)
    t.add_argument("--images", required=True)
    t.add_argument("--labels", required=True)
    t.add_argument("--test-images")
    t.add_argument("--test-labels")
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--batch-size", type=int, default=64)
    t.add_argument("--epochs", type=int, default=8)
    t.add_argument("--limit", type=int, default=0, help="cap on training images")
    t.add_argument("--he-init", action=argparse.BooleanOptionalAction, default=True)
    common(t)
    t.add_argument("-o", "--out", required=True)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("check", help="run an assumption checker against a weight file")
    c.add_argument("--net", required=True)
    c.add_argument("--assumption", type=int, choices=[1, 2, 3, 4], required=True)
    c.add_argument("--gamma", type=float, default=0.25)
    c.add_argument("--samples", type=int, default=100_000)
    c.add_argument("--subset-trials", type=int, default=200)
    c.add_argument("--eta", type=float, default=1e-6)
    c.add_argument("--sampled", action="store_true",
                   help="heuristic sampled mode for assumption 1 with large k")
    common(c)
    c.add_argument("-o", "--out")
    c.set_defaults(func=cmd_check)

    r = sub.add_parser("recover", help="recover the inner row span through the oracle")
    r.add_argument("--net", required=True)
    r.add_argument("--algo", choices=["relu", "threshold"], required=True)
    r.add_argument("--k", type=int, default=0, help="target rank (default: true k)")
    r.add_argument("--samples", type=int, default=None,
                   help="override the sample count of the non-adaptive route")
    r.add_argument("--gamma", type=float, default=0.25)
    r.add_argument("--oversample-c", type=float, default=4.0)
    r.add_argument("--fd-step", type=float, default=None)
    r.add_argument("--fd-retries", type=int, default=2)
    r.add_argument("--directions", choices=["gaussian", "coordinate"], default="gaussian")
    r.add_argument("--eps", type=float, default=1e-2)
    r.add_argument("--band-lo", type=float, default=1e-7)
    r.add_argument("--band-hi", type=float, default=1e-4)
    r.add_argument("--perturb-scale", type=float, default=1e-2)
    r.add_argument("--search-iters", type=int, default=60)
    r.add_argument("--restart-cap", type=int, default=50)
    r.add_argument("--eta", type=float, default=1e-6)
    r.add_argument("--budget", type=int, default=None)
    r.add_argument("--threads", type=int, default=_env("THREADS", os.cpu_count() or 1, int))
    r.add_argument("--force", action="store_true",
                   help="run the adaptive route on non-smooth activations anyway")
    r.add_argument("--truth", action="store_true",
                   help="report the projection defect against the file's own weights")
    common(r)
    r.add_argument("-o", "--out", required=True)
    r.set_defaults(func=cmd_recover)

    cv = sub.add_parser("curve", help="rank-versus-samples curve as CSV")
    cv.add_argument("--net", required=True)
    cv.add_argument("--k", type=int, default=0)
    cv.add_argument("--max-samples", type=int, required=True)
    cv.add_argument("--stride", type=int, required=True)
    cv.add_argument("--gamma", type=float, default=0.25)
    cv.add_argument("--oversample-c", type=float, default=4.0)
    cv.add_argument("--samples", type=int, default=None, help=argparse.SUPPRESS)
    cv.add_argument("--fd-step", type=float, default=None)
    cv.add_argument("--fd-retries", type=int, default=2)
    cv.add_argument("--directions", choices=["gaussian", "coordinate"],
                    default="coordinate")
    cv.add_argument("--threads", type=int, default=_env("THREADS", os.cpu_count() or 1, int))
    common(cv)
    cv.add_argument("-o", "--out", required=True)
    cv.set_defaults(func=cmd_curve)

    a = sub.add_parser("attack", help="null-space obfuscation attack")
    a.add_argument("--net", required=True)
    a.add_argument("--kernel", choices=["truth", "report"], default="truth")
    a.add_argument("--report", help="recovery report JSON for --kernel report")
    a.add_argument("--images", help="IDX image file to draw inputs from")
    a.add_argument("--labels", help="IDX label file paired with --images")
    a.add_argument("--count", type=int, default=20)
    a.add_argument("--scale", type=float, default=10.0)
    a.add_argument("--clamp", action="store_true",
                   help="clip obfuscated pixels to [0,1] (degrades the guarantee)")
    a.add_argument("--pgm-dir", help="dump original/obfuscated images as PGM")
    common(a)
    a.add_argument("-o", "--out", required=True)
    a.set_defaults(func=cmd_attack)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CheckFailed as e:
        print(f"failed: {e}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except (AssumptionViolationError, QueryBudgetError) as e:
        print(f"failed: {e}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except (WeightFormatError, IdxFormatError, OSError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
