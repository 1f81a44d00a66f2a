#!/usr/bin/env python3
"""End-to-end obfuscation demo on digit images.

Trains a softmax classifier, recovers the span of its inner weight matrix
through the query oracle, takes the orthogonal complement as the noise
space, and dumps original/obfuscated image pairs (PGM) whose predicted
labels agree despite the obfuscated inputs looking like pure noise.

Point --data-dir at IDX files (train-images-idx3-ubyte etc.); if the
directory is missing the stand-in digit corpus is built there first via
make_digits.py.
"""

import argparse
import os
import subprocess
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import numpy as np  # noqa: E402

import spanprobe as sp  # noqa: E402
from spanprobe.network import accuracy, he_scaled  # noqa: E402


def ensure_data(data_dir, seed):
    if os.path.exists(os.path.join(data_dir, "train-images-idx3-ubyte")):
        return
    script = os.path.join(os.path.dirname(__file__), "make_digits.py")
    subprocess.run(
        [sys.executable, script, "--out-dir", data_dir, "--train-count", "10000",
         "--test-count", "2000", "--seed", str(seed)],
        check=True,
    )


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--data-dir", required=True)
    ap.add_argument("--out-dir", required=True)
    ap.add_argument("--epochs", type=int, default=12)
    ap.add_argument("--recovery-samples", type=int, default=200)
    ap.add_argument("--scale", type=float, default=10.0)
    ap.add_argument("--count", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    ensure_data(args.data_dir, args.seed)
    train = sp.load_idx_images(os.path.join(args.data_dir, "train-images-idx3-ubyte"))
    train = train.with_labels(sp.load_idx_labels(os.path.join(args.data_dir, "train-labels-idx1-ubyte")))
    test = sp.load_idx_images(os.path.join(args.data_dir, "test-images-idx3-ubyte"))
    test = test.with_labels(sp.load_idx_labels(os.path.join(args.data_dir, "test-labels-idx1-ubyte")))

    net = he_scaled(sp.random_network(784, 80, [40, 30, 20], head=sp.HeadKind.SOFTMAX,
                                      seed=args.seed, classes=10))
    net = sp.train_softmax(net, train.flat(), train.labels,
                           sp.TrainConfig(0.1, 64, args.epochs, seed=args.seed))
    print(f"test accuracy: {accuracy(net, test.flat(), test.labels):.4f}")

    oracle = sp.QueryOracle(sp.as_blackbox(net))
    cfg = sp.ReluRecoveryConfig(k=80, samples=args.recovery_samples,
                                directions="coordinate", seed=args.seed)
    report = sp.recover_span_relu(oracle, 784, cfg)
    print(f"recovered rank {report.subspace.dim}/80 from {report.queries_used} queries")

    noise_space = sp.kernel_basis(report.subspace.basis)
    results = sp.run_attack(net, noise_space, test.flat()[: args.count],
                            args.scale, seed=args.seed)
    kept = sum(r.output_preserved for r in results)
    print(f"labels preserved: {kept}/{len(results)} at noise scale {args.scale}")

    os.makedirs(args.out_dir, exist_ok=True)
    from spanprobe.attack import write_pgm
    for i, r in enumerate(results):
        write_pgm(os.path.join(args.out_dir, f"{i:03d}_orig.pgm"), r.original.reshape(28, 28))
        write_pgm(os.path.join(args.out_dir, f"{i:03d}_obf.pgm"), r.obfuscated.reshape(28, 28))
    print(f"wrote {2 * len(results)} PGM images to {args.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
