import os
import subprocess
import sys

import numpy as np
import pytest

import spanprobe as sp

SCRIPTS = os.path.join(os.path.dirname(__file__), "..", "scripts")


def guaranteed_tanh_net(n, k, seed, base=3.0):
    """Thresholded tanh net whose decision boundary is reachable along every
    direction of the inner row space.

    A has orthonormal rows; the output weights are +-base * 2^i (signed and
    permuted at random), so any nonempty signed subset sum has magnitude at
    least base and the saturated pre-threshold value clears 1 along every
    residual ray.
    """
    rng = np.random.default_rng(seed)
    a = np.linalg.qr(rng.standard_normal((k, n)).T)[0][:, :k].T
    w = rng.permutation(base * 2.0 ** np.arange(k) * rng.choice([-1.0, 1.0], k))
    net = sp.Network(
        n,
        (sp.Layer(a, sp.Activation.TANH),),
        sp.OutputHead(sp.HeadKind.THRESHOLD, w[None, :]),
        seed=seed,
    )
    return net, a


@pytest.fixture(scope="session")
def digit_files(tmp_path_factory):
    """Small IDX digit corpus shared by the I/O-level tests."""
    out = tmp_path_factory.mktemp("digits")
    subprocess.run(
        [sys.executable, os.path.join(SCRIPTS, "make_digits.py"),
         "--out-dir", str(out), "--train-count", "600", "--test-count", "150",
         "--seed", "11"],
        check=True,
        capture_output=True,
    )
    return {
        "train_images": out / "train-images-idx3-ubyte",
        "train_labels": out / "train-labels-idx1-ubyte",
        "test_images": out / "test-images-idx3-ubyte",
        "test_labels": out / "test-labels-idx1-ubyte",
    }
