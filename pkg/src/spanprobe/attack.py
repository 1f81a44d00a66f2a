"""Null-space obfuscation attack and the IDX image format it demos on.

Noise drawn in the (approximate) kernel of the inner weight matrix leaves
the matrix-vector product, and hence the whole network output, unchanged
while making the input unrecognizable.  The preservation guarantee is
algebraic for the exact kernel and degrades gracefully for kernels derived
from partial recoveries, which run_attack reports honestly.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from .linalg import Subspace, as_vector, project
from .network import HeadKind, evaluate

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class NoKernelError(ValueError):
    """The supplied kernel subspace has dimension zero."""


class IdxFormatError(ValueError):
    """An IDX file failed to parse; the message carries the byte offset or
    the offending magic value."""


@dataclass(frozen=True)
class AttackResult:
    original: np.ndarray
    obfuscated: np.ndarray
    noise_norm: float
    output_before: object
    output_after: object
    output_preserved: bool

    def to_dict(self, with_vectors=False):
        d = {
            "noise_norm": self.noise_norm,
            "output_before": self.output_before,
            "output_after": self.output_after,
            "output_preserved": self.output_preserved,
        }
        if with_vectors:
            d["original"] = self.original.tolist()
            d["obfuscated"] = self.obfuscated.tolist()
        return d


@dataclass(frozen=True)
class ImageDataset:
    count: int
    rows: int
    cols: int
    pixels: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        if self.pixels.shape != (self.count, self.rows, self.cols):
            raise ValueError(
                f"pixels shape {self.pixels.shape} != ({self.count}, {self.rows}, {self.cols})"
            )
        if self.labels is not None and self.labels.shape != (self.count,):
            raise ValueError(
                f"{self.labels.shape[0]} labels paired with {self.count} images"
            )

    def with_labels(self, labels):
        labels = np.asarray(labels)
        return ImageDataset(self.count, self.rows, self.cols, self.pixels, labels)

    def flat(self):
        """Images as (count, rows * cols) float rows."""
        return self.pixels.reshape(self.count, self.rows * self.cols)


def obfuscate(x, kernel, scale, seed=0):
    """Add kernel-space Gaussian noise of norm scale * ||x|| to x.

    Deterministic under the seed.  The noise is the kernel projection of a
    fresh Gaussian, rescaled; with scale 0 the input comes back unchanged.
    """
    x = as_vector(x, dim=kernel.ambient_dim, name="x")
    if kernel.dim < 1:
        raise NoKernelError("kernel subspace has dimension 0")
    rng = np.random.default_rng(seed)
    z = project(kernel, rng.standard_normal(kernel.ambient_dim))
    norm = np.linalg.norm(z)
    if norm == 0.0:
        raise RuntimeError("degenerate noise draw (projection vanished)")
    z *= scale * np.linalg.norm(x) / norm
    return x + z


def _head_output(net, x):
    out = evaluate(net, x)
    if net.head.kind is HeadKind.SOFTMAX:
        label = int(np.argmax(out))
        return {"label": label, "probability": float(out[label])}
    return float(out)


def _preserved(net, before, after):
    if net.head.kind is HeadKind.SOFTMAX:
        return before["label"] == after["label"]
    return abs(after - before) <= 1e-6 * abs(before) + 1e-9


def run_attack(net, kernel, inputs, scale, seed=0, clamp=False):
    """Obfuscate each input and compare outputs before and after.

    Classifier heads compare argmax labels (softmax probability of the
    predicted label is recorded alongside); scalar heads compare values at
    relative tolerance 1e-6.  ``clamp`` clips obfuscated coordinates to
    [0, 1] before evaluation; clamping leaves the kernel, so any resulting
    preservation loss is measured and reported, not hidden.
    """
    if kernel.ambient_dim != net.input_dim:
        raise ValueError("kernel ambient dimension does not match the network input")
    seeds = np.random.SeedSequence(seed).spawn(len(inputs))
    results = []
    for x, child in zip(inputs, seeds):
        x = as_vector(x, dim=net.input_dim, name="input")
        noisy = obfuscate(x, kernel, scale, seed=child)
        if clamp:
            noisy = np.clip(noisy, 0.0, 1.0)
        before = _head_output(net, x)
        after = _head_output(net, noisy)
        results.append(
            AttackResult(
                original=x,
                obfuscated=noisy,
                noise_norm=float(np.linalg.norm(noisy - x)),
                output_before=before,
                output_after=after,
                output_preserved=_preserved(net, before, after),
            )
        )
    return results


def results_to_json(results, with_vectors=False):
    payload = {
        "count": len(results),
        "preserved": sum(1 for r in results if r.output_preserved),
        "results": [r.to_dict(with_vectors=with_vectors) for r in results],
    }
    return json.dumps(payload, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# IDX binary format
# ---------------------------------------------------------------------------


def _read_exact(data, offset, count, what):
    if len(data) < offset + count:
        raise IdxFormatError(
            f"truncated file: {what} needs {count} bytes at byte offset {offset}, "
            f"file has {len(data) - offset} left"
        )
    return data[offset : offset + count], offset + count


def _read_header(data, expected_magic, ndims, what):
    raw, offset = _read_exact(data, 0, 4, "magic number")
    (magic,) = struct.unpack(">I", raw)
    if magic != expected_magic:
        raise IdxFormatError(
            f"bad magic for {what}: expected 0x{expected_magic:08x}, found 0x{magic:08x}"
        )
    dims = []
    for _ in range(ndims):
        raw, offset = _read_exact(data, offset, 4, "dimension size")
        dims.append(struct.unpack(">I", raw)[0])
    return dims, offset


def load_idx_images(path):
    """Parse an IDX image tensor file into an ImageDataset (pixels in [0,1])."""
    with open(path, "rb") as f:
        data = f.read()
    (count, rows, cols), offset = _read_header(data, IMAGE_MAGIC, 3, "image file")
    payload, _ = _read_exact(data, offset, count * rows * cols, "pixel payload")
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    return ImageDataset(count, rows, cols, pixels.reshape(count, rows, cols))


def load_idx_labels(path):
    """Parse an IDX label vector file into a uint8 array."""
    with open(path, "rb") as f:
        data = f.read()
    (count,), offset = _read_header(data, LABEL_MAGIC, 1, "label file")
    payload, _ = _read_exact(data, offset, count, "label payload")
    return np.frombuffer(payload, dtype=np.uint8).copy()


def write_idx_images(path, pixels):
    """Write a (count, rows, cols) array of [0,1] floats as an IDX file."""
    pixels = np.asarray(pixels)
    count, rows, cols = pixels.shape
    raw = np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, count, rows, cols))
        f.write(raw.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def write_pgm(path, image):
    """Dump one 2-D image as binary PGM (P5, maxval 255).

    Pixels are clamped to [0, 1] for rendering only; the caller's data is
    untouched.
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError("PGM dump expects a single 2-D image")
    raw = np.clip(np.rint(np.clip(image, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (image.shape[1], image.shape[0]))
        f.write(raw.tobytes())
