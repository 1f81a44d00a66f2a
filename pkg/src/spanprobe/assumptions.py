"""Empirical checkers for the operating assumptions behind span recovery.

Users run these to certify a network (or weight distribution) before
trusting the recovery guarantees: orthant probabilities of the inner
matrix, non-degeneracy of the downstream weights, reachability of the
threshold, and a gradient floor at the decision boundary.  All pass/fail
verdicts are functions of 95% Wilson interval endpoints, never of point
estimates alone.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import network as net_mod
from .linalg import as_matrix, project
from .network import Activation, HeadKind, analytic_gradient, with_linear_head
from .recovery import InternalInconsistencyError

Z_95 = 1.959963984540054
EXHAUSTIVE_MAX_K = 15
ENTRY_TOL = 1e-12


@dataclass(frozen=True)
class AssumptionReport:
    assumption_id: str
    passed: bool
    estimate: float
    confidence_interval: tuple
    samples_used: int
    details: dict

    def __post_init__(self):
        lo, hi = self.confidence_interval
        if not lo <= self.estimate <= hi:
            raise ValueError("estimate must lie inside its confidence interval")
        if self.samples_used <= 0:
            raise ValueError("samples_used must be positive")

    def to_dict(self):
        return {
            "assumption_id": self.assumption_id,
            "passed": self.passed,
            "estimate": self.estimate,
            "confidence_interval": list(self.confidence_interval),
            "samples_used": self.samples_used,
            "details": self.details,
        }


def wilson_interval(successes, trials, z=Z_95):
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    p = successes / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def _pattern_counts(a, samples, rng, chunk=20000):
    """Counts of post-ReLU sign patterns of a @ g over Gaussian g."""
    k, n = a.shape
    weights = 1 << np.arange(k, dtype=np.int64)
    counts = np.zeros(2**k, dtype=np.int64)
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        g = rng.standard_normal((m, n))
        ids = ((g @ a.T) > 0).astype(np.int64) @ weights
        counts += np.bincount(ids, minlength=2**k)
        done += m
    return counts


def check_orthant_probabilities(a, gamma, samples, seed=0, sampled=False):
    """Do all sign patterns of phi(A g) occur often enough?

    Exhaustive mode (k <= 15) tabulates all 2^k patterns and passes iff
    every pattern's Wilson lower bound exceeds gamma / 2^k.  Sampled mode
    is a heuristic for larger k: it reports the minimum frequency among
    patterns that appeared and how many patterns were never seen, and can
    only certify observed patterns.
    """
    a = as_matrix(a, "a")
    k = a.shape[0]
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")
    if samples < 1:
        raise ValueError("samples must be positive")
    rng = np.random.default_rng(seed)
    floor = gamma / 2.0**k

    if not sampled:
        if k > EXHAUSTIVE_MAX_K:
            raise ValueError(
                f"k={k} exceeds the exhaustive cap {EXHAUSTIVE_MAX_K}; "
                "pass sampled=True for the heuristic mode"
            )
        counts = _pattern_counts(a, samples, rng)
        lows = np.array([wilson_interval(int(c), samples)[0] for c in counts])
        passed = bool(np.all(lows > floor))
        worst = int(np.argmin(counts))
        ci = wilson_interval(int(counts[worst]), samples)
        return AssumptionReport(
            assumption_id="orthant-probabilities",
            passed=passed,
            estimate=counts[worst] / samples,
            confidence_interval=ci,
            samples_used=samples,
            details={
                "mode": "exhaustive",
                "k": k,
                "required_floor": floor,
                "worst_pattern": worst,
                "patterns_below_floor": int(np.sum(lows <= floor)),
                "counts_sum": int(counts.sum()),
            },
        )

    # heuristic sampled mode: pack patterns into rows and count unique ones
    chunk, done = 20000, 0
    seen = {}
    while done < samples:
        m = min(chunk, samples - done)
        g = rng.standard_normal((m, a.shape[1]))
        bits = np.packbits(((g @ a.T) > 0), axis=1)
        uniq, cnt = np.unique(bits, axis=0, return_counts=True)
        for row, c in zip(uniq, cnt):
            seen[row.tobytes()] = seen.get(row.tobytes(), 0) + int(c)
        done += m
    min_count = min(seen.values())
    unobserved = 2**k - len(seen)
    ci = wilson_interval(min_count, samples)
    passed = unobserved == 0 and ci[0] > floor
    return AssumptionReport(
        assumption_id="orthant-probabilities",
        passed=passed,
        estimate=min_count / samples,
        confidence_interval=ci,
        samples_used=samples,
        details={
            "mode": "sampled-heuristic",
            "note": "sampling cannot certify patterns that never appeared",
            "k": k,
            "required_floor": floor,
            "observed_patterns": len(seen),
            "unobserved_patterns": unobserved,
        },
    )


def _random_nonempty_subset(size, rng):
    while True:
        mask = rng.integers(0, 2, size=size).astype(bool)
        if mask.any():
            return mask


def check_nondegeneracy(net, gamma, samples=2000, subset_trials=200, seed=0):
    """Non-degeneracy of the weights above the inner matrix.

    Part one: for random non-empty row subsets of each hidden matrix, the
    masked product with the output vector must be entry-wise nonzero (a
    1e-12 cutoff stands in for exact zero).  Part two: the Monte-Carlo
    estimate of Pr[M(g) = 0] must have Wilson upper bound at most gamma/8.
    """
    if net.head.kind is not HeadKind.LINEAR:
        raise ValueError("non-degeneracy check expects a linear head")
    if any(layer.activation is not Activation.RELU for layer in net.layers):
        raise ValueError("non-degeneracy check expects a pure ReLU network")
    rng = np.random.default_rng(seed)
    sub_rng, mc_rng = rng.spawn(2)

    hidden = [layer.weight for layer in net.layers[1:]]
    w = net.head.weight[0]
    min_entry = math.inf
    zero_hits = 0
    for _ in range(subset_trials):
        vec = w.copy()
        for weight in reversed(hidden):
            mask = _random_nonempty_subset(weight.shape[0], sub_rng)
            vec = (vec * mask) @ weight
        smallest = float(np.min(np.abs(vec)))
        min_entry = min(min_entry, smallest)
        if smallest <= ENTRY_TOL:
            zero_hits += 1
    products_ok = zero_hits == 0

    X = mc_rng.standard_normal((samples, net.input_dim))
    _, _, logits = net_mod._batch_forward(net, X)
    zeros = int(np.sum(logits[:, 0] == 0.0))
    lo, hi = wilson_interval(zeros, samples)
    zero_prob_ok = hi <= gamma / 8.0

    return AssumptionReport(
        assumption_id="nondegeneracy",
        passed=products_ok and zero_prob_ok,
        estimate=zeros / samples,
        confidence_interval=(lo, hi),
        samples_used=samples,
        details={
            "masked_products_nonzero": products_ok,
            "masked_product_zero_hits": zero_hits,
            "min_product_entry": min_entry,
            "subset_trials": subset_trials,
            "zero_output_bound": gamma / 8.0,
            "zero_output_upper": hi,
        },
    )


def probe_threshold_reachability(oracle, v, samples=500, seed=0):
    """How often does the masked thresholded output fire on Gaussian input?

    Blackbox probe: queries M((I - P_V) g) for `samples` Gaussians and
    reports the firing frequency with its Wilson interval; passes iff the
    lower bound is positive.
    """
    if samples < 1:
        raise ValueError("samples must be positive")
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(samples):
        g = rng.standard_normal(v.ambient_dim)
        if oracle.query(g - project(v, g)) == 1.0:
            hits += 1
    lo, hi = wilson_interval(hits, samples)
    return AssumptionReport(
        assumption_id="threshold-reachability",
        passed=lo > 0.0,
        estimate=hits / samples,
        confidence_interval=(lo, hi),
        samples_used=samples,
        details={"hits": hits},
    )


def _crossings(sigma_batch, y, grid):
    """Bracket indices where sigma(c * y) - 1 changes sign on the grid."""
    vals = sigma_batch(np.outer(grid, y)) - 1.0
    idx = np.nonzero(np.diff(np.sign(vals)) != 0)[0]
    return [(grid[i], grid[i + 1]) for i in idx]


def probe_boundary_gradient(net, v, eta, samples=200, seed=0, grid_points=256):
    """Gradient floor at decision-boundary crossings (whitebox probe).

    Needs ground truth: for sampled rays with masked pre-threshold value at
    least 1, locates every crossing of the threshold level on (0, 1] by a
    fine scan plus bisection and evaluates the analytic derivative along
    the ray there.  Reports the fraction of rays whose crossings all have
    derivative magnitude at least eta.
    """
    if net.head.kind is not HeadKind.THRESHOLD:
        raise ValueError("boundary-gradient probe expects a thresholded head")
    sigma_net = with_linear_head(net)
    rng = np.random.default_rng(seed)

    def sigma_batch(X):
        _, _, logits = net_mod._batch_forward(sigma_net, X)
        return logits[:, 0]

    grid = np.linspace(0.0, 1.0, grid_points)
    good = 0
    reached = 0
    for _ in range(samples):
        g = rng.standard_normal(v.ambient_dim)
        y = g - project(v, g)
        if sigma_batch(y[None, :])[0] < 1.0:
            continue
        reached += 1
        brackets = _crossings(sigma_batch, y, grid)
        if not brackets:
            raise InternalInconsistencyError(
                "pre-threshold value reaches 1 along the ray but no crossing found"
            )
        ok = True
        for lo, hi in brackets:
            f_lo = sigma_batch((lo * y)[None, :])[0] - 1.0
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                f_mid = sigma_batch((mid * y)[None, :])[0] - 1.0
                if (f_mid > 0) == (f_lo > 0):
                    lo, f_lo = mid, f_mid
                else:
                    hi = mid
            cstar = 0.5 * (lo + hi)
            try:
                grad = analytic_gradient(sigma_net, cstar * y)
            except net_mod.BoundaryPointError:
                grad = analytic_gradient(sigma_net, cstar * (1.0 - 1e-9) * y)
            if abs(float(grad @ y)) < eta:
                ok = False
                break
        if ok:
            good += 1
    lo_ci, hi_ci = wilson_interval(good, samples)
    return AssumptionReport(
        assumption_id="boundary-gradient-floor",
        passed=lo_ci > 0.0,
        estimate=good / samples,
        confidence_interval=(lo_ci, hi_ci),
        samples_used=samples,
        details={"eta": eta, "rays_reaching_threshold": reached, "rays_passing": good},
    )
