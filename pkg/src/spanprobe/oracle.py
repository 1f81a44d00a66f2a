"""The blackbox boundary: query-counted access to a scalar function, and
gradient computation from queries alone.

Recovery code never touches a network directly; it sees only a QueryOracle.
For piecewise-linear targets the finite-difference gradient is exact inside
a linear region, and a two-step verification detects when the region was
exited so the caller can resample.
"""

import threading
from dataclasses import dataclass

import numpy as np

from .linalg import _min_norm_solve, as_vector

LINEARITY_RTOL = 1e-6


class QueryBudgetError(RuntimeError):
    """The query budget is exhausted; carries the count reached."""

    def __init__(self, count):
        super().__init__(f"query budget exhausted after {count} queries")
        self.count = count


class BoundaryCrossingError(RuntimeError):
    """Directional derivatives kept disagreeing across step sizes: the
    point sits too close to a linear-region boundary.  Callers resample."""


@dataclass(frozen=True)
class GradientSample:
    """One recovered gradient with its query accounting."""

    point: np.ndarray
    gradient: np.ndarray
    queries_spent: int
    linearity_verified: bool


class QueryOracle:
    """Counting wrapper around an opaque function R^n -> R.

    The counter increments by exactly one per target evaluation and is
    safe under concurrent callers.  An optional budget caps total queries.
    """

    def __init__(self, target, budget=None):
        if budget is not None and budget < 1:
            raise ValueError("budget must be positive when given")
        self._target = target
        self._budget = budget
        self._count = 0
        self._lock = threading.Lock()

    @property
    def query_count(self):
        return self._count

    @property
    def budget(self):
        return self._budget

    def query(self, x):
        with self._lock:
            if self._budget is not None and self._count >= self._budget:
                raise QueryBudgetError(self._count)
            self._count += 1
        return float(self._target(x))


def fd_directional(oracle, x, u, step):
    """Forward-difference directional derivative along the unit direction
    of u: (M(x + step * u_hat) - M(x)) / step."""
    x = as_vector(x, name="x")
    u = as_vector(u, dim=x.shape[0], name="u")
    if step <= 0:
        raise ValueError("step must be positive")
    norm = np.linalg.norm(u)
    if norm == 0:
        raise ValueError("direction must be nonzero")
    uhat = u / norm
    return (oracle.query(x + step * uhat) - oracle.query(x)) / step


def default_fd_step(x):
    """Perturbation radius used when none is given: 1e-4 * max(1, ||x||)."""
    return 1e-4 * max(1.0, float(np.linalg.norm(x)))


def fd_gradient(oracle, x, step=None, retries=2, rng=None, directions="gaussian",
                verify=True):
    """Gradient of a piecewise-linear target from function queries only.

    Draws n direction vectors (fresh Gaussians by default, or coordinate
    vectors), measures each forward difference against a shared base value,
    and solves the resulting linear system.  The solved gradient is then
    verified with one more directional derivative, measured at half the
    step along a held-out direction: any probe that silently crossed a
    linear-region boundary leaves the solution inconsistent with the
    held-out measurement.  Relative disagreement above 1e-6 triggers a
    retry of all differences with step / 10, up to ``retries`` times,
    before reporting failure.  Query cost per attempt: n + 2 with
    verification (base value reused across retries), n + 1 without.
    """
    x = as_vector(x, name="x")
    n = x.shape[0]
    if step is None:
        step = default_fd_step(x)
    if step <= 0:
        raise ValueError("step must be positive")
    if directions not in ("gaussian", "coordinate"):
        raise ValueError(f"unknown direction mode {directions!r}")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng

    if directions == "gaussian":
        dirs = rng.standard_normal((n, n))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    else:
        dirs = np.eye(n)

    base = oracle.query(x)
    spent = 1
    for attempt in range(retries + 1):
        diffs = np.empty(n)
        for i in range(n):
            diffs[i] = (oracle.query(x + step * dirs[i]) - base) / step
        spent += n
        if directions == "coordinate":
            grad = diffs
        else:
            grad, rank = _min_norm_solve(dirs.T, diffs)
            if rank < n:
                # singular direction matrix: one retry with fresh directions
                dirs = rng.standard_normal((n, n))
                dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
                diffs = np.empty(n)
                for i in range(n):
                    diffs[i] = (oracle.query(x + step * dirs[i]) - base) / step
                spent += n
                grad, rank = _min_norm_solve(dirs.T, diffs)
                if rank < n:
                    raise RuntimeError("degenerate direction matrix twice in a row")
        verified = False
        if verify:
            check = rng.standard_normal(n)
            check /= np.linalg.norm(check)
            measured = (oracle.query(x + 0.5 * step * check) - base) / (0.5 * step)
            spent += 1
            predicted = float(grad @ check)
            scale = max(abs(measured), abs(predicted), np.linalg.norm(grad))
            verified = abs(measured - predicted) <= LINEARITY_RTOL * scale + 1e-12
            if not verified:
                step /= 10.0
                continue
        return GradientSample(point=x, gradient=grad, queries_spent=spent,
                              linearity_verified=verified)
    raise BoundaryCrossingError(
        f"directional derivatives unstable after {retries + 1} attempts"
    )
