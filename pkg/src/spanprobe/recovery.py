"""Span recovery from oracle queries.

Two routes are implemented.  The non-adaptive route draws all of its probe
points up front, computes a finite-difference gradient at each, and returns
the span of the gradient stack; it applies to piecewise-linear (ReLU,
linear-head) targets.  The adaptive route applies to thresholded smooth
targets: it repeatedly walks to the decision boundary along a random ray,
recovers the local gradient direction from n more boundary searches, and
accumulates the directions into an orthonormal basis.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .linalg import Subspace, orthonormalize, project
from .oracle import BoundaryCrossingError, QueryBudgetError, fd_gradient


class AssumptionViolationError(RuntimeError):
    """An operating assumption failed empirically (e.g. the thresholded
    output was never 1 over the whole draw budget)."""


class InternalInconsistencyError(RuntimeError):
    """The oracle behaved in a way the algorithm's preconditions rule out
    (e.g. threshold already fired at the origin)."""


class RestartSignal(RuntimeError):
    """A boundary-point probe turned out unusable; the caller regenerates
    the point and counts the restart."""


@dataclass(frozen=True)
class ReluRecoveryConfig:
    """Settings for the non-adaptive gradient-span route."""

    k: int
    gamma: float = 0.25
    oversample_c: float = 4.0
    delta: float = 0.05
    fd_step: float | None = None
    fd_retries: int = 2
    directions: str = "gaussian"
    samples: int | None = None
    rank_rel_threshold: float = 1e-5
    point_retry_cap: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.oversample_c <= 0 or self.delta <= 0:
            raise ValueError("oversample_c and delta must be positive")
        if self.samples is not None and self.samples < 1:
            raise ValueError("samples override must be positive")

    @property
    def num_samples(self):
        if self.samples is not None:
            return self.samples
        return math.ceil(self.oversample_c * self.k * math.log(self.k + 1) / self.gamma)


@dataclass(frozen=True)
class ThresholdRecoveryConfig:
    """Settings for the adaptive boundary-search route.

    band_lo/band_hi delimit how far above the threshold the probe point is
    pushed; perturb_scale sets the spread of the n perturbation directions
    around the inward ray.  All are float-representable stand-ins for the
    exponentially small quantities the guarantees are stated with.
    """

    k: int
    eps: float = 1e-2
    band_lo: float = 1e-7
    band_hi: float = 1e-4
    perturb_scale: float = 1e-2
    search_iters: int = 60
    restart_cap: int = 50
    gamma: float = 0.25
    eta: float = 1e-6
    seed: int = 0
    draw_cap: int | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be positive")
        if not 0.0 < self.band_lo < self.band_hi:
            raise ValueError("need 0 < band_lo < band_hi")
        if not 0.0 < self.perturb_scale < 1.0:
            raise ValueError("perturb_scale must lie in (0, 1)")
        if self.search_iters < 1 or self.restart_cap < 1:
            raise ValueError("search_iters and restart_cap must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.eps <= 0 or self.eta <= 0:
            raise ValueError("eps and eta must be positive")

    @property
    def max_draws(self):
        if self.draw_cap is not None:
            return self.draw_cap
        return math.ceil(40.0 / self.gamma)

    @property
    def restart_threshold(self):
        """Bisection scalings beyond this value abandon the probe point."""
        return 10.0 * self.perturb_scale * self.band_hi / self.eta


@dataclass(frozen=True)
class GradientMatrix:
    """Stack of recovered gradient rows with its numerical-rank evidence."""

    rows: np.ndarray
    rank: linalg.RankEstimate


@dataclass(frozen=True)
class RecoveryReport:
    subspace: Subspace
    rank_trace: list
    queries_used: int
    restarts: int
    complete: bool = True
    gradient_matrix: GradientMatrix | None = field(default=None, repr=False)

    def to_dict(self):
        d = {
            "complete": self.complete,
            "queries_used": self.queries_used,
            "restarts": self.restarts,
            "rank_trace": [[int(s), int(r)] for s, r in self.rank_trace],
            "basis": {
                "rows": self.subspace.dim,
                "cols": self.subspace.ambient_dim,
                "weights": self.subspace.basis.ravel().tolist(),
            },
        }
        if self.gradient_matrix is not None:
            est = self.gradient_matrix.rank
            d["gradient_rank"] = {
                "rank": est.rank,
                "singular_values": est.singular_values.tolist(),
                "threshold_used": est.threshold_used,
            }
        return d


class _RankTracker:
    """Incremental numerical rank of a growing row stack.

    Rows are expressed in a running orthonormal basis of everything seen so
    far, so each per-sample SVD runs on an (i x dim) coefficient matrix with
    dim bounded by the true rank, not the ambient dimension.  Components
    smaller than 1e-12 of a row's norm are folded away; they sit seven
    orders of magnitude below the 1e-5 rank cutoff.
    """

    def __init__(self, ambient_dim, rel_threshold):
        self.n = ambient_dim
        self.rel = rel_threshold
        self.q_rows = []
        self.coeffs = []

    def append(self, z):
        norm = np.linalg.norm(z)
        coeff = []
        r = z.astype(np.float64, copy=True)
        for q in self.q_rows:
            c = q @ r
            coeff.append(c)
            r -= c * q
        rn = np.linalg.norm(r)
        if norm > 0 and rn > 1e-12 * norm:
            self.q_rows.append(r / rn)
            coeff.append(rn)
        self.coeffs.append(np.array(coeff))

    def _coeff_matrix(self):
        dim = len(self.q_rows)
        c = np.zeros((len(self.coeffs), dim))
        for i, row in enumerate(self.coeffs):
            c[i, : row.shape[0]] = row
        return c

    def rank(self):
        if not self.q_rows:
            return 0
        sv = np.linalg.svd(self._coeff_matrix(), compute_uv=False)
        if sv[0] == 0:
            return 0
        return int(np.sum(sv > self.rel * sv[0]))

    def snapshot(self):
        """Singular values and an orthonormal basis of the row span kept at
        the numerical-rank cutoff."""
        if not self.q_rows:
            return np.zeros(0), np.zeros((0, self.n))
        c = self._coeff_matrix()
        _, sv, wt = np.linalg.svd(c, full_matrices=False)
        rank = int(np.sum(sv > self.rel * sv[0])) if sv[0] > 0 else 0
        basis = wt[:rank] @ np.array(self.q_rows)
        return sv, basis


def _sample_gradient(oracle, n, cfg, seed_seq):
    """One non-adaptive gradient sample: a Gaussian point plus its
    finite-difference gradient, resampling the point on boundary failures."""
    rng = np.random.default_rng(seed_seq)
    resamples = 0
    for _ in range(cfg.point_retry_cap + 1):
        g = rng.standard_normal(n)
        try:
            samp = fd_gradient(
                oracle,
                g,
                step=cfg.fd_step,
                retries=cfg.fd_retries,
                rng=rng,
                directions=cfg.directions,
            )
            return samp.gradient, resamples
        except BoundaryCrossingError:
            resamples += 1
    raise AssumptionViolationError(
        f"{cfg.point_retry_cap + 1} straight probe points sat on activation boundaries"
    )


def recover_span_relu(oracle, n, cfg, threads=1):
    """Non-adaptive span recovery from gradient samples.

    Draws r = ceil(oversample_c * k * ln(k+1) / gamma) Gaussian points (or
    cfg.samples when set), computes the gradient at each from queries alone,
    and returns the span of the gradient stack under the relative rank rule.
    Every probe point depends only on (seed, n, cfg), never on any oracle
    answer, so the whole query set can be issued in parallel or in advance.
    """
    if n < 1:
        raise ValueError("ambient dimension must be positive")
    r = cfg.num_samples
    start_count = oracle.query_count
    seqs = np.random.SeedSequence(cfg.seed).spawn(r)
    grads = [None] * r
    restarts = 0
    complete = True
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(_sample_gradient, oracle, n, cfg, seqs[i]) for i in range(r)
            ]
            for i, fut in enumerate(futures):
                try:
                    grads[i], extra = fut.result()
                    restarts += extra
                except QueryBudgetError:
                    complete = False
    else:
        for i in range(r):
            try:
                grads[i], extra = _sample_gradient(oracle, n, cfg, seqs[i])
                restarts += extra
            except QueryBudgetError:
                complete = False
                break

    tracker = _RankTracker(n, cfg.rank_rel_threshold)
    trace = []
    rows = []
    for i, g in enumerate(grads):
        if g is None:
            complete = False
            break
        tracker.append(g)
        rows.append(g)
        trace.append((i + 1, tracker.rank()))
    z = np.array(rows) if rows else np.zeros((0, n))
    sv, basis = tracker.snapshot()
    subspace = Subspace(n, basis)
    gm = GradientMatrix(
        rows=z,
        rank=linalg.RankEstimate(
            rank=subspace.dim, singular_values=sv, threshold_used=cfg.rank_rel_threshold
        ),
    )
    return RecoveryReport(
        subspace=subspace,
        rank_trace=trace,
        queries_used=oracle.query_count - start_count,
        restarts=restarts,
        complete=complete,
        gradient_matrix=gm,
    )


def _masked_query(oracle, v, x):
    """Thresholded oracle value with the accumulated subspace projected out
    of the query point."""
    return oracle.query(x - project(v, x))


def find_boundary_point(oracle, v, cfg, rng=None):
    """Walk a random ray to the decision boundary and stop just above it.

    Draws g ~ N(0, I) until the masked thresholded output is 1, bisects the
    scaling c in [0, 1] for search_iters steps, and nudges the last 1-valued
    point outward along the ray by band_lo of its norm.  Returns the probe
    point and a verification flag: the threshold still fires there and stops
    firing 2*band_hi further in.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    n = v.ambient_dim
    if _masked_query(oracle, v, np.zeros(n)) != 0.0:
        raise InternalInconsistencyError("threshold fires at the origin; phi(0) != 0?")
    for _ in range(cfg.max_draws):
        g = rng.standard_normal(n)
        if _masked_query(oracle, v, g) == 1.0:
            break
    else:
        raise AssumptionViolationError(
            f"thresholded output stayed 0 over {cfg.max_draws} Gaussian draws"
        )
    lo, hi = 0.0, 1.0
    for _ in range(cfg.search_iters):
        mid = 0.5 * (lo + hi)
        if _masked_query(oracle, v, mid * g) == 1.0:
            hi = mid
        else:
            lo = mid
    x = hi * g
    x = x + cfg.band_lo * np.linalg.norm(x) * (g / np.linalg.norm(g))
    verified = (
        _masked_query(oracle, v, x) == 1.0
        and _masked_query(oracle, v, (1.0 - 2.0 * cfg.band_hi) * x) == 0.0
    )
    return x, verified


def _bisect_crossing(oracle, v, x, u, cfg):
    """Scaling c at which the masked threshold stops firing along x + c*u.

    None signals no crossing within the restart threshold.  The bracket is
    first shrunk geometrically so the search_iters bisection steps buy
    relative (not absolute) resolution.
    """
    cap = cfg.restart_threshold
    if _masked_query(oracle, v, x + cap * u) == 1.0:
        return None
    hi = cap
    while hi > 1e-280 and _masked_query(oracle, v, x + 0.5 * hi * u) == 0.0:
        hi *= 0.5
    lo = 0.5 * hi
    for _ in range(cfg.search_iters):
        mid = 0.5 * (lo + hi)
        if _masked_query(oracle, v, x + mid * u) == 1.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def recover_direction(oracle, v, x, cfg, rng=None):
    """Recover the gradient direction at a boundary probe point.

    Perturbs x along u_i = perturb_scale * g_i - x/||x|| for n Gaussian
    g_i, finds for each the scaling at which the thresholded output flips,
    and solves the linear system pairing each direction with the inverse of
    its crossing scaling.  Raises RestartSignal when any crossing exceeds
    the restart threshold (the probe point was too shallow).  Returns a
    unit vector.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    n = v.ambient_dim
    xhat = x / np.linalg.norm(x)
    for attempt in range(2):
        u_rows = cfg.perturb_scale * rng.standard_normal((n, n)) - xhat
        c = np.empty(n)
        for i in range(n):
            ci = _bisect_crossing(oracle, v, x, u_rows[i], cfg)
            if ci is None or ci <= 0.0:
                raise RestartSignal(f"crossing {i} beyond the restart threshold")
            c[i] = ci
        y, rank = linalg._min_norm_solve(u_rows.T, 1.0 / c)
        if rank == n:
            return y / np.linalg.norm(y)
    raise RestartSignal("perturbation directions degenerate twice in a row")


def recover_span_threshold(oracle, n, cfg):
    """Adaptive span recovery for thresholded smooth targets.

    Runs k rounds of boundary search plus direction recovery, each round
    orthogonal to everything already found, and accumulates the directions
    into an orthonormal basis.  Deterministic for a fixed seed.  If the
    restart cap is exhausted the partial basis is returned with the report
    flagged incomplete.
    """
    if n < 1:
        raise ValueError("ambient dimension must be positive")
    rng = np.random.default_rng(cfg.seed)
    start_count = oracle.query_count
    v = Subspace.empty(n)
    trace = []
    restarts = 0
    complete = True
    guard = cfg.eps / max(1.0, math.sqrt(n))
    for i in range(cfg.k):
        accepted = None
        while accepted is None:
            if restarts > cfg.restart_cap:
                complete = False
                break
            try:
                x, _ = find_boundary_point(oracle, v, cfg, rng=rng)
                y = recover_direction(oracle, v, x, cfg, rng=rng)
            except RestartSignal:
                restarts += 1
                continue
            if v.dim and np.linalg.norm(project(v, y)) > guard * np.linalg.norm(y):
                restarts += 1
                continue
            grown = orthonormalize(list(v.basis) + [y])
            if grown.dim != v.dim + 1:
                restarts += 1
                continue
            accepted = grown
        if accepted is None:
            break
        v = accepted
        trace.append((i + 1, v.dim))
    return RecoveryReport(
        subspace=v,
        rank_trace=trace,
        queries_used=oracle.query_count - start_count,
        restarts=restarts,
        complete=complete,
    )
