"""Trajectory statistics: per-probe kl-LD across checkpoints and what it implies.

Covers consecutive-checkpoint deltas and their Laplace fit, stationarity of the
cross-sectional variance (with a random-walk control), probe class labels
(latent / never_memorized / unseen_control), the repeats+complexity linear
model, and binned summary grids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .corpus import Probe
from .defaults import MEMORIZED_FRAC, UNMEMORIZED_FRAC
from .metric import levenshtein_batch


@dataclass(frozen=True)
class Trajectory:
    """kl-LD of one probe at each checkpoint, in training order."""

    probe_id: str
    series: tuple  # ((step, kl_ld), ...)
    first_encounter_step: int | None = None

    def __post_init__(self):
        steps = [s for s, _ in self.series]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("checkpoint steps must be strictly increasing")

    def steps(self) -> np.ndarray:
        return np.array([s for s, _ in self.series], dtype=np.int64)

    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.series], dtype=np.int64)


def compute_trajectories(
    probes: list[Probe],
    checkpoints: list,
    l: int | None = None,
    first_encounter: dict[int, int] | None = None,
    decode_batch: int = 512,
    decode=None,
) -> list[Trajectory]:
    """kl-LD of every probe at every checkpoint, batched per checkpoint."""
    if len(checkpoints) < 2:
        raise ValueError("need at least two checkpoints for a trajectory")
    if not probes:
        return []
    if l is None:
        l = probes[0].l
    if any(p.l != l or p.k != probes[0].k for p in probes):
        raise ValueError("probes must share k and l")
    if decode is None:
        from .model import greedy_continue_batch

        decode = greedy_continue_batch
    checkpoints = sorted(checkpoints, key=lambda c: c.step)
    contexts = np.stack([p.context for p in probes]).astype(np.int64)
    targets = np.stack([p.target for p in probes]).astype(np.int64)
    lds = np.empty((len(checkpoints), len(probes)), dtype=np.int64)
    for ci, ckpt in enumerate(checkpoints):
        for lo in range(0, len(probes), decode_batch):
            hi = min(lo + decode_batch, len(probes))
            conts = np.asarray(decode(ckpt, contexts[lo:hi], l), dtype=np.int64)
            lds[ci, lo:hi] = levenshtein_batch(targets[lo:hi], conts)
    fe = first_encounter or {}
    out = []
    for pi, probe in enumerate(probes):
        series = tuple((int(c.step), int(lds[ci, pi])) for ci, c in enumerate(checkpoints))
        out.append(
            Trajectory(
                probe_id=probe.probe_id,
                series=series,
                first_encounter_step=fe.get(probe.source_doc),
            )
        )
    return out


def pooled_deltas(trajectories: list[Trajectory]) -> np.ndarray:
    """All consecutive-checkpoint changes, pooled over probes."""
    parts = [np.diff(t.values()) for t in trajectories if len(t.series) >= 2]
    if not parts:
        return np.empty(0, dtype=np.int64)
    return np.concatenate(parts)


def delta_histogram(trajectories: list[Trajectory]):
    """Integer-bin histogram of deltas, symmetric around 0.

    Returns (centers, counts); counts sum to the number of consecutive pairs.
    """
    deltas = pooled_deltas(trajectories)
    if deltas.size == 0:
        raise ValueError("no consecutive checkpoint pairs to histogram")
    m = max(1, int(np.abs(deltas).max()))
    centers = np.arange(-m, m + 1, dtype=np.int64)
    counts = np.bincount(deltas + m, minlength=2 * m + 1).astype(np.int64)
    return centers, counts


@dataclass(frozen=True)
class LaplaceFit:
    location: float
    scale: float
    ks_stat: float


def fit_laplace(deltas) -> LaplaceFit:
    """Maximum-likelihood Laplace fit with a KS goodness statistic."""
    deltas = np.asarray(deltas, dtype=np.float64)
    if deltas.size < 30:
        raise ValueError("need at least 30 samples for a Laplace fit")
    loc = float(np.median(deltas))
    scale = float(np.abs(deltas - loc).mean())
    if scale == 0.0:
        raise ValueError("degenerate input: zero scale (all samples equal)")
    ks = stats.kstest(deltas, stats.laplace(loc=loc, scale=scale).cdf).statistic
    return LaplaceFit(location=loc, scale=scale, ks_stat=float(ks))


def _slope_with_ci(y: np.ndarray) -> tuple[float, tuple[float, float]]:
    x = np.arange(len(y), dtype=np.float64)
    r = stats.linregress(x, y)
    tcrit = stats.t.ppf(0.975, len(y) - 2)
    return float(r.slope), (float(r.slope - tcrit * r.stderr), float(r.slope + tcrit * r.stderr))


def variance_slope(values: np.ndarray, normalize: bool):
    """Least-squares slope of cross-sectional variance against checkpoint index.

    values is (series, checkpoints).  With ``normalize`` each series is scaled
    to mean 0, variance 1 first (constant series dropped); the returned triple
    is (slope, 95% CI, per-checkpoint variance).
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] < 3:
        raise ValueError("need a (series, checkpoints) matrix with >= 3 checkpoints")
    if normalize:
        sd = values.std(axis=1)
        values = values[sd > 0]
        if len(values) < 2:
            raise ValueError("fewer than two non-constant series to normalize")
        values = (values - values.mean(axis=1, keepdims=True)) / values.std(
            axis=1, keepdims=True
        )
    var = values.var(axis=0)
    slope, ci = _slope_with_ci(var)
    return slope, ci, var


@dataclass(frozen=True)
class StationarityStats:
    steps: tuple
    normalized_mean: tuple
    normalized_variance: tuple
    normalized_slope: float
    normalized_slope_ci: tuple
    raw_variance: tuple
    raw_slope: float
    raw_slope_ci: tuple
    excluded_constant: int
    n_series: int


def stationarity_stats(trajectories: list[Trajectory]) -> StationarityStats:
    """Cross-sectional variance of per-series-normalized kl-LD over time.

    A random walk grows its raw cross-sectional variance linearly; a stationary
    process keeps it flat.  Constant trajectories cannot be normalized and are
    excluded from the normalized statistics (their count is reported).
    """
    if not trajectories:
        raise ValueError("no trajectories")
    grid = trajectories[0].steps()
    if len(grid) < 3:
        raise ValueError("need at least 3 checkpoints")
    mat = np.empty((len(trajectories), len(grid)), dtype=np.float64)
    for i, t in enumerate(trajectories):
        if not np.array_equal(t.steps(), grid):
            raise ValueError("all trajectories must share one checkpoint grid")
        mat[i] = t.values()
    sd = mat.std(axis=1)
    constant = int((sd == 0).sum())
    norm_slope, norm_ci, norm_var = variance_slope(mat, normalize=True)
    raw_slope, raw_ci, raw_var = variance_slope(mat, normalize=False)
    nz = mat[sd > 0]
    nz = (nz - nz.mean(axis=1, keepdims=True)) / nz.std(axis=1, keepdims=True)
    return StationarityStats(
        steps=tuple(int(s) for s in grid),
        normalized_mean=tuple(float(v) for v in nz.mean(axis=0)),
        normalized_variance=tuple(float(v) for v in norm_var),
        normalized_slope=norm_slope,
        normalized_slope_ci=norm_ci,
        raw_variance=tuple(float(v) for v in raw_var),
        raw_slope=raw_slope,
        raw_slope_ci=raw_ci,
        excluded_constant=constant,
        n_series=len(trajectories),
    )


def simulate_random_walks(n_series: int, n_checkpoints: int, scale: float, rng) -> np.ndarray:
    """Cumulative-sum control series with Laplace increments."""
    steps = rng.laplace(0.0, scale, (n_series, n_checkpoints))
    return np.cumsum(steps, axis=1)


def random_walk_control(
    n_series: int,
    n_checkpoints: int,
    scale: float,
    n_sims: int = 100,
    seed: int = 0,
):
    """Fraction of simulated random walks whose raw variance slope CI is > 0.

    Per-series normalization flattens even a true random walk, so the control
    uses the raw cross-sectional variance, where the walk's linear growth is
    visible.  Returns (fraction_with_positive_ci, slopes).
    """
    rng = np.random.default_rng(seed)
    slopes = []
    positive = 0
    for _ in range(n_sims):
        walks = simulate_random_walks(n_series, n_checkpoints, scale, rng)
        slope, ci, _ = variance_slope(walks, normalize=False)
        slopes.append(slope)
        if ci[0] > 0:
            positive += 1
    return positive / n_sims, np.array(slopes)


LATENT = "latent"
NEVER_MEMORIZED = "never_memorized"
UNSEEN_CONTROL = "unseen_control"


def classify_probes(
    trajectories: list[Trajectory],
    memorized_frac: float = MEMORIZED_FRAC,
    unmemorized_frac: float = UNMEMORIZED_FRAC,
    window: tuple[int, int] | None = None,
    l: int = 64,
) -> dict[str, str]:
    """Label probes latent / never_memorized / unseen_control inside a window.

    Memorized means kl-LD < memorized_frac*l; unmemorized means kl-LD >
    unmemorized_frac*l (at l=64 and the default fractions: 10 and 50).  A probe
    first consumed after the window is the unseen control regardless of its
    values; latent probes start unmemorized and become memorized at a later
    in-window checkpoint; never_memorized stay unmemorized throughout.  Probes
    matching no class are omitted from the mapping.
    """
    if not (0 < memorized_frac < unmemorized_frac < 1):
        raise ValueError("need 0 < memorized_frac < unmemorized_frac < 1")
    mem_thr = memorized_frac * l
    unmem_thr = unmemorized_frac * l
    labels: dict[str, str] = {}
    for t in trajectories:
        steps = t.steps()
        if window is None:
            lo, hi = int(steps[0]), int(steps[-1])
        else:
            lo, hi = window
        inside = (steps >= lo) & (steps <= hi)
        if not inside.any():
            raise ValueError(
                f"window [{lo}, {hi}] contains no checkpoints of probe {t.probe_id}"
            )
        values = t.values()[inside]
        fe = t.first_encounter_step
        if fe is None or fe > hi:
            labels[t.probe_id] = UNSEEN_CONTROL
        elif values[0] > unmem_thr and (values[1:] < mem_thr).any():
            labels[t.probe_id] = LATENT
        elif (values > unmem_thr).all():
            labels[t.probe_id] = NEVER_MEMORIZED
    return labels


@dataclass(frozen=True)
class MemorizationFit:
    coef_log_repeats: float
    coef_complexity: float
    intercept: float
    r_squared: float
    predicted: tuple
    actual: tuple


def fit_memorization_model(records, log_complexity: bool = False) -> MemorizationFit:
    """OLS of kl-LD on [log(1+repeats), z-complexity, intercept].

    ``records`` is an iterable of (repeat_count, z_complexity, kl_ld) rows.
    With ``log_complexity`` the complexity regressor is log-transformed too.
    """
    rows = [(float(r), float(z), float(y)) for r, z, y in records]
    if len(rows) < 10:
        raise ValueError("need at least 10 records to fit")
    arr = np.array(rows, dtype=np.float64)
    if (arr[:, 0] < 0).any():
        raise ValueError("repeat counts must be >= 0")
    zcol = np.log(arr[:, 1]) if log_complexity else arr[:, 1]
    x = np.column_stack([np.log1p(arr[:, 0]), zcol, np.ones(len(arr))])
    y = arr[:, 2]
    beta, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
    if rank < 3:
        raise ValueError("rank-deficient design matrix")
    predicted = x @ beta
    ss_res = float(((y - predicted) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 0.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return MemorizationFit(
        coef_log_repeats=float(beta[0]),
        coef_complexity=float(beta[1]),
        intercept=float(beta[2]),
        r_squared=r2,
        predicted=tuple(float(v) for v in predicted),
        actual=tuple(float(v) for v in y),
    )


@dataclass(frozen=True)
class BinnedGrid:
    repeat_edges: tuple
    complexity_edges: tuple
    counts: np.ndarray  # (repeat bins, complexity bins)
    means: np.ndarray  # NaN where empty
    variances: np.ndarray  # NaN where empty


def binned_means(records, repeat_edges, complexity_edges) -> BinnedGrid:
    """Mean and variance of kl-LD on a (repeats x complexity) grid.

    Bins are half-open [e_i, e_{i+1}); values outside the edge range clip into
    the nearest bin.  Empty bins report count 0 and NaN moments.
    """
    repeat_edges = np.asarray(repeat_edges, dtype=np.float64)
    complexity_edges = np.asarray(complexity_edges, dtype=np.float64)
    for edges in (repeat_edges, complexity_edges):
        if edges.size < 2 or not np.all(np.diff(edges) > 0):
            raise ValueError("bin edges must be >= 2 and strictly increasing")
    nr = repeat_edges.size - 1
    nc = complexity_edges.size - 1
    counts = np.zeros((nr, nc), dtype=np.int64)
    sums = np.zeros((nr, nc), dtype=np.float64)
    sq = np.zeros((nr, nc), dtype=np.float64)
    for r, z, y in records:
        i = min(max(int(np.searchsorted(repeat_edges, r, side="right")) - 1, 0), nr - 1)
        j = min(max(int(np.searchsorted(complexity_edges, z, side="right")) - 1, 0), nc - 1)
        counts[i, j] += 1
        sums[i, j] += y
        sq[i, j] += y * y
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
        variances = np.where(
            counts > 0, sq / np.maximum(counts, 1) - means**2, np.nan
        )
    variances = np.where(counts > 0, np.maximum(variances, 0.0), np.nan)
    return BinnedGrid(
        repeat_edges=tuple(float(e) for e in repeat_edges),
        complexity_edges=tuple(float(e) for e in complexity_edges),
        counts=counts,
        means=means,
        variances=variances,
    )
