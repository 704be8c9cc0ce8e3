"""Rolling-window AR / VAR forecasting of port probing rates.

A model for target series ``i`` at time ``t`` is

    x_i(t) = w0 + sum_{j in I} sum_{h=1..p} w_jh * x_j(t - h)

with ``I = {i}`` for AR and a selected feature set for VAR. Weights are
refit by least squares on the ``N`` buckets preceding every predicted bucket,
so they drift with the series. Predictions are one step ahead.

Least squares is solved through a QR factorisation (same minimiser as the
normal equation on full-rank designs, without squaring the condition
number). Rank-deficient windows, common on quiet ports whose counts are all
zero, fall back to the SVD minimum-norm solution and are counted as
degenerate.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .timeseries import RateMatrix, resolution_name

logger = logging.getLogger(__name__)

P_RANGE = (1, 10)
N_STEP = 10
TRAIN_FRACTION = 0.75
DEFAULT_K_MAX = 30
# a larger feature set must beat the incumbent validation R² by this much
MIN_GAIN = 0.02
# relative |R_ii| below which a window's design is treated as rank deficient
RANK_TOL = 1e-10
# scratch budget (floats) for stacked window designs
_STACK_BUDGET = 1 << 22


class ForecastError(ValueError):
    """Invalid forecasting request (short series, missing history...)."""


@dataclass(frozen=True)
class DesignParams:
    """Autoregressive order ``p`` and rolling-window length ``N`` (buckets)."""

    p: int
    N: int

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.N < 10 * self.p:
            raise ValueError(f"N must be at least 10*p = {10 * self.p}, got {self.N}")


@dataclass
class ForecastModel:
    target: int
    kind: str
    p: int
    features: tuple[int, ...]
    weights: np.ndarray
    scale_mean: np.ndarray | None = None
    scale_std: np.ndarray | None = None
    rank: int = 0
    degenerate: bool = False

    def __post_init__(self):
        if len(self.weights) != 1 + self.p * len(self.features):
            raise ValueError("weight vector length must be 1 + p*|features|")


@dataclass
class EvalReport:
    target: int
    target_port: int
    kind: str
    resolution: int
    params: DesignParams
    features: tuple[int, ...]
    t: np.ndarray
    y_true: np.ndarray
    y_pred: np.ndarray
    r2: float
    r2_holdout: float | None = None
    r2_persistence: float | None = None
    n_degenerate: int = 0
    feature_ports: tuple[int, ...] = ()

    @property
    def n_windows(self) -> int:
        return len(self.t)

    @property
    def predictions(self) -> list[tuple[int, float, float]]:
        return list(zip(self.t.tolist(), self.y_true.tolist(), self.y_pred.tolist()))

    def to_dict(self) -> dict:
        return {
            "target_port": self.target_port,
            "kind": self.kind,
            "resolution": resolution_name(self.resolution),
            "p": self.params.p,
            "N": self.params.N,
            "features": list(self.feature_ports),
            "r2": _json_float(self.r2),
            "r2_holdout": _json_float(self.r2_holdout),
            "r2_persistence": _json_float(self.r2_persistence),
            "n_windows": self.n_windows,
            "n_degenerate": self.n_degenerate,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def predictions_csv(self, bucket_starts: np.ndarray | None = None, clamp: bool = False) -> str:
        """``bucket_start,y_true,y_pred`` rows; ``clamp`` floors predictions at 0 for display."""
        starts = self.t if bucket_starts is None else np.asarray(bucket_starts)[self.t]
        pred = np.maximum(self.y_pred, 0.0) if clamp else self.y_pred
        lines = ["bucket_start,y_true,y_pred"]
        for s, yt, yp in zip(starts.tolist(), self.y_true.tolist(), pred.tolist()):
            s = int(s) if float(s).is_integer() else s
            lines.append(f"{s},{yt!r},{yp!r}")
        return "\n".join(lines) + "\n"


def _json_float(v):
    if v is None:
        return None
    if math.isinf(v):
        return "-inf" if v < 0 else "inf"
    return v


# ---------------------------------------------------------------------------
# basic pieces
# ---------------------------------------------------------------------------


def _values(m: RateMatrix | np.ndarray) -> np.ndarray:
    v = m.values if isinstance(m, RateMatrix) else np.asarray(m)
    v = np.asarray(v, dtype=np.float64)
    return v[:, None] if v.ndim == 1 else v


def _lagged(v: np.ndarray, features: Sequence[int], p: int, t0: int, t1: int) -> np.ndarray:
    """Columns ``x_j(t-h)`` for rows ``t0 <= t < t1``, ordered by feature then lag."""
    cols = [v[t0 - h : t1 - h, j] for j in features for h in range(1, p + 1)]
    return np.column_stack(cols) if cols else np.empty((t1 - t0, 0))


def make_design_matrix(
    m: RateMatrix | np.ndarray,
    target: int,
    features: Sequence[int] | None,
    p: int,
    window: tuple[int, int],
) -> tuple[np.ndarray, np.ndarray]:
    """Supervised view of the series for response rows ``window = [t0, t1)``.

    Each row is ``[1, x_j(t-1), ..., x_j(t-p), ...]`` over ``features``
    (default: the target alone) with response ``x_target(t)``.
    """
    v = _values(m)
    features = [target] if features is None else list(features)
    t0, t1 = window
    if p < 1:
        raise ForecastError("p must be >= 1")
    if t0 < p:
        raise ForecastError(f"window start {t0} leaves fewer than p={p} lags of history")
    if t1 > len(v) or t1 <= t0:
        raise ForecastError(f"window [{t0}, {t1}) yields no rows inside a series of length {len(v)}")
    X = np.column_stack([np.ones(t1 - t0), _lagged(v, features, p, t0, t1)])
    return X, v[t0:t1, target].copy()


def _qr_solve(A: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least squares for a stack of systems ``A[s] w = y[s]`` via QR.

    Returns weights ``(S, c)`` and a boolean mask of rank-deficient systems,
    which are re-solved for the minimum-norm solution.
    """
    q, r = np.linalg.qr(A)
    diag = np.abs(np.diagonal(r, axis1=-2, axis2=-1))
    scale = diag.max(axis=-1, keepdims=True)
    bad = np.any(diag <= RANK_TOL * np.where(scale > 0, scale, 1.0), axis=-1) | (scale[:, 0] == 0)
    w = np.zeros((A.shape[0], A.shape[2]))
    good = ~bad
    if good.any():
        qty = np.einsum("snc,sn->sc", q[good], y[good])
        w[good] = np.linalg.solve(r[good], qty[..., None])[..., 0]
    for s in np.flatnonzero(bad):
        w[s] = np.linalg.lstsq(A[s], y[s], rcond=RANK_TOL)[0]
    return w, bad


def fit_least_squares(X: np.ndarray, y: np.ndarray, full: bool = False):
    """Weights minimising ``||X w - y||``.

    With ``full=True`` also returns ``(rank, degenerate)`` where
    ``degenerate`` flags a rank-deficient design solved for its minimum-norm
    solution.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ForecastError("X must be 2-D with one response per row")
    n, c = X.shape
    if n < c:
        raise ForecastError(f"{n} rows cannot determine {c} weights; window too short for this order")
    w, bad = _qr_solve(X[None], y[None])
    if not full:
        return w[0]
    rank = int(np.linalg.matrix_rank(X, tol=None)) if bad[0] else c
    return w[0], rank, bool(bad[0])


def r_squared(y_true, y_pred) -> float:
    """Coefficient of determination ``1 - SS_res / SS_tot``.

    A constant ``y_true`` gives 1.0 when the predictions match it (up to
    rounding) and ``-inf`` otherwise.
    """
    y = np.asarray(y_true, dtype=np.float64)
    f = np.asarray(y_pred, dtype=np.float64)
    if y.shape != f.shape or y.ndim != 1 or len(y) < 2:
        raise ValueError("r_squared needs two equal-length vectors of length >= 2")
    ss_res = float(np.sum((y - f) ** 2))
    if np.ptp(y) == 0:
        tiny = len(y) * (1e-12 * max(1.0, float(np.max(np.abs(y))))) ** 2
        return 1.0 if ss_res <= tiny else -math.inf
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 - ss_res / ss_tot


def pearson(x, y) -> float:
    """Sample Pearson correlation; 0.0 when either vector is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("pearson needs two equal-length vectors of length >= 2")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0
    dx = x - x.mean()
    dy = y - y.mean()
    den = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if den == 0:
        return 0.0
    return float(np.clip((dx @ dy) / den, -1.0, 1.0))


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------


def _scaling(v: np.ndarray, features: Sequence[int], t0: int, t1: int):
    seg = v[t0:t1][:, list(features)]
    mean = seg.mean(axis=0)
    std = seg.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return mean, std


def _apply_scaling(X: np.ndarray, p: int, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    """Standardise the lag columns of ``X`` (2-D, or a 3-D stack of windows)."""
    mu = np.repeat(mean, p, axis=-1)
    sd = np.repeat(std, p, axis=-1)
    if X.ndim == 3:
        mu, sd = mu[:, None, :], sd[:, None, :]
    Xs = X.copy()
    Xs[..., 1:] = (X[..., 1:] - mu) / sd
    return Xs


def fit_model(
    m: RateMatrix | np.ndarray,
    target: int,
    p: int,
    window: tuple[int, int],
    features: Sequence[int] | None = None,
    kind: str = "ar",
    scale: bool | None = None,
) -> ForecastModel:
    """Fit one AR/VAR model on response rows ``window``.

    ``scale`` defaults to on for VAR and off for AR. Scaling statistics come
    from the feature series over the training rows.
    """
    kind = _check_kind(kind)
    features = _default_features(m, target, kind, features)
    scale = (kind == "var") if scale is None else scale
    v = _values(m)
    X, y = make_design_matrix(v, target, features, p, window)
    mean = std = None
    if scale:
        mean, std = _scaling(v, features, *window)
        X = _apply_scaling(X, p, mean, std)
    w, rank, degenerate = fit_least_squares(X, y, full=True)
    return ForecastModel(target, kind, p, tuple(features), w, mean, std, rank, degenerate)


def predict_one(model: ForecastModel, m: RateMatrix | np.ndarray, t: int) -> float:
    """One-step-ahead prediction of ``x_target(t)`` from lags ``t-1 .. t-p``.

    ``t`` may equal the series length (forecast of the next, unseen bucket).
    """
    v = _values(m)
    if t - model.p < 0 or t > len(v):
        raise ForecastError(f"lags t-1..t-{model.p} not available at t={t}")
    row = np.array([v[t - h, j] for j in model.features for h in range(1, model.p + 1)])
    if model.scale_mean is not None:
        row = (row - np.repeat(model.scale_mean, model.p)) / np.repeat(model.scale_std, model.p)
    return float(model.weights[0] + row @ model.weights[1:])


def _check_kind(kind: str) -> str:
    kind = kind.lower()
    if kind not in ("ar", "var"):
        raise ValueError(f"kind must be 'ar' or 'var', got {kind!r}")
    return kind


def _default_features(m, target: int, kind: str, features) -> list[int]:
    if kind == "ar":
        if features is not None and list(features) != [target]:
            raise ValueError("AR models use the target's own lags only")
        return [target]
    if features is None:
        return list(range(_values(m).shape[1]))
    features = [int(j) for j in features]
    if not features:
        raise ValueError("VAR needs at least one feature series")
    return features


def _port_of(m, j: int) -> int:
    return m.ports[j] if isinstance(m, RateMatrix) else int(j)


def _rolling_predictions(
    v: np.ndarray,
    target: int,
    features: Sequence[int],
    p: int,
    N: int,
    ts: np.ndarray,
    scale: bool,
    stride: int = 1,
    clip_window: bool = False,
) -> tuple[np.ndarray, int]:
    """Predictions at each ``t`` in ``ts`` (sorted, contiguous) from fits on
    response rows ``[t-N, t)``; with ``clip_window`` the window start is
    raised to ``p`` where needed."""
    T = len(v)
    c = 1 + p * len(features)
    # full design over every row with p lags of history, plus one extra row at T
    D = np.column_stack([np.ones(T + 1 - p), _lagged(np.vstack([v, v[-1:]]), features, p, p, T + 1)])
    yv = v[p:, target]
    fit_at = ts[::stride]
    lo = fit_at - N
    if not clip_window and np.any(lo < p):
        raise ForecastError(f"t={int(fit_at[lo < p][0])} lacks N+p={N + p} buckets of history")
    lo = np.maximum(lo, p)
    if np.any(fit_at - lo < c):
        t_bad = int(fit_at[fit_at - lo < c][0])
        raise ForecastError(f"t={t_bad}: window has fewer rows than the {c} weights")

    weights = np.empty((len(fit_at), c))
    means = stds = None
    if scale:
        means = np.empty((len(fit_at), len(features)))
        stds = np.empty_like(means)
    n_bad = 0

    full = np.flatnonzero(fit_at - lo == N)
    short = np.flatnonzero(fit_at - lo != N)
    if len(full):
        windows = sliding_window_view(D, N, axis=0)  # (T+1-p-N+1, c, N)
        ywin = sliding_window_view(yv, N)
        feat_win = sliding_window_view(v[:, list(features)], N, axis=0) if scale else None
        chunk = max(1, _STACK_BUDGET // (N * c))
        for s0 in range(0, len(full), chunk):
            idx = full[s0 : s0 + chunk]
            start = lo[idx]
            A = np.swapaxes(windows[start - p], 1, 2).copy()
            y = ywin[start - p]
            if scale:
                seg = feat_win[start]
                mu, sd = seg.mean(axis=-1), seg.std(axis=-1)
                sd = np.where(sd > 0, sd, 1.0)
                A = _apply_scaling(A, p, mu, sd)
                means[idx], stds[idx] = mu, sd
            w, bad = _qr_solve(A, y)
            weights[idx] = w
            n_bad += int(bad.sum())
    for i in short:
        a, b = int(lo[i]), int(fit_at[i])
        A = D[a - p : b - p]
        if scale:
            mu, sd = _scaling(v, features, a, b)
            A = _apply_scaling(A, p, mu, sd)
            means[i], stds[i] = mu, sd
        w, bad = _qr_solve(A[None], yv[a - p : b - p][None])
        weights[i] = w[0]
        n_bad += int(bad[0])

    model_of = (np.arange(len(ts)) // stride)
    rows = D[ts - p]
    if scale:
        rows = rows.copy()
        rows[:, 1:] = (rows[:, 1:] - np.repeat(means, p, axis=1)[model_of]) / np.repeat(stds, p, axis=1)[model_of]
    return np.einsum("sc,sc->s", rows, weights[model_of]), n_bad


def rolling_forecast(
    m: RateMatrix | np.ndarray,
    target: int,
    kind: str,
    params: DesignParams,
    features: Sequence[int] | None = None,
    span: tuple[int, int] | None = None,
    stride: int = 1,
    scale: bool | None = None,
    clip_window: bool = False,
) -> EvalReport:
    """Refit on the trailing window and predict one step ahead for every ``t`` in ``span``.

    ``span = [s0, s1)`` defaults to every bucket with a full window,
    ``[N + p, T)``. ``stride > 1`` refits only every ``stride`` steps and
    reuses the latest weights in between. ``clip_window`` lets early windows
    start at the first bucket with ``p`` lags instead of failing.
    """
    kind = _check_kind(kind)
    features = _default_features(m, target, kind, features)
    scale = (kind == "var") if scale is None else scale
    if stride < 1:
        raise ValueError("stride must be >= 1")
    v = _values(m)
    T = len(v)
    p, N = params.p, params.N
    s0, s1 = (N + p, T) if span is None else span
    if s1 > T or s1 - s0 < 2:
        raise ForecastError(f"evaluation span [{s0}, {s1}) must hold at least 2 buckets of a length-{T} series")
    if s0 < p:
        raise ForecastError(f"evaluation span starts before p={p} lags are available")
    ts = np.arange(s0, s1)
    y_pred, n_bad = _rolling_predictions(v, target, features, p, N, ts, scale, stride, clip_window)
    y_true = v[ts, target]
    if n_bad:
        logger.info("port %s: %d rank-deficient windows", _port_of(m, target), n_bad)

    holdout = int(math.floor(TRAIN_FRACTION * T))
    in_hold = ts >= holdout
    r2_hold = r_squared(y_true[in_hold], y_pred[in_hold]) if in_hold.sum() >= 2 else None
    r2_persist = r_squared(y_true, v[ts - 1, target])
    return EvalReport(
        target=target,
        target_port=_port_of(m, target),
        kind=kind,
        resolution=m.resolution if isinstance(m, RateMatrix) else 0,
        params=params,
        features=tuple(features),
        t=ts,
        y_true=y_true,
        y_pred=y_pred,
        r2=r_squared(y_true, y_pred),
        r2_holdout=r2_hold,
        r2_persistence=r2_persist,
        n_degenerate=n_bad,
        feature_ports=tuple(_port_of(m, j) for j in features),
    )


# ---------------------------------------------------------------------------
# design-parameter search
# ---------------------------------------------------------------------------


def window_grid(length: int, p: int, step: int = N_STEP, train_fraction: float = TRAIN_FRACTION) -> list[int]:
    """Window sizes ``10p, 10p + step, ...`` up to ``floor(train_fraction * length)``."""
    upper = int(math.floor(train_fraction * length))
    return list(range(10 * p, upper + 1, step))


def validation_span(length: int, train_fraction: float = TRAIN_FRACTION) -> tuple[int, int]:
    """The chronologically last ``1 - train_fraction`` of the series."""
    return int(math.floor(train_fraction * length)), length


@dataclass
class GridResult:
    params: DesignParams
    report: EvalReport
    scores: dict[tuple[int, int], float] = field(default_factory=dict)

    @property
    def r2(self) -> float:
        return self.report.r2


def grid_search(
    m: RateMatrix | np.ndarray,
    target: int,
    kind: str = "ar",
    resolution: int | None = None,
    p_range: tuple[int, int] = P_RANGE,
    step: int = N_STEP,
    features: Sequence[int] | None = None,
    stride: int = 1,
    jobs: int = 1,
) -> GridResult:
    """Exhaustive search over ``(p, N)`` maximising R² on the last 25% of the series.

    Windows that would reach before the first usable bucket are clipped.
    Ties go to the smaller ``p``, then the smaller ``N``.
    """
    v = _values(m)
    T = len(v)
    span = validation_span(T)
    cells = [
        DesignParams(p, n)
        for p in range(p_range[0], p_range[1] + 1)
        for n in window_grid(T, p, step)
        if span[0] - p >= 1 + p * (1 if kind == "ar" else len(features or range(v.shape[1])))
    ]
    if not cells or span[1] - span[0] < 2:
        raise ForecastError(f"series of length {T} is too short for any grid point")

    def run(cell: DesignParams) -> float:
        return rolling_forecast(
            m, target, kind, cell, features, span, stride=stride, clip_window=True
        ).r2

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(jobs) as pool:
            r2s = list(pool.map(run, cells))
    else:
        r2s = [run(c) for c in cells]

    best = 0
    for i, r2 in enumerate(r2s):
        if r2 > r2s[best]:
            best = i
    params = cells[best]
    report = rolling_forecast(m, target, kind, params, features, span, stride=stride, clip_window=True)
    if resolution is not None:
        report.resolution = int(resolution)
    scores = {(c.p, c.N): r for c, r in zip(cells, r2s)}
    return GridResult(params, report, scores)


# ---------------------------------------------------------------------------
# feature selection
# ---------------------------------------------------------------------------


@dataclass
class FeatureSelection:
    features: list[int]
    k: int
    ranking: list[tuple[int, float]]
    r2_by_k: dict[int, float]
    fallback: bool = False


def select_features(
    m: RateMatrix | np.ndarray,
    target: int,
    params: DesignParams,
    position: int | None = None,
    k_max: int = DEFAULT_K_MAX,
    candidates: Sequence[int] | None = None,
    min_gain: float = MIN_GAIN,
) -> FeatureSelection:
    """Choose the VAR feature set for the rolling window ending before ``position``.

    The window's rows are split chronologically 75/25 into a selection set
    and a validation set. Candidates (target included) are ranked by
    ``max_h |pearson(x_target(t), x_j(t-h))|`` on the selection set; VAR
    models on the top ``k`` candidates are fit on the selection set and
    scored by R² on the validation set, for ``k = 1 .. k_max``. Scanning
    ``k`` upwards, a larger set replaces the incumbent only if it improves
    validation R² by more than ``min_gain``; this keeps chance gains from
    pure-noise series out of the model. Without any non-constant candidate
    the target alone is returned.
    """
    v = _values(m)
    T = len(v)
    p, N = params.p, params.N
    position = T if position is None else position
    t0, t1 = max(position - N, p), position
    if t1 > T or t1 - t0 < 4:
        raise ForecastError(f"window ending at {position} does not fit the series")
    n_f = int(math.floor(TRAIN_FRACTION * (t1 - t0)))
    f0, f1, g1 = t0, t0 + n_f, t1
    if n_f < 2 or g1 - f1 < 2:
        raise ForecastError("window too short to split into selection and validation sets")

    candidates = list(range(v.shape[1])) if candidates is None else [int(j) for j in candidates]
    y_f = v[f0:f1, target]
    scored = []
    for j in candidates:
        best = 0.0
        for h in range(1, p + 1):
            best = max(best, abs(pearson(y_f, v[f0 - h : f1 - h, j])))
        if np.ptp(v[f0 - p : f1 - 1, j]) > 0:
            scored.append((j, best))
    ranking = sorted(scored, key=lambda js: (-js[1], js[0]))
    if not ranking:
        return FeatureSelection([target], 1, [], {}, fallback=True)

    r2_by_k: dict[int, float] = {}
    for k in range(1, min(k_max, len(ranking)) + 1):
        feats = [j for j, _ in ranking[:k]]
        if n_f < 1 + p * k:
            break
        model = fit_model(v, target, p, (f0, f1), feats, kind="var")
        pred = [predict_one(model, v, t) for t in range(f1, g1)]
        r2_by_k[k] = r_squared(v[f1:g1, target], pred)
    if not r2_by_k:
        return FeatureSelection([target], 1, ranking, {}, fallback=True)
    k_best = min(r2_by_k)
    for k in sorted(r2_by_k):
        if r2_by_k[k] > r2_by_k[k_best] + min_gain:
            k_best = k
    return FeatureSelection([j for j, _ in ranking[:k_best]], k_best, ranking, r2_by_k)


def var_forecast(
    m: RateMatrix | np.ndarray,
    target: int,
    params: DesignParams,
    span: tuple[int, int],
    k_max: int = DEFAULT_K_MAX,
    reselect_every: int | None = None,
    stride: int = 1,
    clip_window: bool = True,
) -> EvalReport:
    """Rolling VAR over ``span`` with features selected at the span start.

    ``reselect_every`` repeats the selection every that many buckets, each
    time for the window preceding the segment.
    """
    s0, s1 = span
    seg = (s1 - s0) if not reselect_every else int(reselect_every)
    if seg < 2:
        raise ValueError("reselect_every must be >= 2")
    parts = []
    n_bad = 0
    used: list[int] = []
    for a in range(s0, s1, seg):
        b = min(a + seg, s1)
        sel = select_features(m, target, params, position=a, k_max=k_max)
        used = sel.features
        if b - a < 2:
            # single trailing bucket: extend the previous segment's model choice
            a = b - 2
        rep = rolling_forecast(m, target, "var", params, sel.features, (a, b), stride, clip_window=clip_window)
        parts.append(rep)
        n_bad += rep.n_degenerate
    t = np.concatenate([r.t for r in parts])
    t, keep = np.unique(t, return_index=True)
    y_true = np.concatenate([r.y_true for r in parts])[keep]
    y_pred = np.concatenate([r.y_pred for r in parts])[keep]
    v = _values(m)
    T = len(v)
    hold = t >= int(math.floor(TRAIN_FRACTION * T))
    return EvalReport(
        target=target,
        target_port=_port_of(m, target),
        kind="var",
        resolution=m.resolution if isinstance(m, RateMatrix) else 0,
        params=params,
        features=tuple(used),
        t=t,
        y_true=y_true,
        y_pred=y_pred,
        r2=r_squared(y_true, y_pred),
        r2_holdout=r_squared(y_true[hold], y_pred[hold]) if hold.sum() >= 2 else None,
        r2_persistence=r_squared(y_true, v[t - 1, target]),
        n_degenerate=n_bad,
        feature_ports=tuple(_port_of(m, j) for j in used),
    )


@dataclass
class PortSummary:
    """One port x resolution cell of the AR / VAR comparison table."""

    port: int
    resolution: int
    p: int
    N: int
    r2_ar: float
    r2_var: float
    r2_persistence: float
    features: tuple[int, ...]
    ar: EvalReport | None = None
    var: EvalReport | None = None


def evaluate_port(
    m: RateMatrix,
    target: int,
    p_range: tuple[int, int] = P_RANGE,
    step: int = N_STEP,
    k_max: int = DEFAULT_K_MAX,
    reselect_every: int | None = None,
    stride: int = 1,
    jobs: int = 1,
) -> PortSummary:
    """Grid-search the AR model, then run VAR with the same ``(p, N)``.

    Both are scored on the same validation span (last 25% of the series).
    """
    grid = grid_search(m, target, "ar", p_range=p_range, step=step, stride=stride, jobs=jobs)
    span = validation_span(len(m))
    var = var_forecast(m, target, grid.params, span, k_max, reselect_every, stride)
    return PortSummary(
        port=_port_of(m, target),
        resolution=m.resolution if isinstance(m, RateMatrix) else 0,
        p=grid.params.p,
        N=grid.params.N,
        r2_ar=grid.r2,
        r2_var=var.r2,
        r2_persistence=grid.report.r2_persistence,
        features=var.feature_ports,
        ar=grid.report,
        var=var,
    )


def summary_table_csv(rows: Iterable[PortSummary]) -> str:
    """Rows ``port,resolution,p_star,N_star,r2_ar,r2_var,r2_persistence``."""
    lines = ["port,resolution,p_star,N_star,r2_ar,r2_var,r2_persistence,var_features"]
    for r in rows:
        feats = " ".join(str(f) for f in r.features)
        lines.append(
            f"{r.port},{resolution_name(r.resolution)},{r.p},{r.N},{r.r2_ar!r},{r.r2_var!r},"
            f"{r.r2_persistence!r},{feats}"
        )
    return "\n".join(lines) + "\n"
