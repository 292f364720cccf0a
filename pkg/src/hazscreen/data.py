"""Right-censored survival datasets: loading, standardization, risk-set sweeps.

A dataset holds observed times T∧C, event indicators, and a column-standardized
feature matrix. All downstream statistics are driven by a single sweep over the
unique observed times in increasing order; the sweep bookkeeping (risk-set
sizes, interval lengths, death positions) is precomputed once in `RiskSweep`
and shared by every consumer.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ParseError, StandardizationError

BINARY_MAGIC = b"HZSCRN01"

# Relative floor below which a column's spread counts as zero variance.
_ZERO_SD_RTOL = 1e-12


def standardize_columns(features):
    """Center and scale columns to sample mean 0 and variance 1 (divisor n-1).

    Returns (standardized, means, scales); means/scales can be reapplied to
    score new data on the same footing. A column whose standard deviation is
    below 1e-12 relative to its magnitude is rejected as zero-variance.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise DataError("feature matrix must be 2-dimensional")
    n = X.shape[0]
    if n < 2:
        raise DataError("standardization needs at least 2 rows")
    means = X.mean(axis=0)
    centered = X - means
    var = (centered * centered).sum(axis=0) / (n - 1)
    scales = np.sqrt(var)
    floor = _ZERO_SD_RTOL * np.maximum(1.0, np.abs(means))
    bad = np.flatnonzero(scales <= floor)
    if bad.size:
        raise StandardizationError(
            f"feature column {bad[0]} has zero variance and cannot be standardized"
        )
    return centered / scales, means, scales


@dataclass(frozen=True)
class SurvivalDataset:
    """Validated, standardized, sorted-indexed right-censored sample.

    times are already clamped at tau (later observations re-coded as censored
    at tau), features are column-standardized, and `order` sorts times
    ascending with deaths before censorings at ties.
    """

    times: np.ndarray
    events: np.ndarray
    features: np.ndarray
    order: np.ndarray
    tau: float
    names: tuple = ()
    means: np.ndarray | None = None
    scales: np.ndarray | None = None

    @property
    def n(self):
        return self.times.shape[0]

    @property
    def p(self):
        return self.features.shape[1]

    @classmethod
    def from_arrays(cls, times, events, features, tau=None, standardize=True,
                    names=None):
        times = np.asarray(times, dtype=np.float64).ravel()
        events = np.asarray(events)
        if events.dtype != np.bool_:
            ev = np.asarray(events, dtype=np.float64).ravel()
            if not np.isin(ev, (0.0, 1.0)).all():
                bad = int(np.flatnonzero(~np.isin(ev, (0.0, 1.0)))[0])
                raise DataError(f"status must be 0 or 1; offending row {bad + 1}")
            events = ev.astype(bool)
        events = events.ravel()
        X = np.asarray(features, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        n = times.shape[0]
        if events.shape[0] != n or X.shape[0] != n:
            raise DataError("times, events and features must have equal length")
        if n < 2:
            raise DataError("need at least 2 subjects")
        if X.shape[1] < 1:
            raise DataError("need at least 1 feature column")
        if not np.isfinite(times).all():
            raise DataError("non-finite observation time")
        if (times < 0).any():
            bad = int(np.flatnonzero(times < 0)[0])
            raise DataError(f"negative observation time at row {bad + 1}")
        if not np.isfinite(X).all():
            raise DataError("non-finite feature value")

        if tau is None:
            tau = float(times.max())
        else:
            tau = float(tau)
            if tau <= 0:
                raise DataError("tau must be positive")
        # Observations beyond the horizon are censored at tau.
        late = times > tau
        if late.any():
            times = np.where(late, tau, times)
            events = events & ~late
        if not events.any():
            raise DataError("dataset must contain at least one observed event")

        means = scales = None
        if standardize:
            X, means, scales = standardize_columns(X)
        else:
            mu = X.mean(axis=0)
            var = X.var(axis=0, ddof=1)
            if np.abs(mu).max() > 1e-10 or np.abs(var - 1.0).max() > 1e-8:
                raise DataError(
                    "features are not standardized (pass standardize=True)"
                )

        # Ascending time, deaths before censorings at ties.
        order = np.lexsort((np.where(events, 0, 1), times)).astype(np.intp)
        if names is None:
            names = tuple(f"f{j + 1}" for j in range(X.shape[1]))
        else:
            names = tuple(names)
            if len(names) != X.shape[1]:
                raise DataError("feature name count does not match columns")
        return cls(times=times, events=events, features=X, order=order,
                   tau=tau, names=names, means=means, scales=scales)


def _dataset_unchecked(times, events, features, tau=None):
    """Dataset without the standardization invariant; for internal use on
    hand-built instances where the exact feature values matter."""
    times = np.asarray(times, dtype=np.float64).ravel()
    events = np.asarray(events, dtype=bool).ravel()
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if tau is None:
        tau = float(times.max())
    late = times > tau
    if late.any():
        times = np.where(late, tau, times)
        events = events & ~late
    order = np.lexsort((np.where(events, 0, 1), times)).astype(np.intp)
    names = tuple(f"f{j + 1}" for j in range(X.shape[1]))
    return SurvivalDataset(times=times, events=events, features=X,
                           order=order, tau=float(tau), names=names)


def load_dataset(path, fmt="auto", tau=None):
    """Read a dataset from CSV (`time,status,f1,...,fp` header) or the binary
    columnar format, standardize and index it."""
    path = str(path)
    if fmt == "auto":
        fmt = "bin" if path.endswith((".hzb", ".bin")) else "csv"
    try:
        if fmt == "csv":
            times, events, X, names = _read_csv(path)
        elif fmt in ("bin", "binary-columnar"):
            times, events, X, names = _read_binary(path)
        else:
            raise DataError(f"unknown dataset format: {fmt!r}")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}")
    return SurvivalDataset.from_arrays(times, events, X, tau=tau, names=names)


def _read_csv(path):
    with open(path, "r") as fh:
        header = fh.readline().strip()
        cols = [c.strip() for c in header.split(",")]
        if len(cols) < 3 or cols[0] != "time" or cols[1] != "status":
            raise ParseError(
                f"{path}: header must be 'time,status,f1,...' (got {header!r})"
            )
        names = cols[2:]
        rows = []
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(cols):
                raise ParseError(
                    f"{path}: row {lineno} has {len(parts)} fields, expected {len(cols)}"
                )
            try:
                rows.append([float(v) for v in parts])
            except ValueError:
                raise ParseError(f"{path}: malformed numeric value on row {lineno}")
    if not rows:
        raise ParseError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=np.float64)
    times, status, X = data[:, 0], data[:, 1], data[:, 2:]
    bad = np.flatnonzero(~np.isin(status, (0.0, 1.0)))
    if bad.size:
        raise ParseError(f"{path}: status must be 0 or 1; offending row {bad[0] + 1}")
    neg = np.flatnonzero(times < 0)
    if neg.size:
        raise DataError(f"{path}: negative time on row {neg[0] + 1}")
    return times, status.astype(bool), X, names


def _read_binary(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != BINARY_MAGIC:
            raise ParseError(f"{path}: bad magic {magic!r}")
        head = np.frombuffer(fh.read(8), dtype="<u4")
        if head.size != 2:
            raise ParseError(f"{path}: truncated header")
        n, p = int(head[0]), int(head[1])
        body = np.frombuffer(fh.read(), dtype="<f8")
    if body.size != n * (p + 2):
        raise ParseError(
            f"{path}: expected {n * (p + 2)} float64 values, found {body.size}"
        )
    times = body[:n].copy()
    status = body[n:2 * n].copy()
    X = body[2 * n:].reshape(p, n).T.copy()  # column-major feature block
    bad = np.flatnonzero(~np.isin(status, (0.0, 1.0)))
    if bad.size:
        raise ParseError(f"{path}: status must be 0 or 1; offending row {bad[0] + 1}")
    return times, status.astype(bool), X, None


def save_dataset(path, times, events, features, fmt="auto", names=None):
    """Write raw columns to CSV or the binary columnar format (little-endian
    float64, 16-byte header: magic, n, p)."""
    path = str(path)
    times = np.asarray(times, dtype=np.float64).ravel()
    events = np.asarray(events).astype(np.float64).ravel()
    X = np.asarray(features, dtype=np.float64)
    n, p = X.shape
    if fmt == "auto":
        fmt = "bin" if path.endswith((".hzb", ".bin")) else "csv"
    if fmt == "csv":
        if names is None:
            names = [f"f{j + 1}" for j in range(p)]
        with open(path, "w") as fh:
            fh.write("time,status," + ",".join(names) + "\n")
            for i in range(n):
                row = [repr(float(times[i])), str(int(events[i]))]
                row += [repr(float(v)) for v in X[i]]
                fh.write(",".join(row) + "\n")
    elif fmt in ("bin", "binary-columnar"):
        with open(path, "wb") as fh:
            fh.write(BINARY_MAGIC)
            fh.write(np.asarray([n, p], dtype="<u4").tobytes())
            fh.write(times.astype("<f8").tobytes())
            fh.write(events.astype("<f8").tobytes())
            fh.write(X.T.astype("<f8").tobytes())  # column-major
    else:
        raise DataError(f"unknown dataset format: {fmt!r}")


# ---------------------------------------------------------------------------
# Risk-set sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepStep:
    """One unique observed time: interval since the previous step, risk-set
    size at this time, deaths here, and subjects exiting after the step."""

    time: float
    interval: float
    at_risk: int
    deaths: np.ndarray
    leaving: np.ndarray


@dataclass(frozen=True)
class RiskSweep:
    """Precomputed sweep bookkeeping over unique observed times.

    Position arrays refer to the time-sorted subject order (`order` maps back
    to original row indices). The risk set at step k is the suffix of sorted
    subjects starting at `step_start[k]`, matching Y_i(t) = 1(T∧C >= t).
    """

    order: np.ndarray        # (n,) original indices, time-ascending
    times: np.ndarray        # (n,) sorted, clamped at tau
    events: np.ndarray       # (n,) sorted event flags
    step_time: np.ndarray    # (K,) unique times ascending
    step_start: np.ndarray   # (K,) first sorted position of each step
    interval: np.ndarray     # (K,) time since previous step (first: since 0)
    at_risk: np.ndarray      # (K,) risk-set size at the step time
    death_rows: np.ndarray   # (nd,) sorted positions of deaths
    death_step: np.ndarray   # (nd,) step index of each death

    @property
    def n(self):
        return self.times.shape[0]

    @classmethod
    def from_arrays(cls, times, events, tau=None):
        times = np.asarray(times, dtype=np.float64).ravel()
        events = np.asarray(events, dtype=bool).ravel()
        if tau is None:
            tau = float(times.max())
        late = times > tau
        if late.any():
            times = np.where(late, tau, times)
            events = events & ~late
        order = np.lexsort((np.where(events, 0, 1), times)).astype(np.intp)
        st = times[order]
        se = events[order]
        step_start = np.flatnonzero(np.r_[True, st[1:] != st[:-1]]).astype(np.intp)
        step_time = st[step_start]
        interval = np.diff(step_time, prepend=0.0)
        at_risk = times.shape[0] - step_start
        death_rows = np.flatnonzero(se).astype(np.intp)
        death_step = (np.searchsorted(step_start, death_rows, side="right") - 1).astype(np.intp)
        return cls(order=order, times=st, events=se, step_time=step_time,
                   step_start=step_start, interval=interval, at_risk=at_risk,
                   death_rows=death_rows, death_step=death_step)

    @classmethod
    def from_dataset(cls, ds):
        # Dataset times are clamped already; reuse its tie-ordered permutation.
        st = ds.times[ds.order]
        se = ds.events[ds.order]
        step_start = np.flatnonzero(np.r_[True, st[1:] != st[:-1]]).astype(np.intp)
        step_time = st[step_start]
        interval = np.diff(step_time, prepend=0.0)
        at_risk = ds.n - step_start
        death_rows = np.flatnonzero(se).astype(np.intp)
        death_step = (np.searchsorted(step_start, death_rows, side="right") - 1).astype(np.intp)
        return cls(order=ds.order, times=st, events=se, step_time=step_time,
                   step_start=step_start, interval=interval, at_risk=at_risk,
                   death_rows=death_rows, death_step=death_step)


def risk_set_sweep(ds, visitor):
    """Walk unique observed times in increasing order, calling
    visitor(SweepStep) once per time. Each subject leaves the risk set exactly
    once, after the step at its own observed time."""
    sw = RiskSweep.from_dataset(ds)
    K = sw.step_time.shape[0]
    bounds = np.r_[sw.step_start, sw.n]
    for k in range(K):
        lo, hi = bounds[k], bounds[k + 1]
        here = sw.order[lo:hi]
        dead = sw.events[lo:hi]
        visitor(SweepStep(
            time=float(sw.step_time[k]),
            interval=float(sw.interval[k]),
            at_risk=int(sw.at_risk[k]),
            deaths=here[dead],
            leaving=here.copy(),
        ))


def step_suffix_sums(sweep, Zb):
    """At-risk column sums at every sweep step: subjects enter the running
    total as the sweep walks the unique times backwards, so the sums are
    built by pure addition; a Kahan accumulator bounds the sequential drift
    for n up to ~1e6."""
    K = sweep.step_start.shape[0]
    out = np.empty((K, Zb.shape[1]), dtype=np.float64)
    total = np.zeros(Zb.shape[1])
    comp = np.zeros_like(total)
    bounds = np.r_[sweep.step_start, sweep.n]
    for k in range(K - 1, -1, -1):
        y = Zb[bounds[k]:bounds[k + 1]].sum(axis=0) - comp
        t = total + y
        comp = (t - total) - y
        total = t
        out[k] = total
    return out


class SweepWorkspace:
    """Sorted feature rows plus per-step at-risk column sums, shared by the
    statistic, subset-model, and re-recruitment kernels. Memory is O(n*p +
    K*p); build once per dataset when several consumers need the same sweep."""

    def __init__(self, sweep, features_sorted):
        self.sweep = sweep
        self.Z = features_sorted
        self.S1 = step_suffix_sums(sweep, features_sorted)

    @classmethod
    def from_dataset(cls, ds):
        sw = RiskSweep.from_dataset(ds)
        return cls(sw, ds.features[sw.order])

    @classmethod
    def from_arrays(cls, times, events, features, tau=None):
        sw = RiskSweep.from_arrays(times, events, tau=tau)
        X = np.asarray(features, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        return cls(sw, X[sw.order])

    def death_deviation(self, cols=None):
        """Deviation of each dying subject's features from the current
        risk-set average; rows follow sweep.death_rows."""
        sw = self.sweep
        Z = self.Z if cols is None else self.Z[:, cols]
        S1 = self.S1 if cols is None else self.S1[:, cols]
        denom = sw.at_risk[sw.death_step].astype(np.float64)[:, None]
        return Z[sw.death_rows] - S1[sw.death_step] / denom
