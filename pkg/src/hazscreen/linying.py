"""Multivariate additive-hazards estimation on feature subsets.

A subset model collects the restricted linear system (Gram matrix D, score d)
plus the death-time outer-product matrix B, solved as D beta = d with the
sandwich covariance D^-1 B D^-1 / n. Candidate features are scored against a
fitted subset through the block-inverse identity, which needs one
factorization of the selected block and O(1) solves per candidate.
"""

from __future__ import annotations

import warnings

import numpy as np
from dataclasses import dataclass
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular

from .data import SweepWorkspace
from .errors import DataError, SingularModelError
from . import faststat

COND_LIMIT = 1e12
COLLINEAR_RTOL = 1e-12

RERECRUIT_KINDS = ("coef", "zstat", "loss_drop")


@dataclass
class SubsetModel:
    """Restricted system for an ordered feature subset; `solve` fills beta,
    sandwich covariance, and the quadratic loss at the solution."""

    subset: np.ndarray
    d_sub: np.ndarray
    D_sub: np.ndarray
    B_sub: np.ndarray
    n: int
    beta: np.ndarray | None = None
    cov: np.ndarray | None = None
    loss: float | None = None

    @property
    def m(self):
        return self.subset.shape[0]

    @property
    def se(self):
        if self.cov is None:
            return None
        return np.sqrt(np.diag(self.cov))

    @property
    def zstats(self):
        if self.beta is None:
            return None
        return np.abs(self.beta) / self.se


def _subset_blocks(ws, cols):
    """d, D, B restricted to `cols`, all from the shared sweep arrays."""
    sw = ws.sweep
    n = sw.n
    W = ws.Z[:, cols]
    S1w = ws.S1[:, cols]
    first = W.T @ (sw.times[:, None] * W)
    su = np.sqrt(sw.interval / sw.at_risk)[:, None] * S1w
    D = (first - su.T @ su) / n
    dev = ws.death_deviation(cols)
    d = dev.sum(axis=0) / n
    B = dev.T @ dev / n
    D = 0.5 * (D + D.T)
    B = 0.5 * (B + B.T)
    return d, D, B


def build_subset(ds, subset, workspace=None):
    """Assemble the restricted system for `subset` (global feature indices)
    in one sweep pass; diagonals agree with the per-feature statistic."""
    subset = np.asarray(subset, dtype=np.intp).ravel()
    if subset.size == 0:
        raise DataError("subset must be nonempty")
    if np.unique(subset).size != subset.size:
        raise DataError("subset contains duplicate feature indices")
    if workspace is None:
        workspace = SweepWorkspace.from_arrays(
            ds.times, ds.events, ds.features[:, subset], tau=ds.tau)
        cols = slice(None)
    else:
        cols = subset
    d, D, B = _subset_blocks(workspace, cols)
    return SubsetModel(subset=subset, d_sub=d, D_sub=D, B_sub=B,
                       n=workspace.sweep.n)


def build_subset_from_arrays(times, events, features, subset=None, tau=None):
    """Subset model straight from raw arrays (no dataset validation); used for
    cross-validation folds where standardization invariants do not apply."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if subset is None:
        subset = np.arange(X.shape[1], dtype=np.intp)
        cols = slice(None)
        ws = SweepWorkspace.from_arrays(times, events, X, tau=tau)
    else:
        subset = np.asarray(subset, dtype=np.intp).ravel()
        ws = SweepWorkspace.from_arrays(times, events, X[:, subset], tau=tau)
        cols = slice(None)
    d, D, B = _subset_blocks(ws, cols)
    return SubsetModel(subset=subset, d_sub=d, D_sub=D, B_sub=B, n=ws.sweep.n)


def _cholesky(D):
    """Cholesky with a tiny escalating diagonal shift as fallback."""
    try:
        return cho_factor(D, lower=True)
    except LinAlgError:
        scale = np.trace(D) / D.shape[0]
        for shift in (1e-14, 1e-12, 1e-10):
            try:
                return cho_factor(D + shift * scale * np.eye(D.shape[0]), lower=True)
            except LinAlgError:
                continue
        raise


def solve(sm, cond_limit=COND_LIMIT):
    """Solve D beta = d; attach beta, sandwich covariance, and loss.

    Raises SingularModelError (carrying the condition estimate) when the
    restricted Gram matrix is numerically singular.
    """
    cond = float(np.linalg.cond(sm.D_sub))
    if not np.isfinite(cond) or cond >= cond_limit:
        raise SingularModelError(
            f"subset Gram matrix is numerically singular (cond={cond:.3e})",
            cond=cond)
    try:
        cf = _cholesky(sm.D_sub)
    except LinAlgError:
        raise SingularModelError(
            f"subset Gram matrix is not positive definite (cond={cond:.3e})",
            cond=cond)
    beta = cho_solve(cf, sm.d_sub)
    inner = cho_solve(cf, sm.B_sub)          # D^-1 B
    cov = cho_solve(cf, inner.T) / sm.n      # D^-1 B D^-1 / n
    sm.beta = beta
    sm.cov = 0.5 * (cov + cov.T)
    sm.loss = float(-beta @ sm.d_sub)
    return sm


def quad_loss(D, d, beta):
    """Quadratic prediction loss beta' D beta - 2 beta' d."""
    return float(beta @ D @ beta - 2.0 * (beta @ d))


def adjusted_scores(D_sel, d_sel, D_cross, D_cand_diag, d_cand, kind="coef",
                    B_sel=None, B_cross=None, B_cand_diag=None, n=1,
                    collinear_rtol=COLLINEAR_RTOL):
    """Score each candidate column adjusted for an already-selected block.

    For candidate j with Gram column f = D_cross[:, j] and diagonal e, the
    appended (m+1)-variable solution has first coefficient
    (d_j - f' u) / (e - f' Dsel^-1 f) with u = Dsel^-1 d_sel: the first row of
    the block inverse. Returns (scores, skipped) where skipped marks
    candidates whose pivot k = e - f' Dsel^-1 f fell below collinear_rtol * e.
    """
    d_cand = np.asarray(d_cand, dtype=np.float64)
    e = np.asarray(D_cand_diag, dtype=np.float64)
    m = 0 if D_sel is None else np.asarray(D_sel).shape[0]
    if m == 0:
        k = e.copy()
        s = d_cand.copy()
        num = None if B_cand_diag is None else np.asarray(B_cand_diag, dtype=np.float64)
    else:
        cf = _cholesky(np.asarray(D_sel, dtype=np.float64))
        F = np.asarray(D_cross, dtype=np.float64)
        u = cho_solve(cf, np.asarray(d_sel, dtype=np.float64))
        Q = cho_solve(cf, F)                      # Dsel^-1 f per candidate
        k = e - np.einsum("ij,ij->j", F, Q)
        s = d_cand - u @ F
        num = None
        if kind == "zstat":
            G = np.asarray(B_cross, dtype=np.float64)
            Bq = np.asarray(B_sel, dtype=np.float64) @ Q
            num = (np.asarray(B_cand_diag, dtype=np.float64)
                   - 2.0 * np.einsum("ij,ij->j", Q, G)
                   + np.einsum("ij,ij->j", Q, Bq))

    skipped = k <= collinear_rtol * np.maximum(e, 0.0)
    safe_k = np.where(skipped, 1.0, k)
    if kind == "coef":
        scores = np.abs(s) / safe_k
    elif kind == "loss_drop":
        scores = s * s / safe_k
    elif kind == "zstat":
        if num is None:
            num = np.asarray(B_cand_diag, dtype=np.float64)
        good = num > 0
        scores = np.zeros_like(s)
        scores[good] = np.abs(s[good]) * np.sqrt(n) / np.sqrt(num[good])
        skipped = skipped | ~good
    else:
        raise ValueError(f"unknown re-recruitment kind {kind!r}")
    scores[skipped] = 0.0
    return scores, skipped


def rerecruit_scores(ds, selected, candidates, kind="coef", workspace=None,
                     summary=None):
    """Score candidates adjusted for the selected set.

    kind:
      coef      — |first coefficient| of the appended-model solution,
      zstat     — adjusted |Z| using the sandwich variance,
      loss_drop — decrease in the quadratic loss from adding the candidate.

    With an empty selected set this reduces to the univariate statistics
    (|d/D|, |d| sqrt(n/B), d^2/D). Candidates collinear with the selected
    block are skipped with score 0 and a warning.
    """
    if kind not in RERECRUIT_KINDS:
        raise ValueError(f"unknown re-recruitment kind {kind!r}")
    selected = np.asarray(selected, dtype=np.intp).ravel()
    candidates = np.asarray(candidates, dtype=np.intp).ravel()
    if np.intersect1d(selected, candidates).size:
        raise DataError("candidates must be disjoint from the selected set")
    if workspace is None:
        workspace = SweepWorkspace.from_dataset(ds)
    if summary is None:
        summary = faststat.compute_fast(ds, workspace=workspace)
    n = workspace.sweep.n

    d_cand = summary.d[candidates]
    e = summary.d_diag[candidates]
    B_dd = summary.b_diag[candidates]

    if selected.size == 0:
        scores, skipped = adjusted_scores(
            None, None, None, e, d_cand, kind=kind, B_cand_diag=B_dd, n=n)
    else:
        d_sel, D_sel, B_sel = _subset_blocks(workspace, selected)
        D_cross = _cross_block(workspace, selected, candidates, deaths=False)
        B_cross = None
        if kind == "zstat":
            B_cross = _cross_block(workspace, selected, candidates, deaths=True)
        scores, skipped = adjusted_scores(
            D_sel, d_sel, D_cross, e, d_cand, kind=kind, B_sel=B_sel,
            B_cross=B_cross, B_cand_diag=B_dd, n=n)
    if skipped.any():
        idx = candidates[skipped]
        warnings.warn(
            f"{idx.size} candidate(s) collinear with the selected set were "
            f"skipped (first: feature {idx[0]})",
            RuntimeWarning, stacklevel=2)
    return scores


def _cross_block(ws, rows, cols, deaths):
    """rows x cols block of B (deaths=True) or D (deaths=False).

    The heavy factors stay unsliced: with m selected rows the work is two
    (m x n)(n x p) products, never an n x p copy.
    """
    sw = ws.sweep
    n = sw.n
    wide = cols is None or np.size(cols) > ws.Z.shape[1] // 2
    if deaths:
        dev_r = ws.death_deviation(rows)
        dev_c = ws.death_deviation(None if wide else cols)
        out = dev_r.T @ dev_c / n
        return out[:, cols] if wide else out
    Wr = ws.Z[:, rows]
    w = sw.interval / sw.at_risk
    if wide:
        first = (sw.times[:, None] * Wr).T @ ws.Z
        second = (w[:, None] * ws.S1[:, rows]).T @ ws.S1
        return ((first - second) / n)[:, cols]
    Zc = ws.Z[:, cols]
    first = (sw.times[:, None] * Wr).T @ Zc
    second = (w[:, None] * ws.S1[:, rows]).T @ ws.S1[:, cols]
    return (first - second) / n
