"""Per-feature aberration statistic and its scaled variants.

For each feature j the single sweep yields
  d_j     — mean over observed deaths of the feature's deviation from the
            current risk-set average,
  D_jj    — integral over the observation window of the at-risk second moment
            around the risk-set average (per-feature diagonal of the
            additive-hazards Gram matrix),
  B_jj    — mean squared deviation at deaths (variance of d_j up to 1/n).

Scaled variants: z = d/sqrt(B), ly = d/D, loss = d/sqrt(D) by default. A
literal flag switches loss to d/sqrt(B); see `scaled_variant`.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import RiskSweep, SweepWorkspace, step_suffix_sums
from .errors import NumericalError

VARIANTS = ("vanilla", "z", "ly", "loss")

_BLOCK_COLS = 1024  # fixed so results are bitwise independent of thread count


@dataclass
class FastSummary:
    """Per-feature statistic and scale diagonals from one sweep."""

    d: np.ndarray
    d_diag: np.ndarray
    b_diag: np.ndarray
    n: int
    p: int
    _variants: dict = field(default_factory=dict, repr=False)

    def variant(self, kind, literal_loss=False):
        key = (kind, literal_loss if kind == "loss" else False)
        if key not in self._variants:
            self._variants[key] = scaled_variant(self, kind, literal_loss=literal_loss)
        return self._variants[key]

    def to_rows(self, names=None):
        names = names or [f"f{j + 1}" for j in range(self.p)]
        out = []
        for j in range(self.p):
            out.append({
                "feature": names[j],
                "d": float(self.d[j]),
                "D_jj": float(self.d_diag[j]),
                "B_jj": float(self.b_diag[j]),
                "z": float(self.variant("z")[j]),
                "ly": float(self.variant("ly")[j]),
                "loss": float(self.variant("loss")[j]),
            })
        return out

    def to_csv(self, path, names=None):
        rows = self.to_rows(names)
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)

    def to_json(self, path=None, names=None):
        payload = {"schema": "hazscreen-fast/v1", "n": self.n, "p": self.p,
                   "rows": self.to_rows(names)}
        if path is None:
            return json.dumps(payload, sort_keys=True)
        with open(path, "w") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
        return None


def _block_stats(sweep, Zb, S1b=None):
    # Backward-accumulated at-risk sums give S1 at every step; the at-risk
    # second-moment integral telescopes to sum_i X_i * Z_ij^2 minus the
    # interval-weighted S1^2/S0 correction.
    if S1b is None:
        S1b = step_suffix_sums(sweep, Zb)
    n = sweep.n
    denom = sweep.at_risk[sweep.death_step].astype(np.float64)[:, None]
    dev = Zb[sweep.death_rows] - S1b[sweep.death_step] / denom
    d = dev.sum(axis=0) / n
    b_diag = np.einsum("ij,ij->j", dev, dev) / n
    first = np.einsum("i,ij,ij->j", sweep.times, Zb, Zb)
    w = sweep.interval / sweep.at_risk
    second = np.einsum("k,kj,kj->j", w, S1b, S1b)
    d_diag = (first - second) / n
    # Exact zero only for features constant on every risk set; clip the
    # negative dust such cancellation can leave behind.
    np.clip(d_diag, 0.0, None, out=d_diag)
    return d, d_diag, b_diag


def compute_fast(ds, workspace=None, threads=None):
    """One-pass computation of d, D_jj, B_jj for every feature.

    Runs in O(n log n + n p). Feature blocks are independent, so `threads`
    splits the columns across a thread pool; block boundaries are fixed and
    the assembled output is identical for any thread count.
    """
    if workspace is not None:
        sw = workspace.sweep
        d, d_diag, b_diag = _block_stats(sw, workspace.Z, workspace.S1)
        return FastSummary(d=d, d_diag=d_diag, b_diag=b_diag, n=sw.n,
                           p=workspace.Z.shape[1])

    sw = RiskSweep.from_dataset(ds)
    Zs = ds.features[sw.order]
    p = Zs.shape[1]
    starts = list(range(0, p, _BLOCK_COLS))
    blocks = [Zs[:, s:s + _BLOCK_COLS] for s in starts]
    if threads and threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: _block_stats(sw, b), blocks))
    else:
        parts = [_block_stats(sw, b) for b in blocks]
    d = np.concatenate([q[0] for q in parts])
    d_diag = np.concatenate([q[1] for q in parts])
    b_diag = np.concatenate([q[2] for q in parts])
    return FastSummary(d=d, d_diag=d_diag, b_diag=b_diag, n=sw.n, p=p)


def scaled_variant(fs, kind, literal_loss=False):
    """Return the scaled statistic for `kind` in {vanilla, z, ly, loss}.

    loss defaults to d/sqrt(D_jj), the scaling whose ranking matches the
    decrease d^2/D of the univariate quadratic loss; `literal_loss=True`
    switches to d/sqrt(B_jj), which coincides with the z scaling.
    """
    if kind == "vanilla":
        return fs.d.copy()
    if kind == "z":
        return fs.d * _inv_sqrt(fs.b_diag, "B_jj")
    if kind == "ly":
        return fs.d * _inv(fs.d_diag, "D_jj")
    if kind == "loss":
        diag = fs.b_diag if literal_loss else fs.d_diag
        name = "B_jj" if literal_loss else "D_jj"
        return fs.d * _inv_sqrt(diag, name)
    raise ValueError(f"unknown variant {kind!r}")


def _inv(diag, name):
    bad = np.flatnonzero(diag <= 0)
    if bad.size:
        raise NumericalError(f"feature {bad[0]} has zero {name}; cannot scale")
    return 1.0 / diag


def _inv_sqrt(diag, name):
    bad = np.flatnonzero(diag <= 0)
    if bad.size:
        raise NumericalError(f"feature {bad[0]} has zero {name}; cannot scale")
    return 1.0 / np.sqrt(diag)
