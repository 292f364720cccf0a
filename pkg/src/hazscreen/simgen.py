"""Simulation scenarios and benchmark protocols.

Survival times are conditionally exponential: a time-constant hazard link is
applied to the linear risk score and the event time drawn by inverse
transform. Censoring is either an independent exponential or "linked":
driven by the same link on the same features with coefficients scaled by k
(a competing-risks stressor).

Feature laws:
  mixed          — three blocks of one-factor mixtures (Gaussian, double
                   exponential, Gaussian mixture innovations) with a common
                   factor on the first 15 columns giving pairwise
                   correlation rho there,
  factor         — one named marginal law (gaussian / student_t /
                   exponential), standardized, same one-factor block
                   correlation (default 0.125),
  gaussian_case  — jointly Gaussian with the named structured correlation
                   matrix (cases a-d), sampled through its Cholesky factor,
  explicit       — jointly Gaussian with a user correlation matrix.

Protocols `table1`, `table2`, `table3` run replicate grids and aggregate
median minimum model size (MMMS), its relative spread (IQR / 1.34), and, for
the iterated screen, average true positives and model size.
"""

from __future__ import annotations

import json
import math
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import faststat, screening
from .data import SurvivalDataset, save_dataset, standardize_columns
from .errors import DataError
from .rngs import philox_rng

LINKS = ("logit", "cox", "log")
LINK_SCALES = {"logit": 1.39, "cox": 0.68, "log": 1.39}
# Exponential censoring rates paired with each link in the random-censoring
# experiments.
CENSOR_RATES = {"logit": 0.12, "cox": 0.30, "log": 0.17}

CASES = ("a", "b", "c", "d")
FACTOR_DISTS = ("gaussian", "student_t", "exponential")

_CORR_BLOCK = 15  # leading features sharing the common factor


def alternating_alpha(s):
    """Coefficient pattern 1, 1.3, 1, 1.3, ... with s nonzero entries."""
    return np.tile([1.0, 1.3], (s + 1) // 2)[:s].copy()


CASE_COEFS = {
    "a": np.array([-0.96, 0.90, 1.20, 0.96, -0.85, 1.08]),
    "b": np.array([-0.96, 0.90, 1.20, 0.96, -0.85, 1.08]),
    "c": np.array([4 / 3, 4 / 3, 4 / 3, -2 * math.sqrt(2)]),
    "d": np.array([4 / 3, 4 / 3, 4 / 3, -2 * math.sqrt(2), 2 / 3]),
}


@dataclass(frozen=True)
class FeatureSpec:
    kind: str = "mixed"
    rho: float = 0.0
    dist: str = "gaussian"
    df: float = 4.0
    case: str | None = None
    corr: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("mixed", "factor", "gaussian_case", "explicit"):
            raise DataError(f"unknown feature law {self.kind!r}")
        if not 0.0 <= self.rho < 1.0:
            raise DataError("rho must lie in [0, 1)")
        if self.kind == "factor" and self.dist not in FACTOR_DISTS:
            raise DataError(f"unknown marginal law {self.dist!r}")
        if self.kind == "gaussian_case" and self.case not in CASES:
            raise DataError(f"unknown case {self.case!r}")
        if self.kind == "explicit" and self.corr is None:
            raise DataError("explicit feature law needs a correlation matrix")


@dataclass(frozen=True)
class CensoringSpec:
    kind: str = "exp_rate"   # exp_rate | linked
    rate: float = 0.12
    k: float = 0.0

    def __post_init__(self):
        if self.kind not in ("exp_rate", "linked"):
            raise DataError(f"unknown censoring kind {self.kind!r}")
        if self.kind == "exp_rate" and self.rate <= 0:
            raise DataError("censoring rate must be positive")


@dataclass(frozen=True)
class SimScenario:
    n: int
    p: int
    features: FeatureSpec
    alpha: np.ndarray
    link: str
    censoring: CensoringSpec
    link_scale: float | None = None
    tau: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.link not in LINKS:
            raise DataError(f"unknown link {self.link!r}")
        a = np.asarray(self.alpha, dtype=np.float64)
        if a.shape[0] > self.p:
            raise DataError("coefficient vector longer than feature count")
        object.__setattr__(self, "alpha", a)

    @property
    def scale(self):
        return LINK_SCALES[self.link] if self.link_scale is None else self.link_scale

    def full_alpha(self):
        out = np.zeros(self.p)
        out[:self.alpha.shape[0]] = self.alpha
        return out

    def truth(self):
        return np.flatnonzero(self.full_alpha() != 0.0)


def link_hazard(link, x, scale=None):
    """Hazard rate of the named link at risk score x (vectorized).

    logit is bounded in (0, 1); cox grows as exp(c x); log decays fast for
    positive scores and grows slowly for negative ones. Safe against overflow
    for |x| up to about 700 / c.
    """
    if link not in LINKS:
        raise DataError(f"unknown link {link!r}")
    c = LINK_SCALES[link] if scale is None else scale
    x = np.asarray(x, dtype=np.float64)
    cx = c * x
    if link == "cox":
        out = np.exp(cx)
    else:
        sig = expit(-cx)  # {1 + exp(cx)}^{-1}, stable on both tails
        if link == "logit":
            out = sig
        else:
            out = np.log(math.e + cx * cx) * sig
    return out if out.ndim else float(out)


# Cholesky factors of the structured case matrices, keyed by (case, p).
_CHOL_CACHE = {}


def case_correlation(case, p):
    if case not in CASES:
        raise DataError(f"unknown case {case!r}")
    if case == "a":
        return np.eye(p)
    C = np.full((p, p), 0.5)
    np.fill_diagonal(C, 1.0)
    if case == "b":
        return C
    C[3, :] = C[:, 3] = 1 / math.sqrt(2)
    C[3, 3] = 1.0
    if case == "d":
        C[4, :] = C[:, 4] = 0.0
        C[4, 4] = 1.0
    return C


def _corr_cholesky(corr):
    try:
        return np.linalg.cholesky(corr)
    except np.linalg.LinAlgError:
        raise DataError("requested correlation matrix is not positive definite")


def _factor_loadings(p, rho):
    a = math.sqrt(rho / (1.0 - rho)) if rho > 0 else 0.0
    load = np.zeros(p)
    load[:min(_CORR_BLOCK, p)] = a
    return load


def _standardized_draws(dist, df, rng, size):
    if dist == "gaussian":
        return rng.standard_normal(size)
    if dist == "student_t":
        if df <= 2:
            raise DataError("student_t law needs df > 2 for finite variance")
        return rng.standard_t(df, size) / math.sqrt(df / (df - 2.0))
    return rng.standard_exponential(size) - 1.0


def gen_features(sc, rng):
    """Draw and empirically standardize the n x p feature matrix."""
    n, p = sc.n, sc.p
    law = sc.features
    if law.kind == "mixed":
        common = rng.standard_normal(n)
        third = p // 3
        second = 2 * p // 3
        E = np.empty((n, p))
        E[:, :third] = rng.standard_normal((n, third))
        E[:, third:second] = rng.laplace(0.0, 1.0, (n, second - third))
        rest = p - second
        comp = rng.random((n, rest)) < 0.5
        gauss = rng.standard_normal((n, rest))
        E[:, second:] = np.where(comp, -1.0 + gauss, 1.0 + math.sqrt(0.5) * gauss)
        load = _factor_loadings(p, law.rho)
        Z = (E + np.outer(common, load)) / np.sqrt(1.0 + load ** 2)
    elif law.kind == "factor":
        common = _standardized_draws(law.dist, law.df, rng, n)
        E = _standardized_draws(law.dist, law.df, rng, (n, p))
        load = _factor_loadings(p, law.rho)
        Z = (E + np.outer(common, load)) / np.sqrt(1.0 + load ** 2)
    else:
        corr = law.corr if law.kind == "explicit" else None
        if corr is None:
            key = (law.case, p)
            if key not in _CHOL_CACHE:
                _CHOL_CACHE[key] = _corr_cholesky(case_correlation(law.case, p))
            L = _CHOL_CACHE[key]
        else:
            L = _corr_cholesky(np.asarray(corr, dtype=np.float64))
        Z = rng.standard_normal((n, p)) @ L.T
    return standardize_columns(Z)[0]


def gen_outcomes(sc, Z, rng):
    """Sample (observed time, event flag) given the standardized features.

    Death times are exponential at rate link(score); censoring is an
    independent exponential (exp_rate) or exponential at rate link(k * score)
    on the same draw of features (linked). Draw order is fixed: death noise
    first, then censoring noise.
    """
    alpha = sc.full_alpha()
    score = Z @ alpha
    rate_t = link_hazard(sc.link, score, sc.scale)
    if not (np.isfinite(rate_t).all() and (rate_t > 0).all()):
        raise DataError("death hazard must be positive and finite")
    T = rng.standard_exponential(sc.n) / rate_t
    if sc.censoring.kind == "exp_rate":
        C = rng.standard_exponential(sc.n) / sc.censoring.rate
    else:
        rate_c = link_hazard(sc.link, sc.censoring.k * score, sc.scale)
        C = rng.standard_exponential(sc.n) / rate_c
    times = np.minimum(T, C)
    events = T <= C
    return times, events


def simulate_dataset(sc, rng=None, stream=0):
    """Generate one replicate as a validated dataset. Features are already
    standardized, so construction re-checks rather than re-scales them."""
    if rng is None:
        rng = philox_rng(sc.seed, stream=stream)
    Z = gen_features(sc, rng)
    times, events = gen_outcomes(sc, Z, rng)
    return SurvivalDataset.from_arrays(times, events, Z, tau=sc.tau,
                                       standardize=False)


def _cell_stream(cell_key, rep):
    # Stable per-(cell, replicate) substream: invariant to which other cells
    # run and to scheduling.
    return (zlib.crc32(cell_key.encode()) << 32) | rep


# ---------------------------------------------------------------------------
# Protocol runners
# ---------------------------------------------------------------------------

SIS_VARIANTS_T1 = ("vanilla", "ly", "z")
SIS_VARIANTS_T2 = ("vanilla", "ly", "z", "loss")
ISIS_VARIANTS_T3 = ("ly_coef", "zstat")


def _sis_rep(task):
    sc, cell_key, rep, variants, dump = task
    rng = philox_rng(sc.seed, stream=_cell_stream(cell_key, rep))
    ds = simulate_dataset(sc, rng=rng)
    if dump:
        fmt, outdir = dump
        ext = "csv" if fmt == "csv" else "hzb"
        path = os.path.join(outdir, f"rep{rep:03d}.{ext}")
        save_dataset(path, ds.times, ds.events, ds.features, fmt=fmt)
    fs = faststat.compute_fast(ds)
    truth = sc.truth()
    out = {}
    for v in variants:
        ranking = screening.rank_scores(fs.variant(v))
        out[v] = screening.minimum_model_size(ranking, truth)
    return out


def _isis_rep(task):
    sc, cell_key, rep, variants, d, r_max, tuner, cv_folds = task
    rng = philox_rng(sc.seed, stream=_cell_stream(cell_key, rep))
    ds = simulate_dataset(sc, rng=rng)
    from .data import SweepWorkspace
    ws = SweepWorkspace.from_dataset(ds)
    fs = faststat.compute_fast(ds, workspace=ws)
    truth = set(sc.truth().tolist())
    out = {"sis_mms": screening.minimum_model_size(
        screening.rank_scores(fs.variant("vanilla")), sorted(truth))}
    for v in variants:
        trace = screening.isis(ds, variant=v, d=d, r_max=r_max, tuner=tuner,
                               cv_folds=cv_folds, seed=sc.seed,
                               workspace=ws, summary=fs, keep_scores=False)
        final = set(trace.final.tolist())
        out[v] = {"tp": len(final & truth), "size": len(final),
                  "reason": trace.reason}
    return out


def _run_tasks(fn, tasks, threads):
    if threads and threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    return [fn(t) for t in tasks]


def _mmms_rsd(values):
    vals = np.asarray(values, dtype=np.float64)
    q1, q3 = np.percentile(vals, [25, 75])
    return float(np.median(vals)), float((q3 - q1) / 1.34)


def _mean_sd(values):
    vals = np.asarray(values, dtype=np.float64)
    sd = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
    return float(vals.mean()), sd


def _dump_dir(dump_data, dump_format, cell_key):
    if dump_data is None:
        return None
    outdir = os.path.join(dump_data, cell_key.replace("/", "_"))
    os.makedirs(outdir, exist_ok=True)
    return (dump_format, outdir)


def run_protocol(protocol, n=None, p=None, replicates=None, seed=7,
                 variants=None, links=None, rhos=None, sparsities=None,
                 dists=None, ks=None, cases=None, d=None, r_max=5,
                 tuner="pbic", cv_folds=5, threads=None, full_scale=False,
                 external_rankings=None, dump_data=None, dump_format="csv"):
    """Run a named benchmark grid and aggregate its report.

    Desk-scale defaults keep the screening protocols tractable (p=2000,
    50 replicates); `full_scale` restores p=20000 and 100 replicates. The
    iterated protocol always runs at its published scale (n=300, p=500,
    d=17, 100 replicates). `external_rankings` merges minimum model sizes for
    rankings produced outside this package (JSON: {"method": name,
    "rankings": {cell_key: {rep: [feature indices]}}}).
    """
    if protocol not in ("table1", "table2", "table3"):
        raise DataError(f"unknown protocol {protocol!r}")
    threads = threads or 1
    report = {"schema": "hazscreen-report/v1", "protocol": protocol}

    ext = None
    if external_rankings is not None:
        with open(external_rankings) as fh:
            ext = json.load(fh)

    if protocol == "table1":
        n = n or 300
        p = p or (20000 if full_scale else 2000)
        replicates = replicates or (100 if full_scale else 50)
        links = links or list(LINKS)
        rhos = rhos if rhos is not None else [0.0, 0.25, 0.5, 0.75]
        sparsities = sparsities or [3, 6, 9]
        variants = variants or list(SIS_VARIANTS_T1)
        cells = []
        for link in links:
            for rho in rhos:
                for s in sparsities:
                    key = f"{link}/rho={rho:g}/s={s}"
                    sc = SimScenario(
                        n=n, p=p,
                        features=FeatureSpec(kind="mixed", rho=rho),
                        alpha=alternating_alpha(s), link=link,
                        censoring=CensoringSpec("exp_rate", rate=CENSOR_RATES[link]),
                        seed=seed)
                    cells.append((key, sc, {"link": link, "rho": rho, "s": s}))
        report["config"] = {"n": n, "p": p, "replicates": replicates,
                            "seed": seed, "links": links, "rhos": rhos,
                            "sparsities": sparsities,
                            "variants": list(variants), "threads": threads,
                            "full_scale": full_scale}
        report["cells"] = _run_sis_cells(cells, replicates, variants, threads,
                                         ext, dump_data, dump_format)

    elif protocol == "table2":
        n = n or 300
        p = p or (20000 if full_scale else 2000)
        replicates = replicates or (100 if full_scale else 50)
        dists = dists or list(FACTOR_DISTS)
        ks = ks if ks is not None else [0.0, -0.5, -0.25, 0.25, 0.5]
        variants = variants or list(SIS_VARIANTS_T2)
        alpha = alternating_alpha(6)
        cells = []
        for dist in dists:
            for k in ks:
                key = f"{dist}/k={k:g}"
                sc = SimScenario(
                    n=n, p=p,
                    features=FeatureSpec(kind="factor", dist=dist, rho=0.125),
                    alpha=alpha, link="log",
                    censoring=CensoringSpec("linked", k=k), seed=seed)
                cells.append((key, sc, {"dist": dist, "k": k}))
        report["config"] = {"n": n, "p": p, "replicates": replicates,
                            "seed": seed, "dists": dists, "ks": ks,
                            "variants": list(variants), "threads": threads,
                            "full_scale": full_scale}
        report["cells"] = _run_sis_cells(cells, replicates, variants, threads,
                                         ext, dump_data, dump_format)

    else:
        n = n or 300
        p = p or 500
        replicates = replicates or 100
        d = d or 17
        links = links or list(LINKS)
        cases = cases or list(CASES)
        variants = variants or list(ISIS_VARIANTS_T3)
        cells = []
        for case in cases:
            for link in links:
                key = f"case={case}/{link}"
                sc = SimScenario(
                    n=n, p=p,
                    features=FeatureSpec(kind="gaussian_case", case=case),
                    alpha=CASE_COEFS[case], link=link,
                    censoring=CensoringSpec("exp_rate", rate=CENSOR_RATES[link]),
                    seed=seed)
                cells.append((key, sc, {"case": case, "link": link}))
        report["config"] = {"n": n, "p": p, "replicates": replicates,
                            "seed": seed, "cases": cases, "links": links,
                            "variants": list(variants), "d": d,
                            "r_max": r_max, "tuner": tuner,
                            "cv_folds": cv_folds, "threads": threads}
        out_cells = []
        for key, sc, params in cells:
            tasks = [(sc, key, rep, tuple(variants), d, r_max, tuner, cv_folds)
                     for rep in range(replicates)]
            reps = _run_tasks(_isis_rep, tasks, threads)
            cell = dict(params)
            cell["key"] = key
            mmms, rsd = _mmms_rsd([r["sis_mms"] for r in reps])
            cell["sis_mmms"] = mmms
            cell["sis_rsd"] = rsd
            metrics = {}
            for v in variants:
                tp_mean, tp_sd = _mean_sd([r[v]["tp"] for r in reps])
                sz_mean, sz_sd = _mean_sd([r[v]["size"] for r in reps])
                metrics[v] = {
                    "avg_true_positives": tp_mean, "sd_true_positives": tp_sd,
                    "avg_model_size": sz_mean, "sd_model_size": sz_sd,
                    "aborted": sum(r[v]["reason"] == "aborted" for r in reps),
                }
            cell["metrics"] = metrics
            out_cells.append(cell)
        report["cells"] = out_cells

    return report


def _run_sis_cells(cells, replicates, variants, threads, ext, dump_data,
                   dump_format):
    out_cells = []
    for key, sc, params in cells:
        dump = _dump_dir(dump_data, dump_format, key)
        tasks = [(sc, key, rep, tuple(variants), dump)
                 for rep in range(replicates)]
        reps = _run_tasks(_sis_rep, tasks, threads)
        cell = dict(params)
        cell["key"] = key
        metrics = {}
        for v in variants:
            mmms, rsd = _mmms_rsd([r[v] for r in reps])
            metrics[v] = {"mmms": mmms, "rsd": rsd}
        if ext is not None and key in ext.get("rankings", {}):
            name = ext.get("method", "external")
            truth = sc.truth()
            per_cell = ext["rankings"][key]
            mms = []
            for rep in range(replicates):
                ranking = per_cell.get(str(rep))
                if ranking is None:
                    raise DataError(
                        f"external rankings for cell {key} missing rep {rep}")
                mms.append(screening.minimum_model_size(
                    np.asarray(ranking, dtype=np.intp), truth))
            mmms, rsd = _mmms_rsd(mms)
            metrics[name] = {"mmms": mmms, "rsd": rsd}
        cell["metrics"] = metrics
        out_cells.append(cell)
    return out_cells


def bench_compute_fast(n=300, p=20000, reps=3, seed=0):
    """Time the one-pass statistic at screening scale; single-threaded."""
    import time

    sc = SimScenario(n=n, p=p, features=FeatureSpec(kind="mixed", rho=0.0),
                     alpha=alternating_alpha(3), link="logit",
                     censoring=CensoringSpec("exp_rate", rate=0.12), seed=seed)
    ds = simulate_dataset(sc)
    seconds = []
    for _ in range(reps):
        t0 = time.perf_counter()
        faststat.compute_fast(ds, threads=1)
        seconds.append(time.perf_counter() - t0)
    best = min(seconds)
    return {"n": n, "p": p, "reps": reps, "seconds": seconds, "best": best,
            "features_per_second": p / best}
