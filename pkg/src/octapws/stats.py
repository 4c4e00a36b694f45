"""One-way ANOVA and Tukey HSD on raw samples or (n, mean, std) summaries.

Group comparisons here never need raw data: the F statistic and the
Tukey-Kramer studentized ranges are functions of per-group count, mean,
and sample standard deviation only, so published summary rows can be
re-analyzed directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import lgamma, log, sqrt

import numpy as np
from scipy.special import betainc, ndtr

__all__ = [
    "GroupSummary",
    "AnovaResult",
    "PairComparison",
    "TukeyResult",
    "summarize",
    "anova_oneway",
    "tukey_hsd",
    "f_tail",
    "srange_tail",
]


@dataclass(frozen=True)
class GroupSummary:
    n: int
    mean: float
    std: float  # sample std, n-1 denominator

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"group size must be >= 1, got {self.n}")
        if self.std < 0 or not np.isfinite(self.std):
            raise ValueError(f"std must be finite and >= 0, got {self.std}")
        if not np.isfinite(self.mean):
            raise ValueError("group mean must be finite")
        if self.n == 1 and self.std != 0:
            raise ValueError("a single-sample group has no spread; pass std=0")


@dataclass(frozen=True)
class AnovaResult:
    F: float
    df_between: int
    df_within: int
    p: float
    ms_within: float
    degenerate: bool = False


@dataclass(frozen=True)
class PairComparison:
    i: int
    j: int
    q: float
    p: float
    significant: bool


@dataclass(frozen=True)
class TukeyResult:
    pairs: tuple[PairComparison, ...]
    ms_within: float
    df_within: int
    alpha: float

    def pair(self, i: int, j: int) -> PairComparison:
        a, b = min(i, j), max(i, j)
        for pc in self.pairs:
            if (pc.i, pc.j) == (a, b):
                return pc
        raise KeyError((i, j))


def summarize(samples) -> GroupSummary:
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("samples must be a non-empty 1-d sequence")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    std = float(x.std(ddof=1)) if x.size > 1 else 0.0
    return GroupSummary(n=int(x.size), mean=float(x.mean()), std=std)


def _as_summaries(groups) -> list[GroupSummary]:
    out = []
    for g in groups:
        out.append(g if isinstance(g, GroupSummary) else summarize(g))
    return out


def anova_oneway(groups) -> AnovaResult:
    """One-way fixed-effects ANOVA across two or more groups.

    Accepts raw sample sequences or GroupSummary entries (mixed is fine).
    If every within-group variance is zero and the means differ, F is
    infinite; p is reported as 0 with the degenerate flag set.
    """
    gs = _as_summaries(groups)
    if len(gs) < 2:
        raise ValueError("ANOVA needs at least two groups")
    n = np.array([g.n for g in gs], dtype=float)
    m = np.array([g.mean for g in gs])
    s = np.array([g.std for g in gs])
    N = n.sum()
    k = len(gs)
    df_b = k - 1
    df_w = int(N) - k
    if df_w < 1:
        raise ValueError("ANOVA needs at least one within-group degree of freedom")
    grand = float((n * m).sum() / N)
    ss_b = float((n * (m - grand) ** 2).sum())
    ss_w = float(((n - 1) * s**2).sum())
    ms_b = ss_b / df_b
    ms_w = ss_w / df_w
    if ms_w == 0.0:
        if ms_b == 0.0:
            return AnovaResult(0.0, df_b, df_w, 1.0, 0.0, degenerate=True)
        return AnovaResult(float("inf"), df_b, df_w, 0.0, 0.0, degenerate=True)
    F = ms_b / ms_w
    return AnovaResult(float(F), df_b, df_w, f_tail(F, df_b, df_w), ms_w)


def tukey_hsd(groups, alpha: float = 0.05) -> TukeyResult:
    """All pairwise Tukey HSD comparisons (Tukey-Kramer for unequal n)."""
    gs = _as_summaries(groups)
    if len(gs) < 2:
        raise ValueError("Tukey HSD needs at least two groups")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    an = anova_oneway(gs)
    k = len(gs)
    pairs = []
    for i in range(k):
        for j in range(i + 1, k):
            a, b = gs[i], gs[j]
            se = sqrt(an.ms_within / 2.0 * (1.0 / a.n + 1.0 / b.n))
            if se == 0.0:
                q = 0.0 if a.mean == b.mean else float("inf")
                p = 1.0 if a.mean == b.mean else 0.0
            else:
                q = abs(a.mean - b.mean) / se
                p = srange_tail(q, k, an.df_within)
            pairs.append(PairComparison(i, j, float(q), float(p), p < alpha))
    return TukeyResult(tuple(pairs), an.ms_within, an.df_within, alpha)


def f_tail(F: float, d1: float, d2: float) -> float:
    """Upper tail P(F_{d1,d2} > F) via the regularized incomplete beta."""
    if d1 <= 0 or d2 <= 0:
        raise ValueError("F degrees of freedom must be positive")
    if not np.isfinite(F):
        return 0.0 if F > 0 else 1.0
    if F <= 0:
        return 1.0
    x = d2 / (d2 + d1 * F)
    return float(betainc(d2 / 2.0, d1 / 2.0, x))


# Gauss-Legendre rules are precomputed once; both integrands are smooth.
_INNER_NODES, _INNER_WEIGHTS = np.polynomial.legendre.leggauss(160)
_OUTER_NODES, _OUTER_WEIGHTS = np.polynomial.legendre.leggauss(240)
_INFINITE_DF = 1e6


def _range_cdf(r, k: int) -> np.ndarray:
    """CDF of the range of k iid standard normals, vectorized over r.

    F_R(r) = k * Int phi(u) [Phi(u) - Phi(u - r)]^(k-1) du over the real
    line; [-9, 9] holds all the phi mass to ~1e-19.
    """
    r = np.atleast_1d(np.asarray(r, dtype=float))
    u = 9.0 * _INNER_NODES
    w = 9.0 * _INNER_WEIGHTS
    phi = np.exp(-0.5 * u * u) / sqrt(2.0 * np.pi)
    bracket = ndtr(u)[None, :] - ndtr(u[None, :] - r[:, None])
    np.clip(bracket, 0.0, 1.0, out=bracket)
    integrand = (k * phi)[None, :] * bracket ** (k - 1)
    return np.clip(integrand @ w, 0.0, 1.0)


def srange_tail(q: float, k: int, df: float) -> float:
    """Upper tail of the studentized range: P(Q_{k,df} > q).

    Integrates the normal-range CDF against the density of s = chi_df /
    sqrt(df) over a Wilson-Hilferty bracket (z = +/-12) of the chi-square
    mass. df >= 1e6 collapses to the plain normal-range tail.
    """
    if k < 2:
        raise ValueError(f"studentized range needs k >= 2 groups, got {k}")
    if df < 1:
        raise ValueError(f"studentized range needs df >= 1, got {df}")
    if q <= 0:
        return 1.0
    if not np.isfinite(q):
        return 0.0
    if df >= _INFINITE_DF:
        return float(np.clip(1.0 - _range_cdf(q, k)[0], 0.0, 1.0))
    nu = float(df)

    def wh_bound(z: float) -> float:
        # Wilson-Hilferty cube approximation for the chi-square quantile
        t = 1.0 - 2.0 / (9.0 * nu) + z * sqrt(2.0 / (9.0 * nu))
        return nu * max(t, 0.0) ** 3

    s_lo = sqrt(wh_bound(-12.0) / nu)
    s_hi = sqrt(wh_bound(12.0) / nu)
    s = s_lo + (s_hi - s_lo) * 0.5 * (_OUTER_NODES + 1.0)
    ws = (s_hi - s_lo) * 0.5 * _OUTER_WEIGHTS
    with np.errstate(divide="ignore"):
        log_pdf = (
            log(2.0)
            + 0.5 * nu * log(nu / 2.0)
            - lgamma(nu / 2.0)
            + (nu - 1.0) * np.log(s, where=s > 0, out=np.full_like(s, -np.inf))
            - 0.5 * nu * s * s
        )
    pdf = np.exp(log_pdf)
    cdf = float((ws * pdf) @ _range_cdf(q * s, k))
    return float(np.clip(1.0 - cdf, 0.0, 1.0))
