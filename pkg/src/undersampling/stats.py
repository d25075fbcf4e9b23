"""Distribution functions and the pairwise / blocked tests used for selection.

Everything here is written against numpy only. The incomplete beta and gamma
functions use the classic Lentz continued fractions (plus the power series
for the lower gamma), which is what the t, chi-squared and normal CDFs reduce
to. The batch variants of the tests (``*_batch``) operate on one comparison
per row and are what the Monte-Carlo drivers call; the scalar variants wrap
them.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ParameterError

_EPS = 1e-15
_TINY = 1e-300
_MAX_ITER = 5000

_vlgamma = np.vectorize(math.lgamma, otypes=[float])
_verfc = np.vectorize(math.erfc, otypes=[float])


# --------------------------------------------------------------------------
# special functions

def _betacf(a, b, x):
    """Continued fraction for the incomplete beta, modified Lentz (vectorised)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < _TINY, _TINY, d)
    d = 1.0 / d
    h = d.copy()
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        h = h * d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        delta = d * c
        h = h * delta
        if np.all(np.abs(delta - 1.0) < _EPS):
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def _betacf_scalar(a, b, x):
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def _betainc_scalar(a, b, x, xc):
    if x <= 0:
        return 0.0
    if xc <= 0:
        return 1.0
    front = math.exp(math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                     + a * math.log(x) + b * math.log(xc))
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf_scalar(a, b, x) / a
    return 1.0 - front * _betacf_scalar(b, a, xc) / b


# below this many elements the pure-Python loop beats the array version
_SCALAR_CUTOFF = 16


def betainc(a, b, x, xc=None):
    """Regularised incomplete beta ``I_x(a, b)``.

    ``xc`` may carry ``1 - x`` computed without cancellation by the caller.
    """
    a, b, x = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float), np.asarray(x, float))
    xc = 1.0 - x if xc is None else np.broadcast_to(np.asarray(xc, float), x.shape)
    if np.any((a <= 0) | (b <= 0)):
        raise ParameterError("beta parameters must be positive")
    if np.any((x < 0) | (x > 1)):
        raise ParameterError("x must lie in [0, 1]")
    if x.size <= _SCALAR_CUTOFF:
        out = np.array([_betainc_scalar(*v) for v in zip(a.flat, b.flat, x.flat, xc.flat)]).reshape(x.shape)
        return out if out.ndim else float(out)
    out = np.empty(x.shape)
    zero = x <= 0
    one = xc <= 0
    inner = ~(zero | one)
    out[zero] = 0.0
    out[one & ~zero] = 1.0
    if np.any(inner):
        ai, bi, xi, xci = a[inner], b[inner], x[inner], xc[inner]
        log_front = (_vlgamma(ai + bi) - _vlgamma(ai) - _vlgamma(bi)
                     + ai * np.log(xi) + bi * np.log(xci))
        front = np.exp(log_front)
        direct = xi < (ai + 1.0) / (ai + bi + 2.0)
        res = np.empty(xi.shape)
        if np.any(direct):
            res[direct] = front[direct] * _betacf(ai[direct], bi[direct], xi[direct]) / ai[direct]
        flip = ~direct
        if np.any(flip):
            res[flip] = 1.0 - front[flip] * _betacf(bi[flip], ai[flip], xci[flip]) / bi[flip]
        out[inner] = res
    return out if out.ndim else float(out)


def _gamma_series(s, x):
    total = term = 1.0 / s
    n = s
    for _ in range(_MAX_ITER):
        n += 1.0
        term *= x / n
        total += term
        if abs(term) < abs(total) * _EPS:
            return total * math.exp(-x + s * math.log(x) - math.lgamma(s))
    raise ArithmeticError("incomplete gamma series did not converge")


def _gamma_cf(s, x):
    b = x + 1.0 - s
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER + 1):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return math.exp(-x + s * math.log(x) - math.lgamma(s)) * h
    raise ArithmeticError("incomplete gamma continued fraction did not converge")


def _gammainc_pair(s: float, x: float) -> tuple[float, float]:
    """``(P(s, x), Q(s, x))`` with the smaller one computed directly."""
    if x <= 0:
        return 0.0, 1.0
    if x < s + 1.0:
        p = _gamma_series(s, x)
        return p, 1.0 - p
    q = _gamma_cf(s, x)
    return 1.0 - q, q


def gammainc(s, x):
    """Regularised lower incomplete gamma ``P(s, x)``."""
    if s <= 0:
        raise ParameterError("gamma shape must be positive")
    return _gammainc_pair(float(s), float(x))[0]


def gammaincc(s, x):
    """Regularised upper incomplete gamma ``Q(s, x)``."""
    if s <= 0:
        raise ParameterError("gamma shape must be positive")
    return _gammainc_pair(float(s), float(x))[1]


def normal_cdf(x):
    x = np.asarray(x, dtype=float)
    out = 0.5 * _verfc(-x / math.sqrt(2.0))
    return out if out.ndim else float(out)


def _check_dof(dof):
    d = np.asarray(dof, dtype=float)
    if np.any(~(d >= 1)):
        raise ParameterError(f"degrees of freedom must be >= 1, got {dof!r}")
    return d


def _t_tail(x, d):
    """``P(T > |x|) = I_{d/(d+x^2)}(d/2, 1/2) / 2``."""
    t2 = x * x
    with np.errstate(invalid="ignore", divide="ignore"):
        z = d / (d + t2)
        zc = t2 / (d + t2)
    inf = np.isinf(x)
    z = np.where(inf, 0.0, z)
    zc = np.where(inf, 1.0, zc)
    return 0.5 * np.asarray(betainc(d / 2.0, 0.5, z, zc))


def student_t_cdf(x, dof):
    """CDF of Student's t with (possibly fractional) ``dof`` degrees of freedom."""
    d = _check_dof(dof)
    x, d = np.broadcast_arrays(np.asarray(x, dtype=float), d)
    tail = _t_tail(x, d)
    out = np.where(x < 0, tail, 1.0 - tail)
    return out if out.ndim else float(out)


def student_t_pdf(x, dof):
    d = float(dof)
    logc = math.lgamma((d + 1) / 2) - math.lgamma(d / 2) - 0.5 * math.log(d * math.pi)
    return math.exp(logc - (d + 1) / 2 * math.log1p(x * x / d))


@lru_cache(maxsize=4096)
def student_t_ppf(q: float, dof: float) -> float:
    """Quantile of Student's t, by safeguarded Newton iteration on the CDF."""
    _check_dof(dof)
    if not 0.0 < q < 1.0:
        raise ParameterError("quantile level must be in (0, 1)")
    if q == 0.5:
        return 0.0
    if q < 0.5:
        return -student_t_ppf(1.0 - q, dof)
    lo, hi = 0.0, 1.0
    while student_t_cdf(hi, dof) < q:
        lo, hi = hi, hi * 2.0
    x = min(max(normal_ppf(q), lo), hi)
    for _ in range(200):
        f = student_t_cdf(x, dof) - q
        if f > 0:
            hi = x
        else:
            lo = x
        step = f / student_t_pdf(x, dof)
        nxt = x - step
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        if abs(nxt - x) <= 1e-13 * max(1.0, abs(x)):
            return nxt
        x = nxt
    return x


def normal_ppf(q: float) -> float:
    """Normal quantile by Newton iteration on :func:`normal_cdf`."""
    if not 0.0 < q < 1.0:
        raise ParameterError("quantile level must be in (0, 1)")
    x = 0.0
    for _ in range(100):
        f = normal_cdf(x) - q
        step = f / (math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi))
        x -= max(-2.0, min(2.0, step))
        if abs(step) < 1e-14:
            break
    return x


def chi_squared_cdf(x, dof) -> float:
    if int(dof) != dof or dof < 1:
        raise ParameterError(f"chi-squared dof must be a positive integer, got {dof!r}")
    if x < 0:
        raise ParameterError("chi-squared argument must be nonnegative")
    return gammainc(dof / 2.0, x / 2.0)


def chi_squared_sf(x, dof) -> float:
    if int(dof) != dof or dof < 1:
        raise ParameterError(f"chi-squared dof must be a positive integer, got {dof!r}")
    if x < 0:
        raise ParameterError("chi-squared argument must be nonnegative")
    return gammaincc(dof / 2.0, x / 2.0)


# --------------------------------------------------------------------------
# pairwise tests

class Decision(str, enum.Enum):
    A_BETTER = "A_BETTER"
    B_BETTER = "B_BETTER"
    INCONCLUSIVE = "INCONCLUSIVE"


@dataclass(frozen=True)
class TestVerdict:
    """One-sided comparison outcome; lower values are better.

    ``p_a_less`` is the p-value of the test whose alternative is "A has the
    lower location", so a small value is evidence for A.
    """

    __test__ = False  # keep pytest from collecting this as a test class

    p_a_less: float
    p_b_less: float
    decision: Decision
    alpha: float
    statistic: float = 0.0
    dof: float | None = None


def decide(p_a_less, p_b_less, alpha):
    """Vectorised decision codes: +1 A better, -1 B better, 0 inconclusive."""
    p_a_less = np.asarray(p_a_less)
    p_b_less = np.asarray(p_b_less)
    return np.where(p_a_less < alpha, 1, np.where(p_b_less < alpha, -1, 0))


_CODE = {1: Decision.A_BETTER, -1: Decision.B_BETTER, 0: Decision.INCONCLUSIVE}


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise ParameterError("alpha must be in (0, 1)")


def welch_batch(a, b):
    """Welch statistics and one-sided p-values, one comparison per row.

    Parameters
    ----------
    a, b : array_like, shape (rows, n_a) and (rows, n_b)

    Returns
    -------
    t, dof, p_a_less, p_b_less : ndarray, shape (rows,)
        Rows where both samples have zero variance get ``dof = nan`` and
        p-values decided by direct comparison (0.5/0.5 when equal).
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    na, nb = a.shape[-1], b.shape[-1]
    if na < 2 or nb < 2:
        raise ParameterError("t-test needs at least 2 values per sample")
    ma, mb = a.mean(axis=-1), b.mean(axis=-1)
    va = a.var(axis=-1, ddof=1) / na
    vb = b.var(axis=-1, ddof=1) / nb
    se2 = va + vb
    degenerate = se2 <= 0
    rows = ma.shape
    t = np.zeros(rows)
    dof = np.full(rows, np.nan)
    pa = np.empty(rows)
    pb = np.empty(rows)
    ok = ~degenerate
    if np.any(ok):
        se2o = se2[ok]
        t[ok] = (ma[ok] - mb[ok]) / np.sqrt(se2o)
        # shares of the variance keep the squares from underflowing for tiny spreads
        wa, wb = va[ok] / se2o, vb[ok] / se2o
        d = 1.0 / (wa ** 2 / (na - 1) + wb ** 2 / (nb - 1))
        # the Satterthwaite value is >= min(n)-1 analytically; guard rounding
        d = np.maximum(d, min(na, nb) - 1)
        dof[ok] = d
        # one tail serves both directions, which keeps swaps exactly antisymmetric
        tail = _t_tail(t[ok], d)
        neg = t[ok] < 0
        pa[ok] = np.where(neg, tail, 1.0 - tail)
        pb[ok] = np.where(neg, 1.0 - tail, tail)
    if np.any(degenerate):
        diff = ma[degenerate] - mb[degenerate]
        pa[degenerate] = np.where(diff < 0, 0.0, np.where(diff > 0, 1.0, 0.5))
        pb[degenerate] = np.where(diff > 0, 0.0, np.where(diff < 0, 1.0, 0.5))
        t[degenerate] = np.where(diff < 0, -np.inf, np.where(diff > 0, np.inf, 0.0))
    return t, dof, pa, pb


def t_test_one_sided(a, b, alpha: float = 0.05) -> TestVerdict:
    """Unpaired Welch t-test in both one-sided directions."""
    _check_alpha(alpha)
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size < 2 or b.size < 2:
        raise ParameterError("t-test needs at least 2 values per sample")
    t, dof, pa, pb = welch_batch(a[None, :], b[None, :])
    code = int(decide(pa[0], pb[0], alpha))
    d = None if np.isnan(dof[0]) else float(dof[0])
    return TestVerdict(float(pa[0]), float(pb[0]), _CODE[code], alpha, float(t[0]), d)


def midranks(x, axis=-1):
    """Ranks starting at 1 with ties sharing their average rank.

    Pairwise comparison along ``axis``; fine for the short rows used here.
    """
    x = np.moveaxis(np.asarray(x, dtype=float), axis, -1)
    less = (x[..., None, :] < x[..., :, None]).sum(axis=-1)
    equal = (x[..., None, :] == x[..., :, None]).sum(axis=-1)
    r = less + (equal + 1) / 2.0
    return np.moveaxis(r, -1, axis)


@lru_cache(maxsize=256)
def _rank_sum_counts(n_a: int, n: int) -> tuple[int, ...]:
    """Number of size-``n_a`` subsets of ``{1..n}`` for every rank sum.

    Index ``s`` of the result holds the count for rank sum ``s``.
    """
    max_sum = n_a * (2 * n - n_a + 1) // 2
    # ways[j][s]: subsets of size j with sum s among the ranks seen so far
    ways = [[0] * (max_sum + 1) for _ in range(n_a + 1)]
    ways[0][0] = 1
    for r in range(1, n + 1):
        for j in range(min(r, n_a), 0, -1):
            prev, cur = ways[j - 1], ways[j]
            for s in range(max_sum, r - 1, -1):
                if prev[s - r]:
                    cur[s] += prev[s - r]
    return tuple(ways[n_a])


EXACT_MAX_N = 12


def _wilcoxon_exact(w: int, n_a: int, n: int) -> tuple[float, float]:
    counts = _rank_sum_counts(n_a, n)
    total = sum(counts)
    lower = sum(counts[: w + 1])
    upper = sum(counts[w:])
    return lower / total, upper / total


def wilcoxon_batch(a, b):
    """Rank-sum statistic of ``a`` and its two one-sided p-values per row.

    Tie-free rows with ``n_a + n_b <= 12`` use the exact null distribution;
    all others use the tie-corrected normal approximation with continuity
    correction.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    na, nb = a.shape[-1], b.shape[-1]
    if na < 1 or nb < 1:
        raise ParameterError("rank-sum test needs nonempty samples")
    n = na + nb
    pooled = np.concatenate([a, b], axis=-1)
    ranks = midranks(pooled)
    w = ranks[..., :na].sum(axis=-1)
    equal = (pooled[..., None, :] == pooled[..., :, None]).sum(axis=-1)
    # sum over tie groups of (t^3 - t) equals the sum over elements of (t_i^2 - 1)
    tie_term = (equal.astype(float) ** 2 - 1.0).sum(axis=-1)
    mean = na * (n + 1) / 2.0
    var = na * nb / 12.0 * ((n + 1) - tie_term / (n * (n - 1))) if n > 1 else np.zeros_like(w)
    var = np.maximum(var, 0.0)
    pa = np.ones(w.shape)
    pb = np.ones(w.shape)
    pos = var > 0
    if np.any(pos):
        sd = np.sqrt(var[pos])
        pa[pos] = normal_cdf((w[pos] - mean + 0.5) / sd)
        pb[pos] = normal_cdf((mean - w[pos] + 0.5) / sd)
    if n <= EXACT_MAX_N:
        for i in np.flatnonzero(tie_term == 0):
            pa[i], pb[i] = _wilcoxon_exact(int(round(w[i])), na, n)
    return w, pa, pb


def wilcoxon_rank_sum(a, b, alpha: float = 0.05) -> TestVerdict:
    """Wilcoxon rank-sum (Mann-Whitney) test in both one-sided directions."""
    _check_alpha(alpha)
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size < 1 or b.size < 1:
        raise ParameterError("rank-sum test needs nonempty samples")
    w, pa, pb = wilcoxon_batch(a[None, :], b[None, :])
    code = int(decide(pa[0], pb[0], alpha))
    return TestVerdict(float(pa[0]), float(pb[0]), _CODE[code], alpha, float(w[0]))


# --------------------------------------------------------------------------
# Friedman

@dataclass(frozen=True)
class FriedmanResult:
    statistic: float
    dof: int
    p_value: float
    rank_sums: tuple[float, ...]


def _check_blocks(blocks):
    x = np.asarray(blocks, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ParameterError("Friedman test needs a matrix with >= 2 blocks and >= 2 treatments")
    return x


def _friedman_from_ranks(ranks) -> FriedmanResult:
    m, k = ranks.shape
    rank_sums = ranks.sum(axis=0)
    centred = rank_sums / m - (k + 1) / 2.0
    stat = 12.0 * m / (k * (k + 1)) * float(np.dot(centred, centred))
    stat = max(stat, 0.0)
    return FriedmanResult(stat, k - 1, chi_squared_sf(stat, k - 1), tuple(float(r) for r in rank_sums))


def friedman_test(blocks) -> FriedmanResult:
    """Friedman rank test over ``m`` blocks (rows) and ``k`` treatments (columns)."""
    x = _check_blocks(blocks)
    return _friedman_from_ranks(midranks(x, axis=1))


def friedman_eliminate(result: FriedmanResult, blocks, alpha: float = 0.05, config_ids=None) -> list:
    """Survivors of the racing post-hoc step.

    When the omnibus test rejects, every treatment whose rank sum exceeds the
    best rank sum by more than the pairwise critical difference is dropped::

        t_{1-alpha/2, (m-1)(k-1)} * sqrt(2 (m A - sum_j R_j^2) / ((m-1)(k-1)))

    with ``A`` the sum of squared within-block ranks.
    """
    x = _check_blocks(blocks)
    m, k = x.shape
    ids = list(range(k)) if config_ids is None else list(config_ids)
    if len(ids) != k:
        raise ParameterError("config_ids must match the number of columns")
    keep = _friedman_keep(midranks(x, axis=1), result, alpha)
    return [c for c, kp in zip(ids, keep) if kp]


def _friedman_keep(ranks, result: FriedmanResult, alpha: float) -> np.ndarray:
    m, k = ranks.shape
    if result.p_value >= alpha:
        return np.ones(k, dtype=bool)
    rank_sums = np.asarray(result.rank_sums)
    best = int(np.argmin(rank_sums))
    dof = (m - 1) * (k - 1)
    spread = 2.0 * (m * float((ranks ** 2).sum()) - float(np.dot(rank_sums, rank_sums))) / dof
    crit = student_t_ppf(1.0 - alpha / 2.0, float(dof)) * math.sqrt(max(spread, 0.0))
    keep = (rank_sums - rank_sums[best]) <= crit * (1 + 1e-12) + 1e-9
    keep[best] = True
    return keep


def friedman_step(blocks, alpha: float = 0.05) -> tuple[FriedmanResult, np.ndarray]:
    """Omnibus test plus post-hoc survivors mask, ranking the blocks once."""
    x = _check_blocks(blocks)
    ranks = midranks(x, axis=1)
    res = _friedman_from_ranks(ranks)
    return res, _friedman_keep(ranks, res, alpha)
