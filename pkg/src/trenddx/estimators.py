"""Trend estimators over irregular longitudinal series.

Everything here is a pure function of its inputs plus an explicit seed.
Estimators raise :class:`EstimatorError` on precondition violations and
:class:`FitFailure` when a fit cannot be completed; the plan executor in
``router`` turns both into downgrades, never into silent answers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .series import Panel, TimeSeries

VARIANCE_FLOOR = 1e-12


class EstimatorError(ValueError):
    """An estimator's preconditions were not met."""


class FitFailure(RuntimeError):
    """A fit ran but did not produce a usable result."""


# ---------------------------------------------------------------------------
# robust / nonparametric trend


def theil_sen(series: TimeSeries) -> float:
    """Median of all pairwise slopes (y_b - y_a) / (t_b - t_a), a < b.

    The median of an even-length slope list is the mean of the two central
    values (numpy convention).
    """
    if len(series) < 2:
        raise EstimatorError("theil_sen needs at least 2 points")
    t, y = series.t, series.y
    dt = t[None, :] - t[:, None]
    dy = y[None, :] - y[:, None]
    iu = np.triu_indices(len(series), k=1)
    slopes = dy[iu] / dt[iu]
    return float(np.median(slopes))


@dataclass(frozen=True)
class MannKendallResult:
    s: int
    direction: str  # up | down | flat
    p_proxy: float
    z: float


def mann_kendall(series: TimeSeries, z_threshold: float = 1.96) -> MannKendallResult:
    """Mann-Kendall trend test with tie-corrected variance.

    S = sum_{a<b} sign(y_b - y_a). The normal approximation with continuity
    correction gives z, and ``p_proxy`` is the two-sided tail probability.
    Direction is flat when |z| falls below ``z_threshold``.
    """
    n = len(series)
    if n < 3:
        raise EstimatorError("mann_kendall needs at least 3 points")
    y = series.y
    s = int(np.sum(np.sign(y[None, :] - y[:, None])[np.triu_indices(n, k=1)]))
    _, counts = np.unique(y, return_counts=True)
    ties = counts[counts > 1]
    var_s = (n * (n - 1) * (2 * n + 5) - np.sum(ties * (ties - 1) * (2 * ties + 5))) / 18.0
    if var_s <= 0:  # all values tied
        z = 0.0
    elif s > 0:
        z = (s - 1) / math.sqrt(var_s)
    elif s < 0:
        z = (s + 1) / math.sqrt(var_s)
    else:
        z = 0.0
    p = math.erfc(abs(z) / math.sqrt(2.0))
    if abs(z) < z_threshold or s == 0:
        direction = "flat"
    else:
        direction = "up" if s > 0 else "down"
    return MannKendallResult(s=s, direction=direction, p_proxy=p, z=z)


def ols_slope(series: TimeSeries) -> tuple[float, float]:
    """Ordinary least squares line fit; returns (slope, intercept)."""
    if len(series) < 2:
        raise EstimatorError("a line fit needs at least 2 points")
    slope, intercept = np.polyfit(series.t, series.y, 1)
    return float(slope), float(intercept)


# ---------------------------------------------------------------------------
# random-intercept longitudinal model


@dataclass(frozen=True)
class MixedEffectsFit:
    beta0: float
    beta1: float
    sigma_u2: float
    sigma_eps2: float
    per_patient_u: Mapping[str, float]
    converged: bool
    se_beta1: float
    ar1_rho: float | None = None
    loglik: float = float("-inf")


def _profile_gls(
    blocks: Sequence[tuple[np.ndarray, np.ndarray]], lam: float
) -> tuple[np.ndarray, float, float, np.ndarray, float]:
    """GLS solve for fixed variance ratio lam = sigma_u^2 / sigma_eps^2.

    Each block is (X_i, y_i) for one patient; the marginal covariance is
    sigma_eps^2 (I + lam * 11'). Returns (beta, rss, logdet, A, n_total)
    where A is the normal-equation matrix X' V^-1 X.
    """
    p = blocks[0][0].shape[1]
    a = np.zeros((p, p))
    b = np.zeros(p)
    yy = 0.0
    logdet = 0.0
    n_total = 0
    for x, y in blocks:
        n = x.shape[0]
        w = lam / (1.0 + n * lam) if lam > 0 else 0.0
        sx = x.sum(axis=0)
        sy = float(y.sum())
        a += x.T @ x - w * np.outer(sx, sx)
        b += x.T @ y - w * sx * sy
        yy += float(y @ y) - w * sy * sy
        logdet += math.log1p(n * lam)
        n_total += n
    try:
        beta = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise FitFailure(f"singular design in mixed-effects fit: {exc}") from exc
    rss = max(yy - float(beta @ b), 0.0)
    return beta, rss, logdet, a, float(n_total)


def _profile_loglik(rss: float, logdet: float, n: float) -> tuple[float, float]:
    sigma2 = max(rss / n, VARIANCE_FLOOR)
    ll = -0.5 * (n * math.log(2 * math.pi * sigma2) + logdet + rss / sigma2)
    return ll, sigma2


def fit_mixed_effects(panel: Panel, use_ar1: bool = False) -> MixedEffectsFit:
    """Random-intercept model y_ij = b0 + b1 t_ij + u_i + eps_ij.

    The marginal Gaussian likelihood is maximized over a 1-d profile of the
    variance ratio lam = sigma_u^2/sigma_eps^2 (coarse log grid followed by
    golden-section refinement); (b0, b1, sigma_eps^2) are closed-form given
    lam. With ``use_ar1`` and min per-patient n > 6, lag-1 autocorrelation is
    estimated from pooled within-patient residuals and the data pre-whitened
    once (single Cochrane-Orcutt pass) before the profile fit.

    ``converged`` is False when the profile optimum sits on the upper grid
    boundary; the lam -> 0 boundary (no between-patient variance) is a valid
    interior answer and keeps converged True.
    """
    items = panel.items()
    if len(items) < 2 and panel.n_points < 4:
        raise EstimatorError("need >=2 patients or >=4 points total")
    for pid, s in items:
        if len(s) < 2:
            raise EstimatorError(f"patient {pid!r} has fewer than 2 points")
    all_t = np.concatenate([s.t for _, s in items])
    if float(np.ptp(all_t)) == 0.0:
        raise EstimatorError("degenerate design: all timestamps equal")

    def make_blocks(transform_rho: float | None) -> list[tuple[np.ndarray, np.ndarray]]:
        blocks = []
        for _, s in items:
            x = np.column_stack([np.ones(len(s)), s.t])
            y = s.y.copy()
            if transform_rho is not None:
                x = x[1:] - transform_rho * x[:-1]
                y = y[1:] - transform_rho * y[:-1]
            blocks.append((x, y))
        return blocks

    def run_profile(blocks):
        grid = np.concatenate([[0.0], np.logspace(-8, 8, 49)])
        lls = []
        for lam in grid:
            beta, rss, logdet, _, n = _profile_gls(blocks, lam)
            ll, _ = _profile_loglik(rss, logdet, n)
            lls.append(ll)
        best = int(np.argmax(lls))
        converged = best != len(grid) - 1
        lo = grid[max(best - 1, 0)]
        hi = grid[min(best + 1, len(grid) - 1)]

        def nll(lam: float) -> float:
            _, rss, logdet, _, n = _profile_gls(blocks, lam)
            return -_profile_loglik(rss, logdet, n)[0]

        lam = float(grid[best])
        if converged and hi > lo:
            # golden-section between the bracketing grid points
            invphi = (math.sqrt(5) - 1) / 2
            a_, b_ = lo, hi
            c_ = b_ - invphi * (b_ - a_)
            d_ = a_ + invphi * (b_ - a_)
            fc, fd = nll(c_), nll(d_)
            for _ in range(80):
                if fc < fd:
                    b_, d_, fd = d_, c_, fc
                    c_ = b_ - invphi * (b_ - a_)
                    fc = nll(c_)
                else:
                    a_, c_, fc = c_, d_, fd
                    d_ = a_ + invphi * (b_ - a_)
                    fd = nll(d_)
                if b_ - a_ <= 1e-12 * max(1.0, b_):
                    break
            # ties resolve toward the simpler model (lam = 0 reproduces OLS)
            lam = min((0.0, lam, (a_ + b_) / 2), key=nll)
        return lam, converged

    def finalize(blocks, lam, converged, rho):
        beta, rss, logdet, a, n = _profile_gls(blocks, lam)
        ll, _ = _profile_loglik(rss, logdet, n)
        sigma_eps2 = max(rss / n, 1e-30)
        sigma_u2 = lam * sigma_eps2
        cov = np.linalg.inv(a) * sigma_eps2
        u: dict[str, float] = {}
        for (pid, _), (x, y) in zip(items, blocks):
            resid = y - x @ beta
            n_i = x.shape[0]
            u[pid] = float(lam * n_i / (1.0 + lam * n_i) * resid.mean()) if lam > 0 else 0.0
        # GLS orthogonality keeps the mean of the BLUPs at zero; re-center to
        # absorb the last few ulps of floating error.
        if u:
            mean_u = sum(u.values()) / len(u)
            u = {pid: val - mean_u for pid, val in u.items()}
        return MixedEffectsFit(
            beta0=float(beta[0]),
            beta1=float(beta[1]),
            sigma_u2=float(sigma_u2),
            sigma_eps2=float(sigma_eps2),
            per_patient_u=u,
            converged=bool(converged),
            se_beta1=float(math.sqrt(max(cov[1, 1], 0.0))),
            ar1_rho=rho,
            loglik=float(ll),
        )

    blocks = make_blocks(None)
    lam, converged = run_profile(blocks)
    rho: float | None = None
    min_n = min(len(s) for _, s in items)
    if use_ar1 and min_n > 6:
        fit0 = finalize(blocks, lam, converged, None)
        num = 0.0
        den = 0.0
        for (pid, s), (x, y) in zip(items, blocks):
            resid = y - x @ np.array([fit0.beta0, fit0.beta1]) - fit0.per_patient_u[pid]
            num += float(np.sum(resid[1:] * resid[:-1]))
            den += float(np.sum(resid[:-1] ** 2))
        if den > 0:
            rho = float(np.clip(num / den, -0.95, 0.95))
            blocks = make_blocks(rho)
            lam, converged = run_profile(blocks)
    return finalize(blocks, lam, converged, rho)


# ---------------------------------------------------------------------------
# change-point posterior


@dataclass(frozen=True)
class ChangePointResult:
    """Posterior over the split index tau (1-based last index of segment 1)."""

    posterior: Mapping[int, float]
    mode: int
    mode_mass: float

    @property
    def n_points(self) -> int:
        return len(self.posterior) + 1


def change_point_posterior(series: TimeSeries) -> ChangePointResult:
    """Exhaustive-grid posterior P(tau | y) over tau in {1..T-1}.

    Uniform prior; each segment gets its plug-in MLE mean and the two
    segments share a single pooled MLE variance (floored at 1e-12 so constant
    segments stay finite). Timestamps only order the observations; the
    likelihood is an index model.
    """
    y = series.y
    t_count = len(series)
    if t_count < 4:
        raise EstimatorError("change-point search needs at least 4 points")
    loglik = np.empty(t_count - 1)
    for tau in range(1, t_count):
        seg1, seg2 = y[:tau], y[tau:]
        sse = float(np.sum((seg1 - seg1.mean()) ** 2) + np.sum((seg2 - seg2.mean()) ** 2))
        sigma2 = max(sse / t_count, VARIANCE_FLOOR)
        loglik[tau - 1] = -0.5 * t_count * math.log(2 * math.pi * sigma2) - sse / (2 * sigma2)
    loglik -= loglik.max()
    weights = np.exp(loglik)
    probs = weights / weights.sum()
    mode_idx = int(np.argmax(probs))
    posterior = {tau: float(probs[tau - 1]) for tau in range(1, t_count)}
    return ChangePointResult(posterior=posterior, mode=mode_idx + 1, mode_mass=float(probs[mode_idx]))


# ---------------------------------------------------------------------------
# Gaussian-process smoothing


@dataclass(frozen=True)
class GpKernelParams:
    lengthscale: float
    signal_var: float
    noise_var: float = 0.0

    def __post_init__(self) -> None:
        if self.lengthscale <= 0 or self.signal_var <= 0 or self.noise_var < 0:
            raise ValueError("kernel params need lengthscale>0, signal_var>0, noise_var>=0")


@dataclass(frozen=True)
class GpPosterior:
    mean: float
    variance: float
    kernel_params: GpKernelParams


def _se_kernel(a: np.ndarray, b: np.ndarray, params: GpKernelParams) -> np.ndarray:
    d = a[:, None] - b[None, :]
    return params.signal_var * np.exp(-(d**2) / (2.0 * params.lengthscale**2))


def _factor_with_jitter(c: np.ndarray):
    jitter = 0.0
    while True:
        try:
            return cho_factor(c + jitter * np.eye(c.shape[0]), lower=True)
        except np.linalg.LinAlgError:
            jitter = 1e-9 if jitter == 0.0 else jitter * 10.0
            if jitter > 1e-3:
                raise FitFailure("covariance factorization failed despite jitter escalation")


def gp_posterior(train: TimeSeries | None, query_t: float, params: GpKernelParams) -> GpPosterior:
    """Squared-exponential GP posterior mean/variance at one query time.

    mean = k*' (K + sn^2 I)^-1 y and var = k** - k*' (K + sn^2 I)^-1 k*,
    with a zero mean function. The solve uses a symmetric positive-definite
    factorization with jitter (1e-9, escalating tenfold) added on failure.
    """
    if train is None or len(train) == 0:
        return GpPosterior(mean=0.0, variance=params.signal_var, kernel_params=params)
    x = train.t
    k = _se_kernel(x, x, params) + params.noise_var * np.eye(len(train))
    factor = _factor_with_jitter(k)
    k_star = _se_kernel(np.array([query_t]), x, params)[0]
    alpha = cho_solve(factor, train.y)
    mean = float(k_star @ alpha)
    v = cho_solve(factor, k_star)
    var = float(params.signal_var - k_star @ v)
    if var < 0:
        if var < -1e-10:
            raise FitFailure(f"negative posterior variance {var}")
        var = 0.0
    return GpPosterior(mean=mean, variance=var, kernel_params=params)


# ---------------------------------------------------------------------------
# multiple imputation with pooled estimates


@dataclass(frozen=True)
class PooledEstimate:
    point: float
    within_var: float
    between_var: float
    total_var: float
    k: int


def rubin_pool(estimates: Sequence[float], within_variances: Sequence[float] | None = None) -> PooledEstimate:
    """Pool per-stack estimates: point mean, total variance W + (1 + 1/K) B."""
    k = len(estimates)
    if k < 2:
        raise EstimatorError("pooling needs at least 2 stacks")
    est = np.asarray(estimates, dtype=float)
    w = float(np.mean(within_variances)) if within_variances is not None else 0.0
    b = float(np.var(est, ddof=1))
    return PooledEstimate(
        point=float(est.mean()),
        within_var=w,
        between_var=b,
        total_var=w + (1.0 + 1.0 / k) * b,
        k=k,
    )


@dataclass(frozen=True)
class ImputationStacks:
    stacks: tuple[TimeSeries, ...]
    k: int
    noise_var: float
    pooled: PooledEstimate | None = None


def impute_stacks(
    series: TimeSeries,
    grid: Sequence[float],
    k: int = 5,
    seed: int = 0,
) -> ImputationStacks:
    """Complete ``series`` onto ``grid`` with K noisy linear-interpolation stacks.

    Grid points must lie within the observed span (no extrapolation). Each
    stack keeps the original observations exactly and fills new grid points
    with linear interpolation plus Gaussian noise whose variance is the mean
    squared leave-one-out interpolation residual of the interior points.
    """
    if k < 2:
        raise EstimatorError("need K >= 2 stacks")
    if len(series) < 2:
        raise EstimatorError("imputation needs at least 2 observed points")
    lo, hi = series.span
    grid = [float(g) for g in grid]
    for g in grid:
        if g < lo or g > hi:
            raise EstimatorError(f"grid point {g} outside observed span [{lo}, {hi}]")

    t, y = series.t, series.y
    residuals = []
    for i in range(1, len(series) - 1):
        yhat = y[i - 1] + (y[i + 1] - y[i - 1]) * (t[i] - t[i - 1]) / (t[i + 1] - t[i - 1])
        residuals.append(y[i] - yhat)
    noise_var = float(np.mean(np.square(residuals))) if residuals else 0.0

    observed = set(t.tolist())
    new_points = sorted(g for g in grid if g not in observed)
    all_t = np.array(sorted(observed | set(new_points)))
    base = np.interp(all_t, t, y)
    observed_mask = np.isin(all_t, t)

    rng = np.random.default_rng(seed)
    stacks = []
    for _ in range(k):
        values = base.copy()
        if new_points and noise_var > 0:
            noise = rng.normal(0.0, math.sqrt(noise_var), size=int((~observed_mask).sum()))
            values[~observed_mask] += noise
        stacks.append(TimeSeries(all_t.copy(), values))
    return ImputationStacks(stacks=tuple(stacks), k=k, noise_var=noise_var)


# ---------------------------------------------------------------------------
# cohort anomaly flag and dimension reduction


@dataclass(frozen=True)
class CohortStats:
    mu: float
    sigma: float
    age_band: str = ""
    sex: str = ""

    def __post_init__(self) -> None:
        if self.sigma <= 0:
            raise ValueError("cohort sigma must be positive")


ANOMALY_Z = 2.5


@dataclass(frozen=True)
class ZScoreResult:
    z: float
    anomalous: bool


def cohort_zscore(value: float, stats: CohortStats) -> ZScoreResult:
    """z = (value - mu) / sigma; anomalous iff |z| > 2.5 (strict)."""
    z = (value - stats.mu) / stats.sigma
    return ZScoreResult(z=float(z), anomalous=bool(abs(z) > ANOMALY_Z))


@dataclass(frozen=True)
class PcaResult:
    components: np.ndarray  # analytes x m
    projected: np.ndarray  # m x times
    eigenvalues: np.ndarray
    rank_limited: bool


def pca_project(rows: np.ndarray, m: int) -> PcaResult:
    """Project an analytes-by-times matrix onto its top-m analyte eigenvectors.

    Rows are mean-centered internally; components come in descending
    eigenvalue order with each eigenvector's largest-magnitude entry made
    positive. Asking for more components than the matrix rank is reported via
    ``rank_limited`` and returns rank-many components.
    """
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2:
        raise EstimatorError("expected a 2-d analytes x times matrix")
    n_analytes, n_times = rows.shape
    if m < 1 or m > n_analytes:
        raise EstimatorError("m must be in 1..analyte count")
    centered = rows - rows.mean(axis=1, keepdims=True)
    denom = max(n_times - 1, 1)
    cov = centered @ centered.T / denom
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    tol = max(float(eigvals[0]), 0.0) * 1e-12 + 1e-300
    rank = int(np.sum(eigvals > tol))
    rank_limited = m > rank
    m_eff = min(m, rank) if rank > 0 else min(m, 1)
    w = eigvecs[:, :m_eff].copy()
    for j in range(w.shape[1]):
        pivot = int(np.argmax(np.abs(w[:, j])))
        if w[pivot, j] < 0:
            w[:, j] = -w[:, j]
    return PcaResult(
        components=w,
        projected=w.T @ centered,
        eigenvalues=eigvals[:m_eff].copy(),
        rank_limited=rank_limited,
    )
