"""Closed-form error analytics, Fisher information, and metric definitions.

Every estimator in this package has an analytic error budget that a Monte
Carlo run must reproduce; this module is the analytic side of that pairing.

Bin counts are multinomial with cell probabilities p = S a, so a linear ratio
estimate u = A n / N (A = W or R) has

    Var[u_l] = (1/N^2) sum_ij A_li A_lj Cov[n_i, n_j],
    Cov[n_i, n_j] = N p_i (1 - p_i)  on the diagonal,  -N p_i p_j  off it.

The total-concentration estimate is independent of the ratio estimate, so the
product c_hat = c_tot_hat * a_hat has exactly

    Var[c_hat] = Var[c_tot_hat] Var[a_hat]
               + Var[c_tot_hat] (E[a_hat])^2 + Var[a_hat] (E[c_tot_hat])^2,

with Var[c_tot_hat] = c_tot^2/(N-2) and E[c_tot_hat] = c_tot.  The same
combination turns the ratio Cramer-Rao bound into a concentration bound.

The Fisher information of the ratio vector (unconstrained, ignoring the
simplex) has entries

    I_ij = N k_i k_j  integral_0^inf  exp(-(k_i+k_j) t) / p(t)  dt,

a smooth positive integrand decaying like exp(-(k_i+k_j-k_M) t); it is
integrated adaptively with automatic tail truncation.

Headline metrics: the per-ligand NMSE is MSE[c_hat_i]/c_i^2 (averaged over
ligands), and for scenarios with absent ligands (c_i = 0) the total MSE
normalized by c_tot^2 replaces it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.special import logsumexp

from .errors import DomainError, UnidentifiableMixtureError
from .estimators import (
    ThresholdScheme,
    _check_decreasing_rates,
    _interval_masses,
    build_thresholds,
)

MSE_DECOMPOSITION_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class ErrorReport:
    """Per-ligand first and second moments of a concentration estimator.

    mse must equal variance + bias^2 elementwise; violating inputs are
    rejected rather than silently recomputed.
    """

    kind: str
    total_concentration: float
    true_concentrations: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    bias: np.ndarray
    mse: np.ndarray
    crlb: np.ndarray | None = None

    def __post_init__(self):
        for name in ("true_concentrations", "mean", "variance", "bias", "mse"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        expected = self.variance + self.bias**2
        scale = np.maximum(np.abs(expected), 1e-300)
        if np.any(np.abs(self.mse - expected) > MSE_DECOMPOSITION_RTOL * scale):
            raise DomainError("mse must decompose as variance + bias^2")


@dataclass(frozen=True, eq=False)
class FisherMatrix:
    """Fisher information of the ratio vector with quadrature diagnostics."""

    matrix: np.ndarray
    n_samples: int
    rel_tol: float
    max_quadrature_error: float

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        if np.abs(m - m.T).max() > 1e-10 * max(np.abs(m).max(), 1.0):
            raise DomainError("Fisher matrix must be symmetric")
        trace = float(np.trace(m))
        if np.linalg.eigvalsh(m).min() < -1e-9 * trace:
            raise DomainError("Fisher matrix must be positive semidefinite")


@dataclass(frozen=True)
class CrlbBounds:
    """Lower bounds on ratio and concentration estimator variances."""

    ratio: np.ndarray
    concentration: np.ndarray
    fisher: FisherMatrix


@dataclass(frozen=True)
class NuOptimum:
    """Result of minimizing the analytic average NMSE over the threshold scale."""

    nu: float
    average_nmse: float
    used_grid_fallback: bool


def var_total_estimator(total_concentration: float, n_samples: int) -> float:
    """Variance (= MSE) of the unbiased total-concentration estimator, c^2/(N-2)."""
    if n_samples <= 2:
        raise DomainError(f"variance is finite only for N > 2, got {n_samples}")
    return total_concentration**2 / (n_samples - 2)


def mean_reciprocal_unbound_time(
    total_concentration: float, binding_rate: float, n_samples: int
) -> float:
    """E[1/T_u] = k+ c_tot / (N-1); T_u is Gamma so 1/T_u is inverse-gamma."""
    if n_samples <= 1:
        raise DomainError(f"the mean of 1/T_u is finite only for N > 1, got {n_samples}")
    return binding_rate * total_concentration / (n_samples - 1)


def _count_covariance(p: np.ndarray, n_samples: float) -> np.ndarray:
    """Multinomial covariance of bin counts for cell probabilities p."""
    return n_samples * (np.diag(p) - np.outer(p, p))


def _check_probability_vector(p: np.ndarray) -> None:
    if np.any(p < -1e-12) or np.any(p > 1 + 1e-12) or p.sum() > 1 + 1e-9:
        raise DomainError("bin probabilities must form a (sub)probability vector")


def ratio_estimator_variance(weights: np.ndarray, p: np.ndarray, n_samples: float) -> np.ndarray:
    """Variance of a linear ratio estimate A n / N for weight rows A."""
    _check_probability_vector(p)
    cov = _count_covariance(p, n_samples)
    return np.einsum("li,ij,lj->l", weights, cov, weights) / n_samples**2


def unbiased_ratio_variance(s: np.ndarray, ratios, n_samples: float) -> np.ndarray:
    """Variance vector of the unbiased ratio estimator W n / N."""
    alpha = np.atleast_1d(np.asarray(ratios, dtype=float))
    p = s @ alpha
    w = np.linalg.inv(s)
    return ratio_estimator_variance(w, p, n_samples)


def concentration_variance(
    ratio_variance, ratio_mean, total_concentration: float, n_samples: int
) -> np.ndarray:
    """Exact product-of-independents variance of c_hat = c_tot_hat * a_hat."""
    var_a = np.atleast_1d(np.asarray(ratio_variance, dtype=float))
    mean_a = np.atleast_1d(np.asarray(ratio_mean, dtype=float))
    var_ct = var_total_estimator(total_concentration, n_samples)
    return var_ct * var_a + var_ct * mean_a**2 + var_a * total_concentration**2


def unbiased_estimator_analytics(
    s: np.ndarray, ratios, total_concentration: float, n_samples: int
) -> ErrorReport:
    """Analytic moments of the unbiased estimator at the true mixture."""
    alpha = np.atleast_1d(np.asarray(ratios, dtype=float))
    var_a = unbiased_ratio_variance(s, alpha, n_samples)
    var_c = concentration_variance(var_a, alpha, total_concentration, n_samples)
    c = total_concentration * alpha
    zero = np.zeros_like(c)
    return ErrorReport(
        kind="unbiased",
        total_concentration=total_concentration,
        true_concentrations=c,
        mean=c,
        variance=var_c,
        bias=zero,
        mse=var_c.copy(),
    )


def biased_estimator_analytics(
    s: np.ndarray, h: np.ndarray, ratios, total_concentration: float, n_samples: int
) -> ErrorReport:
    """Analytic moments of the simplified biased estimator.

    The ratio mean is R p; the bias (R - W) p is the residual of replacing S
    with its triangular approximation, and vanishes when H equals S.
    """
    alpha = np.atleast_1d(np.asarray(ratios, dtype=float))
    p = s @ alpha
    _check_probability_vector(p)
    w = np.linalg.inv(s)
    r = np.linalg.inv(h)
    mean_a = r @ p
    bias_a = (r - w) @ p
    var_a = ratio_estimator_variance(r, p, n_samples)
    var_c = concentration_variance(var_a, mean_a, total_concentration, n_samples)
    bias_c = total_concentration * bias_a
    c = total_concentration * alpha
    return ErrorReport(
        kind="biased",
        total_concentration=total_concentration,
        true_concentrations=c,
        mean=total_concentration * mean_a,
        variance=var_c,
        bias=bias_c,
        mse=var_c + bias_c**2,
    )


def _fisher_entry(rate_sum: float, slowest: float, log_weights, rates, rel_tol: float):
    """Adaptive quadrature of exp(-rate_sum t)/p(t) with tail truncation.

    The integrand decays like exp(-(rate_sum - k_M) t); beyond ~60 decay
    lengths it is below any achievable relative tolerance.
    """

    def integrand(t: float) -> float:
        log_p = logsumexp(log_weights - rates * t)
        return float(np.exp(-rate_sum * t - log_p))

    decay = max(rate_sum - slowest, slowest)
    upper = 60.0 / decay
    value, err = quad(integrand, 0.0, upper, epsabs=0.0, epsrel=rel_tol, limit=200)
    return value, err


def fisher_information(ratios, unbinding_rates, n_samples: int, rel_tol: float = 1e-8) -> FisherMatrix:
    """Fisher information matrix of the ratio vector from bound durations.

    Requires every ratio strictly positive: a zero ratio puts the true
    parameter on the boundary and the integrand 1/p(t) loses its uniform
    bound.  Drop absent components before calling.
    """
    alpha = np.atleast_1d(np.asarray(ratios, dtype=float))
    k = _check_decreasing_rates(unbinding_rates)
    if alpha.shape != k.shape:
        raise DomainError("ratios and unbinding_rates must be equally long")
    if np.any(alpha <= 0):
        raise DomainError(
            "Fisher information needs strictly positive ratios; "
            "drop absent components from the mixture first"
        )
    if not rel_tol > 0:
        raise DomainError("rel_tol must be positive")
    m = k.size
    log_weights = np.log(alpha * k)
    info = np.zeros((m, m))
    max_err = 0.0
    for i in range(m):
        for j in range(i, m):
            value, err = _fisher_entry(k[i] + k[j], k[-1], log_weights, k, rel_tol)
            scale = n_samples * k[i] * k[j]
            info[i, j] = info[j, i] = scale * value
            max_err = max(max_err, scale * err)
    return FisherMatrix(
        matrix=info, n_samples=n_samples, rel_tol=rel_tol, max_quadrature_error=max_err
    )


def crlb(
    ratios, unbinding_rates, n_samples: int, total_concentration: float,
    rel_tol: float = 1e-8,
) -> CrlbBounds:
    """Cramer-Rao lower bounds for the ratio and concentration estimates.

    Ratio bound: diagonal of the inverse Fisher matrix.  Concentration bound:
    the same product combination as the estimator variance, using the exact
    total-concentration variance (that estimator already attains its bound)
    and E[a_hat] = a.
    """
    alpha = np.atleast_1d(np.asarray(ratios, dtype=float))
    fisher = fisher_information(alpha, unbinding_rates, n_samples, rel_tol)
    cond = np.linalg.cond(fisher.matrix)
    if not np.isfinite(cond) or cond > 1e14:
        raise UnidentifiableMixtureError(
            f"unidentifiable mixture: Fisher matrix condition number {cond:.3e}"
        )
    ratio_lb = np.diag(np.linalg.inv(fisher.matrix)).copy()
    conc_lb = concentration_variance(ratio_lb, alpha, total_concentration, n_samples)
    return CrlbBounds(ratio=ratio_lb, concentration=conc_lb, fisher=fisher)


def crlb_report(
    ratios, unbinding_rates, n_samples: int, total_concentration: float,
    rel_tol: float = 1e-8,
) -> ErrorReport:
    """CRLB packaged as the error report of an ideal efficient estimator."""
    alpha = np.atleast_1d(np.asarray(ratios, dtype=float))
    bounds = crlb(alpha, unbinding_rates, n_samples, total_concentration, rel_tol)
    c = total_concentration * alpha
    zero = np.zeros_like(c)
    return ErrorReport(
        kind="ml_bound",
        total_concentration=total_concentration,
        true_concentrations=c,
        mean=c,
        variance=bounds.concentration,
        bias=zero,
        mse=bounds.concentration.copy(),
        crlb=bounds.concentration,
    )


def unknown_ligand_analytics(
    known_rates,
    known_ratios,
    unknown_rates,
    unknown_ratios,
    scheme: ThresholdScheme,
    total_concentration: float,
    n_samples: int,
) -> ErrorReport:
    """Moments of the unbiased estimator when extra ligand types are present.

    The receiver still inverts the M-ligand matrix S, but events now arrive
    with bin probabilities p = S_r a_r over all M+L types, so the estimator
    mean becomes W p and the estimate is biased.  With filtering bounds the
    ratio estimator divides by the retained count, which conditions the bin
    law on retention: probabilities renormalize by the retained mass q and
    the effective count becomes N q.
    """
    k_known = _check_decreasing_rates(known_rates)
    k_unknown = np.atleast_1d(np.asarray(unknown_rates, dtype=float))
    a_known = np.atleast_1d(np.asarray(known_ratios, dtype=float))
    a_unknown = np.atleast_1d(np.asarray(unknown_ratios, dtype=float))
    if k_unknown.size != a_unknown.size:
        raise DomainError("unknown rates and ratios must be equally long")
    if k_unknown.size < 1:
        raise DomainError("need at least one unknown component (use the plain analytics otherwise)")
    if np.any(k_unknown <= 0):
        raise DomainError("unknown unbinding rates must be positive")
    if np.any(a_known < 0) or np.any(a_unknown < 0):
        raise DomainError("ratios must be nonnegative")
    if abs(a_known.sum() + a_unknown.sum() - 1.0) > 1e-9:
        raise DomainError("known and unknown ratios must jointly sum to 1")

    s = _interval_masses(scheme.edges, k_known)
    s_r = _interval_masses(scheme.edges, np.concatenate([k_known, k_unknown]))
    w = np.linalg.inv(s)
    p = s_r @ np.concatenate([a_known, a_unknown])
    retained_mass = float(p.sum())
    if retained_mass <= 0:
        raise DomainError("the scheme retains no probability mass")
    p_retained = p / retained_mass
    n_effective = n_samples * retained_mass

    mean_a = w @ p_retained
    bias_a = mean_a - a_known
    var_a = ratio_estimator_variance(w, p_retained, n_effective)
    var_c = concentration_variance(var_a, mean_a, total_concentration, n_samples)
    bias_c = total_concentration * bias_a
    c = total_concentration * a_known
    return ErrorReport(
        kind="unbiased",
        total_concentration=total_concentration,
        true_concentrations=c,
        mean=total_concentration * mean_a,
        variance=var_c,
        bias=bias_c,
        mse=var_c + bias_c**2,
    )


def per_ligand_nmse(report: ErrorReport) -> np.ndarray:
    """MSE normalized by the squared true concentration, per ligand."""
    if np.any(report.true_concentrations == 0):
        raise DomainError(
            "NMSE is undefined for absent ligands (c_i = 0); "
            "use total_normalized_mse instead"
        )
    return report.mse / report.true_concentrations**2


def average_nmse(report: ErrorReport) -> float:
    """Headline metric: per-ligand NMSE averaged over all ligand types."""
    return float(per_ligand_nmse(report).mean())


def total_normalized_mse(report: ErrorReport) -> float:
    """Sum of per-ligand MSEs normalized by c_tot^2; finite even with absent ligands."""
    return float(report.mse.sum() / report.total_concentration**2)


def nu_objective(nu: float, ratios, unbinding_rates, total_concentration, n_samples) -> float:
    """Analytic average NMSE of the unbiased estimator at threshold scale nu."""
    scheme = build_thresholds(unbinding_rates, nu)
    s = _interval_masses(scheme.edges, np.asarray(unbinding_rates, dtype=float))
    report = unbiased_estimator_analytics(s, ratios, total_concentration, n_samples)
    return average_nmse(report)


def _golden_section(f, a: float, b: float, tol: float) -> float:
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    x1 = b - inv_phi * (b - a)
    x2 = a + inv_phi * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > tol:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - inv_phi * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + inv_phi * (b - a)
            f2 = f(x2)
    return (a + b) / 2.0


def optimize_nu(
    ratios,
    unbinding_rates,
    total_concentration: float,
    n_samples: int,
    lower: float = 0.2,
    upper: float = 10.0,
    tol: float = 1e-3,
    grid_points: int = 200,
) -> NuOptimum:
    """Minimize the analytic average NMSE of the unbiased estimator over nu.

    A coarse scan brackets the minimum, then golden-section search refines it
    to the absolute tolerance.  If the scan finds no interior bracket (or more
    than one local minimum), the result falls back to a dense grid scan and
    says so.
    """
    if not (0 < lower < upper):
        raise DomainError("need 0 < lower < upper")

    def objective(nu: float) -> float:
        return nu_objective(nu, ratios, unbinding_rates, total_concentration, n_samples)

    coarse = np.linspace(lower, upper, 25)
    values = np.array([objective(nu) for nu in coarse])
    interior_minima = [
        i for i in range(1, coarse.size - 1)
        if values[i] <= values[i - 1] and values[i] <= values[i + 1]
    ]
    bracketed = len(interior_minima) == 1 and int(np.argmin(values)) == interior_minima[0]
    if not bracketed:
        grid = np.linspace(lower, upper, grid_points)
        grid_values = [objective(nu) for nu in grid]
        best = int(np.argmin(grid_values))
        return NuOptimum(nu=float(grid[best]), average_nmse=float(grid_values[best]),
                         used_grid_fallback=True)
    i = interior_minima[0]
    nu_opt = _golden_section(objective, coarse[i - 1], coarse[i + 1], tol)
    return NuOptimum(nu=float(nu_opt), average_nmse=float(objective(nu_opt)),
                     used_grid_fallback=False)
