"""Moment-matching concentration estimators built on binned bound durations.

The receiver knows the M unbinding rates and divides the bound-duration axis
into M intervals with thresholds proportional to the inverse rates,

    T_i = nu / k-_i   for i = 1..M-1,   T_0 = 0, T_M = +inf by default.

The probability that one binding event lands in interval l is p_l = (S a)_l
with

    s_ij = exp(-k-_j T_{i-1}) - exp(-k-_j T_i),

so matching expected counts to observed counts gives the unbiased ratio
estimator a_hat = W n / N' with W = S^-1.  When every threshold sits well past
the matching mean duration (nu >> 1), S is close to an upper-triangular matrix
H (truncate below the diagonal, keep exp(-k-_i T_{i-1}) on it); the cheaper
biased estimator uses R = H^-1, which is itself upper triangular so the l-th
ratio needs only M-l+1 terms.

Total concentration is estimated separately from the pooled unbound time,
c_tot_hat = (N-1)/(k+ T_u), which is unbiased with variance c_tot^2/(N-2).

Optional finite T_0 / T_M bounds filter out implausibly short or long events
(a defense against ligands unknown to the receiver); filtered events reduce
the ratio-estimator denominator to the retained count N' while the total
concentration keeps the full N and the unfiltered T_u.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve, solve_triangular
from scipy.special import logsumexp

from .errors import (
    DomainError,
    IndistinguishableLigandsError,
    InternalConsistencyError,
    NoEventsRetainedError,
)
from .kinetics import ObservationSet

CONDITION_LIMIT = 1e12
INVERSE_TOL = 1e-8
RECURSION_TOL = 1e-6
TRIANGULAR_NU_WARN = 5.0


def _check_decreasing_rates(rates) -> np.ndarray:
    k = np.atleast_1d(np.asarray(rates, dtype=float))
    if not np.all(k > 0):
        raise DomainError("unbinding rates must be positive")
    if k.size > 1 and not np.all(np.diff(k) < 0):
        raise DomainError("unbinding rates must be strictly decreasing")
    return k


@dataclass(frozen=True, eq=False)
class ThresholdScheme:
    """Bound-duration bin edges T_0 <= T_1 < ... < T_{M-1} <= T_M.

    edges has length M+1; edges[0] and edges[-1] are the filtering bounds
    (0 and +inf when filtering is off).  Interval l is [T_{l-1}, T_l).
    """

    nu: float
    edges: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float).copy()
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        if not self.nu > 0:
            raise DomainError(f"nu must be positive, got {self.nu}")
        if edges.size < 2:
            raise DomainError("a scheme needs at least one interval")
        if edges[0] < 0:
            raise DomainError("lower bound must be nonnegative")
        interior = edges[1:-1]
        if interior.size and (edges[0] > interior[0] or interior[-1] > edges[-1]):
            raise DomainError("filtering bounds must bracket the interior thresholds")
        if interior.size > 1 and not np.all(np.diff(interior) > 0):
            raise DomainError("interior thresholds must be strictly increasing")
        if interior.size == 0 and edges[0] > edges[-1]:
            raise DomainError("lower bound exceeds upper bound")
        if not np.all(np.isfinite(interior)):
            raise DomainError("interior thresholds must be finite")

    @property
    def n_intervals(self) -> int:
        return self.edges.size - 1

    @property
    def interior(self) -> np.ndarray:
        return self.edges[1:-1]

    @property
    def is_filtering(self) -> bool:
        return self.edges[0] > 0 or np.isfinite(self.edges[-1])


def build_thresholds(
    unbinding_rates, nu: float, lower: float = 0.0, upper: float = np.inf
) -> ThresholdScheme:
    """Thresholds T_i = nu/k-_i for i = 1..M-1, with optional filtering bounds."""
    k = _check_decreasing_rates(unbinding_rates)
    if not nu > 0:
        raise DomainError(f"nu must be positive, got {nu}")
    edges = np.concatenate([[lower], nu / k[:-1], [upper]])
    return ThresholdScheme(nu=float(nu), edges=edges)


def _interval_masses(edges: np.ndarray, rates: np.ndarray) -> np.ndarray:
    """Matrix of exp(-k_j T_{i-1}) - exp(-k_j T_i); column j is ligand j's bin masses."""
    surv = np.exp(-edges[:, None] * rates[None, :])  # exp(-k*inf) -> 0
    return surv[:-1, :] - surv[1:, :]


def build_s(scheme: ThresholdScheme, unbinding_rates) -> tuple[np.ndarray, np.ndarray, float]:
    """Binning matrix S, its LU-inverse W, and the condition number of S.

    Raises IndistinguishableLigandsError when cond(S) exceeds 1e12: near-equal
    rates make the columns collinear, and inverting would only amplify noise.
    """
    k = _check_decreasing_rates(unbinding_rates)
    if k.size != scheme.n_intervals:
        raise DomainError("scheme must have one interval per ligand type")
    s = _interval_masses(scheme.edges, k)
    cond = float(np.linalg.cond(s))
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise IndistinguishableLigandsError(
            f"indistinguishable ligands: cond(S) = {cond:.3e} exceeds {CONDITION_LIMIT:.0e}"
        )
    w = lu_solve(lu_factor(s), np.eye(k.size))
    return s, w, cond


def build_h(scheme: ThresholdScheme, unbinding_rates) -> np.ndarray:
    """Upper-triangular approximation H of S: diagonal exp(-k_i T_{i-1}), zeros below."""
    k = _check_decreasing_rates(unbinding_rates)
    s = _interval_masses(scheme.edges, k)
    h = np.triu(s, 1)
    h[np.diag_indices_from(h)] = np.exp(-k * scheme.edges[:-1])
    return h


def _r_recursion(h: np.ndarray, kappa: np.ndarray) -> np.ndarray:
    """Column-by-column recursion for R = H^-1 of an upper-triangular H.

    r_jj = kappa_j = 1/h_jj and, stepping the row up,
    r_ij = -kappa_j * sum_{g=1}^{j-i} r_{i,j-g} h_{j-g,j}.
    """
    m = h.shape[0]
    r = np.zeros_like(h)
    for j in range(m):
        r[j, j] = kappa[j]
        for i in range(j - 1, -1, -1):
            acc = 0.0
            for g in range(1, j - i + 1):
                acc += r[i, j - g] * h[j - g, j]
            r[i, j] = -kappa[j] * acc
    return r


def build_r(scheme: ThresholdScheme, unbinding_rates) -> np.ndarray:
    """Inverse R of the triangular approximation H, cross-checked two ways.

    The recursion with kappa_j = exp(k-_j T_{j-1}) and direct triangular
    back-substitution must agree; a mismatch beyond 1e-6 aborts.  The
    triangular approximation needs nu well above 1 to be meaningful; below 5
    a warning is emitted.
    """
    if scheme.nu < TRIANGULAR_NU_WARN:
        warnings.warn(
            f"nu = {scheme.nu} is below {TRIANGULAR_NU_WARN}; the triangular "
            "approximation degrades and the biased estimator's bias grows",
            stacklevel=2,
        )
    k = _check_decreasing_rates(unbinding_rates)
    h = build_h(scheme, k)
    kappa = np.exp(k * scheme.edges[:-1])
    r = _r_recursion(h, kappa)
    r_direct = solve_triangular(h, np.eye(k.size))
    mismatch = float(np.abs(r - r_direct).max())
    if mismatch > RECURSION_TOL:
        raise InternalConsistencyError(
            f"triangular-inverse recursion disagrees with back-substitution "
            f"by {mismatch:.3e}"
        )
    return r


@dataclass(frozen=True, eq=False)
class EstimatorMatrices:
    """Precomputed S, W = S^-1, H, R = H^-1 for one scheme and rate vector.

    Immutable; build once per scheme and share read-only across trials.
    """

    scheme: ThresholdScheme
    unbinding_rates: np.ndarray
    s: np.ndarray
    w: np.ndarray
    h: np.ndarray
    r: np.ndarray
    condition_number: float

    @property
    def nu(self) -> float:
        return self.scheme.nu

    @classmethod
    def build(cls, scheme: ThresholdScheme, unbinding_rates) -> "EstimatorMatrices":
        k = _check_decreasing_rates(unbinding_rates)
        s, w, cond = build_s(scheme, k)
        h = build_h(scheme, k)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            r = build_r(scheme, k)
        eye = np.eye(k.size)
        worst = max(np.abs(s @ w - eye).max(), np.abs(r @ h - eye).max())
        if worst > INVERSE_TOL:
            # conditioning already passed the hard guard, but the inverses are
            # still too degraded to honor the matrices' contract
            raise IndistinguishableLigandsError(
                f"rates too similar for reliable inversion: inverse identities "
                f"hold only to {worst:.3e} (limit {INVERSE_TOL:.0e})"
            )
        k = k.copy()
        k.setflags(write=False)
        for a in (s, w, h, r):
            a.setflags(write=False)
        return cls(
            scheme=scheme, unbinding_rates=k, s=s, w=w, h=h, r=r,
            condition_number=cond,
        )


@dataclass(frozen=True, eq=False)
class BinnedCounts:
    """Counts per interval plus how many of the original events were retained."""

    counts: np.ndarray
    retained: int
    total: int

    def __post_init__(self):
        counts = np.asarray(self.counts)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        # synthetic expected counts may be floats; allow rounding slack only
        if abs(float(counts.sum()) - self.retained) > 1e-9 * max(self.retained, 1):
            raise DomainError("retained count must equal the sum of bin counts")


def bin_counts(obs: ObservationSet, scheme: ThresholdScheme) -> BinnedCounts:
    """Count binding events per interval; events outside [T_0, T_M) are dropped."""
    idx = np.searchsorted(scheme.edges, obs.bound_durations, side="right") - 1
    valid = (idx >= 0) & (idx < scheme.n_intervals)
    counts = np.bincount(idx[valid], minlength=scheme.n_intervals)
    return BinnedCounts(counts=counts, retained=int(valid.sum()), total=obs.n_samples)


def estimate_total_concentration(
    total_unbound_time: float, n_samples: int, binding_rate: float
) -> float:
    """Unbiased total-concentration estimate (N-1)/(k+ T_u); needs N > 2."""
    if n_samples <= 2:
        raise DomainError(f"need more than 2 samples for finite variance, got {n_samples}")
    if not total_unbound_time > 0:
        raise DomainError("total unbound time must be positive")
    return (n_samples - 1) / (binding_rate * total_unbound_time)


def estimate_ratios_unbiased(binned: BinnedCounts, weight_matrix: np.ndarray) -> np.ndarray:
    """Unbiased moment-matching ratio estimate W n / N'.

    The output is a raw linear estimate: entries may be negative or exceed 1
    and the sum is not constrained to 1.  Projecting onto the simplex would
    break the unbiasedness and variance algebra; see
    ConcentrationEstimate.clipped for an explicit convenience projection.
    """
    if binned.retained == 0:
        raise NoEventsRetainedError("no binding events retained by the scheme")
    return weight_matrix @ binned.counts / binned.retained


def estimate_ratios_biased(binned: BinnedCounts, r_matrix: np.ndarray) -> np.ndarray:
    """Simplified biased ratio estimate R n / N'.

    R is upper triangular, so ratio l is a weighted sum of the top M-l+1
    counts only; the highest-affinity ligand needs a single product.
    """
    if binned.retained == 0:
        raise NoEventsRetainedError("no binding events retained by the scheme")
    return r_matrix @ binned.counts / binned.retained


@dataclass(frozen=True, eq=False)
class ConcentrationEstimate:
    """Joint output: total concentration, ratios, and their product."""

    kind: str
    total: float
    ratios: np.ndarray
    concentrations: np.ndarray
    n_total: int
    n_retained: int

    def __post_init__(self):
        for name in ("ratios", "concentrations"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.total < 0:
            raise DomainError("total concentration estimate must be nonnegative")
        if not np.allclose(self.concentrations, self.total * self.ratios, atol=0, rtol=1e-12):
            raise DomainError("concentrations must equal total * ratios")

    def clipped(self) -> "ConcentrationEstimate":
        """Convenience projection onto the simplex (clip at 0, renormalize)."""
        ratios = np.clip(self.ratios, 0.0, None)
        total_mass = ratios.sum()
        ratios = ratios / total_mass if total_mass > 0 else np.full_like(ratios, 1 / ratios.size)
        return ConcentrationEstimate(
            kind=self.kind, total=self.total, ratios=ratios,
            concentrations=self.total * ratios,
            n_total=self.n_total, n_retained=self.n_retained,
        )


def estimate_concentrations(
    kind: str,
    obs: ObservationSet,
    scheme: ThresholdScheme,
    matrices: EstimatorMatrices,
    binding_rate: float,
    em_tol: float = 1e-8,
    em_max_iter: int = 500,
) -> ConcentrationEstimate:
    """Combine the total-concentration and ratio estimators.

    kind selects the ratio estimator: "unbiased" (W n / N'), "biased"
    (R n / N'), or "ml_oracle" (EM on the raw durations; desk-scale reference
    only).  The total always uses the full N and the unfiltered T_u.
    """
    total = estimate_total_concentration(obs.total_unbound_time, obs.n_samples, binding_rate)
    binned = bin_counts(obs, scheme)
    if kind == "unbiased":
        ratios = estimate_ratios_unbiased(binned, matrices.w)
    elif kind == "biased":
        ratios = estimate_ratios_biased(binned, matrices.r)
    elif kind == "ml_oracle":
        ratios = ml_ratio_oracle(
            obs.bound_durations, matrices.unbinding_rates, tol=em_tol, max_iter=em_max_iter
        )
    else:
        raise DomainError(f"unknown estimator kind {kind!r}")
    return ConcentrationEstimate(
        kind=kind,
        total=total,
        ratios=ratios,
        concentrations=total * ratios,
        n_total=obs.n_samples,
        n_retained=binned.retained,
    )


def ml_ratio_oracle(
    bound_durations,
    unbinding_rates,
    tol: float = 1e-8,
    max_iter: int = 500,
    init=None,
    return_history: bool = False,
):
    """EM solution of the ratio likelihood with known component rates.

    Iterates responsibilities gamma_ij proportional to a_j k_j exp(-k_j t_i)
    and the update a_j <- mean_i gamma_ij until max|delta a| < tol.  The
    iterates stay on the simplex and the likelihood is non-decreasing.  Too
    expensive for an in-cell receiver; used here as a reference against which
    the moment estimators are judged.
    """
    k = _check_decreasing_rates(unbinding_rates)
    if k.size < 2:
        raise DomainError("the EM oracle needs at least two components")
    if not tol > 0:
        raise DomainError("tol must be positive")
    tau = np.asarray(bound_durations, dtype=float)
    alpha = np.full(k.size, 1.0 / k.size) if init is None else np.asarray(init, dtype=float)
    # component log-densities are fixed across iterations
    log_dens = np.log(k)[None, :] - np.multiply.outer(tau, k)
    history = [alpha.copy()]
    for _ in range(max_iter):
        with np.errstate(divide="ignore"):  # alpha_j may vanish; -inf is correct
            log_post = np.log(alpha)[None, :] + log_dens
        log_post -= logsumexp(log_post, axis=1, keepdims=True)
        new_alpha = np.exp(log_post).mean(axis=0)
        delta = float(np.abs(new_alpha - alpha).max())
        alpha = new_alpha
        if return_history:
            history.append(alpha.copy())
        if delta < tol:
            break
    else:
        warnings.warn(
            f"EM did not converge within {max_iter} iterations (last step {delta:.2e})",
            stacklevel=2,
        )
    return (alpha, history) if return_history else alpha
