"""Equilibrium ligand-receptor binding kinetics and exact dwell-time sampling.

A single receptor alternates between unbound (U) and bound (B) states.  With a
mixture of M ligand types sharing one binding rate k+ but having distinct
unbinding rates k-_1 > ... > k-_M, the stationary statistics factorize:

    tau_u ~ Exponential(rate = k+ * c_tot)
    type  ~ Categorical(alpha),  tau_b | type=j ~ Exponential(rate = k-_j)

so the bound durations follow a mixture of exponentials,

    p(tau_b) = sum_j alpha_j * k-_j * exp(-k-_j * tau_b),

and the log-likelihood splits into a total-unbound-time term that depends only
on the total concentration,

    L(T_u | c_tot) = N ln(c_tot) - k+ c_tot T_u,

plus a bound-duration term sum_i ln p(tau_b,i) that depends only on the
concentration ratios.  Everything here is scale-free in concentration units;
all reported metrics downstream are normalized.

Absolute likelihood values are offset by an unknown constant: the
parameter-independent term of the full log-likelihood is never expanded, so
only differences of `log_likelihood` values are meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError

RATIO_SUM_TOL = 1e-12


def derive_rng(seed: int, *path: int) -> np.random.Generator:
    """Independent generator for (seed, *path).

    Streams derived from distinct paths are statistically independent, so
    parallel trials keyed by index give results that do not depend on
    execution order.
    """
    return np.random.default_rng((int(seed),) + tuple(int(p) for p in path))


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, (tuple, list)):
        return derive_rng(*seed)
    return derive_rng(seed)


@dataclass(frozen=True, eq=False)
class LigandMixture:
    """Channel state: common binding rate, per-type unbinding rates and ratios.

    unbinding_rates must be strictly decreasing (duplicates are rejected:
    ligands with equal rates are statistically indistinguishable and make the
    downstream binning matrix singular).  ratios are nonnegative and sum to 1;
    zero entries model absent ligand types.
    """

    binding_rate: float
    unbinding_rates: np.ndarray
    ratios: np.ndarray
    total_concentration: float = 1.0

    def __post_init__(self):
        k_off = np.atleast_1d(np.asarray(self.unbinding_rates, dtype=float)).copy()
        alpha = np.atleast_1d(np.asarray(self.ratios, dtype=float)).copy()
        if not self.binding_rate > 0:
            raise DomainError(f"binding rate must be positive, got {self.binding_rate}")
        if not self.total_concentration > 0:
            raise DomainError(
                f"total concentration must be positive, got {self.total_concentration}"
            )
        if k_off.ndim != 1 or alpha.shape != k_off.shape:
            raise DomainError("unbinding_rates and ratios must be 1-d and equally long")
        if not np.all(k_off > 0):
            raise DomainError("unbinding rates must be positive")
        if k_off.size > 1 and not np.all(np.diff(k_off) < 0):
            raise DomainError("unbinding rates must be strictly decreasing (no duplicates)")
        if np.any(alpha < 0):
            raise DomainError("concentration ratios must be nonnegative")
        if abs(alpha.sum() - 1.0) > RATIO_SUM_TOL:
            raise DomainError(f"concentration ratios must sum to 1, got {alpha.sum()!r}")
        k_off.setflags(write=False)
        alpha.setflags(write=False)
        object.__setattr__(self, "unbinding_rates", k_off)
        object.__setattr__(self, "ratios", alpha)

    @property
    def n_types(self) -> int:
        return self.unbinding_rates.size

    @property
    def dissociation_constants(self) -> np.ndarray:
        return self.unbinding_rates / self.binding_rate

    @property
    def concentrations(self) -> np.ndarray:
        return self.total_concentration * self.ratios


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Sampled receptor statistics: one (tau_u, tau_b) cycle per sample.

    The total unbound time pools all samples; by stationarity and receptor
    independence it does not matter whether the durations came from one
    receptor observed repeatedly or from N receptors observed once.
    """

    n_samples: int
    total_unbound_time: float
    bound_durations: np.ndarray
    rng_seed: object = None

    def __post_init__(self):
        tau_b = np.asarray(self.bound_durations, dtype=float).copy()
        tau_b.setflags(write=False)
        object.__setattr__(self, "bound_durations", tau_b)
        if self.n_samples < 3:
            raise DomainError(f"need at least 3 samples, got {self.n_samples}")
        if not self.total_unbound_time > 0:
            raise DomainError("total unbound time must be positive")
        if tau_b.size != self.n_samples:
            raise DomainError("bound_durations length must equal n_samples")
        if not np.all(tau_b > 0):
            raise DomainError("every bound duration must be positive")


def diffusion_limited_binding_rate(diffusivity: float, receptor_size: float) -> float:
    """Binding rate 4*D*a of a circular receptor in the diffusion-limited regime."""
    if not diffusivity > 0:
        raise DomainError(f"diffusivity must be positive, got {diffusivity}")
    if not receptor_size > 0:
        raise DomainError(f"receptor size must be positive, got {receptor_size}")
    return 4.0 * diffusivity * receptor_size


def bound_probability(mix: LigandMixture) -> float:
    """Equilibrium probability that a receptor is bound.

    p_B = (sum_i c_i/K_D,i) / (1 + sum_i c_i/K_D,i); reduces to
    c/(c + K_D) for a single ligand type.
    """
    load = float(np.sum(mix.concentrations / mix.dissociation_constants))
    return load / (1.0 + load)


def bound_count_stats(mix: LigandMixture, n_receptors: int) -> tuple[float, float]:
    """Mean and variance of the number of bound receptors among n_receptors.

    Independent receptors at equal concentration make the count binomial.
    """
    if n_receptors < 1:
        raise DomainError(f"need at least one receptor, got {n_receptors}")
    p = bound_probability(mix)
    return p * n_receptors, p * (1.0 - p) * n_receptors


def sample_observations(mix: LigandMixture, n_samples: int, seed) -> ObservationSet:
    """Draw one equilibrium (tau_u, tau_b) cycle for each of n_samples receptors.

    Exact sampling from the stationary law: unbound durations are
    Exponential(k+ c_tot); each binding event picks a ligand type from alpha
    and draws its duration from Exponential(k-_type).  Deterministic given
    seed (an int, an (int, ...) path, or a Generator).
    """
    if n_samples < 3:
        raise DomainError(f"need at least 3 samples, got {n_samples}")
    rng = _as_rng(seed)
    unbound_rate = mix.binding_rate * mix.total_concentration
    tau_u = rng.exponential(1.0 / unbound_rate, n_samples)
    types = np.searchsorted(np.cumsum(mix.ratios), rng.random(n_samples))
    tau_b = rng.exponential(1.0, n_samples) / mix.unbinding_rates[types]
    return ObservationSet(
        n_samples=n_samples,
        total_unbound_time=float(tau_u.sum()),
        bound_durations=tau_b,
        rng_seed=seed if not isinstance(seed, np.random.Generator) else None,
    )


def bound_time_pdf(mix: LigandMixture, tau) -> np.ndarray | float:
    """Mixture-of-exponentials density of a bound duration, sum_j a_j k_j e^{-k_j t}."""
    t = np.asarray(tau, dtype=float)
    if np.any(t < 0):
        raise DomainError("bound durations are nonnegative")
    dens = np.sum(
        mix.ratios * mix.unbinding_rates
        * np.exp(-np.multiply.outer(t, mix.unbinding_rates)),
        axis=-1,
    )
    return float(dens) if np.isscalar(tau) else dens


def bound_time_cdf(mix: LigandMixture, tau) -> np.ndarray | float:
    """P(tau_b <= tau) for the bound-duration mixture."""
    t = np.asarray(tau, dtype=float)
    if np.any(t < 0):
        raise DomainError("bound durations are nonnegative")
    cdf = np.sum(
        mix.ratios * (1.0 - np.exp(-np.multiply.outer(t, mix.unbinding_rates))),
        axis=-1,
    )
    return float(cdf) if np.isscalar(tau) else cdf


def log_likelihood(
    obs: ObservationSet,
    total_concentration: float,
    ratios,
    binding_rate: float,
    unbinding_rates,
) -> float:
    """Parameter-dependent part of the log-likelihood of an observation set.

    Returns L(T_u | c_tot) + L({tau_b} | alpha); the parameter-independent
    offset is omitted, so only differences between calls are meaningful.
    Ratios must lie on the simplex (entries >= 0, summing to 1 within 1e-9).
    """
    alpha = np.atleast_1d(np.asarray(ratios, dtype=float))
    k_off = np.atleast_1d(np.asarray(unbinding_rates, dtype=float))
    if not total_concentration > 0:
        raise DomainError("total concentration must be positive")
    if np.any(alpha < 0) or abs(alpha.sum() - 1.0) > 1e-9:
        raise DomainError("ratios must be on the simplex")
    if alpha.shape != k_off.shape:
        raise DomainError("ratios and unbinding_rates must be equally long")
    term_u = (
        obs.n_samples * np.log(total_concentration)
        - binding_rate * total_concentration * obs.total_unbound_time
    )
    # log p(tau) via logsumexp for numerical stability at large rate spreads;
    # zero-ratio components are excluded (they contribute nothing).
    active = alpha > 0
    log_w = np.log(alpha[active] * k_off[active])
    log_dens = logsumexp(
        log_w - np.multiply.outer(obs.bound_durations, k_off[active]), axis=-1
    )
    return float(term_u + log_dens.sum())
