"""Modified kinetic-proofreading receptor: the biochemical duration binner.

An activated bound receptor steps irreversibly through M internal substates
B^1 -> B^2 -> ... -> B^M at transition rates beta_{j,j+1}, while the bound
ligand may unbind at any moment at its rate k-.  Unbinding from substate j
releases one D_j messenger molecule, so the last substate reached encodes how
long the ligand stayed bound: the D_j counts approximate the per-interval
binding-event counts that the moment estimators consume, provided the
transition rates mirror the time thresholds,

    beta_{j,j+1} = kappa_j / (T_j - T_{j-1}),

with kappa ~ 3/5 giving a good match at the default nu = 3 thresholds.

Because progression and escape are competing exponentials, the absorption
probabilities have a closed product form for a ligand with unbinding rate k:

    P(D_j | k) = k/(beta_j + k) * prod_{l<j} beta_l/(beta_l + k),   j < M,
    P(D_M | k) =                  prod_{l<M} beta_l/(beta_l + k),

and summing over the mixture weights gives the steady-state D statistics;
each receptor contributes exactly one absorption, so the counts are binomial
and approximately Gaussian for large N.

While unbound, an active receptor produces S molecules at rate mu, so the
pooled S count is Poisson with mean mu * T_u and its steady-state expectation
is mu N / (k+ c_tot): the S count is the biochemical copy of the total
unbound time.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .estimators import ThresholdScheme
from .kinetics import LigandMixture, ObservationSet, _as_rng

DEFAULT_KAPPA = 0.6  # 3/5


@dataclass(frozen=True, eq=False)
class KprScheme:
    """M proofreading substates with transition rates derived from thresholds."""

    transition_rates: np.ndarray  # beta_{j,j+1}, length M-1
    kappas: np.ndarray            # tuning parameters, length M-1
    thresholds: np.ndarray        # the finite edges T_0..T_{M-1} the rates came from

    def __post_init__(self):
        for name in ("transition_rates", "kappas", "thresholds"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.transition_rates.size != self.kappas.size:
            raise DomainError("need one kappa per transition")
        if self.thresholds.size != self.transition_rates.size + 1:
            raise DomainError("need M threshold edges for M-1 transitions")
        if np.any(self.transition_rates <= 0) or not np.all(np.isfinite(self.transition_rates)):
            raise DomainError("transition rates must be positive and finite")

    @property
    def n_substates(self) -> int:
        return self.transition_rates.size + 1


@dataclass(frozen=True, eq=False)
class MessengerCounts:
    """Second-messenger totals after one sensing round over N receptors."""

    d_counts: np.ndarray
    s_count: int
    n_receptors: int
    production_rate: float

    def __post_init__(self):
        d = np.asarray(self.d_counts)
        d.setflags(write=False)
        object.__setattr__(self, "d_counts", d)
        if int(d.sum()) != self.n_receptors:
            raise DomainError("every receptor must be absorbed exactly once")
        if self.s_count < 0:
            raise DomainError("S count cannot be negative")


def kpr_rates(scheme: ThresholdScheme, kappas=DEFAULT_KAPPA) -> KprScheme:
    """Transition rates beta_j = kappa_j/(T_j - T_{j-1}) for a threshold scheme.

    All edges up to T_{M-1} must be finite (the top edge T_M never enters).
    kappas may be a scalar applied to every transition.
    """
    edges = scheme.edges[:-1]
    if not np.all(np.isfinite(edges)):
        raise DomainError("KPR transition rates need finite thresholds T_0..T_{M-1}")
    m = scheme.n_intervals
    kap = np.broadcast_to(np.asarray(kappas, dtype=float), (max(m - 1, 0),)).copy()
    if np.any(kap <= 0):
        raise DomainError("kappa tuning parameters must be positive")
    gaps = np.diff(edges)
    return KprScheme(transition_rates=kap / gaps if m > 1 else np.empty(0),
                     kappas=kap, thresholds=edges.copy())


def absorption_probabilities(kpr: KprScheme, unbinding_rate: float) -> np.ndarray:
    """P(absorbed from substate j) for a ligand with the given unbinding rate.

    Closed product form of the competing-exponential chain; sums to 1.
    """
    if not unbinding_rate > 0:
        raise DomainError("unbinding rate must be positive")
    betas = kpr.transition_rates
    k = unbinding_rate
    advance = betas / (betas + k)
    reach = np.concatenate([[1.0], np.cumprod(advance)])  # P(reach substate j)
    p = np.empty(kpr.n_substates)
    p[:-1] = reach[:-1] * k / (betas + k)
    p[-1] = reach[-1]
    return p


def mixture_absorption_probabilities(mix: LigandMixture, kpr: KprScheme) -> np.ndarray:
    """Steady-state P(D_j) = sum_i alpha_i P(D_j | ligand i)."""
    per_type = np.stack([absorption_probabilities(kpr, k) for k in mix.unbinding_rates])
    return mix.ratios @ per_type


def kpr_mixture_stats(
    mix: LigandMixture, kpr: KprScheme, n_receptors: int
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian-approximation mean and variance of the D_j counts.

    Counts are binomial(N, P(D_j)); the Gaussian approximation is only
    meaningful for large N (warns below 1000).
    """
    if n_receptors < 1000:
        warnings.warn(
            f"Gaussian approximation of D counts is poor for N = {n_receptors} < 1000",
            stacklevel=2,
        )
    p = mixture_absorption_probabilities(mix, kpr)
    return n_receptors * p, n_receptors * p * (1.0 - p)


@dataclass(frozen=True, eq=False)
class ReceptorCycles:
    """Per-receptor trajectory summary of one sensing round.

    Kept so the software estimator can be run on the same underlying dwell
    times that produced the messenger counts (paired comparisons).
    """

    unbound_durations: np.ndarray
    bound_durations: np.ndarray
    ligand_types: np.ndarray
    absorbing_substates: np.ndarray
    s_counts: np.ndarray

    def to_observations(self, seed=None) -> ObservationSet:
        return ObservationSet(
            n_samples=self.unbound_durations.size,
            total_unbound_time=float(self.unbound_durations.sum()),
            bound_durations=self.bound_durations,
            rng_seed=seed,
        )

    def to_messenger_counts(self, n_substates: int, production_rate: float) -> MessengerCounts:
        return MessengerCounts(
            d_counts=np.bincount(self.absorbing_substates, minlength=n_substates),
            s_count=int(self.s_counts.sum()),
            n_receptors=self.unbound_durations.size,
            production_rate=production_rate,
        )


def sample_receptor_cycles(
    mix: LigandMixture,
    kpr: KprScheme,
    production_rate: float,
    n_receptors: int,
    seed,
) -> ReceptorCycles:
    """Event-driven Monte Carlo of N independent activated receptors.

    Each receptor is activated instantly at t = 0, spends tau_u ~
    Exp(k+ c_tot) unbound, binds a ligand drawn from alpha, then walks the
    proofreading chain by competing exponentials (advance at beta_j, unbind at
    k-_type) until absorbed.  S molecules are drawn last from a Poisson with
    mean mu * tau_u so that runs differing only in mu share identical dwell
    times and walks under the same seed.
    """
    if not production_rate > 0:
        raise DomainError("production rate must be positive")
    if n_receptors < 1:
        raise DomainError("need at least one receptor")
    rng = _as_rng(seed)
    m = kpr.n_substates
    unbound_rate = mix.binding_rate * mix.total_concentration
    tau_u = rng.exponential(1.0 / unbound_rate, n_receptors)
    types = np.searchsorted(np.cumsum(mix.ratios), rng.random(n_receptors))
    escape = mix.unbinding_rates[types]

    tau_b = np.zeros(n_receptors)
    substate = np.full(n_receptors, m - 1, dtype=np.intp)
    alive = np.arange(n_receptors)
    for j in range(m - 1):
        advance = rng.exponential(1.0, alive.size) / kpr.transition_rates[j]
        unbind = rng.exponential(1.0, alive.size) / escape[alive]
        tau_b[alive] += np.minimum(advance, unbind)
        absorbed = unbind <= advance
        substate[alive[absorbed]] = j
        alive = alive[~absorbed]
    # final substate has no onward transition; absorption is certain
    tau_b[alive] += rng.exponential(1.0, alive.size) / escape[alive]

    s_counts = rng.poisson(production_rate * tau_u)
    return ReceptorCycles(
        unbound_durations=tau_u,
        bound_durations=tau_b,
        ligand_types=types,
        absorbing_substates=substate,
        s_counts=s_counts,
    )


def simulate_receptors(
    mix: LigandMixture,
    kpr: KprScheme,
    production_rate: float,
    n_receptors: int,
    seed,
) -> MessengerCounts:
    """Messenger-molecule totals of one simulated sensing round."""
    cycles = sample_receptor_cycles(mix, kpr, production_rate, n_receptors, seed)
    return cycles.to_messenger_counts(kpr.n_substates, production_rate)
