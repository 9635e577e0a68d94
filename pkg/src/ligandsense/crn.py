"""Chemical reaction network that computes the estimator from messenger counts.

The unbiased estimate is a weighted sum of bin counts divided by the unbound
time; inside a cell that arithmetic is carried out by two reactions on the
messenger species produced by the receptors,

    D_i  ->  D_i + Y_j   at rate w_{j,i}      (production, weights W = S^-1)
    S + Y_j  ->  S       at rate k+           (consumption)

whose mean-field rate equation

    d E[n_Y_i] / dt = sum_j w_{i,j} E[n_D_j] - k+ E[n_S] E[n_Y_i]

relaxes from n_Y(0) = 0 to the steady state

    E[n_Y_i] = sum_j w_{i,j} E[n_D_j] / (k+ E[n_S]).

Because E[n_S] = mu N / (k+ c_tot) encodes the total unbound time, the
steady-state Y counts are (for mu = 1) the concentration estimates themselves.

W = S^-1 has negative entries for M >= 2; a physical reaction cannot run at a
negative rate, so those weights are tracked at the mean-field level only and
flagged via CrnSpec.has_negative_weights.  Dynamics here are deterministic
rate equations: the steady state is a mean statement, and resetting D/S/Y
between sensing rounds is modeled as a state reset, not simulated chemistry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NoUnboundSignalError
from .estimators import (
    ConcentrationEstimate,
    EstimatorMatrices,
    ThresholdScheme,
    estimate_concentrations,
)
from .kinetics import LigandMixture
from .kpr import KprScheme, MessengerCounts, sample_receptor_cycles

STABILITY_LIMIT = 0.1


@dataclass(frozen=True, eq=False)
class CrnSpec:
    """Inputs of one CRN evaluation; Y counts always start at zero."""

    weights: np.ndarray
    consumption_rate: float
    production_rate: float
    d_counts: np.ndarray
    s_count: float

    def __post_init__(self):
        for name in ("weights", "d_counts"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not self.consumption_rate > 0:
            raise DomainError("consumption rate must be positive")
        if not self.production_rate > 0:
            raise DomainError("production rate must be positive")
        if self.weights.ndim != 2 or self.weights.shape[1] != self.d_counts.size:
            raise DomainError("weight matrix must map D counts to Y species")
        if np.any(self.weights < 0):
            object.__setattr__(self, "has_negative_weights", True)
        else:
            object.__setattr__(self, "has_negative_weights", False)


def crn_steady_state(d_counts, s_count: float, weights, consumption_rate: float) -> np.ndarray:
    """Closed-form steady-state Y counts, (W n_D) / (k+ n_S)."""
    if not s_count > 0:
        raise NoUnboundSignalError(
            "no unbound-time signal: zero S molecules make the Y steady state undefined"
        )
    w = np.asarray(weights, dtype=float)
    n_d = np.asarray(d_counts, dtype=float)
    return (w @ n_d) / (consumption_rate * s_count)


def crn_integrate(spec: CrnSpec, t_end: float | None = None, dt: float | None = None):
    """Classical fourth-order fixed-step integration of the Y rate equation.

    The equation is linear with decay constant lambda = k+ n_S, so the
    trajectory converges monotonically to the closed-form steady state; by
    t_end = 10/lambda the transient is e^-10 < 0.1%.  dt must satisfy
    dt * lambda < 0.1 (accuracy, not bare stability).
    Returns (times, trajectory) with trajectory[t] the Y vector at times[t].
    """
    if not spec.s_count > 0:
        raise NoUnboundSignalError("no unbound-time signal: zero S molecules")
    decay = spec.consumption_rate * spec.s_count
    if t_end is None:
        t_end = 10.0 / decay
    if dt is None:
        dt = 0.05 / decay
    if not dt * decay < STABILITY_LIMIT:
        raise DomainError(
            f"dt * k+ * n_S = {dt * decay:.3g} violates the < {STABILITY_LIMIT} "
            "accuracy bound; use a smaller dt"
        )
    source = spec.weights @ spec.d_counts

    def rhs(y):
        return source - decay * y

    steps = int(np.ceil(t_end / dt))
    y = np.zeros(source.size)
    times = np.empty(steps + 1)
    trajectory = np.empty((steps + 1, source.size))
    times[0] = 0.0
    trajectory[0] = y
    h = t_end / steps
    for i in range(steps):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        times[i + 1] = (i + 1) * h
        trajectory[i + 1] = y
    return times, trajectory


@dataclass(frozen=True, eq=False)
class EndToEndResult:
    """Paired outputs of one sensing round through both computation paths."""

    crn_estimate: ConcentrationEstimate
    direct_estimate: ConcentrationEstimate
    counts: MessengerCounts


def end_to_end_sense(
    mix: LigandMixture,
    scheme: ThresholdScheme,
    matrices: EstimatorMatrices,
    kpr: KprScheme,
    n_receptors: int,
    seed,
    production_rate: float = 1.0,
) -> EndToEndResult:
    """Full sensing pipeline: receptors -> messenger counts -> CRN estimate.

    The same simulated trajectories also feed the software estimator (exact
    dwell times, exact bin counts), so the difference between the two
    estimates isolates the proofreading-binning approximation plus the Poisson
    noise of the S count standing in for the unbound time.
    """
    cycles = sample_receptor_cycles(mix, kpr, production_rate, n_receptors, seed)
    counts = cycles.to_messenger_counts(kpr.n_substates, production_rate)

    n_y = crn_steady_state(
        counts.d_counts, counts.s_count, matrices.w, mix.binding_rate
    )
    concentrations = production_rate * n_y  # mu rescales n_S, undo it
    total = float(concentrations.sum())
    crn_estimate = ConcentrationEstimate(
        kind="crn",
        total=total,
        ratios=concentrations / total,
        concentrations=concentrations,
        n_total=n_receptors,
        n_retained=int(counts.d_counts.sum()),
    )

    obs = cycles.to_observations()
    direct = estimate_concentrations("unbiased", obs, scheme, matrices, mix.binding_rate)
    return EndToEndResult(crn_estimate=crn_estimate, direct_estimate=direct, counts=counts)
