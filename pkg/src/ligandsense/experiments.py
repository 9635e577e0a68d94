"""Scenario configuration, Monte Carlo runners, and sweep orchestration.

A scenario pins the channel (M ligand types with geometrically spaced
unbinding rates k-_{M-i} = chi^i k-_M, a ratio pattern, total concentration)
and the receiver (sample count N, threshold scales nu per estimator kind,
optional filtering bounds, optional unknown ligands).  Sweeps vary one knob
over a grid and report, per grid point and estimator kind, the analytic
metric, a Monte Carlo estimate of the same metric with its standard error,
and the matching Cramer-Rao bound.

Monte Carlo trials sample at the duration level (every binding event gets an
exponential draw, binned by value) in fixed-size chunks from one derived
stream per (seed, point, scheme); sweep points may run in parallel processes
(capped by LIGANDSENSE_THREADS) without changing any output byte, because
rows are ordered by grid index and no stream is shared across points.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import yaml

from .errors import ConfigError, DomainError
from .estimators import EstimatorMatrices, build_thresholds
from .kinetics import LigandMixture, _as_rng
from .kpr import kpr_rates, mixture_absorption_probabilities, simulate_receptors
from . import theory

SCHEMA_VERSION = 1
THREADS_ENV_VAR = "LIGANDSENSE_THREADS"
CHUNK_EVENT_BUDGET = 1 << 21  # events per sampling chunk; fixed so chunking is deterministic

# fixed stream labels so adding/removing estimator kinds never reshuffles draws
_SCHEME_STREAM = {"unbiased": 0, "biased": 1, "nu_opt": 2}

METRICS = ("average_nmse", "total_normalized_mse", "highest_affinity_nmse")
ESTIMATOR_KINDS = ("unbiased", "biased", "nu_opt")
SWEEP_VARIABLES = ("M", "chi", "N", "alpha_M", "absence", "k_u", "alpha_u")


def geometric_unbinding_rates(n_types: int, similarity: float, anchor_rate: float) -> np.ndarray:
    """Rates k-_i = chi^(M-i) * k-_M, strictly decreasing toward the anchor."""
    if n_types < 1:
        raise ConfigError("need at least one ligand type")
    if not similarity > 1:
        raise ConfigError(f"similarity must exceed 1, got {similarity}")
    if not anchor_rate > 0:
        raise ConfigError("anchor rate must be positive")
    return anchor_rate * similarity ** np.arange(n_types - 1, -1, -1, dtype=float)


@dataclass
class ScenarioConfig:
    """One fully specified sensing scenario.

    ratio_mode selects the concentration-ratio pattern:
      - "uniform": alpha_i = 1/M
      - "highest_affinity": alpha_M given, the rest share 1 - alpha_M equally
      - "explicit": explicit_ratios as given
      - "absence": uniform over types not listed in absent_types (1-based),
        zero for the absent ones
    Unknown ligands (rates/ratios the receiver is not hardwired for) shrink
    the known ratios proportionally; they take part in sampling but not in
    the estimator matrices.
    """

    schema_version: int = SCHEMA_VERSION
    n_types: int = 5
    similarity: float = 5.0
    anchor_unbinding_rate: float = 1.0
    binding_rate: float = 1.0
    total_concentration: float = 1.0
    n_samples: int = 10000
    nu_unbiased: float = 3.0
    nu_biased: float = 5.0
    ratio_mode: str = "uniform"
    highest_affinity_ratio: float = 0.2
    explicit_ratios: list = field(default_factory=list)
    absent_types: list = field(default_factory=list)
    unknown_rates: list = field(default_factory=list)
    unknown_ratios: list = field(default_factory=list)
    filter_lower: float = 0.0
    filter_upper: float = float("inf")
    trials: int = 10000
    seed: int = 0
    estimators: list = field(default_factory=lambda: ["unbiased"])
    metric: str = "average_nmse"
    kpr_kappa: float = 0.6
    crn_production_rate: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(
                f"unsupported schema_version {self.schema_version}, expected {SCHEMA_VERSION}"
            )
        if self.n_types < 1:
            raise ConfigError(f"invalid n_types: {self.n_types}")
        if not self.similarity > 1:
            raise ConfigError(f"invalid similarity: {self.similarity} (must exceed 1)")
        if self.n_samples < 3:
            raise ConfigError(f"invalid n_samples: {self.n_samples} (need at least 3)")
        if not (self.nu_unbiased > 0 and self.nu_biased > 0):
            raise ConfigError("invalid nu: threshold scales must be positive")
        if self.ratio_mode not in ("uniform", "highest_affinity", "explicit", "absence"):
            raise ConfigError(f"invalid ratio_mode: {self.ratio_mode!r}")
        if self.metric not in METRICS:
            raise ConfigError(f"invalid metric: {self.metric!r} (choose from {METRICS})")
        unknown_kind = set(self.estimators) - set(ESTIMATOR_KINDS)
        if unknown_kind:
            raise ConfigError(f"invalid estimators: {sorted(unknown_kind)}")
        if len(self.unknown_rates) != len(self.unknown_ratios):
            raise ConfigError("unknown_rates and unknown_ratios must be equally long")
        if self.trials < 2:
            raise ConfigError(f"invalid trials: {self.trials} (need at least 2)")
        if self.ratio_mode == "absence":
            bad = [i for i in self.absent_types if not 1 <= i <= self.n_types]
            if bad:
                raise ConfigError(f"invalid absent_types entries: {bad}")
            if len(set(self.absent_types)) >= self.n_types:
                raise ConfigError("invalid absent_types: at least one ligand must remain")
            if self.metric == "average_nmse":
                raise ConfigError(
                    "invalid metric: average_nmse diverges for absent ligands; "
                    "use total_normalized_mse"
                )
            if self.metric == "highest_affinity_nmse" and self.n_types in self.absent_types:
                raise ConfigError(
                    "invalid metric: highest_affinity_nmse needs the highest-affinity "
                    "ligand present"
                )
        if self.ratio_mode == "explicit":
            if len(self.explicit_ratios) != self.n_types:
                raise ConfigError("invalid explicit_ratios: need one ratio per ligand type")
            total = float(np.sum(self.explicit_ratios))
            if abs(total - 1.0) > 1e-9 or any(r < 0 for r in self.explicit_ratios):
                raise ConfigError("invalid explicit_ratios: must be nonnegative and sum to 1")

    # -- derived channel quantities -------------------------------------------------

    def unbinding_rates(self) -> np.ndarray:
        return geometric_unbinding_rates(
            self.n_types, self.similarity, self.anchor_unbinding_rate
        )

    def known_ratios(self) -> np.ndarray:
        m = self.n_types
        if self.ratio_mode == "uniform":
            alpha = np.full(m, 1.0 / m)
        elif self.ratio_mode == "highest_affinity":
            a_m = self.highest_affinity_ratio
            if not 0 < a_m < 1:
                raise ConfigError(f"invalid highest_affinity_ratio: {a_m}")
            alpha = np.full(m, (1.0 - a_m) / (m - 1)) if m > 1 else np.array([1.0])
            alpha[-1] = a_m
        elif self.ratio_mode == "explicit":
            alpha = np.asarray(self.explicit_ratios, dtype=float)
        else:  # absence
            alpha = np.full(m, 1.0)
            alpha[[i - 1 for i in self.absent_types]] = 0.0
            alpha /= alpha.sum()
        unknown_mass = float(np.sum(self.unknown_ratios))
        if unknown_mass >= 1.0:
            raise ConfigError("unknown ratios must leave mass for the known ligands")
        return alpha * (1.0 - unknown_mass)

    def full_rates_and_ratios(self) -> tuple[np.ndarray, np.ndarray]:
        """Known plus unknown components, as sampled by the channel."""
        rates = np.concatenate([self.unbinding_rates(), np.asarray(self.unknown_rates, float)])
        ratios = np.concatenate([self.known_ratios(), np.asarray(self.unknown_ratios, float)])
        return rates, ratios

    def full_mixture(self) -> LigandMixture:
        """The channel as it really is, unknown components included."""
        rates, ratios = self.full_rates_and_ratios()
        order = np.argsort(-rates, kind="stable")
        return LigandMixture(
            binding_rate=self.binding_rate,
            unbinding_rates=rates[order],
            ratios=ratios[order],
            total_concentration=self.total_concentration,
        )

    def scheme(self, nu: float):
        return build_thresholds(
            self.unbinding_rates(), nu, lower=self.filter_lower, upper=self.filter_upper
        )

    # -- (de)serialization ------------------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        data = dict(data)
        # accept hand-written "inf" besides YAML's native .inf
        if data.get("filter_upper") in ("inf", ".inf", None):
            data["filter_upper"] = float("inf")
        return cls(**data)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def from_yaml(cls, text: str) -> "ScenarioConfig":
        data = yaml.safe_load(text)
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_yaml(fh.read())

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_yaml())


# ---------------------------------------------------------------------------------
# Monte Carlo runners
# ---------------------------------------------------------------------------------


def simulate_total_concentration_trials(
    total_concentration: float,
    binding_rate: float,
    n_samples: int,
    trials: int,
    seed,
) -> np.ndarray:
    """Trial-wise total-concentration estimates from honest unbound-time sums."""
    rng = _as_rng(seed)
    rate = binding_rate * total_concentration
    estimates = np.empty(trials)
    chunk = max(1, CHUNK_EVENT_BUDGET // n_samples)
    done = 0
    while done < trials:
        take = min(chunk, trials - done)
        t_u = rng.exponential(1.0 / rate, (take, n_samples)).sum(axis=1)
        estimates[done:done + take] = (n_samples - 1) / (binding_rate * t_u)
        done += take
    return estimates


def simulate_ratio_estimates(
    rates_full: np.ndarray,
    ratios_full: np.ndarray,
    scheme,
    weight_rows: dict[str, np.ndarray],
    n_samples: int,
    trials: int,
    seed,
    binding_rate: float = 1.0,
    total_concentration: float = 1.0,
) -> dict[str, np.ndarray]:
    """Trial-wise ratio estimates for one scheme, per kind, as (trials, M) arrays.

    Every binding event receives its own exponential duration and is binned by
    value; per-trial type multiplicities come from one multinomial draw (the
    grouped law equals per-event categorical assignment, and ordering never
    enters counts or sums).  The key "__total__" carries the paired
    total-concentration estimates; concentration estimates are their product
    with the ratio rows.
    """
    rng = _as_rng(seed)
    edges = scheme.edges
    m_bins = scheme.n_intervals
    unbound_rate = binding_rate * total_concentration
    out = {kind: np.empty((trials, rows.shape[0])) for kind, rows in weight_rows.items()}
    totals = np.empty(trials)

    chunk = max(1, CHUNK_EVENT_BUDGET // n_samples)
    done = 0
    while done < trials:
        take = min(chunk, trials - done)
        type_counts = rng.multinomial(n_samples, ratios_full, size=take)
        rate_rows = np.repeat(
            np.tile(rates_full, take), type_counts.ravel()
        ).reshape(take, n_samples)
        tau = rng.standard_exponential((take, n_samples)) / rate_rows
        t_u = rng.standard_exponential((take, n_samples)).sum(axis=1) / unbound_rate

        idx = np.searchsorted(edges, tau, side="right") - 1
        valid = (idx >= 0) & (idx < m_bins)
        flat = (idx + np.arange(take)[:, None] * m_bins)[valid]
        counts = np.bincount(flat, minlength=take * m_bins).reshape(take, m_bins)
        retained = counts.sum(axis=1)
        if np.any(retained == 0):
            raise DomainError("a trial retained no events; filtering is too aggressive")

        for kind, rows in weight_rows.items():
            out[kind][done:done + take] = counts @ rows.T / retained[:, None]
        totals[done:done + take] = (n_samples - 1) / (binding_rate * t_u)
        done += take

    out["__total__"] = totals
    return out


def _metric_per_trial(estimates: np.ndarray, true_c: np.ndarray, metric: str,
                      total_concentration: float) -> np.ndarray:
    err2 = (estimates - true_c) ** 2
    if metric == "average_nmse":
        if np.any(true_c == 0):
            raise ConfigError("average_nmse diverges for absent ligands")
        return (err2 / true_c**2).mean(axis=1)
    if metric == "total_normalized_mse":
        return err2.sum(axis=1) / total_concentration**2
    if metric == "highest_affinity_nmse":
        return err2[:, -1] / true_c[-1] ** 2
    raise ConfigError(f"invalid metric: {metric!r}")


def _metric_from_report(report: theory.ErrorReport, metric: str) -> float:
    if metric == "average_nmse":
        return theory.average_nmse(report)
    if metric == "total_normalized_mse":
        return theory.total_normalized_mse(report)
    if metric == "highest_affinity_nmse":
        return float(theory.per_ligand_nmse(report)[-1])
    raise ConfigError(f"invalid metric: {metric!r}")


# ---------------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    """One (grid point, estimator kind) result of a sweep."""

    var: str
    estimator: str
    analytic: float
    mc: float
    mc_se: float
    crlb: float
    nu: float


def _parse_absent(value) -> list[int]:
    if isinstance(value, str):
        return [int(v) for v in value.split(",") if v]
    return [int(v) for v in np.atleast_1d(value)]


def _point_config(config: ScenarioConfig, variable: str, value) -> ScenarioConfig:
    if variable == "M":
        return replace(config, n_types=int(value))
    if variable == "chi":
        return replace(config, similarity=float(value))
    if variable == "N":
        return replace(config, n_samples=int(value))
    if variable == "alpha_M":
        return replace(config, ratio_mode="highest_affinity",
                       highest_affinity_ratio=float(value))
    if variable == "absence":
        metric = config.metric if config.metric != "average_nmse" else "total_normalized_mse"
        return replace(config, ratio_mode="absence", absent_types=_parse_absent(value),
                       metric=metric)
    if variable == "k_u":
        ratios = config.unknown_ratios or [0.1]
        return replace(config, unknown_rates=[float(value)], unknown_ratios=ratios)
    if variable == "alpha_u":
        rates = config.unknown_rates or [100.0]
        return replace(config, unknown_rates=rates, unknown_ratios=[float(value)])
    raise ConfigError(f"invalid sweep variable: {variable!r} (choose from {SWEEP_VARIABLES})")


def _analytic_report(config: ScenarioConfig, kind: str, nu: float) -> theory.ErrorReport:
    rates = config.unbinding_rates()
    scheme = config.scheme(nu)
    if config.unknown_rates:
        if kind == "biased":
            raise ConfigError("analytic unknown-ligand moments cover the unbiased kind only")
        return theory.unknown_ligand_analytics(
            rates, config.known_ratios(), config.unknown_rates, config.unknown_ratios,
            scheme, config.total_concentration, config.n_samples,
        )
    matrices = EstimatorMatrices.build(scheme, rates)
    if kind == "biased":
        return theory.biased_estimator_analytics(
            matrices.s, matrices.h, config.known_ratios(),
            config.total_concentration, config.n_samples,
        )
    return theory.unbiased_estimator_analytics(
        matrices.s, config.known_ratios(), config.total_concentration, config.n_samples
    )


def _crlb_metric(config: ScenarioConfig) -> float:
    """CRLB transformed to the configured metric; NaN where it does not apply."""
    if config.unknown_rates:
        return float("nan")
    alpha = config.known_ratios()
    rates = config.unbinding_rates()
    present = alpha > 0
    report = theory.crlb_report(
        alpha[present], rates[present], config.n_samples, config.total_concentration
    )
    if config.metric == "average_nmse":
        return theory.average_nmse(report)
    if config.metric == "total_normalized_mse":
        # absent components are excluded from the Fisher computation and
        # contribute no lower bound
        return theory.total_normalized_mse(report)
    return float(theory.per_ligand_nmse(report)[-1])


def _nu_for_kind(config: ScenarioConfig, kind: str) -> tuple[float, bool]:
    if kind == "unbiased":
        return config.nu_unbiased, False
    if kind == "biased":
        return config.nu_biased, False
    if kind == "nu_opt":
        # optimize over the present submixture; the average-NMSE objective is
        # undefined for absent components
        alpha = config.known_ratios()
        present = alpha > 0
        opt = theory.optimize_nu(
            alpha[present] / alpha[present].sum(),
            config.unbinding_rates()[present],
            config.total_concentration, config.n_samples,
        )
        return opt.nu, opt.used_grid_fallback
    raise ConfigError(f"invalid estimator kind: {kind!r}")


def evaluate_sweep_point(config: ScenarioConfig, variable: str, value,
                         point_index: int) -> list[SweepRow]:
    """Analytic + Monte Carlo metrics for every configured estimator at one point."""
    point = _point_config(config, variable, value)
    rates = point.unbinding_rates()
    rates_full, ratios_full = point.full_rates_and_ratios()
    true_c = point.total_concentration * point.known_ratios()
    crlb_metric = _crlb_metric(point)

    rows = []
    for kind in point.estimators:
        if kind == "nu_opt" and point.unknown_rates:
            raise ConfigError("nu_opt sweeps with unknown ligands are not supported")
        nu, _ = _nu_for_kind(point, kind)
        scheme = point.scheme(nu)
        matrices = EstimatorMatrices.build(scheme, rates)
        weight_rows = {kind: matrices.r if kind == "biased" else matrices.w}
        estimates = simulate_ratio_estimates(
            rates_full, ratios_full, scheme, weight_rows,
            point.n_samples, point.trials,
            seed=(point.seed, point_index, _SCHEME_STREAM[kind]),
            binding_rate=point.binding_rate,
            total_concentration=point.total_concentration,
        )
        concentrations = estimates["__total__"][:, None] * estimates[kind]
        per_trial = _metric_per_trial(
            concentrations, true_c, point.metric, point.total_concentration
        )
        analytic_kind = "biased" if kind == "biased" else "unbiased"
        report = _analytic_report(point, analytic_kind, nu)
        rows.append(SweepRow(
            var=_format_value(variable, value),
            estimator=kind,
            analytic=_metric_from_report(report, point.metric),
            mc=float(per_trial.mean()),
            mc_se=float(per_trial.std(ddof=1) / np.sqrt(per_trial.size)),
            crlb=crlb_metric,
            nu=float(nu),
        ))
    return rows


def _format_value(variable: str, value) -> str:
    if variable == "absence":
        return "absent:" + ",".join(str(v) for v in _parse_absent(value))
    if float(value) == int(value):
        return str(int(value))
    return repr(float(value))


def thread_limit() -> int:
    raw = os.environ.get(THREADS_ENV_VAR, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        warnings.warn(f"ignoring non-integer {THREADS_ENV_VAR}={raw!r}", stacklevel=2)
        return 1


def run_sweep(config: ScenarioConfig, variable: str, grid) -> list[SweepRow]:
    """Evaluate a sweep grid; rows come back ordered by (grid index, kind).

    Work is farmed out across processes when LIGANDSENSE_THREADS > 1; the
    derived-stream seeding makes the output identical either way.
    """
    if variable not in SWEEP_VARIABLES:
        raise ConfigError(f"invalid sweep variable: {variable!r} (choose from {SWEEP_VARIABLES})")
    grid = list(grid)
    if not grid:
        raise ConfigError("invalid sweep grid: it is empty")
    workers = min(thread_limit(), len(grid))
    if workers <= 1:
        batches = [evaluate_sweep_point(config, variable, v, i) for i, v in enumerate(grid)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(evaluate_sweep_point, config, variable, v, i)
                for i, v in enumerate(grid)
            ]
            batches = [f.result() for f in futures]
    return [row for batch in batches for row in batch]


# ---------------------------------------------------------------------------------
# Proofreading-figure data
# ---------------------------------------------------------------------------------


@dataclass(frozen=True)
class KprFigureRow:
    substate: int
    count: float
    empirical: float
    analytic_kpr: float
    analytic_binned: float


def run_kpr_figure(config: ScenarioConfig, replicates: int | None = None) -> list[KprFigureRow]:
    """Histogram of simulated D counts against both Gaussian approximations.

    Per substate j the empirical density of n_D_j over replicate sensing
    rounds is tabulated next to the Gaussian of the proofreading steady state
    and the Gaussian of the exact binned-count statistics it approximates.
    """
    reps = replicates if replicates is not None else min(config.trials, 2000)
    if reps < 2:
        raise ConfigError("need at least 2 replicates for a histogram")
    rates = config.unbinding_rates()
    if config.n_types != 3:
        warnings.warn("the canonical proofreading setup has 3 ligand types", stacklevel=2)
    mix = LigandMixture(
        binding_rate=config.binding_rate,
        unbinding_rates=rates,
        ratios=config.known_ratios(),
        total_concentration=config.total_concentration,
    )
    scheme = config.scheme(config.nu_unbiased)
    kpr = kpr_rates(scheme, config.kpr_kappa)
    n = config.n_samples

    d_samples = np.empty((reps, config.n_types))
    for rep in range(reps):
        counts = simulate_receptors(
            mix, kpr, config.crn_production_rate, n, (config.seed, rep)
        )
        d_samples[rep] = counts.d_counts

    p_kpr = mixture_absorption_probabilities(mix, kpr)
    matrices = EstimatorMatrices.build(scheme, rates)
    p_bin = matrices.s @ mix.ratios

    rows = []
    for j in range(config.n_types):
        mean_k, var_k = n * p_kpr[j], n * p_kpr[j] * (1 - p_kpr[j])
        mean_b, var_b = n * p_bin[j], n * p_bin[j] * (1 - p_bin[j])
        sigma = max(np.sqrt(max(var_k, var_b)), 1.0)
        lo = int(np.floor(min(mean_k, mean_b) - 5 * sigma))
        hi = int(np.ceil(max(mean_k, mean_b) + 5 * sigma))
        width = max(1, int(round(sigma / 4)))
        bin_edges = np.arange(max(lo, 0), hi + width, width)
        hist, _ = np.histogram(d_samples[:, j], bins=bin_edges, density=True)
        centers = (bin_edges[:-1] + bin_edges[1:]) / 2.0
        for c, h in zip(centers, hist):
            rows.append(KprFigureRow(
                substate=j + 1,
                count=float(c),
                empirical=float(h),
                analytic_kpr=float(_gauss_pdf(c, mean_k, var_k)),
                analytic_binned=float(_gauss_pdf(c, mean_b, var_b)),
            ))
    return rows


def _gauss_pdf(x: float, mean: float, var: float) -> float:
    if var <= 0:
        return 0.0
    return np.exp(-((x - mean) ** 2) / (2 * var)) / np.sqrt(2 * np.pi * var)
