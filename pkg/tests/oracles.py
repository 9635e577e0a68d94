"""Independent reference computations the tests check the library against.

Everything here deliberately avoids the library's own code paths: absorption
probabilities come from the absorbing-chain fundamental matrix, Fisher entries
from dense trapezoid sums, densities from direct formula transcription.
"""

import numpy as np


def absorption_bruteforce(betas, unbinding_rate):
    """Absorption probabilities of the proofreading chain via linear algebra.

    Transient states are the substates; absorbing states are the D exits.
    Solve (-Q) B = R for the absorption matrix and take the row of the start
    state.
    """
    m = len(betas) + 1
    q = np.zeros((m, m))       # transient generator
    r = np.zeros((m, m))       # transient -> absorbing rates
    for j in range(m):
        r[j, j] = unbinding_rate
        out = unbinding_rate
        if j < m - 1:
            q[j, j + 1] = betas[j]
            out += betas[j]
        q[j, j] = -out
    return np.linalg.solve(-q, r)[0]


def fisher_entry_trapezoid(alpha, rates, i, j, upper, n_points=2_000_001):
    """Dense trapezoid evaluation of one Fisher integral on [0, upper]."""
    t = np.linspace(0.0, upper, n_points)
    p = (alpha * rates * np.exp(-np.outer(t, rates))).sum(axis=1)
    g = np.exp(-(rates[i] + rates[j]) * t) / p
    return rates[i] * rates[j] * np.trapezoid(g, t)


def mixture_pdf_direct(alpha, rates, t):
    """Plain transcription of the exponential-mixture density."""
    return sum(a * k * np.exp(-k * t) for a, k in zip(alpha, rates))


def interval_mass_direct(alpha, rates, lo, hi):
    """P(lo <= tau_b < hi) by direct survival-function differencing."""
    total = 0.0
    for a, k in zip(alpha, rates):
        upper = 0.0 if np.isinf(hi) else np.exp(-k * hi)
        total += a * (np.exp(-k * lo) - upper)
    return total
