"""Proper symmetric losses and the divergences they induce on finite partitions.

Partial losses are expressed for the negative class, ``partial_neg(u) = l_{-1}(u)``;
symmetry gives the positive partial as ``l_{-1}(1 - u)``. Everything here is an
exact finite sum over the cells of a :class:`~gentrees.trees.PartitionStats`.
"""

from __future__ import annotations

import numpy as np

from .trees import PartitionStats

AGREEMENT_TOL = 1e-9


def _as_unit(u):
    u = np.asarray(u, dtype=np.float64)
    if np.any((u < 0) | (u > 1)) or np.any(np.isnan(u)):
        raise ValueError("posterior values must lie in [0, 1]")
    return u


class ProperLoss:
    """A strictly proper, symmetric, differentiable loss with ``l_{-1}(0) = 0``."""

    def __init__(self, name, partial_neg, bayes_risk, bayes_risk_derivative):
        self.name = name
        self._partial_neg = partial_neg
        self._bayes_risk = bayes_risk
        self._derivative = bayes_risk_derivative

    def __repr__(self):
        return f"ProperLoss({self.name!r})"

    def partial_neg(self, u):
        return self._partial_neg(_as_unit(u))

    def partial_pos(self, u):
        return self._partial_neg(1.0 - _as_unit(u))

    def bayes_risk(self, u):
        """Pointwise Bayes risk ``L(u)``."""
        return self._bayes_risk(_as_unit(u))

    def bayes_risk_derivative(self, u):
        return self._derivative(_as_unit(u))

    def drloss(self, z):
        """Generator loss in density-ratio form, ``l_{-1}(1 / (1 + z))``."""
        z = np.asarray(z, dtype=np.float64)
        if np.any(z < 0):
            raise ValueError("density ratio must be nonnegative")
        with np.errstate(divide="ignore"):
            u = np.where(np.isinf(z), 0.0, 1.0 / (1.0 + z))
        return self._partial_neg(u)


def _xlog2x(x):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0, x * np.log2(np.where(x > 0, x, 1.0)), 0.0)


def _log_partial_neg(u):
    with np.errstate(divide="ignore"):
        return -np.log2(1.0 - u)


def _log_risk(u):
    return -_xlog2x(u) - _xlog2x(1.0 - u)


def _log_derivative(u):
    with np.errstate(divide="ignore"):
        return np.log2(1.0 - u) - np.log2(u)


def _matusita_partial_neg(u):
    with np.errstate(divide="ignore"):
        return np.sqrt(u / (1.0 - u))


def _matusita_derivative(u):
    with np.errstate(divide="ignore", invalid="ignore"):
        return (1.0 - 2.0 * u) / np.sqrt(u * (1.0 - u))


LOG = ProperLoss("log", _log_partial_neg, _log_risk, _log_derivative)
SQUARE = ProperLoss("square", lambda u: 0.5 * u * u, lambda u: 0.5 * u * (1.0 - u), lambda u: 0.5 - u)
MATUSITA = ProperLoss(
    "matusita", _matusita_partial_neg, lambda u: 2.0 * np.sqrt(u * (1.0 - u)), _matusita_derivative
)

LOSSES = {loss.name: loss for loss in (LOG, SQUARE, MATUSITA)}


def get_loss(loss) -> ProperLoss:
    if isinstance(loss, ProperLoss):
        return loss
    try:
        return LOSSES[str(loss).lower()]
    except KeyError:
        raise ValueError(f"unknown loss {loss!r}; choose from {sorted(LOSSES)}") from None


def pointwise_bayes_risk(loss, u):
    return get_loss(loss).bayes_risk(u)


def conditional_risk(loss, estimate, truth):
    """Expected loss of predicting ``estimate`` when the true posterior is ``truth``."""
    loss = get_loss(loss)
    truth = _as_unit(truth)
    pos = loss.partial_pos(estimate)
    neg = loss.partial_neg(estimate)
    with np.errstate(invalid="ignore"):
        return np.where(truth > 0, truth * pos, 0.0) + np.where(truth < 1, (1.0 - truth) * neg, 0.0)


# ---------------------------------------------------------------- cell quantities


def _cells(stats: PartitionStats):
    pi = stats.prior
    mix = pi * stats.p + (1.0 - pi) * stats.n
    with np.errstate(invalid="ignore", divide="ignore"):
        eta = np.where(mix > 0, pi * stats.p / np.where(mix > 0, mix, 1.0), pi)
    return mix, np.clip(eta, 0.0, 1.0)


def statistical_information(stats: PartitionStats, loss) -> float:
    """``L(prior)`` minus the population Bayes risk of the calibrated leaf posteriors."""
    loss = get_loss(loss)
    mix, eta = _cells(stats)
    return float(loss.bayes_risk(stats.prior) - np.sum(mix * loss.bayes_risk(eta)))


def f_pi(loss, prior, t):
    """The f-divergence generator attached to ``loss`` and ``prior``."""
    loss = get_loss(loss)
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    scale = prior * t + 1.0 - prior
    return loss.bayes_risk(prior) - scale * loss.bayes_risk(prior * t / scale)


def f_pi_derivative(loss, prior, t):
    """Derivative of :func:`f_pi`, which simplifies to ``-prior * l_1(eta)``."""
    loss = get_loss(loss)
    t = np.asarray(t, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        eta = np.where(np.isinf(t), 1.0, prior * t / (prior * t + 1.0 - prior))
    return -prior * loss.partial_pos(eta)


def f_pi_slope_at_infinity(loss, prior) -> float:
    """``lim f_pi(t) / t`` as t grows, equal to ``-prior * L(1) = 0`` for the shipped losses."""
    return float(-prior * get_loss(loss).bayes_risk(1.0))


def binary_task_information(stats: PartitionStats, loss) -> float:
    """The f-divergence ``sum_cells n * f_pi(p / n)``."""
    loss = get_loss(loss)
    pi = stats.prior
    pos = stats.n > 0
    t = stats.p[pos] / stats.n[pos]
    total = np.sum(stats.n[pos] * f_pi(loss, pi, t))
    total += np.sum(stats.p[~pos]) * f_pi_slope_at_infinity(loss, pi)
    return float(total)


def generator_risk(stats: PartitionStats, loss) -> float:
    """Expected generator loss under the fake measure, negated.

    With density ratio ``z = (1 - prior) n / (prior p)`` this is
    ``sum_cells n * (L(prior) - (1 - prior) * drloss(z))``.
    """
    loss = get_loss(loss)
    _, eta = _cells(stats)
    # drloss(z) = l_{-1}(1 / (1 + z)) and 1 / (1 + z) is the calibrated posterior itself
    per_cell = loss.bayes_risk(stats.prior) - (1.0 - stats.prior) * loss.partial_neg(eta)
    with np.errstate(invalid="ignore"):
        return float(np.sum(np.where(stats.n > 0, stats.n * per_cell, 0.0)))


def discriminator_risk(stats: PartitionStats, loss, check: bool = True) -> float:
    """Discriminator risk from its expectation form; equals minus the task information."""
    loss = get_loss(loss)
    pi = stats.prior
    pos = stats.p > 0
    t = np.full(stats.p.shape, np.inf)
    np.divide(stats.p, stats.n, out=t, where=stats.n > 0)
    expect_p = np.sum(stats.p[pos] * f_pi_derivative(loss, pi, t[pos]))
    value = -(expect_p + generator_risk(stats, loss))
    if check:
        other = -binary_task_information(stats, loss)
        if abs(value - other) > AGREEMENT_TOL:
            raise ArithmeticError(f"discriminator risk paths disagree: {value} vs {other}")
    return float(value)


def generator_risk_bound(stats: PartitionStats, loss) -> float:
    """Upper bound on :func:`generator_risk` driven by the chi-square of the task."""
    loss = get_loss(loss)
    pi = stats.prior
    chi2 = chi_square(stats)
    return float(loss.bayes_risk(pi) - (1.0 - pi) * loss.partial_neg(pi / (1.0 + (1.0 - pi) * chi2)))


def chi_square(stats_or_p, n=None) -> float:
    """Pearson chi-square of the fake masses against the real ones, ``-1 + sum n^2 / p``."""
    if n is None:
        p, n = stats_or_p.p, stats_or_p.n
    else:
        p = np.asarray(stats_or_p, dtype=np.float64)
        n = np.asarray(n, dtype=np.float64)
    if np.any((p == 0) & (n > 0)):
        return float("inf")
    pos = p > 0
    return float(-1.0 + np.sum(n[pos] ** 2 / p[pos]))


def bregman_partial_identity(loss, u):
    """Return ``(B_{-L}(0 || u), B_{-L}(1 || u))``, which equal ``(l_{-1}(u), l_1(u))``."""
    loss = get_loss(loss)
    L = loss.bayes_risk(u)
    dL = loss.bayes_risk_derivative(u)
    u = np.asarray(u, dtype=np.float64)
    # B_F(a||u) = F(a) - F(u) - (a - u) F'(u) with F = -L and F(0) = F(1) = 0
    return L - u * dL, L + (1.0 - u) * dL


# ---------------------------------------------------------------- likelihood ratio risk


def _information_against(loss, prior, p, u) -> float:
    """``I_{f_pi}(P, U)`` for cell masses ``p`` and uniform volumes ``u``."""
    loss = get_loss(loss)
    p = np.asarray(p, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    mix = prior * p + (1.0 - prior) * u
    with np.errstate(invalid="ignore", divide="ignore"):
        eta = np.where(mix > 0, prior * p / np.where(mix > 0, mix, 1.0), prior)
    return float(loss.bayes_risk(prior) - np.sum(mix * loss.bayes_risk(np.clip(eta, 0, 1))))


def coarsen(p, u, groups):
    """Spread the real mass of every group over its cells proportionally to volume."""
    p = np.asarray(p, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    groups = np.asarray(groups)
    _, inv = np.unique(groups, return_inverse=True)
    gp = np.bincount(inv, weights=p)
    gu = np.bincount(inv, weights=u)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(gu[inv] > 0, gp[inv] * u / gu[inv], 0.0)


def likelihood_ratio_risk(loss, prior, p, p_model, u) -> float:
    """Risk of a locally uniform model ``p_model`` against ``p``, in divergence-difference form.

    All arguments live on a common refinement on which ``p`` is taken to be
    piecewise uniform and ``p_model`` is a coarsening of ``p`` (see :func:`coarsen`).
    """
    return _information_against(loss, prior, p, u) - _information_against(loss, prior, p_model, u)


def likelihood_ratio_risk_bregman(loss, prior, p, p_model, u) -> float:
    """Same risk in expectation form: ``prior * E_U[B(dP/dU || dP_model/dU)]`` for the perspective of ``-L``."""
    loss = get_loss(loss)
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(p_model, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    c = (1.0 - prior) / prior
    keep = u > 0
    a, b, u = p[keep] / u[keep], q[keep] / u[keep], u[keep]

    def persp(z):
        g = z + c
        return -g * loss.bayes_risk(z / g)

    def persp_prime(z):
        # derivative of g(z) * (-L)(z / g(z)) reduces to -l_1(z / g(z))
        return -loss.partial_pos(z / (z + c))

    div = persp(a) - persp(b) - (a - b) * persp_prime(b)
    return float(prior * np.sum(u * div))


def split_budget_log10(loss, stats: PartitionStats, epsilon: float, gamma: float) -> float:
    """log10 of the split count that guarantees a risk below ``epsilon`` times the maximal one.

    ``stats`` is the finest available real-vs-uniform task. The bound
    ``(1 / L_eps) ** (32 / gamma**2)`` is astronomically large at desk scale, so it is
    only reported, never enforced.
    """
    loss = get_loss(loss)
    pop_risk = loss.bayes_risk(stats.prior) - statistical_information(stats, loss)
    l_eps = epsilon * loss.bayes_risk(stats.prior) + (1.0 - epsilon) * pop_risk
    if l_eps <= 0 or gamma <= 0:
        return float("inf")
    return float(-(32.0 / gamma**2) * np.log10(l_eps))
