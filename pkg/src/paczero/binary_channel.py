"""Exact mutual information of the binary-input Gaussian channel.

The released quantity at every training step is a sign bit passed through
additive Gaussian noise: the channel input is xi in {-1, +1} with
P(xi = +1) = q_plus, and the observation is Y~ = xi + N(0, sigma^2).
This module computes I(xi; Y~) in nats, exactly (to quadrature precision),
and inverts the map sigma -> MI so a step can be calibrated to carry a
prescribed number of nats.

The integral is evaluated with fixed-order Gauss-Hermite quadrature after
substituting y = s + sqrt(2)*sigma*x per input symbol s.  The Gaussian
normalizing constants cancel inside the log-ratio, so the integrand reduces
to -x^2 minus a two-term log-sum-exp and stays finite for any sigma > 0.

A slow composite-trapezoid evaluation of the same integral on an explicit
grid is provided as an independent cross-check; tests treat it as ground
truth and the fast path must match it to 1e-6 nats.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "ChannelError",
    "DegenerateChannelError",
    "InfeasibleBudgetError",
    "binary_entropy",
    "channel_mi",
    "channel_mi_oracle",
    "invert_channel_mi",
]

# Below this noise level the channel is treated as noiseless and the MI is
# the input entropy exactly; the crossover error is far below 1e-10 nats.
NOISELESS_SIGMA = 1e-10

GH_ORDER = 60

# Calibration bracket in sigma, expanded by decades on demand.
BRACKET_LO = 1e-6
BRACKET_HI = 1e6
BRACKET_LO_MIN = 1e-12
BRACKET_HI_MAX = 1e12
MI_MATCH_TOL = 1e-10
LOG_SIGMA_WIDTH_TOL = 1e-12

_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite.hermgauss(GH_ORDER)
_GH_WEIGHTS = _GH_WEIGHTS / math.sqrt(math.pi)


class ChannelError(ValueError):
    """Base class for calibration failures of the binary noise channel."""


class DegenerateChannelError(ChannelError):
    """The sign distribution is a point mass, so no noise level can carry
    positive information; calibration is undefined."""


class InfeasibleBudgetError(ChannelError):
    """The requested per-step information exceeds what a binary input with
    the given sign distribution can carry (its entropy)."""


def binary_entropy(q: float) -> float:
    """Entropy of a Bernoulli(q) variable in nats, with 0*log(0) = 0."""
    if not 0.0 <= q <= 1.0:
        raise ChannelError(f"probability out of range: {q!r}")
    if q == 0.0 or q == 1.0:
        return 0.0
    return -q * math.log(q) - (1.0 - q) * math.log1p(-q)


def _gh_branch(shift: float, log_q: float, log_1mq: float, offset: float) -> float:
    """One conditional expectation E[log p(Y|s) - log p(Y)] under Y | s.

    ``shift`` and ``offset`` are the distances (in units of sqrt(2)*sigma)
    from the conditioning symbol to +1 and -1 respectively.
    """
    x = _GH_NODES
    log_mix = np.logaddexp(log_q - (x + shift) ** 2, log_1mq - (x + offset) ** 2)
    return float(np.dot(_GH_WEIGHTS, -x * x - log_mix))


def channel_mi(q_plus: float, sigma: float) -> float:
    """I(xi; xi + N(0, sigma^2)) in nats for P(xi = +1) = q_plus.

    Exact in the noiseless limit (returns the input entropy when sigma is
    below ``NOISELESS_SIGMA``) and decays to zero as sigma grows.
    """
    if not 0.0 <= q_plus <= 1.0:
        raise ChannelError(f"q_plus out of range: {q_plus!r}")
    if sigma < 0.0 or not math.isfinite(sigma):
        raise ChannelError(f"sigma must be finite and nonnegative: {sigma!r}")
    if q_plus == 0.0 or q_plus == 1.0:
        return 0.0
    if sigma < NOISELESS_SIGMA:
        return binary_entropy(q_plus)

    log_q = math.log(q_plus)
    log_1mq = math.log1p(-q_plus)
    gap = math.sqrt(2.0) / sigma  # distance between the two symbols in node units
    term_plus = _gh_branch(0.0, log_q, log_1mq, gap)
    term_minus = _gh_branch(-gap, log_q, log_1mq, 0.0)
    mi = q_plus * term_plus + (1.0 - q_plus) * term_minus
    # Quadrature noise can land an exact-zero integral a few ulp negative.
    return max(mi, 0.0)


def channel_mi_oracle(
    q_plus: float,
    sigma: float,
    grid_halfwidth: float,
    grid_points: int,
) -> float:
    """Composite-trapezoid evaluation of the same MI integral on a y-grid.

    Deliberately independent of the Gauss-Hermite path: the integrand is
    formed from explicit log-densities on [-grid_halfwidth, grid_halfwidth].
    Used only as ground truth in tests.
    """
    if not 0.0 <= q_plus <= 1.0:
        raise ChannelError(f"q_plus out of range: {q_plus!r}")
    if sigma <= 0.0:
        raise ChannelError("oracle requires sigma > 0")
    if grid_halfwidth < 1.0 + 8.0 * sigma:
        raise ChannelError(
            f"grid halfwidth {grid_halfwidth} does not cover 1 + 8*sigma = {1.0 + 8.0 * sigma}"
        )
    if grid_points < 10_000:
        raise ChannelError(f"need at least 1e4 grid points, got {grid_points}")
    if q_plus == 0.0 or q_plus == 1.0:
        return 0.0

    y = np.linspace(-grid_halfwidth, grid_halfwidth, int(grid_points))
    log_norm = -math.log(sigma * math.sqrt(2.0 * math.pi))
    log_p_plus = log_norm - (y - 1.0) ** 2 / (2.0 * sigma**2)
    log_p_minus = log_norm - (y + 1.0) ** 2 / (2.0 * sigma**2)
    log_mix = np.logaddexp(
        math.log(q_plus) + log_p_plus, math.log1p(-q_plus) + log_p_minus
    )
    # p * log(p/mix) with the p -> 0 tails going to zero by underflow.
    integrand_plus = np.exp(log_p_plus) * (log_p_plus - log_mix)
    integrand_minus = np.exp(log_p_minus) * (log_p_minus - log_mix)
    mi = q_plus * np.trapezoid(integrand_plus, y) + (1.0 - q_plus) * np.trapezoid(
        integrand_minus, y
    )
    return float(max(mi, 0.0))


def invert_channel_mi(q_plus: float, beta: float) -> float:
    """Noise level sigma such that channel_mi(q_plus, sigma) == beta.

    MI is strictly decreasing in sigma, so the root is found by bisection
    in log(sigma) on a bracket expanded by decades until it straddles beta.
    Stops when the MI mismatch is below 1e-10 nats or the log-sigma bracket
    is narrower than 1e-12.
    """
    if not 0.0 <= q_plus <= 1.0:
        raise ChannelError(f"q_plus out of range: {q_plus!r}")
    if q_plus == 0.0 or q_plus == 1.0:
        raise DegenerateChannelError(
            "unanimous sign distribution carries no information; nothing to calibrate"
        )
    if not math.isfinite(beta) or beta <= 0.0:
        raise ChannelError(f"target information must be positive and finite: {beta!r}")
    entropy = binary_entropy(q_plus)
    if beta >= entropy:
        raise InfeasibleBudgetError(
            f"requested {beta} nats but a sign with P(+1)={q_plus} carries at most {entropy}"
        )

    lo, hi = BRACKET_LO, BRACKET_HI
    # channel_mi(q, lo) must sit above beta; guaranteed once lo enters the
    # noiseless regime because beta < entropy.
    while channel_mi(q_plus, lo) <= beta:
        lo /= 10.0
        if lo < BRACKET_LO_MIN:
            raise ChannelError(
                f"no sigma >= {BRACKET_LO_MIN} attains {beta} nats at q_plus={q_plus}"
            )
    while channel_mi(q_plus, hi) >= beta:
        hi *= 10.0
        if hi > BRACKET_HI_MAX:
            raise ChannelError(
                f"no sigma <= {BRACKET_HI_MAX} attains {beta} nats at q_plus={q_plus}"
            )

    log_lo, log_hi = math.log(lo), math.log(hi)
    sigma = math.exp(0.5 * (log_lo + log_hi))
    for _ in range(200):
        sigma = math.exp(0.5 * (log_lo + log_hi))
        mi = channel_mi(q_plus, sigma)
        if abs(mi - beta) <= MI_MATCH_TOL:
            return sigma
        if mi > beta:
            log_lo = math.log(sigma)
        else:
            log_hi = math.log(sigma)
        if log_hi - log_lo < LOG_SIGMA_WIDTH_TOL:
            return math.exp(0.5 * (log_lo + log_hi))
    return sigma
