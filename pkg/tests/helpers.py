"""Independent oracles shared by the test modules.

Everything here is deliberately written from the defining formulas with
stdlib math / plain numpy, never by calling the package functions under
test, so agreement is evidence rather than tautology.
"""

import math

import numpy as np


def entropy_nats(q: float) -> float:
    if q <= 0.0 or q >= 1.0:
        return 0.0
    return -q * math.log(q) - (1.0 - q) * math.log(1.0 - q)


def kl_nats(p: float, q: float) -> float:
    total = 0.0
    if p > 0.0:
        total += p * math.log(p / q)
    if p < 1.0:
        total += (1.0 - p) * math.log((1.0 - p) / (1.0 - q))
    return total


def solve_posterior_bound(mi: float, prior: float) -> float:
    """Bisection solve of kl(p, prior) = mi on [prior, 1-1e-15]."""
    lo, hi = prior, 1.0 - 1e-15
    if mi >= kl_nats(hi, prior):
        return 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if kl_nats(mid, prior) < mi:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def analytic_blobs_directional(task, theta, i: int, z) -> float:
    """Closed-form directional derivative of the logistic per-sample loss.

    loss_i = softplus(-m_i) with m_i = y_i * (w . x_i + b), so
    d loss / d theta = -sigmoid(-m_i) * y_i * [x_i, 1].
    """
    theta = np.asarray(theta, dtype=float)
    x, y = task.x_train[i], task.y_train[i]
    m = y * (theta[:-1] @ x + theta[-1])
    grad = -1.0 / (1.0 + np.exp(m)) * y * np.concatenate([x, [1.0]])
    return float(grad @ np.asarray(z, dtype=float))


def density_ratio_mi(p, signs, sigma: float, n_samples: int, seed: int) -> float:
    """Monte-Carlo MI between a secret index and its sign plus Gaussian noise.

    Averages the exact log-ratio of the conditional to the marginal density
    over joint samples; unbiased for the MI integral and quadrature-free.
    """
    rng = np.random.default_rng(seed)
    p = np.asarray(p, dtype=float)
    signs = np.asarray(signs, dtype=float)
    q = float(p[signs > 0].sum())
    js = rng.choice(len(p), size=n_samples, p=p)
    xi = signs[js]
    yt = xi + sigma * rng.standard_normal(n_samples)
    lp_cond = -((yt - xi) ** 2) / (2.0 * sigma**2)
    lp_plus = -((yt - 1.0) ** 2) / (2.0 * sigma**2)
    lp_minus = -((yt + 1.0) ** 2) / (2.0 * sigma**2)
    log_q = math.log(q) if q > 0.0 else -math.inf
    log_1mq = math.log1p(-q) if q < 1.0 else -math.inf
    lmix = np.logaddexp(log_q + lp_plus, log_1mq + lp_minus)
    return float(np.mean(lp_cond - lmix))


def hist_plugin_mi(
    p, signs, sigma: float, n_samples: int, n_bins: int, seed: int
) -> float:
    """Plug-in MI between the secret index and the noised release, from the
    empirical joint histogram over a fine discretization of the release,
    with the Miller-Madow bias correction."""
    rng = np.random.default_rng(seed)
    p = np.asarray(p, dtype=float)
    signs = np.asarray(signs, dtype=float)
    m = len(p)
    js = rng.choice(m, size=n_samples, p=p)
    yt = signs[js] + sigma * rng.standard_normal(n_samples)
    lo, hi = -1.0 - 6.0 * sigma, 1.0 + 6.0 * sigma
    bins = np.clip(((yt - lo) / (hi - lo) * n_bins).astype(int), 0, n_bins - 1)
    joint = np.zeros((m, n_bins))
    np.add.at(joint, (js, bins), 1.0)
    joint /= n_samples
    pj = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    nz = joint > 0.0
    outer = pj[:, None] * pb[None, :]
    mi = float(np.sum(joint[nz] * (np.log(joint[nz]) - np.log(outer[nz]))))
    k_joint = int(nz.sum())
    k_j = int((pj > 0).sum())
    k_b = int((pb > 0).sum())
    return mi - (k_joint - k_j - k_b + 1) / (2.0 * n_samples)


def discrete_plugin_mi(xs, ys) -> float:
    """Plug-in MI of two discrete sample vectors (no correction)."""
    xs = np.asarray(xs)
    ys = np.asarray(ys)
    x_vals, x_idx = np.unique(xs, return_inverse=True)
    y_vals, y_idx = np.unique(ys, return_inverse=True)
    joint = np.zeros((len(x_vals), len(y_vals)))
    np.add.at(joint, (x_idx, y_idx), 1.0)
    joint /= len(xs)
    px = joint.sum(axis=1)
    py = joint.sum(axis=0)
    nz = joint > 0.0
    outer = px[:, None] * py[None, :]
    return float(np.sum(joint[nz] * (np.log(joint[nz]) - np.log(outer[nz]))))


def two_proportion_z(k1: int, k2: int, n: int) -> float:
    p1, p2 = k1 / n, k2 / n
    pooled = (k1 + k2) / (2.0 * n)
    if pooled in (0.0, 1.0):
        return 0.0
    return (p1 - p2) / math.sqrt(pooled * (1.0 - pooled) * (2.0 / n))
