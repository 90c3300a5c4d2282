"""Independent reference computations for the test suite.

Nothing here calls into the multinomial fast path: pairs are simulated one
by one with Bernoulli detection decisions on numpy's default PCG64
generator.
"""

import numpy as np


def bruteforce_pairs(mu, eta1, eta2, alpha, n_frames, seed):
    """Per-pair simulation: each of M ~ Poisson(mu) pairs has its photons
    independently transmitted by the sample and detected in each arm."""
    rng = np.random.default_rng(seed)
    pairs = rng.poisson(mu, size=n_frames)
    frame_of_pair = np.repeat(np.arange(n_frames), pairs)
    total = frame_of_pair.size
    through_sample = rng.random(total) < (1.0 - alpha)
    seen1 = through_sample & (rng.random(total) < eta1)
    seen2 = rng.random(total) < eta2
    n1 = np.bincount(frame_of_pair, weights=seen1, minlength=n_frames).astype(int)
    n2 = np.bincount(frame_of_pair, weights=seen2, minlength=n_frames).astype(int)
    return n1, n2


def thinning_moments(mu, eta1, eta2, alpha, excess_noise=0.0, bg1=0.0, bg2=0.0):
    """Closed-form means, variances and covariance of the thinning model."""
    p1 = eta1 * (1 - alpha)
    pair_var = mu + mu**2 * excess_noise
    return {
        "mean1": mu * p1 + bg1,
        "mean2": mu * eta2 + bg2,
        "var1": mu * p1 + (mu * p1) ** 2 * excess_noise + bg1,
        "var2": mu * eta2 + (mu * eta2) ** 2 * excess_noise + bg2,
        "cov": p1 * eta2 * pair_var,
    }


def residual_gamma(alpha, eta1, eta2, eta_d):
    """Gamma for the optimal linear correction in the pure Poisson model:
    residual variance Var(N1) - Cov^2/Var(N2) against the ideal classical one."""
    p1 = eta1 * (1 - alpha)
    var1 = p1          # per unit mu
    var2 = eta2
    cov = p1 * eta2
    residual = var1 - cov**2 / var2
    n1p = eta1
    var_exp = residual / n1p**2
    var_cl = (1 - alpha) * eta_d / n1p
    return var_cl / var_exp


def gaussian_capture(half_width_sd):
    """Mass of a unit Gaussian within +/- half_width_sd, by quadrature."""
    from scipy.integrate import quad

    val, _ = quad(lambda x: np.exp(-0.5 * x * x) / np.sqrt(2 * np.pi), -half_width_sd, half_width_sd)
    return val


def two_sample_chi2_pvalue(a, b, min_expected=5):
    """Homogeneity test on joint (n1, n2) cells; sparse cells are pooled into one overflow category."""
    from scipy import stats

    keys_a = a[0].astype(np.int64) * 100_000 + a[1]
    keys_b = b[0].astype(np.int64) * 100_000 + b[1]
    cells, inv = np.unique(np.concatenate([keys_a, keys_b]), return_inverse=True)
    ca = np.bincount(inv[: keys_a.size], minlength=cells.size)
    cb = np.bincount(inv[keys_a.size:], minlength=cells.size)
    keep = (ca + cb) >= 2 * min_expected
    table = np.array([np.append(ca[keep], ca[~keep].sum()), np.append(cb[keep], cb[~keep].sum())])
    table = table[:, table.sum(axis=0) > 0]
    return stats.chi2_contingency(table)[1]
