"""Prior-induced denoisers: soft-thresholding (Laplacian MAP), the
Bernoulli-Gaussian MMSE map, and its hidden-Markov-chain extension where
per-entry activity probabilities come from forward-backward message
passing."""

from dataclasses import dataclass

import numpy as np

_LOG_CLAMP = 700.0


@dataclass
class DenoiserOutput:
    """Point estimate with per-entry posterior variances.

    beta is the per-entry activity probability (None for soft-threshold,
    which has no activity model); v_post_mean is the average posterior
    variance used by the moment-matched variance updates.
    """

    x: np.ndarray
    v_post: np.ndarray
    beta: np.ndarray | None
    v_post_mean: float


def soft_threshold(mu, v, lam):
    """Shrink mu entrywise by lam*v; exact zeros at or below the threshold.

    The per-entry posterior variance is v on the surviving support and 0
    elsewhere (the derivative of the shrinkage is 0/1 valued).
    """
    mu = np.asarray(mu)
    t = lam * v
    mag = np.abs(mu) - t
    active = mag > 0.0
    if np.iscomplexobj(mu):
        with np.errstate(invalid="ignore", divide="ignore"):
            phase = np.where(np.abs(mu) > 0, mu / np.where(np.abs(mu) > 0, np.abs(mu), 1.0), 0.0)
        x = phase * np.where(active, mag, 0.0)
    else:
        x = np.sign(mu) * np.where(active, mag, 0.0)
    v_post = v * active.astype(float)
    return DenoiserOutput(x, v_post, None, float(v_post.mean()))


def bg_denoise(mu, v, pi, sigma0_2, verbatim_gamma=False):
    """MMSE denoiser for the Bernoulli-Gaussian prior.

    pi is the per-entry prior activity (scalar or vector).  For complex
    inputs the activity odds use circular-Gaussian densities; passing
    verbatim_gamma=True keeps the real-Gaussian odds formula even on
    complex data.
    """
    mu = np.asarray(mu)
    pi = np.broadcast_to(np.asarray(pi, dtype=float), mu.shape)
    s2 = float(sigma0_2)
    if v <= 0.0:
        raise ValueError("extrinsic variance v must be positive")
    wiener = s2 / (v + s2)
    z = wiener * mu
    zsq = np.abs(z) ** 2
    if np.iscomplexobj(mu) and not verbatim_gamma:
        log_ratio = np.log((v + s2) / v)
        quad = (v + s2) / (v * s2) * zsq
    else:
        log_ratio = 0.5 * np.log((v + s2) / v)
        quad = (v + s2) / (2.0 * v * s2) * zsq
    with np.errstate(divide="ignore"):
        log_odds = np.log1p(-pi) - np.log(pi)
    log_gamma = np.clip(log_odds + log_ratio - quad, -_LOG_CLAMP, _LOG_CLAMP)
    beta = 1.0 / (1.0 + np.exp(log_gamma))
    x = z * beta
    v_post = (v * s2 / (v + s2)) * beta + zsq * beta * (1.0 - beta)
    return DenoiserOutput(x, v_post, beta, float(v_post.mean()))


def _log_likelihood_ratio(mu, v, sigma0_2):
    """log p(mu | active) - log p(mu | inactive), entrywise.

    Active observations are zero-mean Gaussian with variance v + sigma0_2,
    inactive ones with variance v; complex data uses circular densities.
    """
    musq = np.abs(np.asarray(mu)) ** 2
    s2 = float(sigma0_2)
    if np.iscomplexobj(mu):
        return np.log(v / (v + s2)) - musq / (v + s2) + musq / v
    return 0.5 * np.log(v / (v + s2)) - musq / (2.0 * (v + s2)) + musq / (2.0 * v)


def hmc_activity(mu, v, params):
    """Extrinsic activity probabilities from forward-backward passing.

    Messages are normalized every step; the local likelihood of entry i is
    excluded from pi_i so the downstream denoiser can re-apply it.
    """
    mu = np.asarray(mu)
    n = mu.shape[0]
    llr = np.clip(_log_likelihood_ratio(mu, v, params.sigma0_2), -_LOG_CLAMP, _LOG_CLAMP)
    ratio = np.exp(llr)
    # local likelihood vectors (l0, l1), normalized
    l1 = ratio / (1.0 + ratio)
    l0 = 1.0 / (1.0 + ratio)

    T = np.array([
        [1.0 - params.p01, params.p01],
        [params.p10, 1.0 - params.p10],
    ])
    fwd = np.empty((n, 2))
    fwd[0] = (1.0 - params.activity, params.activity)
    for i in range(n - 1):
        post = fwd[i] * (l0[i], l1[i])
        nxt = post @ T
        fwd[i + 1] = nxt / nxt.sum()
    bwd = np.empty((n, 2))
    bwd[-1] = (0.5, 0.5)
    for i in range(n - 2, -1, -1):
        msg = T @ (bwd[i + 1] * (l0[i + 1], l1[i + 1]))
        bwd[i] = msg / msg.sum()
    q = fwd * bwd
    pi = q[:, 1] / q.sum(axis=1)
    return np.clip(pi, 1e-300, 1.0 - 1e-16)


def hmc_denoise(mu, v, params, verbatim_gamma=False):
    """Hidden-Markov-chain MMSE denoiser: the Bernoulli-Gaussian map with
    chain-informed activity probabilities."""
    pi = hmc_activity(mu, v, params)
    return bg_denoise(mu, v, pi, params.sigma0_2, verbatim_gamma=verbatim_gamma)
