"""Splitting-method baselines: ISTA, Peaceman-Rachford (fixed-parameter
ADMM), VAMP with moment-matched scalar variances, Diag-VAMP with the
mixing strategy, and the generic two-parameter message-passing splitting
(MPS) sweep."""

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .denoisers import bg_denoise, hmc_denoise, soft_threshold
from .linalg import ht, solve_hpd
from .metrics import RunTrace, kkt_residual, nmse_db

VAR_CAP = 1e12
VAR_FLOOR = 1e-12


class VarianceDegenerate(Exception):
    """An extrinsic precision dropped to zero or a variance ran past the
    cap -- the hallmark of the moment-matching blow-up."""


@dataclass
class LmmseWarmup:
    """Economy SVD of A, shared by every solver that repeats LMMSE solves.

    tau is the full spectrum of A^H A including the n - rank zeros, which
    the trace-based variance updates rely on.
    """

    V: np.ndarray
    s: np.ndarray
    tau: np.ndarray
    tau_max: float

    @classmethod
    def from_matrix(cls, A):
        _, s, Vh = np.linalg.svd(A, full_matrices=False)
        n = A.shape[1]
        tau = np.zeros(n)
        tau[: s.size] = s**2
        return cls(ht(Vh), s, np.sort(tau), float(tau.max(initial=0.0)))


def lmmse(mu, v, A, y, warm=None):
    """Regularized least squares (I + v A^H A)^{-1} (mu + v A^H y).

    Uses the SVD warm-up when provided; otherwise solves the m x m dual
    system when the matrix is wide, the n x n primal system when tall.
    """
    if v <= 0.0:
        raise ValueError("quasi-variance v must be positive")
    mu = np.asarray(mu)
    m, n = A.shape
    b = mu + v * (ht(A) @ y)
    if warm is not None:
        shrink = v * warm.s**2 / (1.0 + v * warm.s**2)
        return b - warm.V @ (shrink * (ht(warm.V) @ b))
    if m < n:
        return b - v * (ht(A) @ solve_hpd(np.eye(m) + v * (A @ ht(A)), A @ b))
    return solve_hpd(np.eye(n) + v * (ht(A) @ A), b)


def ista_step(x, v, problem):
    """One forward-backward sweep on the lasso objective."""
    A, y = problem.A, problem.y
    z = x + v * (ht(A) @ (y - A @ x))
    return soft_threshold(z, v, problem.lam).x


@dataclass
class MPSConfig:
    """The two quasi-variances of the message-passing splitting."""

    v1: float
    v2: float

    def __post_init__(self):
        if self.v1 <= 0.0 or self.v2 <= 0.0:
            raise ValueError("quasi-variances must be positive")


def _reflect(resolvent, t, z):
    return (1.0 + t) * resolvent(z) - t * z


def mps_step(z, cfg, resolvent_A, resolvent_B):
    """One MPS sweep: reflect through B with weight v1/v2, then through A
    with weight v2/v1.  With v1 == v2 this is a Peaceman-Rachford sweep;
    the estimate is read out as resolvent_B(z)."""
    w = _reflect(resolvent_B, cfg.v1 / cfg.v2, z)
    return _reflect(resolvent_A, cfg.v2 / cfg.v1, w)


def prs_step(mu_B, v0, problem, warm=None):
    """One Peaceman-Rachford sweep on the mu_B variable.

    Returns (mu_B_next, x) where x is the shrinkage of the intermediate
    reflection; identical arithmetic to mps_step with v1 = v2 = v0 and the
    resolvents (soft-threshold, LMMSE).
    """
    res_h = lambda zz: lmmse(zz, v0, problem.A, problem.y, warm)
    res_g = lambda zz: soft_threshold(zz, v0, problem.lam).x
    mu_A = _reflect(res_h, 1.0, mu_B)
    x = res_g(mu_A)
    mu_B_next = _reflect(res_g, 1.0, mu_A)
    return mu_B_next, x


@dataclass
class SplitterState:
    """Extrinsic means/variances of the two modules plus the estimates."""

    x: np.ndarray
    x_half: np.ndarray
    mu_A: np.ndarray
    mu_B: np.ndarray
    v_A: float
    v_B: float
    iter: int = 0
    exploded: bool = False


def _extrinsic_precision(v_post, v_in):
    """1/v_ext = 1/v_post - 1/v_in with cap/floor clamping.

    Returns (v_ext, hit_cap).  A non-positive precision is the degenerate
    direction and is clamped to the cap rather than aborting the run.
    """
    prec = 1.0 / v_post - 1.0 / v_in
    if prec <= 1.0 / VAR_CAP:
        return VAR_CAP, True
    v = 1.0 / prec
    if v <= VAR_FLOOR:
        return VAR_FLOOR, True
    return v, False


def vamp_iterate(state, problem, warm, freeze_variances=False):
    """One VAMP sweep for the lasso: LMMSE module with trace-based
    posterior variance, then soft-threshold module with the support-ratio
    posterior variance; extrinsic updates in between.

    With freeze_variances=True the means recurse at fixed (v_A, v_B),
    which is exactly the Peaceman-Rachford sweep when v_A == v_B.
    Degeneration clamps the variance at the cap and marks the state
    exploded instead of raising, so a batch never aborts.
    """
    if state.v_A <= 0.0 or state.v_B <= 0.0 or state.v_B > VAR_CAP:
        raise VarianceDegenerate("invalid incoming extrinsic variances")
    A, y, lam = problem.A, problem.y, problem.lam
    n = problem.n
    exploded = state.exploded

    x_half = lmmse(state.mu_B, state.v_B, A, y, warm)
    if freeze_variances:
        v_A = state.v_A
    else:
        v_post = (state.v_B / n) * float(np.sum(1.0 / (1.0 + state.v_B * warm.tau)))
        v_A, hit = _extrinsic_precision(v_post, state.v_B)
        exploded = exploded or hit
    mu_A = (1.0 + v_A / state.v_B) * x_half - (v_A / state.v_B) * state.mu_B

    den = soft_threshold(mu_A, v_A, lam)
    x = den.x
    k = int(np.count_nonzero(x))
    if freeze_variances:
        v_B = state.v_B
    else:
        if k == 0:
            v_B, hit = VAR_FLOOR, True
        else:
            v_B, hit = _extrinsic_precision(v_A * k / n, v_A)
        exploded = exploded or hit
    mu_B = (1.0 + v_B / v_A) * x - (v_B / v_A) * mu_A

    return SplitterState(x=x, x_half=x_half, mu_A=mu_A, mu_B=mu_B,
                         v_A=v_A, v_B=v_B, iter=state.iter + 1,
                         exploded=exploded)


@dataclass
class DiagVampState:
    """Diag-VAMP state: per-entry extrinsic vectors instead of scalars."""

    x: np.ndarray
    x_half: np.ndarray
    mu_B: np.ndarray
    v_B: np.ndarray
    iter: int = 0
    exploded: bool = False


def _extrinsic_precision_vec(v_post, v_in):
    prec = 1.0 / v_post - 1.0 / v_in
    hit = bool(np.any(prec <= 1.0 / VAR_CAP))
    v = np.where(prec <= 1.0 / VAR_CAP, VAR_CAP, 1.0 / np.maximum(prec, 1.0 / VAR_CAP))
    return np.clip(v, VAR_FLOOR, VAR_CAP), hit


def diag_vamp_iterate(state, problem, rho):
    """One Diag-VAMP sweep: diagonal-covariance LMMSE via the m x m dual
    identity, per-entry moment matching in both modules, and the rho-mix
    of per-entry and scalar variances.  rho -> 0 recovers scalar VAMP.

    The posterior diagonal of the LMMSE module needs the whole-space
    inverse, which is why this variant stays a conceptual baseline.
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError("mixing weight rho must lie in [0, 1)")
    A, y, lam = problem.A, problem.y, problem.lam
    exploded = state.exploded
    v_B = np.asarray(state.v_B, dtype=float)

    # LMMSE module with diagonal prior Lambda_B = diag(v_B)
    b = state.mu_B + v_B * (ht(A) @ y)
    AL = A * v_B[None, :]
    S = np.eye(problem.m) + AL @ ht(A)
    S = 0.5 * (S + ht(S))
    try:
        c = cho_factor(S, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise VarianceDegenerate(str(exc)) from exc
    x_half = b - v_B * (ht(A) @ cho_solve(c, A @ b, check_finite=False))
    W = cho_solve(c, A, check_finite=False)
    quad = np.real(np.einsum("mi,mi->i", np.conj(A), W))
    d = v_B - v_B**2 * quad
    d = np.maximum(d, VAR_FLOOR)
    d_mix = rho * d + (1.0 - rho) * float(d.mean())
    v_A, hit = _extrinsic_precision_vec(d_mix, v_B)
    exploded = exploded or hit
    mu_A = v_A * (x_half / d_mix - state.mu_B / v_B)

    # shrinkage module with per-entry thresholds
    mag = np.abs(mu_A) - lam * v_A
    x = np.sign(mu_A) * np.maximum(mag, 0.0)
    v_match = v_A * (x != 0.0)
    v_mix = rho * v_match + (1.0 - rho) * float(v_match.mean())
    v_mix = np.maximum(v_mix, VAR_FLOOR)
    v_B_new, hit = _extrinsic_precision_vec(v_mix, v_A)
    exploded = exploded or hit
    mu_B = x - (v_B_new / v_A) * (mu_A - x)

    return DiagVampState(x=x, x_half=x_half, mu_B=mu_B, v_B=v_B_new,
                         iter=state.iter + 1, exploded=exploded)


# ---------------------------------------------------------------------------
# run drivers


def _record(trace, it, x, problem, support, v, v_hat, t0, exploded):
    kkt = kkt_residual(x, problem) if problem.field_tag == "real" else math.nan
    nm = nmse_db(x, problem.x_dag) if problem.x_dag is not None else math.nan
    trace.record(it, kkt=kkt, nmse=nm, support_size=support, v=v, v_hat=v_hat,
                 elapsed=time.perf_counter() - t0, exploded=exploded)
    return kkt


def run_ista(problem, v=None, max_iters=4000, kkt_stop=1e-6, warm=None):
    """ISTA driver on the noise-normalized objective; default step
    1/tau_max keeps every sweep a descent."""
    t0 = time.perf_counter()
    problem = problem.normalized()
    if warm is None:
        warm = LmmseWarmup.from_matrix(problem.A)
    if v is None:
        v = 1.0 / warm.tau_max
    x = np.zeros(problem.n)
    trace = RunTrace(solver="ista")
    kkt = _record(trace, 0, x, problem, 0, v, math.nan, t0, False)
    for k in range(1, max_iters + 1):
        x = ista_step(x, v, problem)
        kkt = _record(trace, k, x, problem, int(np.count_nonzero(x)), v,
                      math.nan, t0, False)
        if kkt <= kkt_stop:
            break
    return x, trace


def run_admm(problem, v0=1.0, max_iters=4000, kkt_stop=1e-6, warm=None):
    """Fixed-parameter ADMM = Peaceman-Rachford sweeps on the normalized
    objective; the per-iteration output is the LMMSE-refined point."""
    t0 = time.perf_counter()
    problem = problem.normalized()
    if warm is None:
        warm = LmmseWarmup.from_matrix(problem.A)
    mu_B = np.zeros(problem.n)
    x_out = np.zeros(problem.n)
    trace = RunTrace(solver="admm")
    kkt = _record(trace, 0, x_out, problem, 0, v0, v0, t0, False)
    for k in range(1, max_iters + 1):
        x_out = lmmse(mu_B, v0, problem.A, problem.y, warm)
        mu_A = 2.0 * x_out - mu_B
        x_inner = soft_threshold(mu_A, v0, problem.lam).x
        mu_B = 2.0 * x_inner - mu_A
        kkt = _record(trace, k, x_out, problem, int(np.count_nonzero(x_inner)),
                      v0, v0, t0, False)
        if kkt <= kkt_stop:
            break
    return x_out, trace


def run_vamp(problem, v0=1.0, max_iters=4000, kkt_stop=1e-6, warm=None):
    """VAMP driver for the lasso, run on the normalized objective.

    A degenerate run keeps iterating with the clamped variance so the
    trace records the blow-up over the full horizon instead of aborting;
    the residual stop is disabled once the run is flagged (a clamped
    iterate can dwarf the residual normalization and fake convergence).
    """
    t0 = time.perf_counter()
    problem = problem.normalized()
    if warm is None:
        warm = LmmseWarmup.from_matrix(problem.A)
    n = problem.n
    state = SplitterState(x=np.zeros(n), x_half=np.zeros(n), mu_A=np.zeros(n),
                          mu_B=np.zeros(n), v_A=v0, v_B=v0)
    trace = RunTrace(solver="vamp")
    kkt = _record(trace, 0, state.x_half, problem, 0, state.v_B, state.v_A, t0,
                  state.exploded)
    for k in range(1, max_iters + 1):
        state = vamp_iterate(state, problem, warm)
        kkt = _record(trace, k, state.x_half, problem,
                      int(np.count_nonzero(state.x)), state.v_B, state.v_A,
                      t0, state.exploded)
        if kkt <= kkt_stop and not state.exploded:
            break
    return state.x_half, trace


def run_diag_vamp(problem, v0=1.0, rho_bar=0.9, max_iters=4000, kkt_stop=1e-6):
    """Diag-VAMP driver with an increasing mixing weight capped at rho_bar."""
    t0 = time.perf_counter()
    problem = problem.normalized()
    n = problem.n
    state = DiagVampState(x=np.zeros(n), x_half=np.zeros(n),
                          mu_B=np.zeros(n), v_B=np.full(n, v0))
    trace = RunTrace(solver="diag-vamp")
    kkt = _record(trace, 0, state.x_half, problem, 0, v0, v0, t0, False)
    for k in range(1, max_iters + 1):
        rho = min(rho_bar, 1.0 - 0.5 ** (k + 1))
        state = diag_vamp_iterate(state, problem, rho)
        kkt = _record(trace, k, state.x_half, problem,
                      int(np.count_nonzero(state.x)),
                      float(np.mean(state.v_B)), rho, t0, state.exploded)
        if kkt <= kkt_stop and not state.exploded:
            break
    return state.x_half, trace


def run_mps_lasso(problem, v1, v2, z0=None, max_iters=4000, kkt_stop=1e-6,
                  warm=None):
    """MPS driver on the lasso with the gradient map as operator A and the
    l1 subdifferential as operator B, so x^k = soft-threshold of z^k.
    Runs on the normalized objective like the other lasso drivers."""
    t0 = time.perf_counter()
    problem = problem.normalized()
    if warm is None:
        warm = LmmseWarmup.from_matrix(problem.A)
    cfg = MPSConfig(v1, v2)
    res_h = lambda zz: lmmse(zz, v1, problem.A, problem.y, warm)
    res_g = lambda zz: soft_threshold(zz, v2, problem.lam).x
    z = np.zeros(problem.n) if z0 is None else np.asarray(z0, dtype=float).copy()
    trace = RunTrace(solver="mps")
    x = res_g(z)
    kkt = _record(trace, 0, x, problem, int(np.count_nonzero(x)), v1, v2, t0, False)
    for k in range(1, max_iters + 1):
        z = mps_step(z, cfg, res_h, res_g)
        x = res_g(z)
        kkt = _record(trace, k, x, problem, int(np.count_nonzero(x)), v1, v2,
                      t0, False)
        if kkt <= kkt_stop:
            break
    return x, z, trace


def run_vamp_mmse(problem, prior, denoiser="bg", v0=None, max_iters=100,
                  averaging_d=None, alpha=1.0):
    """Full-space VAMP with an MMSE denoiser module for channel estimation.

    The data module runs on the noise-whitened pair (A/sigma_w, y/sigma_w)
    so the extrinsic variances live on the signal scale.  alpha < 1 damps
    the denoiser posterior variance before the extrinsic update, the same
    guard the subspace solvers use against degeneration.
    """
    t0 = time.perf_counter()
    sw = math.sqrt(problem.sigma_w2) if problem.sigma_w2 > 0 else 1.0
    Aw = problem.A / sw
    yw = problem.y / sw
    warm = LmmseWarmup.from_matrix(Aw)
    n = problem.n
    activity = getattr(prior, "epsilon", None)
    if activity is None:
        activity = prior.activity
    if v0 is None:
        v0 = activity * prior.sigma0_2
    if denoiser == "bg":
        den_fn = lambda mu, v: bg_denoise(mu, v, activity, prior.sigma0_2)
    elif denoiser == "hmc":
        den_fn = lambda mu, v: hmc_denoise(mu, v, prior)
    else:
        raise ValueError(f"unknown denoiser {denoiser!r}")

    dtype = complex if problem.field_tag == "complex" else float
    mu_B = np.zeros(n, dtype=dtype)
    v_B = float(v0)
    x_prev = np.zeros(n, dtype=dtype)
    trace = RunTrace(solver=f"vamp-{denoiser}")
    exploded = False
    _record(trace, 0, x_prev, problem, 0, v_B, math.nan, t0, exploded)
    for k in range(1, max_iters + 1):
        x_half = lmmse(mu_B, v_B, Aw, yw, warm)
        if averaging_d is not None and k > 1:
            x_half = averaging_d * x_half + (1.0 - averaging_d) * x_prev
        v_post = (v_B / n) * float(np.sum(1.0 / (1.0 + v_B * warm.tau)))
        v_A, hit = _extrinsic_precision(v_post, v_B)
        exploded = exploded or hit
        mu_A = (1.0 + v_A / v_B) * x_half - (v_A / v_B) * mu_B
        out = den_fn(mu_A, v_A)
        v_eff = max(alpha * out.v_post_mean, VAR_FLOOR)
        v_B, hit = _extrinsic_precision(v_eff, v_A)
        exploded = exploded or hit
        mu_B = (1.0 + v_B / v_A) * out.x - (v_B / v_A) * mu_A
        x_prev = out.x
        _record(trace, k, x_half, problem,
                int(np.count_nonzero(out.beta >= 0.5)), v_B, v_A, t0, exploded)
    return x_prev, trace
