"""Numerical verification of the fixed-point theory behind the solvers:
exact lasso oracles, spectral quantities, non-expansiveness conditions,
convergence factors, and the spectral analysis of the two-parameter
splitting on quadratic problems."""

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .denoisers import soft_threshold
from .linalg import complement, gram, ht, solve_hpd
from .metrics import kkt_residual
from .problems import ProblemInstance


class NotGeneral(Exception):
    """The instance is not in general position (non-unique optimum)."""


class NoConvergence(Exception):
    """A fixed-point solver exhausted its iteration budget."""


class DomainError(ValueError):
    """Closed-form bound evaluated outside its domain."""


class NotSPD(ValueError):
    """Matrix is not symmetric positive definite."""


class SolveFailure(Exception):
    """A linear solve inside a verification routine failed."""


# ---------------------------------------------------------------------------
# exact lasso solutions


@dataclass
class OracleSolution:
    """The unique lasso optimum and the geometry around it.

    gstar = A^H (y - A x*) is the residual correlation; the equicorrelation
    set collects indices with |gstar| = lam (within 1e-8 relative).
    omega1 is the smallest active magnitude, omega0_tilde the smallest
    correlation gap lam - |gstar_i| off the equicorrelation set.
    """

    x_star: np.ndarray
    support: np.ndarray
    equicorr: np.ndarray
    sign_b: np.ndarray
    gstar: np.ndarray
    lam: float
    omega1: float
    omega0_tilde: float

    def mu_star(self, v):
        """The fixed point of the shrinkage recursion at step v."""
        return self.x_star + v * self.gstar

    def omega0(self, v):
        return v * self.omega0_tilde


def _sign_matrix(k):
    cols = np.arange(2**k)
    return (((cols[None, :] >> np.arange(k)[:, None]) & 1) * 2.0 - 1.0)


def enumerate_lasso(A, y, lam, dual_tol=1e-9, max_support=None):
    """Exhaustive sign-pattern enumeration of the lasso optimum.

    For every support up to size min(m, n) and every sign vector on it,
    solves the stationarity system, keeps the sign-consistent and
    dual-feasible candidates, and demands a unique optimum.
    """
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    m, n = A.shape
    if max_support is None:
        max_support = min(m, n)
    solutions = []

    if np.all(np.abs(A.T @ y) <= lam * (1.0 + dual_tol)):
        solutions.append(np.zeros(n))

    for size in range(1, max_support + 1):
        signs = _sign_matrix(size)
        for S in itertools.combinations(range(n), size):
            S = np.array(S)
            As = A[:, S]
            G = As.T @ As
            try:
                c = cho_factor(G, lower=True, check_finite=False)
            except np.linalg.LinAlgError:
                continue
            base = cho_solve(c, As.T @ y, check_finite=False)
            corr = cho_solve(c, signs, check_finite=False)
            X = base[:, None] - lam * corr
            consistent = np.all(X * signs > 0.0, axis=0)
            if not np.any(consistent):
                continue
            Xc = X[:, consistent]
            R = y[:, None] - As @ Xc
            duals = np.abs(A.T @ R)
            duals[S, :] = 0.0
            feasible = np.all(duals <= lam * (1.0 + dual_tol), axis=0)
            for j in np.flatnonzero(feasible):
                x = np.zeros(n)
                x[S] = Xc[:, j]
                solutions.append(x)

    if not solutions:
        raise NotGeneral("no sign-consistent optimum found")
    distinct = [solutions[0]]
    for x in solutions[1:]:
        if all(np.max(np.abs(x - z)) > 1e-8 * (1.0 + np.max(np.abs(z)))
               for z in distinct):
            distinct.append(x)
    if len(distinct) > 1:
        raise NotGeneral(f"{len(distinct)} distinct optima pass the KKT check")
    x_star = distinct[0]
    return x_star, np.flatnonzero(x_star)


def _fista(A, y, lam, tol=1e-8, max_iters=50000):
    """Accelerated proximal gradient with restarts, used only to seed the
    active-set polish; step 1/tau_max."""
    m, n = A.shape
    tau_max = float(np.linalg.norm(A, 2) ** 2)
    step = 1.0 / tau_max
    x = np.zeros(n)
    zk = x.copy()
    t = 1.0
    obj_prev = math.inf
    ref = ProblemInstance(A=A, y=y, sigma_w2=1.0, lam=lam)
    for k in range(max_iters):
        grad = A.T @ (A @ zk - y)
        x_new = soft_threshold(zk - step * grad, step, lam).x
        obj = 0.5 * np.linalg.norm(y - A @ x_new) ** 2 + lam * np.sum(np.abs(x_new))
        if obj > obj_prev:
            t = 1.0
            zk = x
            obj_prev = math.inf
            continue
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        zk = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, t, obj_prev = x_new, t_new, obj
        if k % 25 == 0 and kkt_residual(x, ref) <= tol:
            break
    return x


def _polish(A, y, lam, x_init, max_rounds=100):
    """Active-set refinement of an approximate lasso solution.

    Alternates the closed-form on-support solve with sign-consistency
    drops and dual-feasibility additions until the exact KKT system holds.
    """
    m, n = A.shape
    scale = float(np.max(np.abs(x_init), initial=0.0))
    S = np.flatnonzero(np.abs(x_init) > 1e-9 * (1.0 + scale))
    b = np.sign(x_init[S])
    for _ in range(max_rounds):
        if S.size == 0:
            x = np.zeros(n)
        else:
            As = A[:, S]
            try:
                xs = solve_hpd(As.T @ As, As.T @ y - lam * b)
            except Exception as exc:
                raise NotGeneral(f"singular on-support system: {exc}") from exc
            bad = xs * b <= 0.0
            if np.any(bad):
                keep = ~bad
                S, b = S[keep], b[keep]
                continue
            x = np.zeros(n)
            x[S] = xs
        g = A.T @ (y - A @ x)
        viol = np.abs(g) - lam
        viol[S] = -math.inf
        worst = int(np.argmax(viol))
        if viol[worst] <= lam * 1e-12:
            return x, S
        S = np.sort(np.append(S, worst))
        b = np.where(x[S] != 0.0, np.sign(x[S]), np.sign(g[S]))
    raise NoConvergence("active-set polish did not settle")


def oracle_solution(problem, enumerate_limit=14, kkt_tol=1e-10):
    """High-accuracy lasso optimum plus the geometry used by the theory.

    Small instances are certified by exhaustive sign-pattern enumeration;
    larger ones run accelerated proximal gradient and refine with the
    closed form on the detected support.  The result must pass the
    relative KKT test at kkt_tol.
    """
    A, y, lam = np.asarray(problem.A, dtype=float), problem.y, problem.lam
    n = problem.n
    if n <= enumerate_limit:
        x_star, support = enumerate_lasso(A, y, lam)
    else:
        x0 = _fista(A, y, lam)
        x_star, support = _polish(A, y, lam, x0)
    res = kkt_residual(x_star, ProblemInstance(A=A, y=y, sigma_w2=1.0, lam=lam))
    if res > kkt_tol:
        raise NotGeneral(f"oracle KKT residual {res:.2e} exceeds {kkt_tol:.0e}")

    gstar = A.T @ (y - A @ x_star)
    equicorr = np.flatnonzero(np.abs(gstar) >= lam * (1.0 - 1e-8))
    equicorr = np.union1d(equicorr, support)
    sign_b = np.sign(x_star[support])
    omega1 = float(np.min(np.abs(x_star[support]))) if support.size else math.inf
    off = complement(equicorr, n)
    omega0_tilde = (float(np.min(lam - np.abs(gstar[off]))) if off.size
                    else math.inf)
    return OracleSolution(x_star=x_star, support=support, equicorr=equicorr,
                          sign_b=sign_b, gstar=gstar, lam=lam, omega1=omega1,
                          omega0_tilde=omega0_tilde)


# ---------------------------------------------------------------------------
# spectral quantities


@dataclass
class SpectralSummary:
    """Gram-spectrum extremes around an optimum.

    The starred quantities are the uniform extremes over candidate
    supports: by eigenvalue interlacing the minimum over supersets of the
    support (within the equicorrelation set) is attained at the biggest
    set, and the maximum off-support eigenvalue at the full complement, so
    no subset enumeration is needed.
    """

    tau_hat_min: float
    tau_hat_max: float
    tau_tilde: float
    tau_tilde_star: float
    tau_hat_1_star: float
    tau_hat_K_star: float
    tau_N: float


def tau_hat_extremes(A, E):
    """Extreme eigenvalues of the restricted Gram A_E^H A_E."""
    E = np.asarray(E, dtype=np.intp)
    if E.size == 0:
        return 0.0, 0.0
    s = np.linalg.svd(A[:, E], compute_uv=False)
    tau = np.zeros(E.size)
    tau[: s.size] = s**2
    return float(tau.min()), float(tau.max())


def tau_tilde_max(A, E):
    """Largest eigenvalue of the Gram of the complement columns."""
    comp = complement(E, A.shape[1])
    if comp.size == 0:
        return 0.0
    s = np.linalg.svd(A[:, comp], compute_uv=False)
    return float(np.max(s) ** 2)


def spectral_summary(problem, oracle, E=None):
    A = np.asarray(problem.A)
    n = problem.n
    E = oracle.support if E is None else np.asarray(E, dtype=np.intp)
    lo, hi = tau_hat_extremes(A, E)
    lo_star, hi_star = tau_hat_extremes(A, oracle.equicorr)
    return SpectralSummary(
        tau_hat_min=lo,
        tau_hat_max=hi,
        tau_tilde=tau_tilde_max(A, E),
        tau_tilde_star=tau_tilde_max(A, oracle.support),
        tau_hat_1_star=lo_star,
        tau_hat_K_star=hi_star,
        tau_N=float(np.linalg.norm(A, 2) ** 2),
    )


def sampled_support_extremes(A, oracle, n_samples=200, seed=0):
    """Monte-Carlo inner bounds for the starred extremes, sampling random
    sets between the support and the equicorrelation set and random
    off-support sets.  Sandwiches the exact interlacing values."""
    rng = np.random.Generator(np.random.Philox(seed))
    n = A.shape[1]
    gap = np.setdiff1d(oracle.equicorr, oracle.support)
    off = complement(oracle.support, n)
    lo_best, hi_best, tilde_best = math.inf, 0.0, 0.0
    for _ in range(n_samples):
        extra = gap[rng.random(gap.size) < 0.5] if gap.size else gap
        C = np.union1d(oracle.support, extra)
        if C.size:
            lo, hi = tau_hat_extremes(A, C)
            lo_best, hi_best = min(lo_best, lo), max(hi_best, hi)
        sub = off[rng.random(off.size) < 0.5] if off.size else off
        if sub.size:
            _, t = tau_hat_extremes(A, sub)
            tilde_best = max(tilde_best, t)
    return lo_best, hi_best, tilde_best


# ---------------------------------------------------------------------------
# fixed-point maps and conditions


def shrink_reflect(mu_hat, v, v_hat, lam):
    """The denoiser-side map on the restricted mean:
    (1 + v_hat/v) * soft(mu_hat) - (v_hat/v) * mu_hat."""
    r = v_hat / v
    return (1.0 + r) * soft_threshold(mu_hat, v, lam).x - r * mu_hat


def asm_mu_map(mu, E, v, v_hat, A, y, lam):
    """One sweep of the mean-variable fixed-point map restricted to E:
    reflect through the shrinkage on E, solve the subspace system, extend,
    then apply the whole-space gradient correction."""
    from .asm import subspace_lmmse

    E = np.asarray(E, dtype=np.intp)
    n = A.shape[1]
    nu_hat = shrink_reflect(mu[E], v, v_hat, lam)
    u = subspace_lmmse(nu_hat, v_hat, A[:, E], y)
    x_half = np.zeros(n)
    x_half[E] = u
    return x_half + v * (A.T @ (y - A @ x_half))


def alpha_margin(mu, oracle, E, v):
    """Smallest ratio (|mu_i| - lam v) / (lam v - sgn(mu_i) mu*_i) over the
    spurious support entries; +inf when E has no spurious entries."""
    spurious = np.setdiff1d(np.asarray(E, dtype=np.intp), oracle.support)
    if spurious.size == 0:
        return math.inf
    t = oracle.lam * v
    mu_s = mu[spurious]
    mu_star = oracle.mu_star(v)[spurious]
    den = t - np.sign(mu_s) * mu_star
    num = np.abs(mu_s) - t
    den = np.maximum(den, 1e-300)
    return float(np.min(num / den))


def check_h_condition(v, v_hat, tau_hats, tau_tilde, slack=1e-9):
    """Non-expansiveness test of the subspace data step:
    (1 - v t)^2 + v^2 tau_tilde t <= (1 + v_hat t)^2 for every t."""
    t = np.asarray(tau_hats, dtype=float)
    lhs = (1.0 - v * t) ** 2 + v**2 * tau_tilde * t
    rhs = (1.0 + v_hat * t) ** 2
    return bool(np.all(lhs <= rhs * (1.0 + slack) + 1e-300))


def convergence_factor(v, summary):
    """Contraction factor of the mean map once the support has settled
    inside the equicorrelation set, evaluated at the starred extremes."""
    c = 0.0
    for tau in (summary.tau_hat_1_star, summary.tau_hat_K_star):
        num = math.sqrt(abs(1.0 - v * tau) ** 2 + v**2 * summary.tau_tilde_star * tau)
        c = max(c, num / abs(1.0 + v * tau))
    return c


def convergence_factor_at(v, tau_lo, tau_hi, tau_tilde):
    """Same factor from explicit extremes (current-support variant)."""
    c = 0.0
    for tau in (tau_lo, tau_hi):
        num = math.sqrt(abs(1.0 - v * tau) ** 2 + v**2 * tau_tilde * tau)
        c = max(c, num / abs(1.0 + v * tau))
    return c


def hatv_upper_bound(v, tau_hat_1, tau_tilde):
    """Largest safe v_hat for non-expansiveness with subspace curvature
    tau_hat_1 and off-support level tau_tilde; +inf when unconstrained."""
    if v <= 0.0 or tau_hat_1 <= 0.0:
        raise DomainError("needs v > 0 and tau_hat_1 > 0")
    gamma = 1.0 / v
    rad = tau_hat_1**2 - (2.0 * gamma - tau_tilde) * tau_hat_1 + gamma**2
    if rad < 0.0:
        raise DomainError("negative radicand")
    den = math.sqrt(rad) - tau_hat_1
    if den <= 0.0:
        return math.inf
    return 1.0 / den


# ---------------------------------------------------------------------------
# two-parameter splitting on quadratic problems


def _check_spd(M, name):
    M = np.asarray(M, dtype=float)
    if not np.allclose(M, M.T, atol=1e-10 * max(1.0, np.abs(M).max())):
        raise NotSPD(f"{name} is not symmetric")
    w = np.linalg.eigvalsh(0.5 * (M + M.T))
    if w.min() <= 0.0:
        raise NotSPD(f"{name} is not positive definite")
    return M, w


def mps_quadratic_radii(Amat, Bmat, v1, v2):
    """Spectral radii of the two reflection factors and of their product.

    Sigma_1 = (I - v2 A)(I + v1 A)^{-1} and Sigma_2 = (I - v1 B)(I + v2 B)^{-1};
    the factor radii follow from the scalar maps over the spectra, the
    product radius from a dense eigensolve.
    """
    Amat, wa = _check_spd(Amat, "A")
    Bmat, wb = _check_spd(Bmat, "B")
    if v1 <= 0.0 or v2 <= 0.0:
        raise ValueError("v1, v2 must be positive")
    rho1 = float(np.max(np.abs(1.0 - v2 * wa) / (1.0 + v1 * wa)))
    rho2 = float(np.max(np.abs(1.0 - v1 * wb) / (1.0 + v2 * wb)))
    n = Amat.shape[0]
    S1 = (np.eye(n) - v2 * Amat) @ np.linalg.inv(np.eye(n) + v1 * Amat)
    S2 = (np.eye(n) - v1 * Bmat) @ np.linalg.inv(np.eye(n) + v2 * Bmat)
    rho12 = float(np.max(np.abs(np.linalg.eigvals(S1 @ S2))))
    return rho1, rho2, rho12


def rho_product(extremes1, extremes2, v1, v2):
    """rho(Sigma_1) * rho(Sigma_2) from the two spectrum extremes only
    (the scalar maps are monotone so extremes suffice)."""
    a1, b1 = extremes1
    a2, b2 = extremes2
    r1 = max(abs(1.0 - v2 * t) / (1.0 + v1 * t) for t in (a1, b1))
    r2 = max(abs(1.0 - v1 * t) / (1.0 + v2 * t) for t in (a2, b2))
    return r1 * r2


def solve_v_rho(extremes1, extremes2, tol=1e-10, max_iters=10000):
    """Minimizer (v1, v2) of rho(Sigma_1) rho(Sigma_2).

    The stationarity conditions couple the reciprocal parameters through
    Moebius maps of the opposite spectrum extremes; a damped alternation
    solves the 2 x 2 system.
    """
    a1, b1 = map(float, extremes1)
    a2, b2 = map(float, extremes2)
    if min(a1, b1, a2, b2) <= 0.0:
        raise ValueError("spectrum extremes must be positive")

    def balance(gamma, a, b):
        return (2.0 * a * b + (a + b) * gamma) / (2.0 * gamma + a + b)

    g1 = math.sqrt(a2 * b2)
    g2 = math.sqrt(a1 * b1)
    for _ in range(max_iters):
        g2_new = balance(g1, a1, b1)
        g1_new = balance(g2_new, a2, b2)
        g1 = 0.5 * g1 + 0.5 * g1_new
        g2 = 0.5 * g2 + 0.5 * g2_new
        r1 = abs(g2 - balance(g1, a1, b1))
        r2 = abs(g1 - balance(g2, a2, b2))
        if max(r1, r2) <= tol * max(1.0, g1, g2):
            return 1.0 / g1, 1.0 / g2
    raise NoConvergence("damped alternation for the radius minimizer stalled")


def vamp_variance_fixed_point(eigs_A, eigs_B, tol=1e-12, max_iters=100000):
    """Fixed point of the self-contained variance recursion on a quadratic
    problem with the given operator spectra.

    Returns (v1, v2, degenerate); degenerate means the recursion pushed a
    variance past the cap (the blow-up regime), reported rather than
    raised.
    """
    tau1 = np.asarray(eigs_A, dtype=float)
    tau2 = np.asarray(eigs_B, dtype=float)
    if np.all(tau1 == 0.0) and np.all(tau2 == 0.0):
        raise ValueError("spectra cannot both be all zero")
    cap = 1e12
    g1 = g2 = 1.0
    for _ in range(max_iters):
        post1 = float(np.mean(1.0 / (tau1 + g1)))
        g2_new = 1.0 / post1 - g1
        post2 = float(np.mean(1.0 / (tau2 + max(g2_new, 1.0 / cap))))
        g1_new = 1.0 / post2 - max(g2_new, 1.0 / cap)
        if g1_new <= 1.0 / cap or g2_new <= 1.0 / cap:
            return cap, cap, True
        if (abs(g1_new - g1) <= tol * max(1.0, g1)
                and abs(g2_new - g2) <= tol * max(1.0, g2)):
            return 1.0 / g1_new, 1.0 / g2_new, False
        g1 = 0.5 * g1 + 0.5 * g1_new
        g2 = 0.5 * g2 + 0.5 * g2_new
    raise NoConvergence("variance fixed-point iteration stalled")


def woodbury_check(A, B_diag):
    """Max entrywise discrepancy between (I + diag(B) A^T A)^{-1} and its
    m x m dual form; diagonal entries of B may be zero."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B_diag, dtype=float)
    m, n = A.shape
    G = A.T @ A
    lhs_mat = np.eye(n) + B[:, None] * G
    try:
        lhs = np.linalg.solve(lhs_mat, np.eye(n))
        inner = np.linalg.solve(np.eye(m) + (A * B[None, :]) @ A.T, A)
    except np.linalg.LinAlgError as exc:
        raise SolveFailure(str(exc)) from exc
    rhs = np.eye(n) - B[:, None] * (A.T @ inner)
    return float(np.max(np.abs(lhs - rhs)))
