"""Numerical checks of the convergence machinery: non-expansiveness
conditions, per-step contraction factors, reflected-resolvent properties,
and the support-zeroing bound of the two-parameter splitting."""

import math

import numpy as np
import pytest

from asamp.denoisers import soft_threshold
from asamp.linalg import complement
from asamp.splitting import MPSConfig, LmmseWarmup, lmmse, mps_step
from asamp.theory import (alpha_margin, asm_mu_map, check_h_condition,
                          convergence_factor, hatv_upper_bound,
                          oracle_solution, shrink_reflect, spectral_summary,
                          tau_hat_extremes, tau_tilde_max)
from asamp.asm import select_support_l1
from conftest import rng, small_lasso


def _mu_support(mu, v, lam):
    return select_support_l1(soft_threshold(mu, v, lam).x)


def test_support_containment_in_small_ball():
    # once mu is within min(omega0, omega1) of mu*, the shrinkage support
    # sits between the optimal support and the equicorrelation set
    for seed in (90, 91, 92):
        p = small_lasso(seed, m=8, n=16)
        orc = oracle_solution(p)
        if orc.support.size < 2:
            continue
        v = 0.4
        mu_star = orc.mu_star(v)
        radius = min(orc.omega0(v), orc.omega1)
        r = rng(seed)
        for _ in range(30):
            delta = r.normal(size=p.n)
            delta *= 0.9 * radius / np.linalg.norm(delta)
            E = set(_mu_support(mu_star + delta, v, p.lam))
            assert set(orc.support) <= E <= set(orc.equicorr)


def test_shrink_reflect_nonexpansive_under_alpha_margin():
    # the denoiser-side reflection contracts whenever
    # v_hat <= (1 + 2 alpha) v with alpha the support margin ratio
    counted = 0
    for seed in (93, 94, 95):
        p = small_lasso(seed, m=8, n=16)
        orc = oracle_solution(p)
        if orc.support.size < 2:
            continue
        v = 0.5
        mu_star = orc.mu_star(v)
        r = rng(seed + 50)
        for _ in range(50):
            delta = r.normal(size=p.n)
            delta *= float(r.uniform(0.2, 1.5)) * orc.omega1 / np.linalg.norm(delta)
            mu = mu_star + delta
            E = _mu_support(mu, v, p.lam)
            if not set(orc.support) <= set(E):
                continue
            a = alpha_margin(mu, orc, E, v)
            v_hat = (1.0 + 2.0 * min(a, 5.0)) * v
            lhs = np.linalg.norm(shrink_reflect(mu[E], v, v_hat, p.lam)
                                 - shrink_reflect(mu_star[E], v, v_hat, p.lam))
            rhs = np.linalg.norm(mu[E] - mu_star[E])
            assert lhs <= rhs * (1.0 + 1e-10)
            counted += 1
    assert counted >= 30


def test_contraction_factor_bounds_measured_ratio():
    # once the support sits inside the equicorrelation set, the per-step
    # ratio obeys the spectral factor (starred, i.e. loosest, variant)
    measured = 0
    for seed in (96, 97, 98, 99, 100):
        p = small_lasso(seed, m=10, n=20)
        orc = oracle_solution(p)
        if orc.support.size < 2:
            continue
        summ = spectral_summary(p, orc)
        v = 0.8 * 4.0 / summ.tau_tilde_star
        C = convergence_factor(v, summ)
        mu_star = orc.mu_star(v)
        r = rng(seed + 200)
        delta = r.normal(size=p.n)
        delta *= 0.3 * min(orc.omega1, orc.omega0(v)) / np.linalg.norm(delta)
        mu = mu_star + delta
        for _ in range(6):
            E = _mu_support(mu, v, p.lam)
            if not (set(orc.support) <= set(E) <= set(orc.equicorr)):
                break
            mu_next = asm_mu_map(mu, E, v, v, p.A, p.y, p.lam)
            d0 = np.linalg.norm(mu - mu_star)
            d1 = np.linalg.norm(mu_next - mu_star)
            if d0 < 1e-12:
                break
            assert d1 / d0 <= C + 1e-6
            measured += 1
            mu = mu_next
    assert measured >= 10


def test_large_vhat_contraction_on_exact_support():
    # with E = support = equicorrelation set, cranking v_hat up to the
    # closed-form bound gives any prescribed contraction factor
    done = 0
    for seed in (101, 102, 103, 104, 105, 106):
        p = small_lasso(seed, m=10, n=20)
        orc = oracle_solution(p)
        if orc.support.size < 2 or orc.equicorr.size != orc.support.size:
            continue
        summ = spectral_summary(p, orc)
        v = 0.5 * 4.0 / summ.tau_tilde_star
        theta = 0.5
        lo, hi = tau_hat_extremes(p.A, orc.support)
        num = max(math.sqrt((1 - v * t) ** 2 + v**2 * summ.tau_tilde_star * t)
                  for t in (lo, hi))
        v_hat = num / (theta * lo) * 1.05
        mu_star = orc.mu_star(v)
        r = rng(seed + 300)
        delta = r.normal(size=p.n)
        delta *= 0.3 * min(orc.omega1, orc.omega0(v)) / np.linalg.norm(delta)
        mu = mu_star + delta
        for _ in range(3):
            E = _mu_support(mu, v, p.lam)
            if not np.array_equal(E, orc.support):
                break
            mu_next = asm_mu_map(mu, E, v, v_hat, p.A, p.y, p.lam)
            d0, d1 = np.linalg.norm(mu - mu_star), np.linalg.norm(mu_next - mu_star)
            if d0 < 1e-13:
                break
            assert d1 <= theta * d0 * (1.0 + 1e-6)
            mu = mu_next
            done += 1
    assert done >= 6


def test_vhat_bound_nonexpansive_beyond_on_exact_support():
    # on instances with E = support = equicorrelation the safe-v_hat bound
    # is conservative: 10x above it the map still does not expand
    done = 0
    for seed in (101, 102, 103, 104, 105, 106):
        p = small_lasso(seed, m=10, n=20)
        orc = oracle_solution(p)
        if orc.support.size < 2 or orc.equicorr.size != orc.support.size:
            continue
        summ = spectral_summary(p, orc)
        lo, hi = tau_hat_extremes(p.A, orc.support)
        tilde = summ.tau_tilde_star
        if not 0 < lo < tilde:
            continue
        v = 0.5 * 4.0 / tilde
        try:
            bound = hatv_upper_bound(v, lo, tilde)
        except Exception:
            continue
        if not math.isfinite(bound):
            continue
        v_hat = 10.0 * bound
        mu_star = orc.mu_star(v)
        r = rng(seed + 400)
        delta = r.normal(size=p.n)
        delta *= 0.2 * min(orc.omega1, orc.omega0(v)) / np.linalg.norm(delta)
        mu = mu_star + delta
        E = _mu_support(mu, v, p.lam)
        if not np.array_equal(E, orc.support):
            continue
        mu_next = asm_mu_map(mu, E, v, v_hat, p.A, p.y, p.lam)
        assert (np.linalg.norm(mu_next - mu_star)
                <= np.linalg.norm(mu - mu_star) * (1 + 1e-9))
        done += 1
    assert done >= 3


def test_h_condition_certifies_data_step():
    # directly exercise the if-and-only-if inequality on a random instance
    p = small_lasso(107, m=8, n=16)
    orc = oracle_solution(p)
    E = orc.support
    if E.size < 2:
        pytest.skip("degenerate support")
    lo, hi = tau_hat_extremes(p.A, E)
    tilde = tau_tilde_max(p.A, E)
    taus = np.linspace(lo, hi, 25)
    v = 4.0 / tilde * 0.99
    assert check_h_condition(v, v, taus, tilde)
    assert not check_h_condition(8.0 / tilde, 8.0 / tilde, np.array([hi]), tilde)


# ---------------------------------------------------------------------------
# reflected resolvents


def test_reflection_nonexpansive_t_leq_one():
    # soft-threshold resolvent: R^t is non-expansive for t <= 1
    r = rng(108)
    for _ in range(50):
        t = float(r.uniform(0.05, 1.0))
        v2, lam = 0.8, 1.1
        a = r.normal(scale=3.0, size=20)
        b = r.normal(scale=3.0, size=20)
        Ra = (1 + t) * soft_threshold(a, v2, lam).x - t * a
        Rb = (1 + t) * soft_threshold(b, v2, lam).x - t * b
        assert np.linalg.norm(Ra - Rb) <= np.linalg.norm(a - b) * (1 + 1e-12)


def test_reflection_contracts_for_strongly_monotone_map():
    # linear strongly monotone operator: contraction factor t once
    # 1/t <= 1 + 2 gamma
    r = rng(109)
    for _ in range(50):
        k = 6
        Q, _ = np.linalg.qr(r.normal(size=(k, k)))
        w = r.uniform(0.3, 3.0, k)
        T = Q @ np.diag(w) @ Q.T
        gamma = w.min()
        t = float(r.uniform(1.0 / (1.0 + 2.0 * gamma), 1.5))
        J = np.linalg.inv(np.eye(k) + T)
        R = (1 + t) * J - t * np.eye(k)
        a, b = r.normal(size=k), r.normal(size=k)
        assert (np.linalg.norm(R @ (a - b))
                <= t * np.linalg.norm(a - b) * (1 + 1e-10))


def test_mps_support_zeroing_bound():
    # with v2 - 2/tau_N < v1 < v2 the shrinkage readout vanishes off the
    # equicorrelation set within the prescribed iteration bound
    done = 0
    for seed in range(110, 140):
        p = small_lasso(seed, m=6, n=12, snr_db=15.0)
        orc = oracle_solution(p)
        comp = complement(orc.equicorr, p.n)
        if comp.size == 0 or not math.isfinite(orc.omega0_tilde):
            continue
        tau_n = float(np.linalg.norm(p.A, 2) ** 2)
        r = rng(seed)
        v2 = float(r.uniform(1.0, 2.5)) / tau_n
        v1 = v2 - float(r.uniform(0.3, 0.95)) * min(v2, 2.0 / tau_n)
        z_star = orc.x_star + v2 * orc.gstar
        z = r.normal(size=p.n)
        bound = np.linalg.norm(z - z_star) / ((v2 - v1) * orc.omega0_tilde)
        if not (0 < bound < 20000):
            continue
        warm = LmmseWarmup.from_matrix(p.A)
        res_h = lambda zz: lmmse(zz, v1, p.A, p.y, warm)
        res_g = lambda zz: soft_threshold(zz, v2, p.lam).x
        cfg = MPSConfig(v1, v2)
        for _ in range(int(math.ceil(bound))):
            z = mps_step(z, cfg, res_h, res_g)
        x = soft_threshold(z, v2, p.lam).x
        assert np.all(x[comp] == 0.0)
        done += 1
        if done >= 10:
            break
    assert done >= 8
