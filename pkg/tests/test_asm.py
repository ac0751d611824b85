import math

import numpy as np
import pytest

from asamp.asm import (AsmState, AveragingConfig, EmptySupport,
                       QuasiVarianceSchedule, asamp_l1_iterate,
                       asm_iterate_mmse, initial_state, run_asamp_l1,
                       run_asamp_mmse, select_support_beta, select_support_l1,
                       subspace_lmmse, update_quasi_variances)
from asamp.denoisers import bg_denoise, hmc_denoise, soft_threshold
from asamp.linalg import ht
from asamp.metrics import kkt_residual
from asamp.problems import (BGPriorParams, HMCPriorParams, ProblemInstance,
                            make_channel_instance)
from asamp.splitting import VAR_CAP, LmmseWarmup, lmmse
from asamp.theory import oracle_solution, spectral_summary
from conftest import raw_lasso, rng, small_lasso


# ---------------------------------------------------------------------------
# support selection


def test_select_support_l1():
    assert select_support_l1(np.zeros(4)).size == 0
    x = soft_threshold(np.array([2.0, 0.5, -3.0]), 1.0, 1.0).x
    assert list(select_support_l1(x)) == [0, 2]


def test_select_support_beta_threshold_and_ties():
    beta = np.array([0.9, 0.1, 0.5])
    assert list(select_support_beta(beta, 0.5)) == [0, 2]
    assert list(select_support_beta(np.ones(3), 0.5)) == [0, 1, 2]


def test_select_support_beta_nesting():
    r = rng(60)
    beta = r.random(50)
    for c1, c2 in [(0.2, 0.5), (0.5, 0.9)]:
        e2 = set(select_support_beta(beta, c2))
        e1 = set(select_support_beta(beta, c1))
        assert e2.issubset(e1)


# ---------------------------------------------------------------------------
# subspace solve


def test_subspace_lmmse_zero_matrix():
    nu = np.array([1.0, -2.0])
    out = subspace_lmmse(nu, 0.5, np.zeros((4, 2)), np.zeros(4))
    assert np.allclose(out, nu)


def test_subspace_lmmse_full_space_is_lmmse():
    p = small_lasso(61, m=6, n=12)
    nu = rng(62).normal(size=12)
    out = subspace_lmmse(nu, 0.8, p.A, p.y)
    assert np.allclose(out, lmmse(nu, 0.8, p.A, p.y), atol=1e-10)


def test_subspace_lmmse_empty_support():
    with pytest.raises(EmptySupport):
        subspace_lmmse(np.zeros(0), 1.0, np.zeros((4, 0)), np.zeros(4))


def test_subspace_lmmse_stationarity_identity():
    # the solve satisfies A_E^T (y - A_E x) = lam*b + (x - x_prev)/v_hat
    # when nu is built from the subgradient step
    r = rng(63)
    A = r.normal(size=(8, 5))
    y = r.normal(size=8)
    x_prev = r.normal(size=5)
    lam, v_hat = 0.7, 1.3
    b = np.sign(x_prev)
    nu = x_prev - v_hat * lam * b
    x = subspace_lmmse(nu, v_hat, A, y)
    lhs = A.T @ (y - A @ x)
    rhs = lam * b + (x - x_prev) / v_hat
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_subspace_lmmse_wide_dual_path_matches_primal():
    r = rng(64)
    A = r.normal(size=(5, 9))
    y = r.normal(size=5)
    nu = r.normal(size=9)
    out = subspace_lmmse(nu, 0.6, A, y)
    ref = np.linalg.solve(np.eye(9) + 0.6 * (A.T @ A), nu + 0.6 * (A.T @ y))
    assert np.allclose(out, ref, atol=1e-9)
    # precomputed A A^H path
    out2 = subspace_lmmse(nu, 0.6, A, y, aah=A @ A.T)
    assert np.allclose(out2, ref, atol=1e-9)


# ---------------------------------------------------------------------------
# quasi-variance schedule


def _state_with_support(p, E, v=1.0, v_hat=1.0):
    st = initial_state(p, v=v, v_hat=v_hat)
    st.E = np.asarray(E, dtype=np.intp)
    mask = np.zeros(p.n, dtype=bool)
    mask[st.E] = True
    st.support_history.append(mask)
    return st


def test_schedule_fixed():
    p = small_lasso(65, m=5, n=10)
    sched = QuasiVarianceSchedule(strategy="fixed", v_fixed=0.4, v_hat_fixed=0.9)
    st = _state_with_support(p, [1, 3])
    assert update_quasi_variances(st, sched, p) == (0.4, 0.9)


def test_schedule_mix_hatv_full_support_clamps():
    # |E| = n makes the mixed value equal v and the precision vanish
    p = small_lasso(66, m=5, n=10)
    sched = QuasiVarianceSchedule(strategy="mix_hatv", v_fixed=1.0)
    st = _state_with_support(p, np.arange(10))
    v, v_hat = update_quasi_variances(st, sched, p)
    assert v == 1.0
    assert v_hat == VAR_CAP
    assert st.v_hat_clamped


def test_schedule_mix_hatv_rho_to_one_clamps():
    # a stabilized support with eps -> 0 pushes rho -> 1 and v_hat -> cap
    p = small_lasso(67, m=5, n=10)
    sched = QuasiVarianceSchedule(strategy="mix_hatv", v_fixed=1.0,
                                  eps_stab=1e-14)
    st = _state_with_support(p, [0, 1, 2])
    v, v_hat = update_quasi_variances(st, sched, p)
    assert v_hat > 1e8  # essentially the pseudo-inverse limit


def test_schedule_mix_hatv_moderate_value():
    p = small_lasso(68, m=5, n=10)
    sched = QuasiVarianceSchedule(strategy="mix_hatv", v_fixed=1.0,
                                  rho0=0.7, eps_stab=1.0)
    # fresh large support triggers the rho0 branch: union > 1.5 m
    st = _state_with_support(p, np.arange(8))
    v, v_hat = update_quasi_variances(st, sched, p)
    rho = 0.7
    vbar = 8.0 / 10.0
    mix = rho + (1 - rho) * vbar
    assert v_hat == pytest.approx(1.0 / (1.0 / mix - 1.0), rel=1e-12)


def test_schedule_subspace_mm_matches_formulas():
    p = small_lasso(69, m=6, n=12)
    sched = QuasiVarianceSchedule(strategy="subspace_mm", alpha=0.5)
    st = _state_with_support(p, [0, 2, 5], v=1.0, v_hat=1.0)
    st.v_post_support_mean = 0.3
    v, v_hat = update_quasi_variances(st, sched, p)
    tau = np.linalg.eigvalsh(p.A[:, [0, 2, 5]].T @ p.A[:, [0, 2, 5]])
    v_half = float(np.mean(1.0 / (1.0 + tau)))  # v_hat = 1
    assert v == pytest.approx(1.0 / (1.0 / v_half - 1.0), rel=1e-9)
    assert v_hat == pytest.approx(1.0 / (1.0 / (0.5 * 0.3) - 1.0 / v), rel=1e-9)


# ---------------------------------------------------------------------------
# ASAMP-L1 iterate


def test_first_iterate_is_full_space_splitting_sweep():
    # with E0 = [n] and x0 = 0 the first sweep is a forward-backward pair
    p = small_lasso(70, m=6, n=12)
    sched = QuasiVarianceSchedule(strategy="fixed", v_fixed=0.5, v_hat_fixed=0.8)
    avg = AveragingConfig(mode="none")
    st = initial_state(p, v=0.5, v_hat=0.8)
    st = asamp_l1_iterate(st, p, sched, avg)
    x_half = lmmse(np.zeros(12), 0.8, p.A, p.y)
    mu = x_half + 0.5 * (p.A.T @ (p.y - p.A @ x_half))
    x1 = soft_threshold(mu, 0.5, p.lam).x
    assert np.allclose(st.x_half, x_half, atol=1e-10)
    assert np.allclose(st.x, x1, atol=1e-10)


def test_iterate_stays_at_oracle_fixed_point():
    for seed in (71, 72, 73):
        p = small_lasso(seed, m=8, n=16)
        orc = oracle_solution(p)
        if orc.support.size == 0:
            continue
        sched = QuasiVarianceSchedule(strategy="fixed", v_fixed=0.3,
                                      v_hat_fixed=0.3)
        avg = AveragingConfig(mode="none")
        st = initial_state(p, v=0.3, v_hat=0.3, x0=orc.x_star)
        st.iter = 1  # skip the whole-space warm start
        st.x_half = orc.x_star.copy()
        st.x_half_prev = None
        for _ in range(5):
            st = asamp_l1_iterate(st, p, sched, avg)
        assert np.max(np.abs(st.x_half - orc.x_star)) < 1e-10
        assert np.max(np.abs(st.x - orc.x_star)) < 1e-10


def test_nu_hat_consistency_identity():
    # x - v_hat*lam*sgn(x) equals x - (v_hat/v)(mu - x) on the support,
    # up to roundoff of the shrinkage subtraction
    r = rng(74)
    mu = r.normal(scale=3.0, size=40)
    v, v_hat, lam = 0.7, 2.3, 0.9
    x = soft_threshold(mu, v, lam).x
    E = np.flatnonzero(x)
    lhs = x[E] - v_hat * lam * np.sign(x[E])
    rhs = x[E] - (v_hat / v) * (mu[E] - x[E])
    scale = np.maximum(np.abs(mu[E]), 1.0)
    assert np.max(np.abs(lhs - rhs) / scale) < 5e-15


def test_empty_support_falls_back_to_full_space():
    # a huge lam wipes the iterate; the next sweep must not die
    p = small_lasso(75, m=5, n=10, lam_scale=1e6)
    sched = QuasiVarianceSchedule(strategy="fixed", v_fixed=0.3, v_hat_fixed=0.3)
    avg = AveragingConfig(mode="none")
    st = initial_state(p, v=0.3, v_hat=0.3)
    for _ in range(3):
        st = asamp_l1_iterate(st, p, sched, avg)
    assert np.all(st.x == 0.0)
    assert st.fallback_full


def test_support_reentry_after_wrong_drop():
    # zero out the largest active entry; the gradient sweep must bring the
    # index back into the support
    p = small_lasso(76, m=10, n=20)
    orc = oracle_solution(p)
    pn = p.normalized()
    orc_n = oracle_solution(pn)
    j = orc_n.support[np.argmax(np.abs(orc_n.x_star[orc_n.support]))]
    x0 = orc_n.x_star.copy()
    x0[j] = 0.0
    sched = QuasiVarianceSchedule(strategy="fixed", v_fixed=0.3, v_hat_fixed=0.3)
    avg = AveragingConfig(mode="none")
    st = initial_state(pn, v=0.3, v_hat=0.3, x0=x0)
    st.iter = 1  # start from the restricted support, not the warm start
    st.x_half = x0.copy()
    st = asamp_l1_iterate(st, pn, sched, avg)
    assert j not in set(st.E)      # the sweep ran without the index
    assert j in set(select_support_l1(st.x))  # and recovered it


def test_averaging_between_iterations_history():
    p = small_lasso(77, m=6, n=12)
    sched = QuasiVarianceSchedule(strategy="fixed", v_fixed=0.4, v_hat_fixed=0.4)
    avg = AveragingConfig(mode="iterations", d=0.5)
    st = initial_state(p, v=0.4, v_hat=0.4)
    st = asamp_l1_iterate(st, p, sched, avg)
    h0 = st.x_half_prev.copy()       # first sweep: no averaging yet
    assert np.allclose(h0, st.x_half)
    st = asamp_l1_iterate(st, p, sched, avg)
    # stored history is the averaged half-iterate (Krasnoselskii-Mann)
    assert np.allclose(st.x_half_prev, 0.5 * st.x_half + 0.5 * h0)


def test_run_asamp_l1_converges_and_polishes():
    p = small_lasso(78, m=10, n=20)
    orc = oracle_solution(p)
    x, trace = run_asamp_l1(p, max_iters=2000, kkt_stop=1e-10)
    assert np.max(np.abs(x - orc.x_star)) < 1e-7
    assert trace.kkt[-1] <= 1e-10


def test_run_asamp_l1_benchmark_scale_row_orthogonal():
    from asamp.problems import make_lasso_instance

    inst = make_lasso_instance("row_orthogonal", 200, 400, BGPriorParams(0.25),
                               30.0, seed=0)
    x, trace = run_asamp_l1(inst, max_iters=400)
    hits = np.flatnonzero(np.asarray(trace.kkt) <= 1e-6)
    assert hits.size and trace.iters[hits[0]] <= 200


# ---------------------------------------------------------------------------
# local convergence properties


def test_nonexpansive_near_fixed_point():
    # v_hat = v below 4/tau_tilde*: distances to mu* never increase
    checked = 0
    for seed in (80, 81, 82):
        p = small_lasso(seed, m=8, n=16)
        orc = oracle_solution(p)
        if orc.support.size < 2:
            continue
        summ = spectral_summary(p, orc)
        v = min(0.9 * 4.0 / summ.tau_tilde_star, 2.0)
        mu_star = orc.mu_star(v)
        r = rng(seed)
        from asamp.theory import asm_mu_map

        for _ in range(40):
            delta = r.normal(size=p.n)
            delta *= 0.4 * orc.omega1 / np.linalg.norm(delta)
            mu = mu_star + delta
            dist = np.linalg.norm(mu - mu_star)
            for _ in range(4):
                E = select_support_l1(soft_threshold(mu, v, p.lam).x)
                if E.size == 0 or not set(orc.support) <= set(E):
                    break
                mu = asm_mu_map(mu, E, v, v, p.A, p.y, p.lam)
                d_new = np.linalg.norm(mu - mu_star)
                assert d_new <= dist * (1.0 + 1e-10)
                dist = d_new
                checked += 1
    assert checked >= 100


def test_averaged_iterate_stabilizes():
    # Krasnoselskii-Mann averaging keeps the iterate non-expansive and the
    # support a superset of the optimal one under the stated margins
    from asamp.theory import asm_mu_map

    done = 0
    for seed in (83, 84, 85, 86):
        p = small_lasso(seed, m=8, n=16)
        orc = oracle_solution(p)
        if orc.support.size < 2:
            continue
        summ = spectral_summary(p, orc)
        v = min(0.9 * 4.0 / summ.tau_tilde_star, 2.0)
        d = 0.5
        mu_star = orc.mu_star(v)
        r = rng(seed + 1000)
        for _ in range(40):
            delta = r.normal(size=p.n)
            delta *= 0.4 * orc.omega1 / np.linalg.norm(delta)
            mu = mu_star + delta
            E = select_support_l1(soft_threshold(mu, v, p.lam).x)
            if not set(orc.support) <= set(E):
                continue
            if np.any(mu[orc.support] * mu_star[orc.support] <= 0):
                continue
            xi = float(np.min(np.abs(mu[orc.support]))) - v * p.lam
            if xi <= 0:
                continue
            if np.linalg.norm(mu - mu_star) >= orc.omega1 + (1 - d) / d * xi:
                continue
            mu_ave = d * asm_mu_map(mu, E, v, v, p.A, p.y, p.lam) + (1 - d) * mu
            assert (np.linalg.norm(mu_ave - mu_star)
                    <= np.linalg.norm(mu - mu_star) * (1 + 1e-10))
            E_next = select_support_l1(soft_threshold(mu_ave, v, p.lam).x)
            assert set(orc.support) <= set(E_next)
            done += 1
    assert done >= 20


# ---------------------------------------------------------------------------
# MMSE variants


def test_asm_mmse_first_iteration_matches_vamp():
    # E0 = [n] with v_hat0 = v0 reproduces one full-space VAMP sweep
    prior = BGPriorParams(0.25, sigma0_2=2.0)
    p = small_lasso(87, m=10, n=20, eps=0.25)
    pw = p.normalized()
    v0 = prior.epsilon * prior.sigma0_2
    den = lambda mu, v: bg_denoise(mu, v, prior.epsilon, prior.sigma0_2)
    sched = QuasiVarianceSchedule(strategy="subspace_mm", alpha=0.9,
                                  resid_guard=0.0)
    st = initial_state(pw, v=v0, v_hat=v0)
    st = asm_iterate_mmse(st, pw, den, sched, AveragingConfig(mode="none"))

    warm = LmmseWarmup.from_matrix(pw.A)
    x_half = lmmse(np.zeros(20), v0, pw.A, pw.y, warm)
    v_post = (v0 / 20) * float(np.sum(1.0 / (1.0 + v0 * warm.tau)))
    v_A = 1.0 / (1.0 / v_post - 1.0 / v0)
    mu_A = (1.0 + v_A / v0) * x_half - 0.0
    out = bg_denoise(mu_A, v_A, prior.epsilon, prior.sigma0_2)
    assert np.allclose(st.x_half, x_half, atol=1e-9)
    assert st.v == pytest.approx(v_A, rel=1e-9)
    assert np.allclose(st.x, out.x, atol=1e-9)


def test_asm_mmse_memoryless_hmc_equals_bg():
    prior_h = HMCPriorParams(0.3, 0.7, sigma0_2=2.0)
    p = small_lasso(88, m=10, n=20, eps=0.3)
    x_h, tr_h = run_asamp_mmse(p, prior_h, denoiser="hmc", max_iters=5)
    prior_b = BGPriorParams(0.3, sigma0_2=2.0)
    x_b, tr_b = run_asamp_mmse(p, prior_b, denoiser="bg", max_iters=5)
    assert np.allclose(x_h, x_b, atol=1e-9)


def test_asm_mmse_channel_improves_fast():
    prior = HMCPriorParams(1.0 / 750.0, 1.0 / 250.0, sigma0_2=4.0)
    inst = make_channel_instance(200, 400, prior, 30.0, seed=0)
    x, trace = run_asamp_mmse(inst, prior, denoiser="hmc", max_iters=8)
    assert min(trace.nmse[: 5]) < -15.0
    assert not trace.ever_exploded


def test_asm_mmse_empty_support_fallback():
    # a prior that rejects everything pushes beta under the threshold;
    # the iteration falls back to the full space instead of dying
    prior = BGPriorParams(1e-4, sigma0_2=1e-6)
    p = small_lasso(89, m=5, n=10)
    x, trace = run_asamp_mmse(p, prior, denoiser="bg", max_iters=3, c=0.999)
    assert len(trace) == 4
