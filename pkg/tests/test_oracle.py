import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quantsgd.core import RationalQuantile, SgdConfig, run_stream
from quantsgd.distributions import Beta, Cauchy, Normal, Uniform, make_rng
from quantsgd.inference import asymptotic_variance
from quantsgd.oracle import (
    balance_residual,
    build_chain,
    closed_form_median,
    cyclic_class_check,
    discrete_ks,
    foster_drift_check,
    foster_drift_search,
    lyapunov_drift,
    mgf_bound_check,
    moment_check,
    normality_check,
    pooled_tv,
    stationary_solve,
    tail_bound_check,
    tail_index,
    total_variation,
    transition_matrix,
)

HALF = RationalQuantile(1, 2)
Q34 = RationalQuantile(3, 4)


def _solve(quantile, eta, dist, **kw):
    chain = build_chain(quantile, eta, dist, **kw)
    return chain, stationary_solve(chain)


def _naive_residual(chain, pi):
    """Balance equation evaluated state by state with dictionaries."""
    p, q = chain.quantile.p, chain.quantile.q
    prob = dict(zip(chain.offsets.tolist(), pi.tolist()))
    F = dict(zip(chain.offsets.tolist(), chain.cdf_values.tolist()))
    worst = 0.0
    for k in range(chain.lo + q, chain.hi - q + 1):
        inflow = prob[k + q - p] * F[k + q - p] + prob[k - p] * (1 - F[k - p])
        worst = max(worst, abs(prob[k] - inflow))
    return worst


def test_anchor_on_lattice():
    chain = build_chain(HALF, 0.01, Uniform(0, 1), theta0=0.5)
    assert chain.x0 == pytest.approx(0.5, abs=1e-15)
    assert chain.cdf_at(np.array([0]))[0] == pytest.approx(0.5)


def test_anchor_is_closest_lattice_point():
    chain = build_chain(Q34, 0.01, Cauchy(0, 2), theta0=0.001)
    assert abs(chain.x0 - 2.0) <= chain.spacing / 2 + 1e-12


@pytest.mark.parametrize("quantile,down,up", [(RationalQuantile(1, 3), -2, 1), (Q34, -1, 3)])
def test_transition_structure(quantile, down, up):
    chain = build_chain(quantile, 0.01, Normal(0, 1))
    P = transition_matrix(chain).toarray()
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-14)
    mid = chain.size // 2
    F = chain.cdf_values[mid]
    assert P[mid, mid + down] == pytest.approx(F)
    assert P[mid, mid + up] == pytest.approx(1 - F)
    assert np.count_nonzero(P[mid]) == 2


@pytest.mark.parametrize("dist", [Uniform(0, 1), Beta(2, 3), Normal(0, 1)], ids=str)
@pytest.mark.parametrize("eta", [0.04, 0.01])
def test_solvers_agree_for_median(dist, eta):
    chain, pi = _solve(HALF, eta, dist)
    exact = closed_form_median(chain)
    assert total_variation(pi.pi, exact.pi) <= 1e-10
    assert balance_residual(pi, chain) <= 1e-10
    assert balance_residual(pi, chain) == pytest.approx(_naive_residual(chain, pi.pi), abs=1e-15)
    assert pi.pi.sum() == pytest.approx(1.0, abs=1e-12) and np.all(pi.pi >= 0)


def test_solver_without_warm_start():
    chain = build_chain(RationalQuantile(1, 3), 0.04, Uniform(0, 1))
    cold = stationary_solve(chain, warm_start=False)
    warm = stationary_solve(chain)
    assert cold.iterations > 1
    assert total_variation(cold.pi, warm.pi) < 1e-10


def test_symmetric_law_gives_symmetric_pi():
    chain, pi = _solve(HALF, 0.01, Normal(0, 1), k_trunc=400)
    assert chain.x0 == pytest.approx(0.0, abs=1e-15)
    assert -chain.lo == chain.hi
    np.testing.assert_allclose(pi.pi, pi.pi[::-1], atol=1e-10)
    assert float(np.sum(pi.pi * pi.standardized)) == pytest.approx(0.0, abs=1e-10)


def test_two_effective_states_detailed_balance():
    # Only two lattice states carry a CDF strictly inside (0, 1).
    chain = build_chain(HALF, 0.02, Uniform(0.495, 0.511), theta0=0.5)
    inner = np.flatnonzero((chain.cdf_values > 0) & (chain.cdf_values < 1))
    assert inner.size == 2
    exact = closed_form_median(chain)
    F = chain.cdf_values
    for s in range(chain.size - 1):
        assert exact.pi[s] * (1 - F[s]) == pytest.approx(exact.pi[s + 1] * F[s + 1], abs=1e-15)
    pi = stationary_solve(chain)
    assert total_variation(pi.pi, exact.pi) < 1e-12


def test_closed_form_errors():
    chain = build_chain(Q34, 0.01, Uniform(0, 1))
    with pytest.raises(ValueError):
        closed_form_median(chain)


def test_flat_profile_at_exact_median():
    gaps = []
    for eta in (0.01, 0.001):
        chain = build_chain(HALF, eta, Uniform(0, 1), theta0=0.5)
        F = chain.cdf_values
        i = int(np.flatnonzero(chain.offsets == 0)[0])
        assert F[i] == pytest.approx(0.5, abs=1e-15)
        # rho_j = (1 - F_j) / F_{j+1} around the median state.
        rho = [(1 - F[j]) / F[j + 1] for j in (i - 1, i)]
        gaps.append(max(abs(r - 1) for r in rho))
    assert gaps[0] < 0.02 and gaps[1] < gaps[0] / 5


def test_residual_detects_perturbation_and_wrong_laws():
    chain, pi = _solve(Q34, 0.01, Beta(2, 3))
    bumped = pi.pi.copy()
    bumped[np.argmax(bumped)] += 1e-3
    assert balance_residual(bumped, chain) >= 1e-4
    flat = np.full(chain.size, 1.0 / chain.size)
    assert balance_residual(flat, chain) > 0.01 * flat.max()


def test_cauchy_standardized_variance():
    chain, pi = _solve(Q34, 0.001, Cauchy(0, 2))
    _, m2 = moment_check(pi)
    assert m2 == pytest.approx(1.17810, rel=0.05)
    assert pi.truncated_mass_bound < 1e-8


def test_variance_limit_along_eta_grid():
    errs = []
    for eta in (0.04, 0.02, 0.01, 0.005, 0.0025):
        _, pi = _solve(Q34, eta, Beta(2, 3))
        _, m2 = moment_check(pi)
        errs.append(abs(m2 / 0.0690 - 1))
    assert errs[-1] < 0.05
    assert all(e < 0.05 for e in errs[2:])


def test_variance_stable_when_eta_halved():
    m = [moment_check(_solve(Q34, eta, Cauchy(0, 2))[1])[1] for eta in (0.002, 0.001)]
    assert abs(m[1] / m[0] - 1) < 0.10


def test_anchor_insensitivity():
    eta = 0.01
    d = Beta(2, 3)
    _, base = _solve(Q34, eta, d, theta0=0.0)
    for shift in (1, 7, -13):
        _, moved = _solve(Q34, eta, d, theta0=shift * eta / 4)
        assert total_variation(base.pi, moved.pi) < 1e-10
        np.testing.assert_allclose(base.standardized, moved.standardized, atol=1e-12)


def test_drift_examples():
    assert lyapunov_drift(5, 0.75, 1, 2) == pytest.approx(-0.5)
    F = 0.9
    assert lyapunov_drift(100, F, 3, 4) == pytest.approx(3 - 4 * F)
    assert lyapunov_drift(100, 0.875, 3, 4) == pytest.approx(-0.5)
    # Signed displacement p - q F vanishes at F = p/q; the |k| drift far right equals it.
    assert lyapunov_drift(50, 0.75, 3, 4) == pytest.approx(0.0)


@pytest.mark.parametrize("dist,quantile", [(Uniform(0, 1), HALF), (Beta(2, 3), Q34), (Cauchy(0, 2), Q34)], ids=str)
def test_drift_window(dist, quantile):
    chain = build_chain(quantile, 0.0025, dist)
    rep = foster_drift_search(chain, 0.25)
    n = rep.window[1]
    ks = np.arange(n + 1, n + 2000)
    assert np.all(lyapunov_drift(ks, chain.cdf_at(ks), quantile.p, quantile.q) <= -0.25)
    assert np.all(lyapunov_drift(-ks, chain.cdf_at(-ks), quantile.p, quantile.q) <= -0.25)
    assert rep.min_margin <= -0.25


def test_drift_errors_when_window_too_small():
    chain = build_chain(Q34, 0.0025, Cauchy(0, 2))
    with pytest.raises(ValueError):
        foster_drift_check(chain, 0.25, extent=100)
    with pytest.raises(ValueError):
        foster_drift_check(chain, 0.0)


def test_mgf_examples():
    chain, pi = _solve(HALF, 1e-3, Uniform(0, 1))
    vals = [mgf_bound_check(pi, 3.5, d) for d in (0, 1, 2)]
    assert all(ok for _, ok in vals)
    assert vals[0][0] <= vals[2][0]
    _, big = _solve(HALF, 0.5, Normal(0, 100))
    s, ok = mgf_bound_check(big, 3.5, 2)
    assert not ok and s > 4
    with pytest.raises(ValueError):
        mgf_bound_check(pi, 2.0)


def test_mgf_against_direct_sum():
    _, pi = _solve(Q34, 0.005, Beta(2, 3))
    k = np.abs(pi.offsets).astype(float)
    direct = np.sum(0.005**3.5 * pi.pi * k**2 * np.exp(k * math.sqrt(0.005) / 4))
    assert mgf_bound_check(pi, 3.5, 2)[0] == pytest.approx(direct, rel=1e-10)


def test_tail_examples():
    eta = 1e-3
    n = tail_index(eta, 2, 5)
    assert n == math.ceil(2 * 5 * math.log(1000) / math.sqrt(eta))
    _, pi = _solve(HALF, eta, Uniform(0, 1), k_trunc=n + 10)
    for d in (0, 2):
        tail, ok = tail_bound_check(pi, 5, 3.5, d)
        assert ok and tail <= 4 * 10**-4.5
    _, short = _solve(Q34, eta, Cauchy(0, 2))
    with pytest.raises(ValueError):
        tail_bound_check(short, 5, 3.5)
    with pytest.raises(ValueError):
        tail_bound_check(pi, 3, 3.5)


def test_normality_monotone_for_uniform():
    ks = [normality_check(_solve(HALF, eta, Uniform(0, 1))[1], 1.0) for eta in (0.04, 0.01, 0.0025)]
    assert ks[0] > ks[1] > ks[2]
    assert ks[2] < 0.05


def test_normality_beta():
    d = Beta(2, 3)
    _, pi = _solve(Q34, 0.0025, d)
    f = d.pdf(d.quantile(0.75))
    assert asymptotic_variance(Q34, f) == pytest.approx(0.0690, abs=1e-4)
    assert normality_check(pi, f) < 0.05


def test_discrete_ks_self_is_zero():
    vals = np.array([-1.0, 0.0, 2.0])
    probs = np.array([0.2, 0.5, 0.3])
    cdf = np.cumsum(probs)

    def right(x):
        return np.interp(x, vals, cdf)

    def left(x):
        return right(x) - probs

    assert discrete_ks(vals, probs, right, left) == pytest.approx(0.0, abs=1e-15)


def test_cyclic_classes_and_pooled_law():
    eta = 0.01
    dist = Uniform(0, 1)
    chain, pi = _solve(HALF, eta, dist)
    for parity in (0, 1):
        mass = pi.pi[(chain.offsets + chain.anchor) % 2 == parity].sum()
        assert mass == pytest.approx(0.5, abs=1e-3)
    cfg = SgdConfig(HALF, eta)
    _, traj = run_stream(cfg, dist.sample(make_rng(3), 200_000), record=True)
    assert cyclic_class_check(chain, pi, traj, burn_in=5000) < 0.05
    with pytest.raises(ValueError):
        _, thin = run_stream(cfg, dist.sample(make_rng(3), 1000), record=True, stride=2)
        cyclic_class_check(chain, pi, thin)


def test_randomized_init_pooled_matches_pi():
    eta = 0.01
    dist = Uniform(0, 1)
    chain, pi = _solve(RationalQuantile(1, 3), eta, dist)
    finals = []
    for r in range(4000):
        cfg = SgdConfig(RationalQuantile(1, 3), eta, randomized_init=True, seed=r)
        state, _ = run_stream(cfg, dist.sample(make_rng(99, r), 3000))
        finals.append(state.theta[0])
    # Monte Carlo noise with 4000 draws over ~60 effective states.
    assert pooled_tv(chain, pi, finals) < 0.1


def test_csv_export():
    _, pi = _solve(HALF, 0.04, Uniform(0, 1))
    buf = io.StringIO()
    pi.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "k,theta,pi"
    assert len(lines) == pi.pi.size + 1


def test_build_chain_errors():
    with pytest.raises(ValueError):
        build_chain(Q34, 0.01, Beta(2, 3), k_trunc=2)
    with pytest.raises(ValueError):
        build_chain(Q34, -0.01, Beta(2, 3))


@given(eta=st.sampled_from([0.04, 0.02, 0.01]), p_q=st.sampled_from([(1, 2), (1, 3), (2, 3), (3, 4), (2, 5)]),
       a=st.floats(1.2, 5), b=st.floats(1.2, 5))
def test_solver_properties(eta, p_q, a, b):
    quantile = RationalQuantile(*p_q)
    chain = build_chain(quantile, eta, Beta(a, b))
    assert np.all(np.diff(chain.cdf_values) >= 0)
    P = transition_matrix(chain)
    np.testing.assert_allclose(np.asarray(P.sum(axis=1)).ravel(), 1.0, atol=1e-14)
    pi = stationary_solve(chain)
    assert balance_residual(pi, chain) <= 1e-10
    assert pi.pi.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(pi.pi >= 0)
