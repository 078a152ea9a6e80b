import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from dpsco import bounds
from dpsco.core import ConvexDomain, Dataset, LossFamily, PreconditionError, RngStream
from dpsco.losses import empirical_loss, euclidean_norm_loss, make_distribution, default_domain
from dpsco.nsgd import derive_nsgd_params
from dpsco.smoothing import (
    NON_CERTIFIED,
    ProxMode,
    approx_prox,
    derive_proxgd_params,
    derive_smoothing_params,
    huber_envelope,
    moreau_grad,
    moreau_value,
    prox_exact_norm,
    run_proxgd,
)

from oracles import smoothing_reference

E1 = np.array([1.0, 0.0])
ZERO = np.zeros(2)
BALL = ConvexDomain.ball(2, 1.0)


class TestParams:
    def test_headline(self):
        s = derive_smoothing_params(1000, 10, 1.0, 1e-6, 1.0, 1.0)
        assert s.beta_smooth == pytest.approx(7.9057, rel=1e-5)
        assert s.xi == pytest.approx(1.26491e-4, rel=1e-5)
        assert s.prox_max_iters == math.ceil(8 / s.xi**2)
        assert 4.9e8 < s.prox_max_iters < 5.1e8
        assert s.L_eff == pytest.approx(1.001) and s.certified

    @settings(max_examples=100, deadline=None)
    @given(st.integers(10, 10**6), st.integers(1, 1000), st.floats(0.01, 1.0), st.floats(0.1, 3), st.floats(0.1, 3))
    def test_against_reference(self, n, d, eps, L, M):
        delta = 1.0 / (2 * n * n)
        s = derive_smoothing_params(n, d, eps, delta, L, M)
        beta, xi = smoothing_reference(n, d, eps, delta, L, M)
        assert s.beta_smooth == pytest.approx(float(beta), rel=1e-12)
        assert s.xi == pytest.approx(float(xi), rel=1e-12)

    def test_cap_downward_flags(self):
        s = derive_smoothing_params(1000, 10, 1.0, 1e-6, 1.0, 1.0, prox_max_iters=200)
        assert s.prox_max_iters == 200 and not s.certified
        assert derive_smoothing_params(1000, 10, 1.0, 1e-6, 1.0, 1.0, prox_max_iters=10**10).certified

    def test_proxgd_uses_l_eff(self):
        p, s = derive_proxgd_params(1000, 10, 1.0, 1e-6, 1.0, 1.0)
        plain = derive_nsgd_params(1000, 10, 1.0, 1e-6, 1.0, 1.0)
        assert p.sigma2 == pytest.approx(plain.sigma2 * 1.001**2)


class TestProxMode:
    def test_parse(self):
        assert ProxMode.parse("capped-gd:200") == ProxMode("capped-gd", 200)
        assert str(ProxMode.parse("certified-gd")) == "certified-gd"

    @pytest.mark.parametrize("bad", ["capped-gd", "capped-gd:x", "exact-oracle:3", "newton"])
    def test_bad(self, bad):
        with pytest.raises(ValueError):
            ProxMode.parse(bad)


class TestExactProx:
    def test_examples(self):
        np.testing.assert_allclose(prox_exact_norm(E1, ZERO, 2.0), [0.5, 0.0])
        np.testing.assert_array_equal(prox_exact_norm(np.array([0.2, 0.0]), ZERO, 2.0), [0.0, 0.0])
        z = np.array([0.3, 0.3])
        np.testing.assert_array_equal(prox_exact_norm(z, z, 2.0), z)

    def test_against_scalar_minimisation(self):
        # the prox lies on the segment from z to w, so a 1-D search suffices
        g = np.random.default_rng(0)
        for _ in range(20):
            w, z, beta = g.normal(size=3), g.normal(size=3), g.uniform(0.5, 5)
            obj = lambda t: np.linalg.norm(z + t * (w - z) - z) / beta + 0.5 * np.linalg.norm(z + t * (w - z) - w) ** 2
            t = minimize_scalar(obj, bounds=(0, 1), method="bounded", options={"xatol": 1e-12}).x
            np.testing.assert_allclose(prox_exact_norm(w, z, beta), z + t * (w - z), atol=1e-8)

    def test_envelope_value_example(self):
        loss = euclidean_norm_loss(2)
        assert moreau_value(loss, ZERO, 2.0, E1, BALL) == pytest.approx(0.75)


class TestApproxProx:
    def test_example(self):
        # the certified budget here is 8e6 steps; a capped run already meets the target accuracy
        loss = euclidean_norm_loss(2)
        v, tau, certified = approx_prox(loss, 2.0, E1, ZERO, 1e-3, BALL, cap=20_000, return_info=True)
        assert not certified and tau == 20_000
        assert np.linalg.norm(v - [0.5, 0.0]) <= 1e-3

    def test_zero_function(self):
        zero = LossFamily("zero", 2, lambda w, z: np.zeros(np.shape(w)[:-1]), lambda w, z: np.zeros_like(w),
                          lipschitz=1.0, smoothness=0.0)
        w = np.array([0.3, -0.4])
        np.testing.assert_allclose(approx_prox(zero, 1.0, w, ZERO, 0.05, BALL), w, atol=1e-12)

    def test_precondition(self):
        with pytest.raises(PreconditionError, match="beta >= L/M"):
            approx_prox(euclidean_norm_loss(2), 0.5, E1, ZERO, 0.1, BALL)

    def test_strong_convexity_gap(self):
        loss = euclidean_norm_loss(2)
        g = np.random.default_rng(1)
        for _ in range(20):
            w, z, beta = 0.3 * g.normal(size=2), 0.3 * g.normal(size=2), g.uniform(1, 4)
            v_hat = approx_prox(loss, beta, w, z, 0.05, BALL)
            v_star = prox_exact_norm(w, z, beta)
            gw = lambda v: loss.value(v, z) / beta + 0.5 * np.sum((v - w) ** 2)
            assert gw(v_hat) - gw(v_star) >= 0.5 * np.sum((v_hat - v_star) ** 2) - 1e-12

    def test_cap_flags_non_certified(self):
        loss = euclidean_norm_loss(2)
        _, tau, ok = approx_prox(loss, 2.0, E1, ZERO, 1e-3, BALL, cap=50, return_info=True)
        assert tau == 50 and not ok
        _, tau, ok = approx_prox(loss, 2.0, E1, ZERO, 0.5, BALL, cap=10**6, return_info=True)
        assert tau == 32 and ok

    def test_capped_path_close_at_loose_xi(self):
        loss = euclidean_norm_loss(3)
        g = np.random.default_rng(2)
        W = 0.3 * g.normal(size=(50, 3))
        Z = 0.3 * g.normal(size=(50, 3))
        V = approx_prox(loss, 3.0, W, Z, 0.02, ConvexDomain.ball(3, 1.0), cap=20_000)
        assert np.max(np.linalg.norm(V - prox_exact_norm(W, Z, 3.0), axis=1)) <= 0.02


class TestEnvelope:
    def test_examples(self):
        loss = euclidean_norm_loss(2)
        assert moreau_value(loss, ZERO, 2.0, np.array([0.2, 0.0]), BALL) == pytest.approx(0.04)
        np.testing.assert_allclose(moreau_grad(loss, ZERO, 2.0, np.array([0.2, 0.0]), BALL), [0.4, 0.0])
        np.testing.assert_allclose(moreau_grad(loss, ZERO, 2.0, E1, BALL), [1.0, 0.0])
        z = np.array([0.1, 0.1])
        assert moreau_value(loss, z, 2.0, z, BALL) == 0
        np.testing.assert_array_equal(moreau_grad(loss, z, 2.0, z, BALL), [0.0, 0.0])

    def test_huber_match(self):
        loss = euclidean_norm_loss(4)
        g = np.random.default_rng(3)
        W, Z = g.normal(size=(300, 4)), g.normal(size=(300, 4))
        for beta in (0.3, 1.0, 7.0):
            hv, hg = huber_envelope(W, Z, beta)
            np.testing.assert_allclose(moreau_value(loss, Z, beta, W), hv, atol=1e-12)
            np.testing.assert_allclose(moreau_grad(loss, Z, beta, W), hg, atol=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.2, 20), st.integers(0, 10**6))
    def test_envelope_properties(self, beta, seed):
        loss = euclidean_norm_loss(3)
        g = np.random.default_rng(seed)
        w, w2, z = g.normal(size=3), g.normal(size=3), g.normal(size=3)
        L = loss.lipschitz
        gw, gw2 = moreau_grad(loss, z, beta, w), moreau_grad(loss, z, beta, w2)
        assert np.linalg.norm(gw) <= 2 * L + 1e-12
        assert np.linalg.norm(gw - gw2) <= beta * np.linalg.norm(w - w2) + 1e-12
        val = moreau_value(loss, z, beta, w)
        assert val <= loss.value(w, z) + 1e-12
        assert loss.value(w, z) - val <= bounds.moreau_gap_bound(L, beta) + 1e-12

    def test_approximate_envelope_properties(self):
        loss = euclidean_norm_loss(3)
        dom = ConvexDomain.ball(3, 1.0)
        g = np.random.default_rng(4)
        xi, L = 0.05, 1.0
        W, W2, Z = (0.5 * g.uniform(-1, 1, (40, 3)) for _ in range(3))
        for beta in (1.0, 4.0):
            G = moreau_grad(loss, Z, beta, W, dom, mode="certified-gd", xi=xi)
            G2 = moreau_grad(loss, Z, beta, W2, dom, mode="certified-gd", xi=xi)
            V = moreau_value(loss, Z, beta, W, dom, mode="certified-gd", xi=xi)
            assert np.all(np.linalg.norm(G, axis=1) <= 2 * L + beta * xi)
            assert np.all(np.linalg.norm(G - G2, axis=1) <= beta * np.linalg.norm(W - W2, axis=1) + 2 * beta * xi)
            gap = loss.value(W, Z) - V
            assert np.all(gap >= -L * xi) and np.all(gap <= L * L / (2 * beta) + L * xi)

    def test_exact_mode_needs_oracle(self):
        loss = LossFamily("no-prox", 2, lambda w, z: np.linalg.norm(w - z, axis=-1), lambda w, z: w - z, lipschitz=1.0)
        with pytest.raises(PreconditionError, match="exact prox"):
            moreau_grad(loss, ZERO, 2.0, E1, BALL)


class TestRunProxgd:
    def test_fixed_point(self):
        loss = euclidean_norm_loss(3)
        z0 = np.array([0.1, 0.2, -0.3])
        p, s = derive_proxgd_params(100, 3, 1.0, 1e-4, 1.0, 1.0, noise_off=True)
        res = run_proxgd(loss, Dataset([z0] * 100), ConvexDomain.ball(3, 1.0), p, s, w0=z0, rng=RngStream(0))
        np.testing.assert_allclose(res.output, z0, atol=1e-15)

    def test_sandwich_on_output(self):
        dist = make_distribution("sphere_points_norm_loss", 5)
        loss = dist.default_loss()
        dom = default_domain(dist)
        S = dist.sample(500, RngStream(1))
        p, s = derive_proxgd_params(500, 5, 1.0, 1e-6, 1.0, 1.0)
        res = run_proxgd(loss, S, dom, p, s, rng=RngStream(2))
        w = res.output
        env = float(np.mean(moreau_value(loss, S.examples, s.beta_smooth, w)))
        emp = empirical_loss(loss, S, w)
        assert env <= emp + 1e-12 <= env + loss.lipschitz**2 / (2 * s.beta_smooth) + 2e-12
        assert dom.contains(w) and res.grad_evals == p.T * p.m

    def test_capped_mode_tagged(self):
        dist = make_distribution("sphere_points_norm_loss", 3)
        loss = dist.default_loss()
        S = dist.sample(200, RngStream(3))
        p, s = derive_proxgd_params(200, 3, 1.0, 1e-5, 1.0, 1.0)
        res = run_proxgd(loss, S, default_domain(dist), p, s, rng=RngStream(4), prox_mode="capped-gd:100")
        assert NON_CERTIFIED in res.tags
        assert res.grad_evals == p.T * p.m * 100
        exact = run_proxgd(loss, S, default_domain(dist), p, s, rng=RngStream(4))
        assert NON_CERTIFIED not in exact.tags
        # same randomness, capped inner solver: outputs stay close
        assert np.linalg.norm(res.output - exact.output) <= 0.1

    def test_certified_mode_small_problem(self):
        dist = make_distribution("sphere_points_norm_loss", 2)
        loss = dist.default_loss()
        S = dist.sample(40, RngStream(5))
        p, s = derive_proxgd_params(40, 2, 1.0, 1e-4, 1.0, 1.0)
        s = s.__class__(s.beta_smooth, 0.1, math.ceil(8 / 0.01), s.L_eff)
        res = run_proxgd(loss, S, default_domain(dist), p, s, rng=RngStream(6), prox_mode="certified-gd")
        assert NON_CERTIFIED not in res.tags
        exact = run_proxgd(loss, S, default_domain(dist), p, s, rng=RngStream(6))
        # each envelope gradient is within beta*xi, so the averaged outputs are within eta*T*beta*xi
        assert np.linalg.norm(res.output - exact.output) <= p.eta * p.T * s.beta_smooth * s.xi
