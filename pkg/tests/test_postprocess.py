import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from types import SimpleNamespace

from bvmem.kernels import NWHyper, stick_break
from bvmem.postprocess import (
    IdentifiedDraw,
    TruncationReport,
    extend_sticks,
    identify,
    identify_eta,
    mean_scaling,
    mixture_mean,
    truncation_level,
)
from bvmem.vmem import MeanParams
from oracles import mixture_loglik, random_triple


def sticks_for(weights):
    w = np.asarray(weights, dtype=float)
    left = 1 - np.concatenate([[0.0], np.cumsum(w)[:-1]])
    return w / left


class TestTruncationLevel:
    def test_strict_inequality_example(self):
        v = np.append(sticks_for([0.7, 0.2, 0.05]), 0.5)
        rep = truncation_level(v, 0.1)
        assert rep.K == 3
        assert rep.residual_mass == pytest.approx(0.05)

    @pytest.mark.parametrize("eps", [1e-11, 1e-6, 0.5])
    def test_dominant_first_stick(self, eps):
        assert truncation_level([1 - 1e-12, 0.5], eps).K == 1

    def test_not_reached(self):
        assert truncation_level([0.5, 0.5], 0.1) is None

    @pytest.mark.parametrize("eps", [0.0, 1.0, -1e-3])
    def test_domain(self, eps):
        with pytest.raises(ValueError):
            truncation_level([0.5], eps)

    @given(arrays(float, 40, elements=st.floats(0.05, 0.95)), st.floats(1e-8, 0.5), st.floats(1e-8, 0.5))
    def test_monotone_in_eps(self, v, e1, e2):
        small, big = sorted((e1, e2))
        a, b = truncation_level(v, small), truncation_level(v, big)
        if a is not None:
            assert b is not None and b.K <= a.K

    @given(arrays(float, 60, elements=st.floats(0.05, 0.95)), st.floats(1e-8, 0.5))
    def test_report_invariants(self, v, eps):
        rep = truncation_level(v, eps)
        if rep is not None:
            assert rep.K >= 1 and rep.residual_mass < eps
            assert rep.residual_mass == pytest.approx(1 - stick_break(v[: rep.K]).sum(), abs=1e-12)
            if rep.K > 1:
                assert 1 - stick_break(v[: rep.K - 1]).sum() >= eps * (1 - 1e-9)

    def test_extend_keeps_prefix(self, rng):
        v, rep = extend_sticks([0.2, 0.3], 1.0, 1e-6, rng)
        np.testing.assert_array_equal(v[:2], [0.2, 0.3])
        assert rep.residual_mass < 1e-6 and rep.K <= v.shape[0]


class TestMixtureMean:
    def test_point_masses(self):
        locs = np.array([[0.0], [np.log(2.0)]])
        assert mixture_mean([0.5, 0.5], locs, np.zeros((2, 1, 1)))[0] == pytest.approx(1.5, rel=1e-15)

    def test_unit_mean_component(self):
        S = np.array([[0.4, 0.1], [0.1, 0.2]])
        np.testing.assert_allclose(mixture_mean([1.0], [-0.5 * np.diag(S)], [S]), 1.0, rtol=1e-15)

    def test_design_mixture(self, design):
        innov = design[1]
        mbar = mixture_mean(innov.weights, [c.location for c in innov.components], [c.scale for c in innov.components])
        np.testing.assert_allclose(mbar, 1.0, atol=1e-15)

    def test_truncation_argument(self):
        locs = np.array([[0.0], [5.0]])
        assert mixture_mean([0.5, 0.25], locs, np.zeros((2, 1, 1)), K=1)[0] == 0.5

    def test_overflow_names_component(self):
        scales = np.array([[[0.1]], [[5000.0]]])
        with pytest.raises(FloatingPointError, match="component 2"):
            mixture_mean([0.5, 0.5], np.zeros((2, 1)), scales)

    def test_large_terms_do_not_overflow_early(self):
        # each exp(709 + 0.5) overflows on its own; the weighted sum does not
        locs = np.full((2, 1), 709.0)
        out = mixture_mean([0.25, 0.25], locs, np.full((2, 1, 1), 1.0))
        assert np.isfinite(out[0])


class TestIdentify:
    def test_unit_mean_draw_is_unchanged(self):
        S = np.array([[0.3, 0.1], [0.1, 0.2]])
        eta = MeanParams([0.2, 0.3], [[0.5, 0.1], [0.0, 0.4]], [[0.2, 0.0], [0.1, 0.3]])
        raw = SimpleNamespace(eta=eta, mu1=np.array([1.0, 2.0]), sticks=np.array([1 - 1e-9]),
                              locations=(-0.5 * np.diag(S))[None], scales=S[None], alpha=1.0,
                              nw_hyper=NWHyper.default(2))
        out = identify(raw, 1e-6)
        # the single weight is 1 - 1e-9, so mbar is that constant in every coordinate
        np.testing.assert_allclose(out.mixture_mean, 1 - 1e-9, rtol=1e-15)
        np.testing.assert_allclose(out.eta.omega, (1 - 1e-9) * eta.omega, rtol=1e-14)
        np.testing.assert_allclose(out.eta.B, eta.B, rtol=1e-14)
        np.testing.assert_allclose(out.eta.A, (1 - 1e-9) * eta.A, rtol=1e-14)
        np.testing.assert_allclose(out.locations, raw.locations - np.log1p(-1e-9), atol=1e-15)
        np.testing.assert_allclose(out.mu1, (1 - 1e-9) * raw.mu1, rtol=1e-14)

    def test_scaling_of_ones_is_ones(self):
        np.testing.assert_array_equal(mean_scaling(np.ones(3)), np.ones(21))

    def test_single_component_recenters_exactly(self, rng):
        S = np.array([[0.5]])
        raw = SimpleNamespace(eta=MeanParams([0.1], [[0.6]], [[0.3]]), mu1=np.array([1.0]),
                              sticks=np.array([1 - 1e-9]), locations=np.array([[1.7]]), scales=S[None],
                              alpha=1.0, nw_hyper=NWHyper.default(1))
        out = identify(raw, 1e-6)
        assert out.innovation_mean()[0] == pytest.approx(1.0, rel=1e-14)
        assert out.locations[0, 0] == pytest.approx(-0.25 - np.log1p(-1e-9), abs=1e-14)

    def test_block_formulas(self):
        eta = MeanParams([1.0, 1.0], [[1.0, 2.0], [3.0, 4.0]], [[1.0, 2.0], [3.0, 4.0]])
        out = identify_eta(eta, [2.0, 0.5])
        np.testing.assert_allclose(out.omega, [2.0, 0.5])
        np.testing.assert_allclose(out.A, [[2.0, 4.0], [1.5, 2.0]])
        np.testing.assert_allclose(out.B, np.diag([2.0, 0.5]) @ eta.B @ np.diag([0.5, 2.0]))

    @given(st.integers(0, 2**32 - 1))
    def test_truncated_mean_bound(self, seed):
        rng = np.random.default_rng(seed)
        d = 2
        sticks, rep = extend_sticks(rng.beta(1, 1, 3), 1.0, 1e-6, rng)
        K = rep.K
        locs = rng.normal(0, 0.5, (2 * K, d))
        scales = np.broadcast_to(0.3 * np.eye(d), (2 * K, d, d)).copy()
        more = np.concatenate([sticks, rng.beta(1, 1, 2 * K)])[: 2 * K]
        raw = SimpleNamespace(eta=MeanParams(np.ones(d), np.zeros((d, d)), np.zeros((d, d))),
                              mu1=np.ones(d), sticks=more, locations=locs, scales=scales, alpha=1.0,
                              nw_hyper=NWHyper.default(d))
        out = identify(raw, 1e-6)
        assert out.truncation.K == K
        # oracle: direct sum with twice as many components
        w2 = stick_break(more)
        terms = np.exp(locs - np.log(out.mixture_mean) + 0.15)
        full = (w2[:, None] * terms).sum(axis=0)
        bound = out.truncation.residual_mass * np.max(terms)
        assert np.all(np.abs(out.innovation_mean() - 1) <= 1e-13)
        assert np.all(np.abs(full - 1) <= bound + 1e-13)

    @given(st.integers(0, 2**32 - 1))
    def test_idempotent(self, seed):
        raw, _ = random_triple(seed)
        once = identify(raw, 1e-6)
        again = identify(SimpleNamespace(eta=once.eta, mu1=once.mu1, sticks=raw.sticks, locations=once.locations,
                                         scales=once.scales, alpha=1.0, nw_hyper=raw.nw_hyper), 1e-6)
        np.testing.assert_allclose(again.eta.to_vector(), once.eta.to_vector(), rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(again.locations, once.locations, atol=1e-12)
        np.testing.assert_allclose(again.mixture_mean, 1.0, atol=1e-13)

    @given(st.integers(0, 2**32 - 1))
    def test_likelihood_invariant(self, seed):
        raw, x = random_triple(seed)
        out = identify(raw, 1e-6)
        K = out.truncation.K
        before = mixture_loglik(raw.eta, raw.mu1, stick_break(raw.sticks[:K]), raw.locations[:K], raw.scales[:K], x)
        after = mixture_loglik(out.eta, out.mu1, out.weights, out.locations, out.scales, x)
        assert after == pytest.approx(before, abs=1e-10)

    def test_short_snapshot_needs_rng(self, rng):
        raw = SimpleNamespace(eta=MeanParams([1.0], [[0.0]], [[0.0]]), mu1=np.ones(1), sticks=np.array([0.3]),
                              locations=np.zeros((1, 1)), scales=np.ones((1, 1, 1)), alpha=1.0,
                              nw_hyper=NWHyper.default(1))
        with pytest.raises(ValueError, match="rng"):
            identify(raw, 1e-6)
        out = identify(raw, 1e-6, rng=rng)
        assert out.truncation.K > 1
        assert out.locations.shape == (out.truncation.K, 1)
        np.testing.assert_allclose(out.innovation_mean(), 1.0, atol=1e-13)


class TestIdentifiedDraw:
    def base(self, **kw):
        args = dict(eta=MeanParams([1.0], [[0.0]], [[0.0]]), mu1=np.ones(1), weights=np.array([1.0]),
                    locations=np.zeros((1, 1)), scales=np.ones((1, 1, 1)), mixture_mean=np.ones(1),
                    truncation=TruncationReport(1, 0.0))
        args.update(kw)
        return IdentifiedDraw(**args)

    def test_valid(self):
        assert self.base().components[0].location.shape == (1,)

    @pytest.mark.parametrize("kw", [
        dict(weights=np.array([0.6, 0.6]), locations=np.zeros((2, 1)), scales=np.ones((2, 1, 1)),
             truncation=TruncationReport(2, 0.0)),
        dict(truncation=TruncationReport(2, 0.0)),
        dict(mixture_mean=np.array([-1.0])),
        dict(locations=np.zeros((2, 1))),
    ])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            self.base(**kw)

    def test_rejects_indefinite_scale(self):
        with pytest.raises(np.linalg.LinAlgError):
            self.base(scales=-np.ones((1, 1, 1)))
