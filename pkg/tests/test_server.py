import math
import statistics

import numpy as np
import pytest

from fedfg import server as sv
from fedfg.client import Upload
from fedfg.errors import EmptyBenignSetError, InvalidInputError
from fedfg.flowgen import VectorFieldSpec, init_generator
from fedfg.nn import MlpSpec, init_params
from fedfg.params import ParamVector

K = 3
CLS = MlpSpec((2, K), prefix="C")
GEN = VectorFieldSpec(feature_dim=2, num_classes=K, embed_dim=2, hidden=(4,))


def classifier(W, b):
    return ParamVector.from_arrays({"C.W0": np.asarray(W, float), "C.b0": np.asarray(b, float)})


def bias_only(logits):
    """A classifier that ignores its input and always emits ``logits``."""
    return classifier(np.zeros((2, K)), logits)


def upload(cid, theta_C, theta_FG=None):
    return Upload(cid, ParamVector.zeros(GEN.layout()) if theta_FG is None else theta_FG, theta_C)


def probes(n=30, seed=0):
    rng = np.random.default_rng(seed)
    return sv.ProbeBatch(rng.standard_normal((n, 2)), rng.integers(0, K, n))


class TestPreliminary:
    def test_single_upload(self):
        u = upload(0, bias_only([1.0, 2.0, 3.0]))
        fg, c = sv.preliminary_aggregate([u], [1.0])
        assert c.equals(u.theta_C) and fg.equals(u.theta_FG)

    def test_identical_uploads(self):
        u = upload(0, bias_only([0.3, -1.0, 7.0]))
        _, c = sv.preliminary_aggregate([u, u], [0.7, 0.3])
        np.testing.assert_allclose(c.values, u.theta_C.values, rtol=1e-15)

    def test_hand_computed(self):
        a = Upload(0, ParamVector.from_arrays({"f": [2.0]}), ParamVector.from_arrays({"c": [2.0]}))
        b = Upload(1, ParamVector.from_arrays({"f": [4.0]}), ParamVector.from_arrays({"c": [4.0]}))
        _, c = sv.preliminary_aggregate([a, b], [0.25, 0.75])
        assert c.values.tolist() == [3.5]

    def test_weights_must_sum_to_one(self):
        u = upload(0, bias_only([0, 0, 0]))
        with pytest.raises(InvalidInputError):
            sv.preliminary_aggregate([u, u], [0.5, 0.6])


class TestProbes:
    def test_same_seed_same_batch(self):
        g = init_generator(GEN, 0)
        a = sv.gen_probes(g, GEN, 50, np.random.default_rng(3))
        b = sv.gen_probes(g, GEN, 50, np.random.default_rng(3))
        assert a.features.tobytes() == b.features.tobytes() and np.array_equal(a.labels, b.labels)

    def test_class_frequencies(self):
        spec = VectorFieldSpec(2, 10, embed_dim=2, hidden=(4,))
        batch = sv.gen_probes(ParamVector.zeros(spec.layout()), spec, 10_000,
                              np.random.default_rng(0), sv.SamplerConfig(1))
        freq = np.bincount(batch.labels, minlength=10) / 10_000
        assert np.all((freq >= 0.08) & (freq <= 0.12))

    def test_zero_field_returns_noise(self):
        rng = np.random.default_rng(8)
        batch = sv.gen_probes(ParamVector.zeros(GEN.layout()), GEN, 20, rng)
        rng = np.random.default_rng(8)
        rng.integers(0, K, size=20)
        np.testing.assert_array_equal(batch.features, rng.standard_normal((20, 2)))


class TestAccuracy:
    def test_oracle_classifier_scores_one(self):
        # a classifier that always says 2 is an oracle for probes all labelled 2
        p = probes()
        const = sv.ProbeBatch(p.features, np.full(p.size, 2))
        s, _ = sv.accuracy_scores([upload(0, bias_only([0, 0, 5.0]))], CLS, const)
        assert s.tolist() == [1.0]

    def test_relative_scores(self):
        const = sv.ProbeBatch(np.zeros((10, 2)), np.r_[np.zeros(9, int), 1])
        ups = [upload(0, bias_only([5, 0, 0])), upload(1, bias_only([5, 0, 0])),
               upload(2, bias_only([0, 0, 5]))]
        s, alpha = sv.accuracy_scores(ups, CLS, const)
        np.testing.assert_allclose(s, [0.9, 0.9, 0.0])
        np.testing.assert_allclose(alpha, [0.5, 0.5, 0.0], atol=1e-11)

    def test_all_zero_scores_give_zero_alpha(self):
        const = sv.ProbeBatch(np.zeros((4, 2)), np.zeros(4, int))
        s, alpha = sv.accuracy_scores([upload(0, bias_only([0, 5, 0]))] * 2, CLS, const)
        assert np.all(alpha == 0) and np.all(np.isfinite(alpha))

    def test_non_finite_logits_are_wrong(self):
        const = sv.ProbeBatch(np.zeros((4, 2)), np.zeros(4, int))
        s, _ = sv.accuracy_scores([upload(0, bias_only([np.nan, 0, 0]))], CLS, const)
        assert s.tolist() == [0.0]


class TestPredictiveDist:
    def test_zero_logits_uniform(self):
        p = sv.predictive_dist(CLS, bias_only([0, 0, 0]), np.zeros((1, 2)))
        np.testing.assert_allclose(p, 1 / 3, rtol=1e-15)

    def test_closed_form(self):
        spec = MlpSpec((2, 2), prefix="C")
        theta = ParamVector.from_arrays({"C.W0": np.zeros((2, 2)), "C.b0": [0.0, math.log(3)]})
        np.testing.assert_allclose(sv.predictive_dist(spec, theta, np.zeros(2)), [0.25, 0.75],
                                   rtol=1e-14)

    def test_shift_invariance(self, rng):
        logits = rng.standard_normal(K)
        a = sv.predictive_dist(CLS, bias_only(logits), np.zeros((1, 2)))
        b = sv.predictive_dist(CLS, bias_only(logits + 17.0), np.zeros((1, 2)))
        np.testing.assert_allclose(a, b, rtol=1e-13)


def hellinger_oracle(p, q):
    return math.sqrt(sum((math.sqrt(a) - math.sqrt(b)) ** 2 for a, b in zip(p, q))) / math.sqrt(2)


class TestHellinger:
    def test_fixtures(self):
        assert sv.hellinger([0.2, 0.8], [0.2, 0.8]) == 0.0
        assert sv.hellinger([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0, abs=1e-15)
        assert sv.hellinger([0.5, 0.5], [1.0, 0.0]) == pytest.approx(
            math.sqrt(1 - math.sqrt(0.5)), abs=1e-12)
        assert math.sqrt(1 - math.sqrt(0.5)) == pytest.approx(0.5412, abs=1e-4)

    def test_metric_properties(self, rng):
        P = rng.dirichlet(np.ones(5), size=(10_000, 3))
        d_pq = sv.hellinger(P[:, 0], P[:, 1])
        d_qp = sv.hellinger(P[:, 1], P[:, 0])
        assert np.array_equal(d_pq, d_qp)
        d_pr = sv.hellinger(P[:, 0], P[:, 2])
        d_rq = sv.hellinger(P[:, 2], P[:, 1])
        assert np.all(d_pq <= d_pr + d_rq + 1e-15)
        assert np.all((d_pq >= 0) & (d_pq <= 1 + 1e-15))

    def test_negative_entries_rejected(self):
        with pytest.raises(InvalidInputError):
            sv.hellinger([-0.1, 1.1], [0.5, 0.5])


class TestOutlierScores:
    def test_identical_classifiers(self):
        u = upload(0, bias_only([1.0, 2.0, 0.0]))
        assert np.all(sv.outlier_scores([u, u, u], CLS, probes()) == 0)

    def test_disjoint_support_fixture(self):
        a = bias_only([800.0, 0.0, 0.0])
        b = bias_only([0.0, 800.0, 0.0])
        o = sv.outlier_scores([upload(0, a), upload(1, a), upload(2, b)], CLS, probes())
        np.testing.assert_allclose(o, [0.5, 0.5, 1.0], atol=1e-12)

    def test_permutation_equivariance(self, rng):
        ups = [upload(i, init_params(CLS, rng)) for i in range(5)]
        p = probes()
        o = sv.outlier_scores(ups, CLS, p)
        perm = rng.permutation(5)
        o_perm = sv.outlier_scores([ups[i] for i in perm], CLS, p)
        assert o_perm.tobytes() == o[perm].tobytes()


class TestHampel:
    def test_worked_fixture(self):
        o = [0.1, 0.11, 0.12, 0.9]
        m, mad, tau = sv.hampel_threshold(o, 3.0, 1e-12)
        assert m == pytest.approx(0.115, abs=1e-15)
        assert mad == pytest.approx(0.01, abs=1e-12)
        assert tau == pytest.approx(0.115 + 3 * 1.4826 * 0.01, abs=1e-11)
        assert tau == pytest.approx(0.1595, abs=1e-4)
        assert [x > tau for x in o] == [False, False, False, True]

    def test_constant_scores(self):
        m, mad, tau = sv.hampel_threshold([0.4] * 6, 3.0, 1e-12)
        assert tau == pytest.approx(0.4 + 3 * 1.4826 * 1e-12, abs=1e-18)
        assert sv.detect([0.4] * 6, [0.2] * 6, tau, 0.05) == tuple(range(6))

    def test_matches_oracle(self, rng):
        for _ in range(1000):
            o = rng.uniform(0, 1, int(rng.integers(1, 15)))
            m = statistics.median(o.tolist())
            mad = statistics.median([abs(x - m) for x in o.tolist()]) + 1e-12
            assert sv.hampel_threshold(o, 3.0, 1e-12) == (m, mad, m + 3.0 * 1.4826 * mad)

    def test_gaussian_consistency(self):
        draws = np.random.default_rng(0).standard_normal(100_000)
        m, mad, _ = sv.hampel_threshold(draws, 3.0, 0.0)
        assert 0.98 <= 1.4826 * mad <= 1.02


class TestDetect:
    def test_all_identical_and_accurate(self):
        assert sv.detect([0.0] * 4, [0.25] * 4, 1e-11, 0.125) == (0, 1, 2, 3)

    def test_worked_fixture_excludes_only_outlier(self):
        o = [0.1, 0.11, 0.12, 0.9]
        _, _, tau = sv.hampel_threshold(o)
        assert sv.detect(o, [0.25] * 4, tau, 0.125) == (0, 1, 2)

    def test_accuracy_filter(self):
        alpha = [0.0, 1 / 3, 1 / 3, 1 / 3]
        assert sv.detect([0.1, 0.2, 0.2, 0.2], alpha, 0.5, 0.05) == (1, 2, 3)

    def test_ties_are_filtered(self):
        assert sv.detect([0.5, 0.1], [0.5, 0.5], 0.5, 0.1) == (1,)
        assert sv.detect([0.1, 0.1], [0.1, 0.9], 0.5, 0.1) == (1,)


class TestRobustAggregate:
    def test_single_member(self, rng):
        ups = [upload(i, init_params(CLS, rng)) for i in range(3)]
        _, c, alpha_bar = sv.robust_aggregate(ups, (1,), [0.2, 0.5, 0.3])
        np.testing.assert_allclose(c.values, ups[1].theta_C.values, rtol=1e-11)
        assert alpha_bar[0] == 0 and alpha_bar[2] == 0

    def test_renormalization(self, rng):
        ups = [upload(i, init_params(CLS, rng)) for i in range(3)]
        _, _, alpha_bar = sv.robust_aggregate(ups, (0, 1), [0.3, 0.1, 0.6])
        np.testing.assert_allclose(alpha_bar, [0.75, 0.25, 0.0], atol=1e-11)

    def test_excluded_upload_is_ignored(self, rng):
        ups = [upload(i, init_params(CLS, rng)) for i in range(3)]
        a = sv.robust_aggregate(ups, (0, 2), [0.3, 0.1, 0.6])
        ups[1] = upload(1, ups[1].theta_C * 1e9)
        b = sv.robust_aggregate(ups, (0, 2), [0.3, 0.1, 0.6])
        assert a[1].equals(b[1]) and a[0].equals(b[0])

    def test_empty_set(self):
        with pytest.raises(EmptyBenignSetError):
            sv.robust_aggregate([upload(0, bias_only([0, 0, 0]))], (), [1.0])


class TestCarryWeights:
    def test_examples(self):
        np.testing.assert_allclose(sv.carry_weights([0.25] * 4), [0.25] * 4)
        np.testing.assert_allclose(sv.carry_weights([0.5, 0.3, 0.2]), [0.5, 0.3, 0.2])
        np.testing.assert_allclose(sv.carry_weights([0.4, 0.4, 0.0]), [0.5, 0.5, 0.0])

    def test_all_zero_falls_back_to_uniform(self):
        np.testing.assert_array_equal(sv.carry_weights([0.0, 0.0]), [0.5, 0.5])


def random_round(n, seed):
    rng = np.random.default_rng(seed)
    ups = [upload(i, init_params(CLS, rng), init_generator(GEN, rng)) for i in range(n)]
    w = rng.uniform(0.5, 1.5, n)
    state = sv.GlobalState(ups[0].theta_FG, ups[0].theta_C, w / w.sum())
    return ups, state


class TestServerRound:
    def test_permutation_equivariance(self):
        ups, state = random_round(6, 1)
        cfg = sv.ServerConfig(probe_count=64)
        new, board = sv.server_round(state, ups, CLS, GEN, cfg, np.random.default_rng(5))
        perm = np.array([3, 0, 5, 1, 4, 2])
        state_p = sv.GlobalState(state.theta_FG, state.theta_C, state.w[perm])
        new_p, board_p = sv.server_round(state_p, [ups[i] for i in perm], CLS, GEN, cfg,
                                         np.random.default_rng(5))
        for name in ("s", "alpha", "o", "alpha_bar"):
            np.testing.assert_array_equal(getattr(board_p, name), getattr(board, name)[perm])
        assert sorted(perm[list(board_p.benign)]) == list(board.benign)
        assert new_p.theta_C.equals(new.theta_C) and new_p.theta_FG.equals(new.theta_FG)

    def test_weight_simplex(self):
        for seed in range(5):
            ups, state = random_round(5, seed)
            new, board = sv.server_round(state, ups, CLS, GEN, sv.ServerConfig(probe_count=64),
                                         np.random.default_rng(seed))
            if board.benign:
                assert np.all(board.alpha_bar >= 0)
                assert abs(board.alpha_bar.sum() - 1) <= 1e-6
            assert abs(new.w.sum() - 1) <= 1e-9

    def test_empty_benign_set_keeps_globals(self):
        ups, state = random_round(4, 2)
        # kappa above any possible alpha filters every client
        new, board = sv.server_round(state, ups, CLS, GEN, sv.ServerConfig(kappa=1.0, probe_count=16),
                                     np.random.default_rng(0))
        assert board.degenerate and board.benign == ()
        assert new.theta_C is state.theta_C
        np.testing.assert_array_equal(new.w, [0.25] * 4)
