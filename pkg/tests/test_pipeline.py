import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from repface import pipeline as pl
from repface.core_math import MarginParams, smoothing_coefficient
from repface.errors import ConfigError, InvariantViolation, NoHistoryError
from repface.evaluation import naive_loss_oracle

import oracle_values as ov

MARGIN = MarginParams()


class TestAsc:
    def test_two_terms(self):
        assert pl.asc_threshold([0.1, 0.3], 0.05).eta == pytest.approx(0.25)

    def test_single(self):
        assert pl.asc_threshold([0.37], 0.0).eta == 0.37

    def test_constant(self):
        assert pl.asc_threshold([0.12] * 32, 0.05).eta == pytest.approx(0.17)

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            pl.asc_threshold([], 0.05)

    @pytest.mark.parametrize("c,eta,out", [(0.24, 0.25, 0), (0.25, 0.25, 1), (0.9, 0.17, 1)])
    def test_indicator(self, c, eta, out):
        assert pl.noise_indicator(c, eta) == out

    @given(st.lists(st.floats(-1, 1), min_size=1, max_size=40), st.floats(0, 1))
    def test_eta_within_range_plus_alpha(self, aux, alpha):
        eta = pl.asc_threshold(aux, alpha).eta
        assert min(aux) + alpha - 1e-12 <= eta <= max(aux) + alpha + 1e-12


class TestSplit:
    def test_noise(self):
        r = pl.split_sample([0.3, 0.8, 0.1], 0, 0.2)
        assert r.category == pl.Category.NOISE
        assert r.d_i == pytest.approx(0.5)
        assert r.nearest_negative == 1

    def test_clean(self):
        r = pl.split_sample([0.8, 0.7], 0, 0.2)
        assert r.category == pl.Category.CLEAN
        assert r.d_i == pytest.approx(-0.1)

    def test_tau_boundary_is_ambiguous(self):
        # exactly representable so the boundary really is hit
        assert pl.split_sample([0.5, 0.75], 0, 0.25).category == pl.Category.AMBIGUOUS

    def test_zero_is_ambiguous(self):
        assert pl.split_sample([0.5, 0.5], 0, 0.2).category == pl.Category.AMBIGUOUS

    def test_tie_lowest_index(self):
        assert pl.split_sample([0.1, 0.6, 0.6, 0.6], 1, 0.2).nearest_negative == 2

    def test_tags(self):
        assert [c.tag for c in pl.Category] == ["Clean", "Ambiguous", "ClosedSetNoise"]

    @given(st.integers(0, 2**32 - 1), st.integers(2, 8), st.integers(1, 16))
    def test_batch_matches_rows(self, seed, C, B):
        r = np.random.default_rng(seed)
        cos = r.uniform(-1, 1, (B, C))
        labels = r.integers(0, C, B)
        d, near, cats = pl.split_batch(cos, labels, 0.2)
        for i in range(B):
            s = pl.split_sample(cos[i], labels[i], 0.2)
            assert (s.d_i, s.nearest_negative, s.category) == (d[i], near[i], cats[i])
            assert near[i] != labels[i]


class TestBank:
    def test_ema(self):
        b = pl.MemoryBank(0.9)
        b.update(0, 2, 0.4)
        b.update(0, 2, 0.6)
        assert b.entries[0][2] == pytest.approx(ov.EMA_0_4_0_6, abs=1e-15)

    def test_first_entry_stored_directly(self):
        b = pl.bank_update(pl.MemoryBank(), 7, 3, 0.7)
        assert b.entries == {7: {3: 0.7}}

    def test_soft_label(self):
        b = pl.MemoryBank()
        b.entries[0] = {2: 0.6, 5: 0.3}
        p = pl.bank_soft_label(b, 0, 8, 0)
        np.testing.assert_allclose(p[[2, 5]], [2 / 3, 1 / 3], atol=1e-15)
        assert p.sum() == pytest.approx(1.0, abs=1e-15)

    def test_single_entry_onehot(self):
        b = pl.MemoryBank()
        b.update(0, 4, 0.5)
        np.testing.assert_array_equal(b.soft_label(0, 8, 1), pl.onehot(4, 8))

    def test_negative_floored(self):
        b = pl.MemoryBank()
        b.entries[0] = {1: -0.2, 3: 0.4}
        p = b.soft_label(0, 5, 0)
        assert p[3] == 1.0 and p[1] == 0.0

    def test_all_negative_falls_back(self):
        b = pl.MemoryBank()
        b.update(0, 1, -0.3)
        np.testing.assert_array_equal(b.soft_label(0, 4, 2), pl.onehot(2, 4))

    def test_no_history(self):
        with pytest.raises(NoHistoryError):
            pl.MemoryBank().soft_label(0, 4, 0)

    def test_fixed_point_within_14_steps(self):
        b = pl.MemoryBank(0.9)
        b.update(0, 1, 0.0)
        for step in range(1, 15):
            b.update(0, 1, 0.8)
            if abs(b.entries[0][1] - 0.8) < 1e-6:
                break
        assert step <= 14

    @given(st.lists(st.tuples(st.integers(0, 5), st.floats(-1, 1)), min_size=1, max_size=30))
    def test_soft_label_is_distribution(self, updates):
        b = pl.MemoryBank()
        for j, c in updates:
            b.update(0, j, c)
        p = b.soft_label(0, 6, 0)
        assert np.all(p >= 0) and p.sum() == pytest.approx(1.0, abs=1e-9)


class TestLabels:
    def test_fuse(self):
        np.testing.assert_allclose(pl.fuse_label([0.7, 0.3, 0.0], 0, 0.9), [0.73, 0.27, 0.0], atol=1e-15)

    def test_fuse_fixed_point(self):
        np.testing.assert_allclose(pl.fuse_label(pl.onehot(2, 4), 2, 0.37), pl.onehot(2, 4))

    def test_fuse_beta_zero(self):
        np.testing.assert_array_equal(pl.fuse_label([0.5, 0.5], 1, 0.0), [0.0, 1.0])

    def test_correct(self):
        k = smoothing_coefficient(0.2)
        np.testing.assert_allclose(pl.smooth_correct_label(0, 3, k, 4),
                                   [1 - ov.K_AT_0_2, 0, 0, ov.K_AT_0_2], atol=1e-15)

    def test_correct_same_class(self):
        with pytest.raises(InvariantViolation):
            pl.smooth_correct_label(1, 1, 0.5, 3)

    @given(st.floats(0, 1), st.integers(2, 8), st.data())
    def test_normalised(self, k, C, data):
        yi = data.draw(st.integers(0, C - 1))
        yj = data.draw(st.integers(0, C - 1).filter(lambda j: j != yi))
        assert pl.smooth_correct_label(yi, yj, k, C).sum() == pytest.approx(1.0, abs=1e-9)
        p = data.draw(st.lists(st.floats(0, 1), min_size=C, max_size=C).filter(lambda v: sum(v) > 0))
        p = np.array(p) / sum(p)
        assert pl.fuse_label(p, yi, k).sum() == pytest.approx(1.0, abs=1e-9)


class TestAssemble:
    def test_filtered(self):
        loss, g = pl.assemble_loss([0.3, 0.8, 0.1], 0, pl.split_sample([0.3, 0.8, 0.1], 0), 0,
                                   pl.MemoryBank(), MARGIN, 0)
        assert loss == 0.0 and not g.any()

    def test_plain_softmax_limit(self):
        m = MarginParams(1.0, 0.0, 0.0)
        cos = [0.9, -0.9]
        loss, _ = pl.assemble_loss(cos, 0, pl.split_sample(cos, 0), 1, None, m)
        assert loss == pytest.approx(ov.PLAIN_CE_1_8, abs=1e-12)

    def test_empty_bank_ambiguous_equals_clean(self):
        cos = np.array([0.5, 0.6, 0.1])
        cat = pl.split_sample(cos, 0)
        assert cat.category == pl.Category.AMBIGUOUS
        clean = pl.SampleCategory(pl.Category.CLEAN, cat.d_i, cat.nearest_negative)
        a = pl.assemble_loss(cos, 0, cat, 1, pl.MemoryBank(), MARGIN, 3, update_bank=False)
        b = pl.assemble_loss(cos, 0, clean, 1, None, MARGIN)
        assert a[0] == b[0]
        np.testing.assert_array_equal(a[1], b[1])

    def test_ambiguous_updates_bank(self):
        bank = pl.MemoryBank()
        cos = np.array([0.5, 0.6, 0.1])
        pl.assemble_loss(cos, 0, pl.split_sample(cos, 0), 1, bank, MARGIN, 9)
        assert bank.entries == {9: {1: 0.6}}

    @given(st.integers(0, 2**32 - 1))
    def test_batch_matches_per_sample(self, seed):
        r = np.random.default_rng(seed)
        B, C = int(r.integers(1, 12)), int(r.integers(2, 8))
        cos = r.uniform(-0.95, 0.95, (B, C))
        labels = r.integers(0, C, B)
        ind = r.integers(0, 2, B)
        ids = r.permutation(50)[:B]
        bank_a, bank_b = pl.MemoryBank(), pl.MemoryBank()
        res = pl.batch_loss(cos, labels, ind, ids, bank_a, MARGIN, 0.2, 0.9)
        for i in range(B):
            loss, g = pl.assemble_loss(cos[i], int(labels[i]), pl.split_sample(cos[i], labels[i], 0.2),
                                       int(ind[i]), bank_b, MARGIN, int(ids[i]), 0.9)
            assert res.losses[i] == pytest.approx(loss, abs=1e-10)
            np.testing.assert_allclose(res.grad[i], g, atol=1e-9)
        assert bank_a == bank_b

    def test_batch_matches_oracle(self, rng):
        bank, entries = pl.MemoryBank(), {}
        for _ in range(50):
            B, C = int(rng.integers(1, 16)), 6
            cos = rng.uniform(-1, 1, (B, C))
            labels = rng.integers(0, C, B)
            aux = rng.uniform(-0.5, 0.5, 4)
            ind = pl.noise_indicator(cos[np.arange(B), labels], pl.asc_threshold(aux, 0.05).eta)
            ids = rng.choice(30, B, replace=False)
            res = pl.batch_loss(cos, labels, ind, ids, bank, MARGIN, 0.2, 0.9)
            ref = naive_loss_oracle(cos, labels, aux, ids, entries, s=64, m=0.5, t=0.2,
                                    tau=0.2, alpha=0.05, beta=0.9)
            np.testing.assert_allclose(res.losses, ref, rtol=0, atol=1e-9)

    def test_not_full_is_baseline(self, rng):
        cos = rng.uniform(-1, 1, (10, 5))
        labels = rng.integers(0, 5, 10)
        bank = pl.MemoryBank()
        res = pl.batch_loss(cos, labels, np.ones(10), np.arange(10), bank, MARGIN, full=False)
        assert len(bank) == 0
        np.testing.assert_array_equal(res.soft_labels, np.eye(5)[labels])
