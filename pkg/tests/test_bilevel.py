import numpy as np
import pytest

from bdpp import bilevel as bl
from bdpp.bilevel import EarlyStopState, ProxyConfig, SearchConfig
from bdpp.oracle import SyntheticTask, generate_benchmark
from bdpp.regularizers import AlphaRegularizer, LambdaSchedule, WeightRegularizer
from bdpp.searchspace import OPS, string_to_genotype


@pytest.fixture(scope="module")
def data():
    return SyntheticTask(n=120).generate()


@pytest.fixture(scope="module")
def bench():
    return generate_benchmark(0)


def short_config(**kw):
    args = dict(proxy=ProxyConfig(epochs=6, channels=4), seed=1)
    args.update(kw)
    return SearchConfig(**args)


class TestConfigs:
    @pytest.mark.parametrize("kwargs", [
        dict(data_fraction=0.0), dict(data_fraction=1.5), dict(channels=0), dict(layers=0), dict(epochs=0),
    ])
    def test_proxy_invalid(self, kwargs):
        with pytest.raises(ValueError):
            ProxyConfig(**kwargs)

    @pytest.mark.parametrize("kwargs", [
        dict(eta_alpha=0.0), dict(eta_w=-1.0), dict(split_fraction_w=0.0), dict(split_fraction_w=1.0),
        dict(early_stop="c4"), dict(batch_size=0), dict(plateau_window=0), dict(warmup_epochs=-1),
    ])
    def test_search_invalid(self, kwargs):
        with pytest.raises(ValueError):
            SearchConfig(**kwargs)

    def test_env_seed_overrides(self, monkeypatch):
        monkeypatch.setenv(bl.SEED_ENV, "17")
        assert bl.effective_seed(SearchConfig(seed=3)) == 17
        monkeypatch.setenv(bl.SEED_ENV, "")
        assert bl.effective_seed(SearchConfig(seed=3)) == 3


class TestPartition:
    def test_disjoint_and_sized(self):
        w, a = bl.partition_data(100, 0.5, 0.6, seed=0)
        assert len(w) == 30 and len(a) == 20
        assert not set(w) & set(a)
        assert list(w) == sorted(w)

    def test_seeded(self):
        first = bl.partition_data(100, 0.3, 0.5, seed=4)
        second = bl.partition_data(100, 0.3, 0.5, seed=4)
        assert all(np.array_equal(x, y) for x, y in zip(first, second))

    def test_subsets_nest_across_fractions(self):
        # the same permutation is truncated, so a smaller fraction keeps a subset
        small = np.concatenate(bl.partition_data(200, 0.25, 0.5, seed=2))
        big = np.concatenate(bl.partition_data(200, 1.0, 0.5, seed=2))
        assert set(small) <= set(big)

    def test_empty_partition_advises_minimum(self):
        with pytest.raises(bl.EmptyPartitionError, match=r"data_fraction >= 0\.02"):
            bl.partition_data(100, 0.01, 0.5, seed=0)


class TestEarlyStop:
    def test_criteria_for(self):
        assert bl.criteria_for(0, 6) == set()
        assert bl.criteria_for(1, 6) == {"c1"}
        assert bl.criteria_for(3, 6) == {"c1", "c2"}
        assert bl.criteria_for(6, 6) == {"c1", "c2", "c3"}

    def test_scripted_sequence(self):
        assert bl.criteria_epochs([0, 0, 1, 2, 3, 4, 6], 6) == {"c1": 2, "c2": 4, "c3": 6}

    def test_scripted_sequence_must_not_decrease(self):
        with pytest.raises(ValueError):
            bl.criteria_epochs([0, 2, 1], 6)

    def test_plateau_marks_edges(self):
        state = EarlyStopState(num_edges=2, window=2, tol=0.01)
        fired = []
        # edge 0 keeps growing; edge 1 stops growing after epoch 1
        for epoch, stds in enumerate([[0.0, 0.0], [0.1, 0.5], [0.2, 0.5], [0.3, 0.505]]):
            _, new = bl.update_early_stop(state, stds, epoch)
            fired.append(new)
        assert state.determined == [False, True]
        assert fired[3] == {"c1", "c2"}
        assert state.fired == {"c1": 3, "c2": 3}

    def test_determined_edges_stay_determined(self):
        state = EarlyStopState(num_edges=1, window=1, tol=0.01)
        for stds in ([0.0], [0.0], [1.0]):
            bl.update_early_stop(state, stds, 0)
        assert state.determined == [True]

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            bl.update_early_stop(EarlyStopState(num_edges=2), [0.0, np.nan], 0)

    def test_rejects_wrong_length(self):
        with pytest.raises(ValueError):
            bl.update_early_stop(EarlyStopState(num_edges=2), [0.0], 0)


class TestAlphaStatistics:
    def test_example(self):
        mean, median, std = bl.alpha_statistics(np.array([[1.0, 2, 3, 4, 5]]))
        assert mean[0] == 3 and median[0] == 3 and std[0] == pytest.approx(np.sqrt(2))


class TestSearch:
    def test_records_every_epoch(self, data, bench):
        res = bl.search(short_config(), data, bench)
        assert [r.epoch for r in res.records] == list(range(1, 7))
        last = res.records[-1]
        assert last.genotype == bl.genotype_to_string(res.genotype)
        assert last.oracle_score == bench.evaluate(last.genotype)
        assert len(last.alpha_std) == 6
        assert string_to_genotype(last.genotype) == res.genotype

    def test_deterministic(self, data):
        cfg = short_config(alpha_reg=AlphaRegularizer("beta_decay", LambdaSchedule("linear_increase", 0, 2, 6)),
                           weight_reg=WeightRegularizer("flooding", 0.5))
        a, b = bl.search(cfg, data), bl.search(cfg, data)
        assert a.arch.alpha.tobytes() == b.arch.alpha.tobytes()
        assert [r.l_train for r in a.records] == [r.l_train for r in b.records]

    def test_env_seed_changes_run(self, data, monkeypatch):
        base = bl.search(short_config(), data).arch.alpha
        monkeypatch.setenv(bl.SEED_ENV, "99")
        assert bl.search(short_config(), data).arch.alpha.tobytes() != base.tobytes()

    def test_plain_darts_alpha_step_is_pure_gradient(self, data):
        # with every extension off, one epoch moves alpha by -eta * grad of L_val only
        from bdpp import diffcore as dc
        from bdpp.searchspace import ArchParams, Supernet, supernet_forward

        cfg = short_config(proxy=ProxyConfig(epochs=1, channels=4), eta_alpha=0.5)
        x, y = data
        net = Supernet.init(4, 1, x.shape[1], 3, seed=[1, 3])
        _, a_idx = bl.partition_data(len(x), 1.0, 0.5, 1)
        g = dc.Graph()
        alpha = g.leaf(np.zeros((6, len(OPS))), kind="alpha")
        loss = dc.cross_entropy(supernet_forward(net, alpha, net.params, x[a_idx]), y[a_idx])
        expected = -0.5 * dc.backward(g, loss)[alpha]
        res = bl.search(cfg, data, net=net, arch=ArchParams.zeros())
        np.testing.assert_allclose(res.arch.alpha, expected, atol=1e-12)

    def test_batch_size_chunks_give_same_full_loss(self, data):
        full = bl.search(short_config(proxy=ProxyConfig(epochs=2, channels=4)), data)
        chunked = bl.search(short_config(proxy=ProxyConfig(epochs=2, channels=4), batch_size=7), data)
        np.testing.assert_allclose(chunked.records[0].l_val, full.records[0].l_val, rtol=1e-12)

    def test_early_stop_stops(self, data):
        cfg = short_config(proxy=ProxyConfig(epochs=60, channels=4), early_stop="c1", plateau_window=2,
                           plateau_tol=10.0)
        res = bl.search(cfg, data)
        assert res.stopped_by == "c1"
        assert len(res.records) == res.fired["c1"] < 60

    def test_flooding_direction_logged(self, data):
        cfg = short_config(proxy=ProxyConfig(epochs=40, channels=4), eta_w=0.5,
                           weight_reg=WeightRegularizer("flooding", 0.6))
        res = bl.search(cfg, data)
        assert len(res.w_directions) == 40
        assert res.flood_level == 0.6
        for rec, d in zip(res.records, res.w_directions):
            assert d == ("ascent" if rec.l_train < 0.6 else "descent")
        assert "ascent" in res.w_directions

    def test_warmup_freezes_alpha(self, data):
        cfg = short_config(warmup_epochs=4)
        res = bl.search(cfg, data)
        assert all(max(r.alpha_std) == 0.0 for r in res.records[:4])
        assert max(res.records[4].alpha_std) > 0.0

    def test_random_smoothing_runs(self, data):
        res = bl.search(short_config(weight_reg=WeightRegularizer("random_smoothing", 0.1)), data)
        assert np.all(np.isfinite(res.arch.alpha))

    @pytest.mark.parametrize("variant", ["l2_adam_emulated", "weight_decay", "beta_global", "beta_zero"])
    def test_other_alpha_regularizers_run(self, data, variant):
        cfg = short_config(alpha_reg=AlphaRegularizer(variant, LambdaSchedule("constant", 0.5, 0.5, 6)))
        assert np.all(np.isfinite(bl.search(cfg, data).arch.alpha))

    def test_small_fraction_error(self, data):
        with pytest.raises(bl.EmptyPartitionError):
            bl.search(short_config(proxy=ProxyConfig(data_fraction=0.005, channels=4, epochs=1)), data)
