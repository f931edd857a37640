import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedcf.mechanism import MechanismParams, PerturbedReport
from fedcf.mf import HyperParams
from fedcf.proxy import AnonymousReportBatch
from fedcf.server import (
    AggregationError,
    DivergenceError,
    ServerState,
    aggregate,
    apply_update,
    comm_cost,
    count_reports,
    init_item_matrix,
    load_checkpoint,
    save_checkpoint,
)


def batch(pairs, epoch=0):
    return AnonymousReportBatch.from_reports(epoch, [PerturbedReport(c, s) for c, s in pairs])


def reference_aggregate(pairs, n_clients, mech):
    """Decode each report into a dense matrix and average, in plain Python."""
    total = np.zeros((mech.n_items, mech.n_factors))
    for cell, sign in pairs:
        i, f = divmod(cell, mech.n_factors)
        total[i, f] += mech.scale if sign else -mech.scale
    return total / (n_clients * mech.k)


class TestAggregate:
    def test_hand_example(self):
        # B = 20 at eps = ln 3 with M*F = 10; two clients, two reports each
        mech = MechanismParams(math.log(3), 5, 2, k=2)
        pairs = [(3, True), (3, True), (3, False), (8, True)]
        out = aggregate(batch(pairs), 2, mech)
        assert out[1, 1] == pytest.approx(20 * (2 - 1) / 4)
        assert out[4, 0] == pytest.approx(20 / 4)
        assert np.count_nonzero(out) == 2

    def test_unanimous(self):
        mech = MechanismParams(1.0, 3, 2, k=1)
        out = aggregate(batch([(4, True)] * 6), 6, mech)
        assert out[2, 0] == pytest.approx(mech.scale)

    def test_cancellation(self):
        mech = MechanismParams(1.0, 3, 2, k=1)
        out = aggregate(batch([(1, True), (1, False)]), 2, mech)
        np.testing.assert_array_equal(out, 0)

    def test_length_mismatch(self):
        mech = MechanismParams(1.0, 3, 2, k=3)
        with pytest.raises(AggregationError):
            aggregate(batch([(0, True)] * 5), 2, mech)

    def test_cell_out_of_range(self):
        mech = MechanismParams(1.0, 3, 2, k=1)
        with pytest.raises(AggregationError):
            aggregate(batch([(6, True)]), 1, mech)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 11), st.booleans()), min_size=6, max_size=6), st.integers(0, 2**32 - 1))
    def test_matches_reference_and_order_invariant(self, pairs, seed):
        mech = MechanismParams(0.8, 4, 3, k=2)
        b = batch(pairs)
        out = aggregate(b, 3, mech)
        np.testing.assert_allclose(out, reference_aggregate(pairs, 3, mech), rtol=1e-12, atol=1e-12)
        shuffled = b.permuted(np.random.default_rng(seed).permutation(len(b)))
        np.testing.assert_array_equal(aggregate(shuffled, 3, mech), out)

    def test_counts(self):
        c = count_reports(batch([(0, True), (0, False), (2, True)]), 4)
        assert c.pos.tolist() == [1, 0, 1, 0] and c.neg.tolist() == [1, 0, 0, 0]
        assert c.total == 3


class TestApplyUpdate:
    def test_hand_steps(self):
        hp = HyperParams(n_factors=1, learning_rate=0.1, reg=0.0, inner_steps=1)
        V = apply_update(np.array([[1.0]]), np.array([[1.0]]), hp)
        assert V[0, 0] == pytest.approx(0.9)
        hp2 = hp.replace(inner_steps=2)
        assert apply_update(np.array([[1.0]]), np.array([[1.0]]), hp2)[0, 0] == pytest.approx(0.8)

    def test_pure_decay(self):
        hp = HyperParams(learning_rate=0.01, reg=0.5, inner_steps=20)
        V0 = np.random.default_rng(0).standard_normal((4, 5))
        V = apply_update(V0, np.zeros_like(V0), hp)
        np.testing.assert_allclose(V, V0 * (1 - 2 * 0.01 * 0.5) ** 20, rtol=1e-12)

    def test_zero_grad_zero_reg_is_identity(self):
        hp = HyperParams(reg=0.0)
        V0 = np.random.default_rng(1).standard_normal((3, 5))
        np.testing.assert_array_equal(apply_update(V0, np.zeros_like(V0), hp), V0)

    def test_does_not_mutate(self):
        V0 = np.ones((2, 5))
        apply_update(V0, np.ones((2, 5)), HyperParams())
        np.testing.assert_array_equal(V0, 1)

    def test_divergence(self):
        hp = HyperParams(learning_rate=1.0)
        with pytest.raises(DivergenceError) as exc:
            apply_update(np.zeros((2, 5)), np.full((2, 5), np.inf), hp, epoch=3)
        assert exc.value.epoch == 3

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            apply_update(np.zeros((2, 5)), np.zeros((3, 5)), HyperParams())


class TestState:
    def test_init_range_and_determinism(self):
        V = init_item_matrix(100, 5, 3)
        assert V.shape == (100, 5) and np.abs(V).max() <= 0.01
        np.testing.assert_array_equal(V, init_item_matrix(100, 5, 3))

    def test_json_has_no_user_embeddings(self):
        state = ServerState.initial(6, HyperParams(), seed=1)
        d = json.loads(state.to_json())
        assert set(d) == {"epoch", "rng_seed", "hp", "mech", "item_matrix", "metric_trace"}
        assert np.array(d["item_matrix"]).shape == (6, 5)

    def test_checkpoint_round_trip(self, tmp_path):
        V = np.random.default_rng(2).standard_normal((7, 3))
        path = tmp_path / "v.fmf"
        save_checkpoint(V, path)
        raw = path.read_bytes()
        assert raw[:4] == b"FMF1" and len(raw) == 12 + 7 * 3 * 8
        np.testing.assert_array_equal(load_checkpoint(path), V)

    def test_checkpoint_bad_magic(self, tmp_path):
        path = tmp_path / "bad"
        path.write_bytes(b"XXXX" + bytes(8))
        with pytest.raises(ValueError):
            load_checkpoint(path)


class TestCommCost:
    def test_movielens_scale(self):
        c = comm_cost(HyperParams(), 9781)
        assert c.download_per_epoch == 195_620
        assert c.download_total == 3_912_400
        assert c.upload_per_epoch == 400
        assert c.upload_total == 8000
        assert c.upload_wire_per_epoch == 500
        assert c.upload_bits_per_epoch == 3300

    @given(st.integers(1, 10**5), st.integers(1, 500))
    def test_linear(self, m, k):
        c = comm_cost(HyperParams(updates_per_epoch=k), m)
        assert c.download_per_epoch == 20 * m
        assert c.upload_per_epoch == 4 * k
