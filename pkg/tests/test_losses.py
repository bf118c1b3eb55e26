import math

import numpy as np
import pytest

from rgtrec import losses as L
from rgtrec import tensor as T
from rgtrec.data import build_graph_from_edges
from rgtrec.seeding import substream
from oracles import check_gradients


def softplus(x):
    return math.log1p(math.exp(-abs(x))) + max(x, 0.0)


def complete_minus_one(num_users=3, num_items=4):
    """Each user connects to every item except the aligned one, so the unique
    legal negative for user u is item node num_users + u."""
    edges = [(u, num_users + i)
             for u in range(num_users) for i in range(num_items) if i != u]
    return build_graph_from_edges(num_users, num_items, np.array(edges))


class TestLossMae:
    def test_uniform_zero_scores(self):
        g = complete_minus_one()
        s = T.Tensor(np.zeros((g.num_nodes, 3)))
        masked_out = g.edge_list[:4]
        out = L.loss_mae(s, masked_out, g, substream(0, "mae"))
        assert float(out.values) == pytest.approx(2 * math.log(2), abs=1e-9)

    def test_saturated_limit_goes_to_zero(self):
        g = complete_minus_one(num_users=2, num_items=3)
        # give every node the same huge vector except forced negatives, which
        # get the opposite sign: positive pairs score >> 0, negatives << 0
        s = np.full((g.num_nodes, 2), 10.0)
        s[2 + 0] = [-10.0, 0.0]  # item 0 is the forced negative of user 0
        masked_out = np.array([[0, 3], [0, 4]])  # two of user 0's train edges
        out = L.loss_mae(T.Tensor(s), masked_out, g, substream(1, "mae"))
        assert float(out.values) < 1e-6

    def test_matches_direct_evaluation(self):
        g = complete_minus_one(num_users=4, num_items=4)
        rng = np.random.default_rng(2)
        s = rng.normal(size=(g.num_nodes, 3))
        masked_out = g.edge_list[:4]
        out = L.loss_mae(T.Tensor(s), masked_out, g, substream(2, "mae"))

        expect = 0.0
        for u, i in masked_out:
            forced_neg = 4 + (u if u < 4 else 0)  # aligned item node
            expect += softplus(-float(s[u] @ s[i])) + softplus(float(s[u] @ s[forced_neg]))
        expect /= len(masked_out)
        assert float(out.values) == pytest.approx(expect, abs=1e-9)

    def test_empty_masked_set_returns_zero_with_warning(self, caplog):
        g = complete_minus_one()
        s = T.Tensor(np.zeros((g.num_nodes, 2)))
        with caplog.at_level("WARNING"):
            out = L.loss_mae(s, np.empty((0, 2), dtype=np.int64), g, substream(0, "mae"))
        assert float(out.values) == 0.0
        assert "empty" in caplog.text

    def test_literal_form(self):
        g = complete_minus_one()
        rng = np.random.default_rng(3)
        s = rng.normal(size=(g.num_nodes, 3))
        masked_out = g.edge_list[:3]
        out = L.loss_mae(T.Tensor(s), masked_out, g, substream(3, "mae"), literal=True)
        expect = -np.mean([s[u] @ s[i] for u, i in masked_out])
        assert float(out.values) == pytest.approx(expect, abs=1e-9)

    def test_gradients(self):
        g = complete_minus_one()
        rng = np.random.default_rng(4)
        s = T.parameter(rng.normal(size=(g.num_nodes, 3)), name="s")
        masked_out = g.edge_list[:4]

        def build():
            return L.loss_mae(s, masked_out, g, substream(4, "mae"))

        check_gradients(build, {"s": s})


class TestLossCir:
    def test_all_parallel(self):
        v = np.tile([1.0, 2.0], (4, 1))
        out = L.loss_cir(T.Tensor(v), T.Tensor(v * 3), temperature=0.5)
        assert float(out.values) == pytest.approx(2 + math.log(4), abs=1e-6)

    def test_orthogonal(self):
        a = np.zeros((6, 2))
        b = np.zeros((6, 2))
        a[:, 0] = 1.0
        b[:, 1] = 1.0
        out = L.loss_cir(T.Tensor(a), T.Tensor(b), temperature=1.0)
        assert float(out.values) == pytest.approx(math.log(6), abs=1e-6)

    def test_matches_direct_evaluation(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(6, 4))
        b = rng.normal(size=(6, 4))
        tau = 0.7
        out = L.loss_cir(T.Tensor(a), T.Tensor(b), temperature=tau)
        cos = np.array([a[i] @ b[i] / (np.linalg.norm(a[i]) * np.linalg.norm(b[i]))
                        for i in range(6)])
        assert float(out.values) == pytest.approx(np.log(np.exp(cos / tau).sum()), abs=1e-6)

    def test_bounds(self):
        rng = np.random.default_rng(6)
        for tau in (0.5, 1.0, 2.0):
            a = rng.normal(size=(40, 5))
            b = rng.normal(size=(40, 5))
            val = float(L.loss_cir(T.Tensor(a), T.Tensor(b), temperature=tau).values)
            n = 40
            assert math.log(n) - 1 / tau - 1e-9 <= val <= math.log(n) + 1 / tau + 1e-9

    def test_zero_norm_treated_as_zero(self, caplog):
        a = np.zeros((3, 2))
        a[0] = [1, 0]
        b = np.tile([0.0, 1.0], (3, 1))
        with caplog.at_level("WARNING"):
            out = L.loss_cir(T.Tensor(a), T.Tensor(b), temperature=1.0)
        assert "zero-norm" in caplog.text
        assert float(out.values) == pytest.approx(math.log(3), abs=1e-5)

    def test_invalid_temperature(self):
        with pytest.raises(ValueError):
            L.loss_cir(T.Tensor(np.ones((2, 2))), T.Tensor(np.ones((2, 2))), temperature=0)

    def test_gradients(self):
        rng = np.random.default_rng(7)
        a = T.parameter(rng.normal(size=(5, 3)), name="a")
        b = T.parameter(rng.normal(size=(5, 3)), name="b")

        def build():
            return L.loss_cir(a, b, temperature=0.5)

        check_gradients(build, {"a": a, "b": b})


class TestLossRec:
    def test_two_equal_items(self):
        s = np.zeros((3, 2))  # user node 0, item nodes 1 and 2, all-equal scores
        out = L.loss_rec(T.Tensor(s), np.array([[0, 1]]), np.array([1, 2]))
        assert float(out.values) == pytest.approx(math.log(2), abs=1e-9)

    def test_confident_positive_limit(self):
        s = np.zeros((3, 2))
        s[0] = [30.0, 0.0]
        s[1] = [30.0, 0.0]   # positive aligns with the user
        s[2] = [-30.0, 0.0]
        out = L.loss_rec(T.Tensor(s), np.array([[0, 1]]), np.array([1, 2]))
        assert float(out.values) < 1e-6

    def test_matches_direct_evaluation(self):
        rng = np.random.default_rng(8)
        num_users, num_items = 3, 5
        s = rng.normal(size=(num_users + num_items, 4))
        items = np.arange(num_users, num_users + num_items)
        batch = np.array([[0, num_users + 1], [1, num_users + 0], [2, num_users + 4]])
        out = L.loss_rec(T.Tensor(s), batch, items)

        expect = 0.0
        for u, pos in batch:
            scores = np.array([s[u] @ s[j] for j in items])
            expect += np.log(np.exp(scores).sum()) - s[u] @ s[pos]
        assert float(out.values) == pytest.approx(expect / len(batch), abs=1e-7)

    def test_positive_missing_from_candidates(self):
        s = np.zeros((4, 2))
        with pytest.raises(ValueError, match="missing"):
            L.loss_rec(T.Tensor(s), np.array([[0, 3]]), np.array([1, 2]))

    def test_gradients(self):
        rng = np.random.default_rng(9)
        s = T.parameter(rng.normal(size=(8, 3)), name="s")
        batch = np.array([[0, 4], [1, 5], [2, 6]])
        items = np.arange(3, 8)

        def build():
            return L.loss_rec(s, batch, items)

        check_gradients(build, {"s": s})


class TestLossBpr:
    def test_equal_scores(self):
        s = np.zeros((4, 2))
        out = L.loss_bpr(T.Tensor(s), np.array([[0, 1, 2]]))
        assert float(out.values) == pytest.approx(math.log(2), abs=1e-9)

    def test_large_margin_limit(self):
        s = np.zeros((3, 2))
        s[0] = [1.0, 0.0]
        s[1] = [40.0, 0.0]
        s[2] = [-40.0, 0.0]
        out = L.loss_bpr(T.Tensor(s), np.array([[0, 1, 2]]))
        assert float(out.values) < 1e-6

    def test_matches_direct_evaluation(self):
        rng = np.random.default_rng(10)
        s = rng.normal(size=(12, 3))
        triples = np.stack([rng.integers(0, 4, 10),
                            rng.integers(4, 8, 10),
                            rng.integers(8, 12, 10)], axis=1)
        out = L.loss_bpr(T.Tensor(s), triples)
        expect = np.mean([softplus(-(s[u] @ s[p] - s[u] @ s[n])) for u, p, n in triples])
        assert float(out.values) == pytest.approx(expect, abs=1e-9)

    def test_gradients(self):
        rng = np.random.default_rng(11)
        s = T.parameter(rng.normal(size=(9, 3)), name="s")
        triples = np.array([[0, 3, 6], [1, 4, 7], [2, 5, 8]])

        def build():
            return L.loss_bpr(s, triples)

        check_gradients(build, {"s": s})


def random_bundle(rng, num=6, d=3):
    return L.EmbeddingBundle(
        user=T.Tensor(rng.normal(size=(num, d))),
        item=T.Tensor(rng.normal(size=(num, d))),
        contrast=T.Tensor(rng.normal(size=(2 * num, d))),
        subgraph=T.Tensor(rng.normal(size=(3, d))),
    )


class TestLossDistill:
    def test_identical_bundles_zero(self):
        b = random_bundle(np.random.default_rng(12))
        assert float(L.loss_distill(b, b).values) == pytest.approx(0.0, abs=1e-12)

    def test_uniform_offset(self):
        rng = np.random.default_rng(13)
        teacher = random_bundle(rng)
        delta = 0.37
        student = L.EmbeddingBundle(
            user=T.add(teacher.user, delta), item=T.add(teacher.item, delta),
            contrast=T.add(teacher.contrast, delta), subgraph=T.add(teacher.subgraph, delta))
        out = L.loss_distill(student, teacher)
        assert float(out.values) == pytest.approx(4 * delta ** 2, abs=1e-9)

    def test_matches_direct_evaluation(self):
        rng = np.random.default_rng(14)
        teacher, student = random_bundle(rng), random_bundle(rng)
        out = L.loss_distill(student, teacher)
        expect = sum(np.mean((getattr(student, slot).values - getattr(teacher, slot).values) ** 2)
                     for slot in ("user", "item", "contrast", "subgraph"))
        assert float(out.values) == pytest.approx(expect, abs=1e-9)

    def test_shape_mismatch_names_slot(self):
        rng = np.random.default_rng(15)
        teacher = random_bundle(rng)
        student = random_bundle(rng)
        student.contrast = T.Tensor(rng.normal(size=(5, 3)))
        with pytest.raises(T.ShapeMismatchError, match="contrast"):
            L.loss_distill(student, teacher)

    def test_stop_gradient_teacher_gets_none(self):
        rng = np.random.default_rng(16)
        t_user = T.parameter(rng.normal(size=(4, 2)), name="t")
        s_user = T.parameter(rng.normal(size=(4, 2)), name="s")
        zero = T.Tensor(np.zeros((1, 2)))
        teacher = L.EmbeddingBundle(t_user, zero, zero, zero)
        student = L.EmbeddingBundle(s_user, zero, zero, zero)
        with T.Tape() as tape:
            out = L.loss_distill(student, teacher)
            T.backward(out, tape)
        assert t_user.grad is None
        assert s_user.grad is not None and np.abs(s_user.grad).sum() > 0

    def test_gradients(self):
        rng = np.random.default_rng(17)
        s_user = T.parameter(rng.normal(size=(4, 2)), name="su")
        teacher = L.EmbeddingBundle(T.Tensor(rng.normal(size=(4, 2))),
                                    T.Tensor(np.zeros((1, 2))),
                                    T.Tensor(np.zeros((1, 2))),
                                    T.Tensor(np.zeros((1, 2))))

        def build():
            student = L.EmbeddingBundle(s_user, T.Tensor(np.zeros((1, 2))),
                                        T.Tensor(np.zeros((1, 2))), T.Tensor(np.zeros((1, 2))))
            return L.loss_distill(student, teacher)

        check_gradients(build, {"su": s_user})


class TestTotalLoss:
    def scalars(self, rng):
        return {name: T.Tensor(float(rng.uniform(0.1, 2.0)))
                for name in ("rec", "mae", "distill", "ranking", "contrast")}

    def test_all_weights_zero_except_rec(self):
        rng = np.random.default_rng(18)
        terms = self.scalars(rng)
        w = L.LossWeights(rec=1.0, mae=0, distill=0, ranking=0, contrast=0, reg=0)
        total, report = L.total_loss(params={}, weights=w, **terms)
        assert float(total.values) == pytest.approx(float(terms["rec"].values))

    def test_zeroed_params_no_penalty(self):
        rng = np.random.default_rng(19)
        terms = self.scalars(rng)
        params = {"p": T.parameter(np.zeros((3, 3)))}
        w = L.LossWeights(reg=1.0)
        _, report = L.total_loss(params=params, weights=w, **terms)
        assert report.reg == 0.0

    def test_total_equals_hand_sum(self):
        rng = np.random.default_rng(20)
        terms = self.scalars(rng)
        params = {"p": T.parameter(rng.normal(size=(4, 2)), name="p")}
        w = L.LossWeights(rec=1.0, mae=0.7, distill=0.2, ranking=1.3, contrast=0.01, reg=1e-3)
        total, report = L.total_loss(params=params, weights=w, **terms)
        expect = (w.rec * report.rec + w.mae * report.mae + w.distill * report.distill
                  + w.ranking * report.ranking + w.contrast * report.contrast
                  + w.reg * report.reg)
        assert report.total == pytest.approx(expect, abs=1e-6)
        assert report.reg == pytest.approx(float((params["p"].values ** 2).sum()))

    def test_nonfinite_term_names_itself(self):
        rng = np.random.default_rng(21)
        terms = self.scalars(rng)
        terms["mae"] = T.Tensor(np.nan)
        with pytest.raises(FloatingPointError, match="mae"):
            L.total_loss(params={}, weights=L.LossWeights(), **terms)

    def test_weights_validation(self):
        with pytest.raises(ValueError):
            L.LossWeights(rec=-0.1)
        with pytest.raises(ValueError):
            L.LossWeights(temperature=0.0)

    def test_all_losses_nonnegative(self):
        rng = np.random.default_rng(22)
        g = complete_minus_one(4, 4)
        s = T.Tensor(rng.normal(size=(g.num_nodes, 3)))
        vals = [
            L.loss_mae(s, g.edge_list[:4], g, substream(0, "x")),
            L.loss_rec(s, np.array([[0, 5], [1, 6]]), np.arange(4, 8)),
            L.loss_bpr(s, np.array([[0, 5, 4], [1, 6, 5]])),
            L.loss_distill(random_bundle(rng), random_bundle(rng)),
        ]
        for v in vals:
            assert float(v.values) >= 0.0
