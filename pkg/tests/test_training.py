"""Loss arithmetic, optimizer behavior, and the fit loop's contracts."""

import types

import numpy as np
import pytest

from conftest import load_augmented, max_rel_error, toy_params
from tkgcast import autodiff as ad
from tkgcast import training
from tkgcast.engine import Hyperparams, Query, forecast
from tkgcast.kgstore import TemporalAdjacency
from tkgcast.sampling import SamplingConfig, query_rng
from tkgcast.training import (Adam, QueryBatch, TrainingConfig, bce_loss,
                              build_batch, fit)

LN2 = float(np.log(2.0))


def single_query_batch(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    return QueryBatch(scores, np.asarray(labels, dtype=np.float64),
                      np.zeros(scores.shape[0], dtype=np.int64), 1)


def test_bce_two_even_candidates_is_ln2():
    loss, n_used = bce_loss(single_query_batch([0.5, 0.5], [1.0, 0.0]))
    assert n_used == 1
    assert float(loss) == pytest.approx(LN2, abs=1e-12)


def test_bce_confident_correct_prediction_near_zero():
    loss, _ = bce_loss(single_query_batch([1e6, 1e-6], [1.0, 0.0]))
    assert float(loss) < 1e-9


def test_bce_absent_answer_scores_all_negatives():
    loss, n_used = bce_loss(single_query_batch([0.5, 0.5], [0.0, 0.0]))
    assert n_used == 1
    assert float(loss) == pytest.approx(LN2, abs=1e-12)


def test_bce_mean_per_query_before_batch_mean():
    """One confident single-candidate query and one even two-candidate query:
    the loss is the mean of per-query means, not a flat candidate mean."""
    scores = np.array([1.0, 0.5, 0.5])
    labels = np.array([1.0, 1.0, 0.0])
    segments = np.array([0, 1, 1])
    loss, n_used = bce_loss(QueryBatch(scores, labels, segments, 2))
    assert n_used == 2
    assert float(loss) == pytest.approx(LN2 / 2.0, abs=1e-9)


def test_bce_zero_total_query_is_excluded():
    scores = np.array([0.0, 0.0, 0.5, 0.5])
    labels = np.array([1.0, 0.0, 1.0, 0.0])
    segments = np.array([0, 0, 1, 1])
    loss, n_used = bce_loss(QueryBatch(scores, labels, segments, 2))
    assert n_used == 1
    assert float(loss) == pytest.approx(LN2, abs=1e-12)
    loss, n_used = bce_loss(single_query_batch([0.0, 0.0], [1.0, 0.0]))
    assert loss is None and n_used == 0


def test_bce_term_independent_of_batch_composition():
    alone, _ = bce_loss(single_query_batch([0.2, 0.7], [0.0, 1.0]))
    other, _ = bce_loss(single_query_batch([0.9, 0.1, 0.3], [1.0, 0.0, 0.0]))
    scores = np.array([0.2, 0.7, 0.9, 0.1, 0.3])
    labels = np.array([0.0, 1.0, 1.0, 0.0, 0.0])
    segments = np.array([0, 0, 1, 1, 1])
    joint, n_used = bce_loss(QueryBatch(scores, labels, segments, 2))
    assert n_used == 2
    assert float(joint) == pytest.approx((float(alone) + float(other)) / 2.0,
                                         abs=1e-12)


def test_bce_invariant_to_candidate_order():
    scores = np.array([0.1, 0.4, 0.2, 0.3])
    labels = np.array([0.0, 1.0, 0.0, 0.0])
    base, _ = bce_loss(single_query_batch(scores, labels))
    perm = np.array([2, 0, 3, 1])
    shuffled, _ = bce_loss(single_query_batch(scores[perm], labels[perm]))
    assert float(base) == pytest.approx(float(shuffled), abs=1e-15)


def test_querybatch_validation():
    with pytest.raises(ValueError, match="positive"):
        QueryBatch(np.array([0.5, 0.5]), np.array([1.0, 1.0]),
                   np.array([0, 0]), 1)
    with pytest.raises(ValueError, match="align"):
        QueryBatch(np.array([0.5]), np.array([1.0, 0.0]), np.array([0]), 1)


def test_bce_gradient_matches_finite_differences():
    scores = np.array([0.2, 0.3, 0.5, 0.6])
    labels = np.array([0.0, 1.0, 0.0, 1.0])
    segments = np.array([0, 0, 0, 1])

    def value():
        loss, _ = bce_loss(QueryBatch(scores, labels, segments, 2))
        return float(loss)

    tensor = ad.Tensor(scores.copy(), op="leaf")
    loss, _ = bce_loss(QueryBatch(tensor, labels, segments, 2))
    loss.backward()
    numeric = np.zeros_like(scores)
    for i in range(scores.size):
        keep = scores[i]
        scores[i] = keep + 1e-6
        up = value()
        scores[i] = keep - 1e-6
        down = value()
        scores[i] = keep
        numeric[i] = (up - down) / 2e-6
    assert max_rel_error(tensor.grad, numeric) < 1e-5


def fake_result(ids, scores):
    return types.SimpleNamespace(entity_ids=np.asarray(ids, dtype=np.int64),
                                 entity_scores=np.asarray(scores, dtype=np.float64))


def test_build_batch_labels_and_segments():
    results = [fake_result([1, 4], [0.3, 0.7]), fake_result([2], [1.0])]
    batch = build_batch(results, [4, 9])
    assert batch.n_queries == 2
    assert batch.labels.tolist() == [0.0, 1.0, 0.0]  # answer 9 absent
    assert batch.segments.tolist() == [0, 0, 1]


def test_build_batch_skip_missing_answer():
    results = [fake_result([1, 4], [0.3, 0.7]), fake_result([2], [1.0])]
    batch = build_batch(results, [9, 2], skip_missing_answer=True)
    assert batch.n_queries == 1
    assert batch.labels.tolist() == [1.0]
    assert batch.segments.tolist() == [0]
    assert build_batch(results, [9, 9], skip_missing_answer=True) is None


def test_adam_single_step_hand_math():
    w = ad.Tensor(np.array([1.0, 2.0]), op="leaf")
    g = np.array([0.5, -1.0])
    w.grad = g.copy()
    opt = Adam(lr=0.1)
    opt.step({"w": w})
    m_hat = g  # bias correction cancels the (1 - beta) factor at t=1
    v_hat = g * g
    want = np.array([1.0, 2.0]) - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)
    np.testing.assert_allclose(w.data, want, rtol=0, atol=0)


def test_adam_second_step_uses_moment_state():
    w = ad.Tensor(np.array([0.3]), op="leaf")
    g1, g2 = np.array([0.2]), np.array([-0.4])
    opt = Adam(lr=0.05)
    w.grad = g1.copy()
    opt.step({"w": w})
    w.grad = g2.copy()
    opt.step({"w": w})
    b1, b2, lr, eps = 0.9, 0.999, 0.05, 1e-8
    m, v, x = np.zeros(1), np.zeros(1), np.array([0.3])
    for t, g in ((1, g1), (2, g2)):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    np.testing.assert_allclose(w.data, x, rtol=1e-15, atol=0)


def test_adam_leaves_gradientless_tensors_untouched():
    w = ad.Tensor(np.array([1.0, -2.0]), op="leaf")
    u = ad.Tensor(np.array([3.0, 4.0]), op="leaf")
    w.grad = np.array([1.0, 1.0])
    before = u.data.copy()
    Adam(lr=0.1).step({"w": w, "u": u})
    assert np.array_equal(u.data, before)
    assert not np.array_equal(w.data, np.array([1.0, -2.0]))


def test_training_config_validation():
    TrainingConfig(lr=0.0).validate()
    with pytest.raises(ValueError):
        TrainingConfig(lr=-1e-3).validate()
    with pytest.raises(ValueError):
        TrainingConfig(batch=0).validate()
    with pytest.raises(ValueError):
        TrainingConfig(epochs=-1).validate()
    with pytest.raises(ValueError):
        TrainingConfig(seed=-1).validate()


# ---------------------------------------------------------------------------
# Whole-pipeline gradients on a fixed 5-entity toy.
# ---------------------------------------------------------------------------


PIPE_BASE = np.array([
    [0, 0, 1, 1], [1, 0, 2, 2], [0, 1, 3, 3],
    [3, 0, 4, 1], [2, 1, 0, 4], [4, 1, 2, 2],
])
PIPE_QUERIES = [(0, 0, 4, 5), (2, 1, 1, 4), (3, 0, 4, 5)]


def pipeline_loss(live, adjacency):
    hyper = Hyperparams(steps=2, prune_k=64, gamma=0.5, agg="sum")
    cfg = SamplingConfig(strategy="last-n", budget=8, seed=0)
    results, answers = [], []
    for i, (s, p, o, t) in enumerate(PIPE_QUERIES):
        res = forecast(adjacency, live, Query(s, p, t), hyper, cfg,
                       query_rng(3, i), 4)
        results.append(res)
        answers.append(o)
    loss, n_used = bce_loss(build_batch(results, answers))
    assert n_used == len(PIPE_QUERIES)
    return loss


def test_pipeline_gradients_match_finite_differences():
    reciprocal = np.stack([PIPE_BASE[:, 2], PIPE_BASE[:, 1] + 2,
                           PIPE_BASE[:, 0], PIPE_BASE[:, 3]], axis=1)
    quads = np.concatenate([PIPE_BASE, reciprocal])
    adjacency = TemporalAdjacency(quads, 5)
    params = toy_params(5, 4, static_dim=3, time_dim=2, steps=2, t_max=10,
                        seed=7)
    tensors = params.tensors()
    loss = pipeline_loss(tensors, adjacency)
    loss.backward()

    def value():
        return float(pipeline_loss(params.arrays, adjacency))

    step = 1e-5
    for name in ("entity_static", "time_freq", "time_phase", "w_v", "b_v",
                 "w_h_1", "b_h_2", "pred"):
        array = params.arrays[name]
        flat = array.reshape(-1)
        numeric = np.zeros(flat.size)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = value()
            flat[i] = keep - step
            down = value()
            flat[i] = keep
            numeric[i] = (up - down) / (2.0 * step)
        analytic = tensors[name].grad.reshape(-1)
        assert max_rel_error(analytic, numeric) < 1e-3, name
    rng = np.random.default_rng(1)
    for name in ("w_sub_1", "w_obj_2", "w_sub_2", "w_obj_1", "w_h_2"):
        array = params.arrays[name]
        flat = array.reshape(-1)
        grad = tensors[name].grad.reshape(-1)
        for i in rng.choice(flat.size, size=8, replace=False):
            keep = flat[i]
            flat[i] = keep + step
            up = value()
            flat[i] = keep - step
            down = value()
            flat[i] = keep
            numeric = (up - down) / (2.0 * step)
            diff = abs(grad[i] - numeric)
            assert diff < 1e-9 or diff / abs(numeric) < 1e-3, (name, i)


# ---------------------------------------------------------------------------
# fit() contracts on a small on-disk corpus.
# ---------------------------------------------------------------------------


def fit_fixture(tiny_corpus, n_train=40, n_valid=6):
    aug = load_augmented(tiny_corpus)
    train_quads = aug["train"].quads[:n_train]
    valid_quads = aug["valid"].quads[:n_valid]
    train_adj = TemporalAdjacency.from_datasets([aug["train"]])
    valid_adj = TemporalAdjacency.from_datasets([aug["train"], aug["valid"]])
    params = toy_params(len(aug["train"].entities), 4, steps=1, t_max=16,
                        seed=13)
    hyper = Hyperparams(steps=1, prune_k=8, gamma=0.5, agg="sum")
    cfg = SamplingConfig(strategy="last-n", budget=2, seed=0)
    return params, train_quads, valid_quads, train_adj, valid_adj, hyper, cfg


def run_fit(pieces, **config_kw):
    params, train_q, valid_q, train_adj, valid_adj, hyper, cfg = pieces
    base = dict(lr=0.01, batch=16, epochs=1, seed=2)
    base.update(config_kw)
    return fit(params, train_q, valid_q, train_adj, valid_adj, hyper, cfg,
               TrainingConfig(**base), n_predicates=4)


def snapshot(params):
    return {k: v.copy() for k, v in params.arrays.items()}


def arrays_equal(a, b):
    return all(np.array_equal(a[k], b[k]) for k in a)


def test_fit_zero_epochs_is_noop(tiny_corpus):
    pieces = fit_fixture(tiny_corpus)
    before = snapshot(pieces[0])
    result = run_fit(pieces, epochs=0)
    assert result.epochs_run == 0
    assert result.loss_trace == []
    assert result.best_epoch == -1
    assert arrays_equal(before, pieces[0].arrays)


def test_fit_lr_zero_keeps_weights_bit_identical(tiny_corpus):
    pieces = fit_fixture(tiny_corpus)
    before = snapshot(pieces[0])
    result = run_fit(pieces, lr=0.0)
    assert result.loss_trace
    assert arrays_equal(before, pieces[0].arrays)


def test_fit_moves_weights_and_is_seed_reproducible(tiny_corpus):
    pieces_a = fit_fixture(tiny_corpus)
    init = snapshot(pieces_a[0])
    res_a = run_fit(pieces_a, epochs=2)
    assert not arrays_equal(init, pieces_a[0].arrays)
    pieces_b = fit_fixture(tiny_corpus)
    res_b = run_fit(pieces_b, epochs=2)
    assert res_a.loss_trace == res_b.loss_trace
    assert res_a.epoch_loss == res_b.epoch_loss
    assert res_a.valid_mrr == res_b.valid_mrr
    assert arrays_equal(pieces_a[0].arrays, pieces_b[0].arrays)


def test_fit_aborts_on_nonfinite_loss_and_restores(tiny_corpus, monkeypatch):
    pieces = fit_fixture(tiny_corpus)
    before = snapshot(pieces[0])
    real = training.bce_loss
    calls = {"n": 0}

    class NanLoss:
        def item(self):
            return float("nan")

    def wedge(batch):
        calls["n"] += 1
        if calls["n"] == 1:
            return real(batch)
        return NanLoss(), 1

    monkeypatch.setattr(training, "bce_loss", wedge)
    result = run_fit(pieces, batch=8)
    assert result.aborted
    assert result.epochs_run == 0
    assert len(result.loss_trace) == 1  # one real step happened, then undone
    assert arrays_equal(before, pieces[0].arrays)


def test_fit_never_touches_absent_entities(tiny_corpus):
    """Entities outside the training quads and adjacency keep their exact
    initial rows."""
    base = np.array([[0, 0, 1, 1], [1, 1, 2, 2], [2, 0, 3, 3], [3, 1, 0, 4],
                     [1, 0, 3, 5], [0, 1, 2, 6]])
    reciprocal = np.stack([base[:, 2], base[:, 1] + 2, base[:, 0],
                           base[:, 3]], axis=1)
    quads = np.concatenate([base, reciprocal])
    adjacency = TemporalAdjacency(quads, 6)  # entities 4 and 5 never appear
    params = toy_params(6, 4, steps=1, t_max=10, seed=4)
    frozen = params.arrays["entity_static"][4:6].copy()
    hyper = Hyperparams(steps=1, prune_k=8, gamma=0.5, agg="sum")
    cfg = SamplingConfig(strategy="last-n", budget=4, seed=0)
    result = fit(params, quads, quads[:2], adjacency, adjacency, hyper, cfg,
                 TrainingConfig(lr=0.01, batch=4, epochs=1, seed=0),
                 n_predicates=4)
    assert result.loss_trace
    assert np.array_equal(params.arrays["entity_static"][4:6], frozen)
    assert params.seen_entities is not None
    assert not params.seen_entities[4] and params.seen_entities[5] == False  # noqa: E712
    assert params.seen_entities[:4].all()
