import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctikg.linkpred import (
    CheckpointError,
    EmptyTestSet,
    EmptyTrainSet,
    Grads,
    IndexOutOfRange,
    RankMetrics,
    TrainConfig,
    TuckerModel,
    batch_from_triples,
    evaluate,
    gradient_check,
    load_model,
    load_ranks,
    loss_and_grads,
    rank,
    rank_from_scores,
    report_from_ranks,
    rule_graph,
    save_model,
    sigmoid,
    train,
)


def small_model(seed=0, n_e=6, n_r=2, d_e=3, d_r=2, reciprocal=False):
    return TuckerModel.init(n_e, n_r, d_e, d_r, reciprocal=reciprocal, seed=seed)


def naive_score(m, h, r, t):
    total = 0.0
    for i in range(m.d_e):
        for j in range(m.d_r):
            for k in range(m.d_e):
                total += m.W[i, j, k] * m.E[h, i] * m.R[r, j] * m.E[t, k]
    return total


def test_scalar_score():
    m = TuckerModel(np.array([[2.0], [4.0]]), np.array([[3.0]]), np.array([[[0.5]]]), 1)
    assert m.score(0, 0, 1) == 12.0


def test_zero_core_scores_zero():
    m = small_model()
    m.W[:] = 0
    assert all(m.score(h, r, t) == 0 for h in range(6) for r in range(2) for t in range(6))


@pytest.mark.parametrize("seed", range(5))
def test_score_matches_naive_loop(seed):
    m = small_model(seed)
    for h, r, t in [(0, 0, 1), (5, 1, 2), (3, 0, 3)]:
        assert m.score(h, r, t) == pytest.approx(naive_score(m, h, r, t), rel=1e-9, abs=1e-12)
    np.testing.assert_allclose(m.score_tails(2, 1), [m.score(2, 1, e) for e in range(6)], atol=1e-12)
    np.testing.assert_allclose(m.score_heads(1, 4), [m.score(e, 1, 4) for e in range(6)], atol=1e-12)


@given(st.integers(0, 10_000), st.floats(-5, 5, allow_nan=False))
@settings(max_examples=50)
def test_score_is_multilinear_in_head(seed, alpha):
    m = small_model(seed)
    base = m.score(0, 1, 2)
    m.E[0] *= alpha
    assert m.score(0, 1, 2) == pytest.approx(alpha * base, rel=1e-9, abs=1e-12)


def test_index_out_of_range():
    m = small_model()
    with pytest.raises(IndexOutOfRange):
        m.score(6, 0, 0)
    with pytest.raises(IndexOutOfRange):
        m.score(0, 2, 0)
    with pytest.raises(IndexOutOfRange):
        rank(m, (0, 0, 9, "tail"))


def test_bad_shapes():
    with pytest.raises(ValueError):
        TuckerModel(np.zeros((3, 2)), np.zeros((1, 2)), np.zeros((2, 2, 3)), 1)
    with pytest.raises(ValueError):
        TuckerModel(np.zeros((3, 2)), np.zeros((1, 2)), np.zeros((2, 2, 2)), 1, reciprocal=True)


def test_reciprocal_heads_use_inverse_relation():
    m = small_model(reciprocal=True)
    np.testing.assert_allclose(m.score_heads(0, 3), [float(m.E[3] @ m.core(2) @ m.E[e]) for e in range(6)])


def test_sigmoid_extremes():
    assert sigmoid(np.array([-1000.0, 0.0, 1000.0])).tolist() == [0.0, 0.5, 1.0]


# --- gradients --------------------------------------------------------------

TRIPLES = [(0, 0, 1), (0, 0, 2), (1, 1, 3), (4, 0, 5), (2, 1, 0)]


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("reciprocal", [False, True])
def test_gradient_check_random(seed, reciprocal):
    m = small_model(seed, reciprocal=reciprocal)
    assert gradient_check(m, TRIPLES) < 1e-4


def test_gradient_check_zero_model():
    m = small_model()
    for arr in (m.E, m.R, m.W):
        arr[:] = 0
    assert gradient_check(m, TRIPLES) < 1e-4


def test_gradient_check_with_mask():
    m = small_model(7)
    batch = batch_from_triples(TRIPLES, m.n_entities)
    batch.mask = (np.arange(batch.targets.size).reshape(batch.targets.shape) % 3 != 0).astype(float)
    assert gradient_check(m, batch) < 1e-4


def test_gradient_check_negative_control():
    def flipped(model, batch):
        g = loss_and_grads(model, batch, 0.1)[1]
        return Grads(-g.E, -g.R, -g.W)

    assert gradient_check(small_model(1), TRIPLES, grad_fn=flipped) > 0.5


# --- training ---------------------------------------------------------------

def quick(**kw):
    base = dict(d_e=4, d_r=4, epochs=20, batch_size=4)
    base.update(kw)
    return TrainConfig(**base)


def test_training_is_deterministic():
    a = train(TRIPLES, quick())
    b = train(TRIPLES, quick())
    assert a.losses == b.losses
    for x, y in zip((a.model.E, a.model.R, a.model.W), (b.model.E, b.model.R, b.model.W)):
        assert np.array_equal(x, y)
    assert train(TRIPLES, quick(seed=1)).losses != a.losses


def test_losses_finite():
    res = train(TRIPLES, quick(strategy="negative_sampling", optimizer="sgd", learning_rate=0.1))
    assert len(res.losses) == 20 and all(math.isfinite(x) for x in res.losses)


def test_single_triple_sanity():
    res = train([(0, 0, 1)], TrainConfig(epochs=50), n_entities=2, n_relations=1)
    assert sigmoid(np.array(res.model.score(0, 0, 1))) > 0.9


def test_empty_train_set():
    with pytest.raises(EmptyTrainSet):
        train([], quick())


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(strategy="bogus")
    with pytest.raises(ValueError):
        TrainConfig.from_mapping({"epochs": 3, "nope": 1})
    assert TrainConfig.from_mapping(TrainConfig().to_dict()) == TrainConfig()
    d = TrainConfig()
    assert (d.d_e, d.d_r, d.batch_size, d.learning_rate, d.epochs) == (50, 50, 64, 0.001, 500)


def test_rule_graph_fixture():
    train_set, test = rule_graph()
    assert len(test) == 5 and len(train_set) == 35
    assert not set(train_set) & set(test)
    assert all(t == (h + 1) % 20 and r == 0 for h, r, t in test)


# --- ranking ----------------------------------------------------------------

def test_rank_unique_best():
    assert rank_from_scores(np.array([0.1, 0.9, 0.3]), 1) == 1


@pytest.mark.parametrize("m", [1, 2, 3, 4, 7, 10])
def test_rank_all_tied(m):
    assert rank_from_scores(np.zeros(m), 0) == math.ceil((m + 1) / 2)


def sort_oracle(scores, target, exclude):
    pool = [i for i in range(len(scores)) if i == target or i not in exclude]
    order = sorted(pool, key=lambda i: -scores[i])
    positions = [p for p, i in enumerate(order, 1) if scores[i] == scores[target]]
    return math.ceil((positions[0] + positions[-1]) / 2)


@given(st.lists(st.integers(-3, 3), min_size=1, max_size=12), st.data())
def test_rank_matches_sort_oracle(values, data):
    scores = np.array(values, dtype=float)
    target = data.draw(st.integers(0, len(values) - 1))
    exclude = set(data.draw(st.lists(st.integers(0, len(values) - 1), max_size=5)))
    assert rank_from_scores(scores, target, exclude) == sort_oracle(scores, target, exclude)


@given(st.lists(st.integers(-5, 5), min_size=1, max_size=12), st.data())
def test_rank_invariant_under_monotone_map(values, data):
    s = np.array(values, dtype=float)
    target = data.draw(st.integers(0, len(values) - 1))
    assert rank_from_scores(s, target) == rank_from_scores(s ** 3 + 2 * s - 7, target)


@given(st.integers(0, 10_000))
@settings(max_examples=40)
def test_filtered_never_worse(seed):
    rng = np.random.default_rng(seed)
    m = small_model(seed, n_e=8)
    known = {tuple(int(x) for x in (rng.integers(8), rng.integers(2), rng.integers(8))) for _ in range(20)}
    h, r, t = next(iter(known))
    for d in ("head", "tail"):
        assert rank(m, (h, r, t, d), known, "filtered") <= rank(m, (h, r, t, d), known, "raw")


def test_rank_hand_set_scores_raw_and_filtered():
    # one-hot entities, one relation: score(h, 0, t) = S[h, t]
    S = np.array([[0.0, 5.0, 3.0, 5.0],
                  [1.0, 0.0, 2.0, 2.0],
                  [4.0, 4.0, 4.0, 0.0],
                  [0.0, 0.0, 0.0, 0.0]])
    m = TuckerModel(np.eye(4), np.ones((1, 1)), S[:, None, :].copy(), 1)
    known = {(0, 0, 1), (0, 0, 2), (2, 0, 0)}
    for (h, _, t) in known:
        for setting in ("raw", "filtered"):
            tail_ex = {k for (a, _, k) in known if a == h} if setting == "filtered" else set()
            head_ex = {a for (a, _, k) in known if k == t} if setting == "filtered" else set()
            assert rank(m, (h, 0, t, "tail"), known, setting) == sort_oracle(S[h], t, tail_ex)
            assert rank(m, (h, 0, t, "head"), known, setting) == sort_oracle(S[:, t], h, head_ex)
    # (0, 0, 2): raw tail rank 3 (two entities score 5), filtering removes entity 1
    assert rank(m, (0, 0, 2, "tail"), known, "raw") == 3
    assert rank(m, (0, 0, 2, "tail"), known, "filtered") == 2


def permutation_model(n, sign=1.0):
    perm = [(i + 3) % n for i in range(n)]
    P = np.zeros((n, n))
    for i, j in enumerate(perm):
        P[i, j] = sign
    return TuckerModel(np.eye(n), np.ones((1, 1)), P[:, None, :].copy(), 1), [(i, 0, perm[i]) for i in range(n)]


def test_evaluate_oracle_model():
    m, test = permutation_model(12)
    rep = evaluate(m, test, test, "filtered")
    for block in (rep.head, rep.tail, rep.both):
        assert block.mrr == 1.0 and all(v == 1.0 for v in block.hits.values())


def test_evaluate_adversarial_model():
    m, test = permutation_model(40, sign=-1.0)
    rep = evaluate(m, test, test, "raw")
    for block in (rep.head, rep.tail, rep.both):
        assert block.mrr == pytest.approx(1 / 40)
        assert all(v == 0.0 for v in block.hits.values())


HAND_RANKS = [1, 2, 4, 10, 31, 3, 7, 30, 50, 1]


def test_hand_rank_fixture():
    met = RankMetrics.from_ranks(HAND_RANKS)
    assert met.mrr == pytest.approx(0.3411781, abs=1e-7)
    assert met.hits == {3: 0.4, 10: 0.7, 30: 0.8}
    # the same ranks produced through hand-set score vectors
    ranks = []
    for k in HAND_RANKS:
        scores = np.zeros(60)
        scores[:k - 1] = 2.0
        scores[k - 1] = 1.0
        ranks.append(rank_from_scores(scores, k - 1))
    assert ranks == HAND_RANKS


def test_both_block_pools_queries():
    rep = report_from_ranks([1, 1], [2, 4], "filtered")
    assert rep.both.mrr == pytest.approx((1 + 1 + 0.5 + 0.25) / 4)
    assert rep.both.count == 4


@given(st.lists(st.integers(1, 60), min_size=1, max_size=30), st.lists(st.integers(1, 60), min_size=1, max_size=30))
def test_hits_monotone_and_mrr_range(heads, tails):
    rep = report_from_ranks(heads, tails, "raw")
    for b in (rep.head, rep.tail, rep.both):
        assert b.hits[3] <= b.hits[10] <= b.hits[30]
        assert 0 < b.mrr <= 1


def test_report_rendering():
    rep = report_from_ranks([1, 2], [3, 40], "filtered")
    table = rep.to_table("TuckER")
    assert "filtered" in table.splitlines()[0]
    for row in ("Tail", "Head", "Both"):
        assert row in table
    assert '"setting": "filtered"' in rep.to_json()


def test_empty_test_set():
    with pytest.raises(EmptyTestSet):
        evaluate(small_model(), [], [])
    with pytest.raises(EmptyTestSet):
        RankMetrics.from_ranks([])


def test_load_ranks(tmp_path):
    p = tmp_path / "r.tsv"
    p.write_text("head\t1\ntail\t3\n\ntail\t1\n")
    assert load_ranks(p) == ([1], [3, 1])
    p.write_text("left\t1\n")
    with pytest.raises(ValueError):
        load_ranks(p)


# --- checkpoints ------------------------------------------------------------

@pytest.mark.parametrize("reciprocal", [False, True])
def test_checkpoint_round_trip(tmp_path, reciprocal):
    m = small_model(3, reciprocal=reciprocal)
    m = TuckerModel(m.E.astype(np.float32).astype(float), m.R.astype(np.float32).astype(float),
                    m.W.astype(np.float32).astype(float), m.n_relations, reciprocal)
    save_model(m, tmp_path / "m.tuck")
    back = load_model(tmp_path / "m.tuck")
    assert back.reciprocal == reciprocal and back.n_relations == 2
    for a, b in ((m.E, back.E), (m.R, back.R), (m.W, back.W)):
        assert np.array_equal(a, b)


def test_checkpoint_layout(tmp_path):
    m = small_model()
    save_model(m, tmp_path / "m.tuck")
    data = (tmp_path / "m.tuck").read_bytes()
    assert data[:4] == b"TUCK"
    assert len(data) == 25 + 4 * (6 * 3 + 2 * 2 + 3 * 2 * 3)


def test_checkpoint_errors(tmp_path):
    p = tmp_path / "bad.tuck"
    p.write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(CheckpointError):
        load_model(p)
    save_model(small_model(), p)
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(CheckpointError):
        load_model(p)
