import math

import numpy as np
import pytest

from privrec.model import (
    CLAMP_HI,
    CLAMP_LO,
    MLP,
    HeteroModel,
    TrainBatch,
    TrainConfig,
    TrainingDiverged,
    backward,
    batch_loss,
    build_model,
    forward_reconstruct,
    load_model,
    loss_align,
    loss_and_grads,
    loss_rec,
    loss_reg,
    predict_target,
    save_model,
    score_candidates,
    total_loss,
    train,
)
from privrec.rng import Stream


def mlp_oracle(net: MLP, x: np.ndarray) -> np.ndarray:
    """Straightforward duplicate forward pass."""
    a = np.asarray(x, dtype=float)
    last = net.n_layers - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w + b
        a = np.maximum(z, 0.0) if k < last else z
    return a


def _small_setup(variant="hetero", seed=0, users=12, items=10, n1p=8, h=4):
    rng = np.random.default_rng(seed)
    published = rng.standard_normal((users, n1p))
    target = (rng.random((users, items)) < 0.35).astype(float)
    target[:, 0] = 1.0  # guarantee a positive per item-0 and per user
    model = build_model(
        variant, n1_prime=n1p, n_target_items=items, n_users=users, h=h,
        hidden=(6,), seed=seed,
    )
    batch_users = np.arange(0, users, 2)
    pu, pi, lab = [], [], []
    for u in batch_users:
        pos = np.flatnonzero(target[u])[:3]
        for j in pos:
            pu.append(u); pi.append(j); lab.append(1.0)
        negs = np.flatnonzero(target[u] == 0)[:2]
        for j in negs:
            pu.append(u); pi.append(j); lab.append(0.0)
    batch = TrainBatch.from_pairs(batch_users, pu, pi, lab)
    return model, published, target, batch


class TestMLP:
    def test_forward_matches_duplicate_implementation(self):
        net = MLP([5, 7, 3], Stream(1).child("net"))
        x = np.random.default_rng(2).standard_normal((9, 5))
        assert np.max(np.abs(net.apply(x) - mlp_oracle(net, x))) < 1e-10

    def test_zero_net_maps_to_zero(self):
        net = MLP([4, 3, 2])  # zero weights, zero biases
        out = net.apply(np.ones((5, 4)))
        assert np.array_equal(out, np.zeros((5, 2)))

    def test_single_linear_layer_identity(self):
        net = MLP([3, 3])
        net.weights[0] = np.eye(3)
        x = np.random.default_rng(3).standard_normal((4, 3))
        assert np.max(np.abs(net.apply(x) - x)) < 1e-12

    def test_shape_mismatch_rejected(self):
        net = MLP([4, 2])
        with pytest.raises(ValueError, match="incompatible"):
            net.apply(np.ones((3, 5)))

    def test_bad_dims_rejected(self):
        with pytest.raises(ValueError):
            MLP([4])
        with pytest.raises(ValueError):
            MLP([4, 0])


class TestForwardReconstruct:
    def test_zero_model(self):
        model = build_model("hetero", 6, 5, 4, h=3, seed=0)
        model.encoder = MLP([6, 3])
        model.decoder = MLP([3, 6])
        emb, rec = forward_reconstruct(model, np.ones(6))
        assert np.array_equal(emb, np.zeros(3))
        assert np.array_equal(rec, np.zeros(6))

    def test_identity_hook(self):
        model = build_model("hetero", 4, 5, 4, h=4, seed=0)
        model.encoder = MLP([4, 4])
        model.encoder.weights[0] = np.eye(4)
        model.decoder = MLP([4, 4])
        model.decoder.weights[0] = np.eye(4)
        row = np.array([0.3, -1.2, 0.0, 2.0])
        emb, rec = forward_reconstruct(model, row)
        assert np.max(np.abs(rec - row)) < 1e-12

    def test_matches_oracle(self):
        model = build_model("hetero", 8, 5, 4, h=3, hidden=(6,), seed=4)
        row = np.random.default_rng(5).standard_normal(8)
        emb, rec = forward_reconstruct(model, row)
        emb_ref = mlp_oracle(model.encoder, row.reshape(1, -1))
        rec_ref = mlp_oracle(model.decoder, emb_ref)
        assert np.max(np.abs(emb - emb_ref.ravel())) < 1e-10
        assert np.max(np.abs(rec - rec_ref.ravel())) < 1e-10


class TestLossRec:
    def _identity_ae(self, n):
        model = build_model("hetero", n, 5, 4, h=n, seed=0)
        model.encoder = MLP([n, n])
        model.encoder.weights[0] = np.eye(n)
        model.decoder = MLP([n, n])
        model.decoder.weights[0] = np.eye(n)
        return model

    def test_perfect_reconstruction_zero_loss(self):
        model = self._identity_ae(3)
        assert loss_rec(model, np.random.default_rng(0).standard_normal((6, 3))) == 0.0

    def test_single_row_hand_arithmetic(self):
        # reconstruction (0,0) for row (1,0): mean((1,0)**2) = 0.5
        model = self._identity_ae(2)
        model.decoder.weights[0] = np.zeros((2, 2))
        assert loss_rec(model, np.array([[1.0, 0.0]])) == pytest.approx(0.5)

    def test_doubling_residual_quadruples(self):
        model = self._identity_ae(2)
        model.decoder.weights[0] = np.zeros((2, 2))
        l1 = loss_rec(model, np.array([[1.0, 0.0]]))
        l2 = loss_rec(model, np.array([[2.0, 0.0]]))
        assert l2 == pytest.approx(4 * l1)


def _constant_embedding_net(in_dim, vec):
    net = MLP([in_dim, len(vec)])
    net.biases[0] = np.array(vec, dtype=float)
    return net


class TestPredictTarget:
    def test_hand_built_embeddings(self):
        target = np.eye(2)
        model = HeteroModel(variant="hetero", h=2, seed=0)
        model.user_net = MLP([2, 2])
        model.user_net.weights[0] = np.array([[3.0, 4.0], [0.0, 0.0]])
        model.item_net = MLP([2, 2])
        model.item_net.weights[0] = np.array([[4.0, 3.0], [0.0, 0.0]])
        assert predict_target(model, target, 0, 0) == pytest.approx(24 / 25)

    def test_parallel_embeddings_clamped_high(self):
        model = HeteroModel(variant="hetero", h=2, seed=0)
        model.user_net = _constant_embedding_net(2, (1.0, 0.0))
        model.item_net = _constant_embedding_net(2, (2.0, 0.0))
        assert predict_target(model, np.eye(2), 0, 0) == pytest.approx(CLAMP_HI)

    def test_orthogonal_embeddings_clamped_low(self):
        model = HeteroModel(variant="hetero", h=2, seed=0)
        model.user_net = _constant_embedding_net(2, (1.0, 0.0))
        model.item_net = _constant_embedding_net(2, (0.0, 1.0))
        assert predict_target(model, np.eye(2), 0, 0) == pytest.approx(CLAMP_LO)

    def test_degenerate_inputs_rejected(self):
        model = HeteroModel(variant="hetero", h=2, seed=0)
        model.user_net = _constant_embedding_net(2, (1.0, 0.0))
        model.item_net = _constant_embedding_net(2, (1.0, 0.0))
        target = np.array([[0.0, 0.0], [1.0, 0.0]])
        with pytest.raises(ValueError, match="row"):
            predict_target(model, target, 0, 0)
        with pytest.raises(ValueError, match="column"):
            predict_target(model, target, 1, 1)

    def test_invariant_to_positive_rescaling(self):
        model, published, target, _ = _small_setup(seed=7)
        base = predict_target(model, target, 1, 0)
        for c in (0.5, 3.0, 250.0):
            model.user_net.weights[-1] = model.user_net.weights[-1] * c
            model.user_net.biases[-1] = model.user_net.biases[-1] * c
            assert predict_target(model, target, 1, 0) == pytest.approx(
                base, abs=1e-10
            )
            model.user_net.weights[-1] = model.user_net.weights[-1] / c
            model.user_net.biases[-1] = model.user_net.biases[-1] / c


class TestLossReg:
    def _half_cosine_model(self):
        model = HeteroModel(variant="hetero", h=2, seed=0)
        model.user_net = _constant_embedding_net(2, (1.0, 0.0))
        model.item_net = _constant_embedding_net(2, (0.5, math.sqrt(3) / 2))
        return model

    def test_saturated_correct_prediction_near_zero(self):
        model = HeteroModel(variant="hetero", h=2, seed=0)
        model.user_net = _constant_embedding_net(2, (1.0, 0.0))
        model.item_net = _constant_embedding_net(2, (1.0, 0.0))
        target = np.eye(2)
        loss = loss_reg(model, target, [(0, 0)])
        assert loss == pytest.approx(-math.log(CLAMP_HI), abs=1e-12)
        assert loss < 2e-8

    def test_label_zero_prediction_half_gives_ln2(self):
        target = np.array([[0.0, 1.0], [1.0, 0.0]])
        loss = loss_reg(self._half_cosine_model(), target, [(0, 0)])
        assert loss == pytest.approx(math.log(2), rel=1e-9)

    def test_prediction_half_everywhere_is_count_times_ln2(self):
        target = np.array([[0.0, 1.0], [1.0, 1.0]])
        pairs = [(0, 0), (0, 1), (1, 0), (1, 1)]
        loss = loss_reg(self._half_cosine_model(), target, pairs)
        assert loss == pytest.approx(len(pairs) * math.log(2), rel=1e-9)

    def test_empty_index_set_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            loss_reg(self._half_cosine_model(), np.eye(2), [])

    def test_all_zero_target_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            loss_reg(self._half_cosine_model(), np.zeros((2, 2)), [(0, 0)])


class TestLossAlign:
    def test_equal_embeddings(self):
        u = np.random.default_rng(0).standard_normal((4, 3))
        assert loss_align(u, u.copy()) == 0.0

    def test_hand_arithmetic(self):
        assert loss_align(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])) == 2.0

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal((5, 4)), rng.standard_normal((5, 4))
        assert loss_align(a, b) == pytest.approx(loss_align(b, a))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shapes"):
            loss_align(np.ones((2, 3)), np.ones((3, 2)))


class TestTotalLoss:
    def test_composition(self):
        model, published, target, _ = _small_setup(seed=9)
        pairs = [(0, 0), (2, 1)]
        alpha = 100.0
        u_a = model.encoder.apply(published)
        u_b = model.user_net.apply(target)
        expected = (
            loss_rec(model, published)
            + loss_reg(model, target, pairs)
            + alpha * loss_align(u_a, u_b)
        )
        assert total_loss(model, published, target, pairs, alpha) == pytest.approx(
            expected, rel=1e-12
        )

    def test_alpha_zero_drops_alignment(self):
        model, published, target, _ = _small_setup(seed=10)
        pairs = [(0, 0)]
        expected = loss_rec(model, published) + loss_reg(model, target, pairs)
        assert total_loss(model, published, target, pairs, 0.0) == pytest.approx(
            expected, rel=1e-12
        )

    def test_component_arithmetic(self):
        # components (1.0, 2.0, 0.5) with alpha=100 combine to 53.0
        assert 1.0 + 2.0 + 100.0 * 0.5 == pytest.approx(53.0)

    def test_non_decreasing_in_alpha(self):
        model, published, target, _ = _small_setup(seed=11)
        pairs = [(0, 0), (4, 0)]
        values = [
            total_loss(model, published, target, pairs, a) for a in (0.0, 1.0, 10.0)
        ]
        assert values[0] <= values[1] <= values[2]

    def test_all_components_non_negative(self):
        for seed in range(4):
            model, published, target, batch = _small_setup(seed=40 + seed)
            parts = batch_loss(model, published, target, batch, alpha=1.0)
            assert all(p >= 0.0 for p in parts)
            assert np.isfinite(
                parts[0] + parts[1] + 1e6 * parts[2]
            )  # clamped predictions keep everything finite

    def test_batch_path_matches_op_path(self):
        model, published, target, batch = _small_setup(seed=12)
        parts = batch_loss(model, published, target, batch, alpha=2.0)
        sub_pub = published[batch.users]
        sub_tgt_rows = target[batch.users]
        u_a = model.encoder.apply(sub_pub)
        u_b = model.user_net.apply(sub_tgt_rows)
        pairs = [
            (int(batch.users[up]), int(batch.items[ip]))
            for up, ip in zip(batch.pair_upos, batch.pair_ipos)
        ]
        assert parts[0] == pytest.approx(loss_rec(model, sub_pub), rel=1e-12)
        assert parts[1] == pytest.approx(loss_reg(model, target, pairs), rel=1e-12)
        assert parts[2] == pytest.approx(loss_align(u_a, u_b), rel=1e-12)


def _fd_total(model, published, target, batch, alpha):
    parts = batch_loss(model, published, target, batch, alpha)
    return parts[0] + parts[1] + alpha * parts[2]


def _check_gradients(model, published, target, batch, alpha, samples, rng, step=1e-5):
    _, grads = loss_and_grads(model, published, target, batch, alpha)
    checked = 0
    worst = 0.0
    names = sorted(grads)
    while checked < samples:
        name = names[int(rng.integers(len(names)))]
        net = getattr(model, name)
        layer = int(rng.integers(len(grads[name])))
        kind = int(rng.integers(2))
        array = net.weights[layer] if kind == 0 else net.biases[layer]
        if array.size == 0:
            continue
        flat = int(rng.integers(array.size))
        analytic = grads[name][layer][kind].flat[flat]
        orig = array.flat[flat]
        array.flat[flat] = orig + step
        lp = _fd_total(model, published, target, batch, alpha)
        array.flat[flat] = orig - step
        lm = _fd_total(model, published, target, batch, alpha)
        array.flat[flat] = orig
        fd = (lp - lm) / (2 * step)
        err = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-3)
        worst = max(worst, err)
        checked += 1
    return worst


class TestGradients:
    @pytest.mark.parametrize("variant", ["hetero", "sym", "target-only"])
    def test_matches_central_finite_differences(self, variant):
        model, published, target, batch = _small_setup(variant=variant, seed=13)
        worst = _check_gradients(
            model, published, target, batch, alpha=0.7,
            samples=120, rng=np.random.default_rng(0),
        )
        assert worst <= 1e-4, f"worst relative gradient error {worst:.2e}"

    def test_zero_residual_autoencoder_has_zero_rec_gradient(self):
        model, published, target, batch = _small_setup(seed=14)
        published = np.zeros_like(published)  # zero rows reconstruct exactly
        model.encoder = MLP(model.encoder.layer_dims)  # zero nets
        model.decoder = MLP(model.decoder.layer_dims)
        parts, grads = loss_and_grads(model, published, target, batch, alpha=0.0)
        assert parts[0] == 0.0
        for gw, gb in grads["decoder"]:
            assert np.array_equal(gw, np.zeros_like(gw))
            assert np.array_equal(gb, np.zeros_like(gb))

    def test_alignment_gradients_scale_with_alpha(self):
        model, published, target, _ = _small_setup(seed=15)
        users = np.arange(6)
        empty = TrainBatch.from_pairs(users, [], [], [])
        _, g1 = loss_and_grads(model, published, target, empty, alpha=1.0)
        _, g2 = loss_and_grads(model, published, target, empty, alpha=2.0)
        for (gw1, _), (gw2, _) in zip(g1["user_net"], g2["user_net"]):
            assert np.allclose(gw2, 2.0 * gw1, atol=1e-12)
        for (gw1, _), (gw2, _) in zip(g1["decoder"], g2["decoder"]):
            assert np.array_equal(gw1, gw2)  # reconstruction part unaffected

    def test_backward_returns_grad_dict(self):
        model, published, target, batch = _small_setup(seed=16)
        grads = backward(model, published, target, batch, alpha=1.0)
        assert set(grads) == {"encoder", "decoder", "user_net", "item_net"}


def _toy_training_data(seed=0, users=40, items=60, n1p=8):
    rng = np.random.default_rng(seed)
    published = rng.standard_normal((users, n1p))
    target = (rng.random((users, items)) < 0.15).astype(float)
    target[:, 0] = 1.0
    return published, target


class TestTrain:
    def test_zero_learning_rate_is_a_no_op(self):
        published, target = _toy_training_data()
        model = build_model("hetero", 8, 60, 40, h=4, hidden=(6,), seed=1)
        before = {
            name: [w.copy() for w in net.weights] for name, net in model.nets().items()
        }
        cfg = TrainConfig(learning_rate=0.0, epochs=3, batch_size=16, seed=5, alpha=1.0)
        trace = train(model, published, target, cfg)
        for name, net in model.nets().items():
            for w0, w1 in zip(before[name], net.weights):
                assert np.array_equal(w0, w1)
        totals = [row["total"] for row in trace]
        assert all(t == pytest.approx(totals[0], rel=1e-12) for t in totals)

    def test_seed_determinism(self):
        published, target = _toy_training_data(seed=2)
        traces = []
        finals = []
        for _ in range(2):
            model = build_model("hetero", 8, 60, 40, h=4, hidden=(6,), seed=3)
            cfg = TrainConfig(epochs=4, batch_size=16, seed=9, alpha=1.0)
            traces.append(train(model, published, target, cfg))
            finals.append([w.copy() for w in model.user_net.weights])
        assert traces[0] == traces[1]
        for a, b in zip(*finals):
            assert np.array_equal(a, b)

    def test_loss_decreases_on_toy_data(self):
        published, target = _toy_training_data(seed=4, users=200)
        model = build_model("hetero", 8, 60, 200, h=4, hidden=(6,), seed=0)
        cfg = TrainConfig(epochs=20, batch_size=64, seed=0, alpha=1.0)
        trace = train(model, published, target, cfg)
        assert trace[-1]["total"] < trace[0]["total"]

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_raises_with_epoch(self):
        published, target = _toy_training_data(seed=5)
        model = build_model("hetero", 8, 60, 40, h=4, hidden=(6,), seed=0)
        cfg = TrainConfig(learning_rate=1e160, epochs=5, batch_size=16, seed=0)
        with pytest.raises(TrainingDiverged, match="epoch"):
            train(model, published, target, cfg)

    def test_forbidden_items_not_sampled_as_negatives(self):
        published, target = _toy_training_data(seed=6)
        forbidden = {u: (1, 2) for u in range(target.shape[0])}
        target[:, 1] = 0.0
        target[:, 2] = 0.0
        from privrec.model import _draw_training_pairs

        cfg = TrainConfig(seed=0)
        pairs = _draw_training_pairs(target, forbidden, cfg)
        for pos, negs in pairs:
            assert 1 not in negs and 2 not in negs


class TestCheckpoint:
    @pytest.mark.parametrize("variant", ["hetero", "sym", "target-only"])
    def test_round_trip(self, tmp_path, variant):
        model, published, target, _ = _small_setup(variant=variant, seed=17)
        path = tmp_path / "model.bin"
        save_model(model, path)
        back = load_model(path)
        assert back.variant == variant and back.h == model.h
        for name, net in model.nets().items():
            other = getattr(back, name)
            assert other.layer_dims == net.layer_dims
            for w0, w1 in zip(net.weights, other.weights):
                assert np.array_equal(w0, w1)
            for b0, b1 in zip(net.biases, other.biases):
                assert np.array_equal(b0, b1)

    def test_scores_survive_round_trip(self, tmp_path):
        model, published, target, _ = _small_setup(seed=18)
        path = tmp_path / "model.bin"
        save_model(model, path)
        back = load_model(path)
        idx = np.array([0, 3, 5])
        a = score_candidates(model, target, 2, idx)
        b = score_candidates(back, target, 2, idx)
        assert np.array_equal(a, b)

    def test_truncation_detected(self, tmp_path):
        model, *_ = _small_setup(seed=19)
        path = tmp_path / "model.bin"
        save_model(model, path)
        data = path.read_bytes()
        path.write_bytes(data + b"\x00" * 8)
        with pytest.raises(ValueError, match="trailing"):
            load_model(path)


class TestScoreCandidates:
    def test_sym_uses_reconstruction(self):
        model, published, target, _ = _small_setup(variant="sym", seed=20)
        idx = np.array([1, 4, 7])
        rec = model.tgt_decoder.apply(model.tgt_encoder.apply(target[3].reshape(1, -1)))
        assert np.allclose(score_candidates(model, target, 3, idx), rec.ravel()[idx])

    def test_cosine_scores_bounded(self):
        model, published, target, _ = _small_setup(seed=21)
        scores = score_candidates(model, target, 0, np.arange(10))
        assert np.all(scores <= 1.0 + 1e-12) and np.all(scores >= -1.0 - 1e-12)
