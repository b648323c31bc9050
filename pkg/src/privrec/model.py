"""Cross-domain recommender trained on the published source matrix.

The full model couples three pieces through a shared user axis:

* an autoencoder over the dense published source matrix (reconstruction
  loss, one term per user, mean-square over coordinates),
* a deep-matrix-factorization head over the sparse target matrix: two MLPs
  map a user's rating row and an item's rating column to h-dimensional
  embeddings whose cosine similarity, clamped away from {0, 1}, is trained
  with normalized cross-entropy over observed positives plus sampled
  negatives,
* an alignment penalty pulling each user's source-side and target-side
  embeddings together.

Total objective: ``L_rec + L_reg + alpha * L_ali``.  Gradients are exact
reverse-mode derivatives written out by hand (ReLU subgradient at 0 taken as
0), and training is plain mini-batch Adam, deterministic given the seed: the
user order and the negative samples are drawn once per run from named
substreams, so reruns and zero-learning-rate runs are exactly repeatable.

Variants: "hetero" (the full model), "sym" (autoencoders on both domains,
aligned; scored by target reconstruction), "target-only" (the matrix-factorization head
alone, no source signal).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import Stream

__all__ = [
    "VARIANT_HETERO",
    "VARIANT_SYM",
    "VARIANT_TARGET_ONLY",
    "CLAMP_LO",
    "CLAMP_HI",
    "MLP",
    "HeteroModel",
    "TrainConfig",
    "TrainBatch",
    "TrainingDiverged",
    "build_model",
    "forward_reconstruct",
    "loss_rec",
    "predict_target",
    "loss_reg",
    "loss_align",
    "total_loss",
    "loss_and_grads",
    "backward",
    "train",
    "score_candidates",
    "save_model",
    "load_model",
]

VARIANT_HETERO = "hetero"
VARIANT_SYM = "sym"
VARIANT_TARGET_ONLY = "target-only"
_VARIANTS = (VARIANT_HETERO, VARIANT_SYM, VARIANT_TARGET_ONLY)

CLAMP_LO = 1e-8
CLAMP_HI = 1.0 - 1e-8

_NORM_FLOOR = 1e-12


class TrainingDiverged(RuntimeError):
    """Raised when the training loss stops being finite."""


class MLP:
    """Fully-connected net with ReLU on hidden layers and a linear output.

    Weights are (fan_in, fan_out) matrices applied as ``x @ W + b``.
    """

    def __init__(self, layer_dims, stream: Stream | None = None):
        dims = [int(d) for d in layer_dims]
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ValueError(f"bad layer dims {layer_dims}")
        self.layer_dims = dims
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for k, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            if stream is None:
                w = np.zeros((fan_in, fan_out))
            else:
                limit = math.sqrt(6.0 / (fan_in + fan_out))
                rng = stream.child("layer", k).generator()
                w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def forward(self, x: np.ndarray):
        """Return (output, cache); cache feeds :meth:`backward`."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.layer_dims[0]:
            raise ValueError(
                f"input shape {x.shape} incompatible with first layer dim "
                f"{self.layer_dims[0]}"
            )
        activations = [x]
        pre_acts = []
        a = x
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            pre_acts.append(z)
            a = np.maximum(z, 0.0) if k < self.n_layers - 1 else z
            activations.append(a)
        return a, (activations, pre_acts)

    def backward(self, cache, grad_out: np.ndarray):
        """Backprop `grad_out` (dL/d output); returns (dL/d input, param grads)."""
        activations, pre_acts = cache
        grads = [None] * self.n_layers
        dz = np.asarray(grad_out, dtype=np.float64)
        for k in range(self.n_layers - 1, -1, -1):
            if k < self.n_layers - 1:
                dz = dz * (pre_acts[k] > 0)
            gw = activations[k].T @ dz
            gb = dz.sum(axis=0)
            grads[k] = (gw, gb)
            dz = dz @ self.weights[k].T
        return dz, grads

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]


@dataclass
class HeteroModel:
    """The nets of one model instance; unused roles are None per variant."""

    variant: str
    h: int
    seed: int
    encoder: MLP | None = None
    decoder: MLP | None = None
    user_net: MLP | None = None
    item_net: MLP | None = None
    tgt_encoder: MLP | None = None
    tgt_decoder: MLP | None = None

    _ROLES = ("encoder", "decoder", "user_net", "item_net", "tgt_encoder", "tgt_decoder")

    def nets(self) -> dict[str, MLP]:
        return {
            name: net
            for name in self._ROLES
            if (net := getattr(self, name)) is not None
        }


def build_model(
    variant: str,
    n1_prime: int,
    n_target_items: int,
    n_users: int,
    h: int = 200,
    hidden: tuple[int, ...] = (500,),
    seed: int = 0,
) -> HeteroModel:
    """Construct and Xavier-initialize the nets a variant needs.

    Defaults follow the full-scale setup (hidden width 500, embedding 200);
    desk-scale experiments pass smaller dims explicitly.
    """
    if variant not in _VARIANTS:
        raise ValueError(f"variant must be one of {_VARIANTS}, got {variant!r}")
    stream = Stream(seed).child("init")
    hidden = tuple(int(x) for x in hidden)
    model = HeteroModel(variant=variant, h=h, seed=seed)
    if variant in (VARIANT_HETERO, VARIANT_SYM):
        model.encoder = MLP([n1_prime, *hidden, h], stream.child("encoder"))
        model.decoder = MLP([h, *hidden[::-1], n1_prime], stream.child("decoder"))
    if variant in (VARIANT_HETERO, VARIANT_TARGET_ONLY):
        model.user_net = MLP([n_target_items, *hidden, h], stream.child("user_net"))
        model.item_net = MLP([n_users, *hidden, h], stream.child("item_net"))
    if variant == VARIANT_SYM:
        model.tgt_encoder = MLP(
            [n_target_items, *hidden, h], stream.child("tgt_encoder")
        )
        model.tgt_decoder = MLP(
            [h, *hidden[::-1], n_target_items], stream.child("tgt_decoder")
        )
    return model


# --------------------------------------------------------------------------
# loss pieces


def forward_reconstruct(model: HeteroModel, row: np.ndarray):
    """Encode one published row and decode it back: (embedding, reconstruction)."""
    row = np.asarray(row, dtype=np.float64).reshape(1, -1)
    emb = model.encoder.apply(row)
    rec = model.decoder.apply(emb)
    return emb.ravel(), rec.ravel()


def loss_rec(model: HeteroModel, published: np.ndarray) -> float:
    """Autoencoder loss: per-user mean-square over coordinates, summed over users."""
    x = np.asarray(published, dtype=np.float64)
    rec = model.decoder.apply(model.encoder.apply(x))
    return float(np.sum(np.mean((rec - x) ** 2, axis=1)))


def _cosine(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Row-wise cosine of two (k, h) arrays, denominators floored for safety."""
    nu = np.linalg.norm(u, axis=1)
    nv = np.linalg.norm(v, axis=1)
    denom = np.maximum(nu * nv, _NORM_FLOOR)
    return np.einsum("ij,ij->i", u, v) / denom


def predict_target(model: HeteroModel, target: np.ndarray, i: int, j: int) -> float:
    """Predicted preference: clamped cosine of the user/item embeddings."""
    target = np.asarray(target, dtype=np.float64)
    row = target[i]
    col = target[:, j]
    if not np.any(row):
        raise ValueError(f"target row {i} is all-zero; no signal to embed")
    if not np.any(col):
        raise ValueError(f"target column {j} is all-zero; no signal to embed")
    u = model.user_net.apply(row.reshape(1, -1))
    v = model.item_net.apply(col.reshape(1, -1))
    c = float(_cosine(u, v)[0])
    return float(np.clip(c, CLAMP_LO, CLAMP_HI))


def loss_reg(model: HeteroModel, target: np.ndarray, pairs) -> float:
    """Normalized cross-entropy over the given (user, item) index set."""
    pairs = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
    if pairs.shape[0] == 0:
        raise ValueError("empty index set")
    target = np.asarray(target, dtype=np.float64)
    max_r = target.max()
    if not max_r > 0:
        raise ValueError("target matrix has no positive rating")
    u = model.user_net.apply(target[pairs[:, 0]])
    v = model.item_net.apply(target[:, pairs[:, 1]].T)
    y_hat = np.clip(_cosine(u, v), CLAMP_LO, CLAMP_HI)
    y = target[pairs[:, 0], pairs[:, 1]] / max_r
    return float(-np.sum(y * np.log(y_hat) + (1.0 - y) * np.log(1.0 - y_hat)))


def loss_align(u_a: np.ndarray, u_b: np.ndarray) -> float:
    """Sum of squared distances between paired user embeddings."""
    u_a = np.asarray(u_a, dtype=np.float64)
    u_b = np.asarray(u_b, dtype=np.float64)
    if u_a.shape != u_b.shape:
        raise ValueError(f"embedding shapes differ: {u_a.shape} vs {u_b.shape}")
    return float(np.sum((u_a - u_b) ** 2))


def total_loss(
    model: HeteroModel,
    published: np.ndarray,
    target: np.ndarray,
    pairs,
    alpha: float,
) -> float:
    """L_rec + L_reg + alpha * L_ali over full matrices and the index set."""
    published = np.asarray(published, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    u_a = model.encoder.apply(published)
    u_b = model.user_net.apply(target)
    return (
        loss_rec(model, published)
        + loss_reg(model, target, pairs)
        + alpha * loss_align(u_a, u_b)
    )


# --------------------------------------------------------------------------
# batched loss + exact gradients


@dataclass(frozen=True)
class TrainBatch:
    """One mini-batch: user rows plus the rating pairs drawn from them.

    ``pair_upos`` indexes into ``users`` (not into the full matrix) so the
    gradient scatter stays within the batch.  ``items`` lists the distinct
    item columns touched by the pairs and ``pair_ipos`` indexes into it.
    """

    users: np.ndarray
    items: np.ndarray
    pair_upos: np.ndarray
    pair_ipos: np.ndarray
    labels: np.ndarray

    @classmethod
    def from_pairs(cls, users, pairs_user, pairs_item, labels) -> "TrainBatch":
        users = np.asarray(users, dtype=np.int64)
        pairs_user = np.asarray(pairs_user, dtype=np.int64)
        pairs_item = np.asarray(pairs_item, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.float64)
        pos_of_user = {int(u): k for k, u in enumerate(users)}
        items, pair_ipos = np.unique(pairs_item, return_inverse=True)
        pair_upos = np.array([pos_of_user[int(u)] for u in pairs_user], dtype=np.int64)
        return cls(
            users=users,
            items=items.astype(np.int64),
            pair_upos=pair_upos,
            pair_ipos=pair_ipos.astype(np.int64),
            labels=labels,
        )


def _zero_grads(net: MLP):
    return [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(net.weights, net.biases)]


def loss_and_grads(
    model: HeteroModel,
    published: np.ndarray | None,
    target: np.ndarray,
    batch: TrainBatch,
    alpha: float,
):
    """Batch loss parts and exact parameter gradients of the total loss.

    Returns ``((l_rec, l_reg, l_ali), grads)`` where grads maps net name to
    per-layer (dW, db) pairs.  For the "sym" variant the l_reg slot holds the
    target-side reconstruction loss.
    """
    target = np.asarray(target, dtype=np.float64)
    grads: dict[str, list] = {}
    l_rec = l_reg = l_ali = 0.0

    du_a_extra = None
    u_a = cache_enc = None
    if model.encoder is not None:
        x = np.asarray(published, dtype=np.float64)[batch.users]
        u_a, cache_enc = model.encoder.forward(x)
        xhat, cache_dec = model.decoder.forward(u_a)
        resid = xhat - x
        l_rec = float(np.sum(np.mean(resid**2, axis=1)))
        dxhat = 2.0 * resid / x.shape[1]
        du_a_extra, grads["decoder"] = model.decoder.backward(cache_dec, dxhat)

    if model.variant == VARIANT_SYM:
        rows = target[batch.users]
        u_b, cache_te = model.tgt_encoder.forward(rows)
        rhat, cache_td = model.tgt_decoder.forward(u_b)
        resid_t = rhat - rows
        l_reg = float(np.sum(np.mean(resid_t**2, axis=1)))
        drhat = 2.0 * resid_t / rows.shape[1]
        du_b, grads["tgt_decoder"] = model.tgt_decoder.backward(cache_td, drhat)

        diff = u_a - u_b
        l_ali = float(np.sum(diff**2))
        du_b -= 2.0 * alpha * diff
        _, grads["tgt_encoder"] = model.tgt_encoder.backward(cache_te, du_b)
        du_a = du_a_extra + 2.0 * alpha * diff
        _, grads["encoder"] = model.encoder.backward(cache_enc, du_a)
        return (l_rec, l_reg, l_ali), grads

    # matrix-factorization head (hetero and target-only)
    max_r = target.max()
    if not max_r > 0:
        raise ValueError("target matrix has no positive rating")
    rows = target[batch.users]
    u_b, cache_u = model.user_net.forward(rows)
    cols = target[:, batch.items].T
    v_emb, cache_i = model.item_net.forward(cols)

    u = u_b[batch.pair_upos]
    v = v_emb[batch.pair_ipos]
    nu = np.linalg.norm(u, axis=1)
    nv = np.linalg.norm(v, axis=1)
    denom = np.maximum(nu * nv, _NORM_FLOOR)
    dot = np.einsum("ij,ij->i", u, v)
    c = dot / denom
    y_hat = np.clip(c, CLAMP_LO, CLAMP_HI)
    y = batch.labels
    l_reg = float(-np.sum(y * np.log(y_hat) + (1.0 - y) * np.log(1.0 - y_hat)))

    dyhat = (y_hat - y) / (y_hat * (1.0 - y_hat))
    interior = (c > CLAMP_LO) & (c < CLAMP_HI)
    dc = np.where(interior, dyhat, 0.0)
    nu2 = np.maximum(nu**2, _NORM_FLOOR**2)
    nv2 = np.maximum(nv**2, _NORM_FLOOR**2)
    du_pair = dc[:, None] * (v / denom[:, None] - (c / nu2)[:, None] * u)
    dv_pair = dc[:, None] * (u / denom[:, None] - (c / nv2)[:, None] * v)
    du_b = np.zeros_like(u_b)
    dv_emb = np.zeros_like(v_emb)
    np.add.at(du_b, batch.pair_upos, du_pair)
    np.add.at(dv_emb, batch.pair_ipos, dv_pair)

    if model.variant == VARIANT_HETERO:
        diff = u_a - u_b
        l_ali = float(np.sum(diff**2))
        du_b -= 2.0 * alpha * diff
        du_a = du_a_extra + 2.0 * alpha * diff
        _, grads["encoder"] = model.encoder.backward(cache_enc, du_a)

    _, grads["user_net"] = model.user_net.backward(cache_u, du_b)
    _, grads["item_net"] = model.item_net.backward(cache_i, dv_emb)
    return (l_rec, l_reg, l_ali), grads


def batch_loss(model, published, target, batch, alpha) -> tuple[float, float, float]:
    """The loss parts of :func:`loss_and_grads` (used by gradient checks)."""
    parts, _ = loss_and_grads(model, published, target, batch, alpha)
    return parts


def backward(model, published, target, batch, alpha):
    """Exact gradients of the batch total loss for every weight and bias."""
    _, grads = loss_and_grads(model, published, target, batch, alpha)
    return grads


# --------------------------------------------------------------------------
# optimizer + training loop


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 100.0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 128
    epochs: int = 30
    negatives_per_positive: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.negatives_per_positive < 0:
            raise ValueError("negatives_per_positive must be >= 0")


class _Adam:
    def __init__(self, model: HeteroModel, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.slots = {
            name: [
                (np.zeros_like(w), np.zeros_like(w), np.zeros_like(b), np.zeros_like(b))
                for w, b in zip(net.weights, net.biases)
            ]
            for name, net in model.nets().items()
        }

    def step(self, model: HeteroModel, grads: dict):
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.beta1**self.t
        bc2 = 1.0 - cfg.beta2**self.t
        for name, layer_grads in grads.items():
            net = getattr(model, name)
            for k, (gw, gb) in enumerate(layer_grads):
                mw, vw, mb, vb = self.slots[name][k]
                mw *= cfg.beta1
                mw += (1 - cfg.beta1) * gw
                vw *= cfg.beta2
                vw += (1 - cfg.beta2) * gw**2
                mb *= cfg.beta1
                mb += (1 - cfg.beta1) * gb
                vb *= cfg.beta2
                vb += (1 - cfg.beta2) * gb**2
                net.weights[k] -= (
                    cfg.learning_rate * (mw / bc1) / (np.sqrt(vw / bc2) + cfg.adam_eps)
                )
                net.biases[k] -= (
                    cfg.learning_rate * (mb / bc1) / (np.sqrt(vb / bc2) + cfg.adam_eps)
                )


def _draw_training_pairs(target, forbidden, cfg: TrainConfig):
    """Per-user positives plus a fixed draw of negatives (once per run)."""
    m, n = target.shape
    stream = Stream(cfg.seed).child("negatives")
    per_user = []
    for u in range(m):
        pos = np.flatnonzero(target[u] > 0)
        blocked = set(pos.tolist()) | set(forbidden.get(u, ()))
        candidates = np.array(
            [j for j in range(n) if j not in blocked], dtype=np.int64
        )
        want = cfg.negatives_per_positive * pos.size
        take = min(want, candidates.size)
        if take > 0:
            rng = stream.child(u).generator()
            negs = rng.choice(candidates, size=take, replace=False)
        else:
            negs = np.empty(0, dtype=np.int64)
        per_user.append((pos, negs))
    return per_user


def train(
    model: HeteroModel,
    published: np.ndarray | None,
    target: np.ndarray,
    cfg: TrainConfig,
    forbidden_items: dict[int, tuple[int, ...]] | None = None,
):
    """Mini-batch Adam over users; returns the per-epoch loss trace.

    `forbidden_items` lists held-out items per user that negative sampling
    must avoid (they were interacted with, just hidden from training).
    The user order and negative samples are fixed for the whole run, so the
    trace is flat when learning_rate is 0 and identical across reruns.
    """
    target = np.asarray(target, dtype=np.float64)
    m = target.shape[0]
    forbidden = forbidden_items or {}
    per_user = _draw_training_pairs(target, forbidden, cfg)
    max_r = target.max()
    if not max_r > 0:
        raise ValueError("target matrix has no positive rating")

    order = Stream(cfg.seed).child("shuffle").generator().permutation(m)
    batches = []
    for lo in range(0, m, cfg.batch_size):
        users = order[lo : lo + cfg.batch_size]
        pu, pi, lab = [], [], []
        for u in users:
            pos, negs = per_user[int(u)]
            for j in pos:
                pu.append(u)
                pi.append(j)
                lab.append(target[u, j] / max_r)
            for j in negs:
                pu.append(u)
                pi.append(j)
                lab.append(0.0)
        batches.append(TrainBatch.from_pairs(users, pu, pi, lab))

    optimizer = _Adam(model, cfg)
    trace = []
    for epoch in range(cfg.epochs):
        sums = np.zeros(3)
        for batch in batches:
            parts, grads = loss_and_grads(model, published, target, batch, cfg.alpha)
            total = parts[0] + parts[1] + cfg.alpha * parts[2]
            if not math.isfinite(total):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            sums += parts
            optimizer.step(model, grads)
        trace.append(
            {
                "epoch": epoch,
                "l_rec": float(sums[0]),
                "l_reg": float(sums[1]),
                "l_ali": float(sums[2]),
                "total": float(sums[0] + sums[1] + cfg.alpha * sums[2]),
            }
        )
    return trace


# --------------------------------------------------------------------------
# scoring + checkpoints


def score_candidates(
    model: HeteroModel, target: np.ndarray, user: int, item_idx: np.ndarray
) -> np.ndarray:
    """Ranking scores for one user's candidate items.

    Cosine variants score by the raw cosine (the training clamp would only
    collapse ties); the symmetric variant scores by its target-side
    reconstruction values.
    """
    target = np.asarray(target, dtype=np.float64)
    item_idx = np.asarray(item_idx, dtype=np.int64)
    if model.variant == VARIANT_SYM:
        rec = model.tgt_decoder.apply(
            model.tgt_encoder.apply(target[user].reshape(1, -1))
        ).ravel()
        return rec[item_idx]
    u = model.user_net.apply(target[user].reshape(1, -1))
    v = model.item_net.apply(target[:, item_idx].T)
    return _cosine(np.repeat(u, v.shape[0], axis=0), v)


MODEL_FORMAT_VERSION = 1


def save_model(model: HeteroModel, path: str | Path) -> None:
    """Checkpoint: one JSON header line + row-major float64 parameters."""
    nets = model.nets()
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "variant": model.variant,
        "h": model.h,
        "seed": model.seed,
        "layer_dims": {name: net.layer_dims for name, net in sorted(nets.items())},
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for name in sorted(nets):
            net = nets[name]
            for w, b in zip(net.weights, net.biases):
                fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_model(path: str | Path) -> HeteroModel:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        payload = fh.read()
    if header.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version in {path}")
    model = HeteroModel(
        variant=header["variant"], h=int(header["h"]), seed=int(header["seed"])
    )
    buf = np.frombuffer(payload, dtype="<f8")
    offset = 0
    for name in sorted(header["layer_dims"]):
        net = MLP(header["layer_dims"][name])
        for k, (fan_in, fan_out) in enumerate(
            zip(net.layer_dims[:-1], net.layer_dims[1:])
        ):
            need = fan_in * fan_out
            net.weights[k] = buf[offset : offset + need].reshape(fan_in, fan_out).copy()
            offset += need
            net.biases[k] = buf[offset : offset + fan_out].copy()
            offset += fan_out
        setattr(model, name, net)
    if offset != buf.size:
        raise ValueError(f"checkpoint {path} has {buf.size - offset} trailing values")
    return model
