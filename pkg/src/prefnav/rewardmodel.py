"""Preference reward model: logistic pairwise fit over trajectory returns.

The model scores single (state, action) steps; an item's return is the sum of
its step scores, and the probability that item 1 is preferred over item 2 is
``sigmoid(R(item1) - R(item2))``. Training minimizes the cross-entropy of
these probabilities against the recorded choices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .querygen import PreferencePair, item_steps
from .storage import load_arrays, save_arrays


class RewardModel:
    """Scalar step-reward network (critic architecture) plus output normalization."""

    def __init__(
        self,
        trunk_widths: tuple[int, ...] = (400, 300),
        encoder_hidden: int = nn.ENCODER_HIDDEN,
        seed: int = 0,
        dtype=np.float64,
    ):
        self.net = nn.QNet(
            trunk_widths=trunk_widths,
            encoder_hidden=encoder_hidden,
            rng=np.random.default_rng(seed),
            dtype=dtype,
        )
        self.norm_mean = 0.0
        self.norm_std = 1.0
        self.metadata: dict = {}

    def score(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Raw per-step scores (the quantity the pairwise fit is trained on)."""
        out = self.net.forward(obs, actions)
        return np.atleast_1d(np.asarray(out, dtype=float))

    def item_return(self, item) -> float:
        obs, actions = item_steps(item)
        return float(self.score(obs, actions).sum())

    def normalized(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Scores mapped to mean 0 / std 1 on the normalization sample."""
        return (self.score(obs, actions) - self.norm_mean) / self.norm_std

    def fit_normalization(self, obs: np.ndarray, actions: np.ndarray) -> None:
        scores = self.score(obs, actions)
        self.norm_mean = float(scores.mean())
        self.norm_std = float(max(scores.std(), 1e-12))

    def clone(self) -> "RewardModel":
        dup = RewardModel.__new__(RewardModel)
        dup.net = self.net.clone()
        dup.norm_mean = self.norm_mean
        dup.norm_std = self.norm_std
        dup.metadata = dict(self.metadata)
        return dup

    def save(self, path) -> None:
        meta = self.net.meta()
        meta.update(
            {
                "kind": "reward_model",
                "norm_mean": self.norm_mean,
                "norm_std": self.norm_std,
                "metadata": self.metadata,
            }
        )
        save_arrays(path, nn.net_arrays(self.net), meta)

    @classmethod
    def load(cls, path) -> "RewardModel":
        arrays, meta = load_arrays(path)
        model = cls(
            trunk_widths=tuple(meta["trunk_widths"]),
            encoder_hidden=meta["encoder_hidden"],
            dtype=np.dtype(meta.get("dtype", "float64")),
        )
        nn.set_net_arrays(model.net, arrays)
        model.norm_mean = meta["norm_mean"]
        model.norm_std = meta["norm_std"]
        model.metadata = meta.get("metadata", {})
        return model


def _sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    x = np.asarray(x, dtype=float)
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return out


def preference_probability(model: RewardModel, item1, item2) -> float:
    """P[item1 preferred over item2] under the pairwise logistic model."""
    return float(_sigmoid(model.item_return(item1) - model.item_return(item2)))


def preference_loss(model: RewardModel, pairs: list[PreferencePair]) -> float:
    """Mean cross-entropy of the model's preference probabilities vs the labels."""
    losses = []
    for pair in pairs:
        x = model.item_return(pair.first) - model.item_return(pair.second)
        if pair.choice == "second":
            x = -x
        losses.append(np.logaddexp(0.0, -x))
    return float(np.mean(losses))


def evaluate_accuracy(model: RewardModel, pairs: list[PreferencePair]) -> float:
    """Fraction of labeled pairs whose predicted winner matches the label."""
    labeled = [p for p in pairs if p.is_labeled()]
    if not labeled:
        raise ValueError("no labeled pairs to evaluate")
    hits = 0
    for pair in labeled:
        predicted_first = preference_probability(model, pair.first, pair.second) > 0.5
        hits += int(predicted_first == (pair.choice == "first"))
    return hits / len(labeled)


@dataclass
class _PackedPairs:
    """Flattened step arrays with per-item slices, for batched training."""

    obs: np.ndarray
    actions: np.ndarray
    slices: list[tuple[int, int, int, int]]  # first_start, first_end, second_start, second_end
    labels: np.ndarray                       # 1.0 where "first" was chosen


def _pack(pairs: list[PreferencePair]) -> _PackedPairs:
    obs_blocks, act_blocks, slices, labels = [], [], [], []
    cursor = 0
    for pair in pairs:
        spans = []
        for item in (pair.first, pair.second):
            obs, act = item_steps(item)
            obs_blocks.append(obs)
            act_blocks.append(act)
            spans.append((cursor, cursor + len(act)))
            cursor += len(act)
        slices.append((*spans[0], *spans[1]))
        labels.append(1.0 if pair.choice == "first" else 0.0)
    return _PackedPairs(
        obs=np.concatenate(obs_blocks, axis=0),
        actions=np.concatenate(act_blocks, axis=0),
        slices=slices,
        labels=np.asarray(labels),
    )


def _epoch_update(
    model: RewardModel,
    packed: _PackedPairs,
    opt: nn.AdamState,
    lr: float,
    pair_order: np.ndarray,
    batch_pairs: int | None,
) -> float:
    """One pass over the pairs; returns the mean cross-entropy before the update."""
    n_pairs = len(packed.slices)
    batch = n_pairs if batch_pairs is None else min(batch_pairs, n_pairs)
    total_loss = 0.0
    for lo in range(0, n_pairs, batch):
        chunk = pair_order[lo : lo + batch]
        rows = np.concatenate(
            [np.arange(packed.slices[p][0], packed.slices[p][1]) for p in chunk]
            + [np.arange(packed.slices[p][2], packed.slices[p][3]) for p in chunk]
        )
        scores, cache = model.net.forward_cached(packed.obs[rows], packed.actions[rows])
        # Rebuild, per pair, where its two items landed inside `rows`.
        grad = np.zeros_like(scores)
        offset = 0
        firsts = []
        for p in chunk:
            a, b, _, _ = packed.slices[p]
            firsts.append((offset, offset + (b - a)))
            offset += b - a
        seconds = []
        for p in chunk:
            _, _, c, d = packed.slices[p]
            seconds.append((offset, offset + (d - c)))
            offset += d - c
        for (fa, fb), (sa, sb), p in zip(firsts, seconds, chunk):
            r_first = scores[fa:fb].sum()
            r_second = scores[sa:sb].sum()
            x = r_first - r_second
            y = packed.labels[p]
            prob = float(_sigmoid(x))
            total_loss += float(np.logaddexp(0.0, -x if y == 1.0 else x))
            dx = (prob - y) / len(chunk)
            grad[fa:fb] += dx
            grad[sa:sb] -= dx
        grads, _ = model.net.backward(cache, grad)
        nn.adam_step(model.net.params(), grads, opt, lr)
    return total_loss / n_pairs


def train_reward_model(
    dataset: list[PreferencePair],
    epochs: int = 10,
    lr: float = 1e-4,
    *,
    seed: int = 0,
    holdout_fraction: float = 0.2,
    batch_pairs: int | None = 1,
    norm_sample: tuple[np.ndarray, np.ndarray] | None = None,
    trunk_widths: tuple[int, ...] = (400, 300),
    encoder_hidden: int = nn.ENCODER_HIDDEN,
    dtype=np.float32,
) -> tuple[RewardModel, list[dict]]:
    """Fit a reward model on labeled pairs; keep the best epoch's snapshot.

    Pairs marked "skip" (or unlabeled) are dropped. The best epoch is judged
    on a held-out split when the dataset is big enough, otherwise on the
    training pairs. Afterwards the output normalization is fitted on
    ``norm_sample`` (a 10k-state sample of the base policy's replay buffer in
    the pipeline) or, as a fallback, on the dataset's own steps.
    """
    labeled = [p for p in dataset if p.is_labeled()]
    if not labeled:
        raise ValueError("training requires at least one labeled pair")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(labeled))
    n_holdout = int(len(labeled) * holdout_fraction) if len(labeled) >= 5 else 0
    holdout = [labeled[i] for i in order[:n_holdout]]
    train = [labeled[i] for i in order[n_holdout:]]

    model = RewardModel(
        trunk_widths=trunk_widths, encoder_hidden=encoder_hidden, seed=seed, dtype=dtype
    )
    packed = _pack(train)
    opt = nn.AdamState()
    best_score, best_params, best_epoch = -np.inf, None, 0
    history: list[dict] = []
    for epoch in range(1, epochs + 1):
        pair_order = rng.permutation(len(train))
        loss = _epoch_update(model, packed, opt, lr, pair_order, batch_pairs)
        score = evaluate_accuracy(model, holdout if holdout else train)
        history.append(
            {
                "epoch": epoch,
                "loss": loss,
                "accuracy": score,
                "split": "holdout" if holdout else "train",
            }
        )
        if score > best_score:
            best_score, best_epoch = score, epoch
            best_params = [p.copy() for p in model.net.params()]
    if best_params is not None:
        for p, v in zip(model.net.params(), best_params):
            p[...] = v

    if norm_sample is not None:
        model.fit_normalization(*norm_sample)
    else:
        model.fit_normalization(packed.obs, packed.actions)
    model.metadata = {
        "n_pairs": len(labeled),
        "n_train": len(train),
        "n_holdout": len(holdout),
        "epochs": epochs,
        "lr": lr,
        "best_epoch": best_epoch,
        "best_accuracy": float(best_score),
        "sources": sorted({p.source for p in labeled}),
    }
    return model, history
