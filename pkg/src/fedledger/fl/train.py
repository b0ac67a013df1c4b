"""Local training, FedAvg aggregation, evaluation, and retraining.

The update rule is the standard weighted-average form: the server moves
the global model by the learning rate times the data-size-weighted mean
of the clients' gradients. Clients publish update directions (effective
gradients), not updated weights: local_train returns the accumulated
parameter delta divided by the negative learning rate, so one full-batch
epoch publishes exactly the analytic gradient.

Everything here is a pure function of (parameters, data, seeds).
Aggregation sums in submission order, so replaying the same submissions
reproduces the same model bit for bit. retrain_from reruns the identical
pipeline over the surviving clients, which is what makes retraining from
a checkpoint equal, bit for bit, to a from-scratch run that never
included the unlearned client.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..seeds import derive_seed
from .backend import kernels
from .data import Dataset
from .dp import DPParams, dp_apply, submission_seed
from .params import ModelSpec


class TrainError(ValueError):
    pass


class LengthMismatch(TrainError):
    pass


class NonPositiveWeight(TrainError):
    pass


def _logits(theta: np.ndarray, spec: ModelSpec, X: np.ndarray) -> np.ndarray:
    v = spec.unpack(theta)
    if spec.arch == "logistic":
        return np.asarray(kernels.logistic_logits(v["W"], v["b"], X))
    return np.asarray(kernels.mlp_logits(v["W1"], v["b1"], v["W2"], v["b2"], X))


def _loss_grad(theta: np.ndarray, spec: ModelSpec, X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    v = spec.unpack(theta)
    grad = np.empty_like(theta)
    gv = spec.unpack(grad)
    if spec.arch == "logistic":
        loss_val, gW, gb = kernels.logistic_forward_backward(v["W"], v["b"], X, y)
        gv["W"][:] = gW
        gv["b"][:] = gb
    else:
        loss_val, gW1, gb1, gW2, gb2 = kernels.mlp_forward_backward(
            v["W1"], v["b1"], v["W2"], v["b2"], X, y
        )
        gv["W1"][:] = gW1
        gv["b1"][:] = gb1
        gv["W2"][:] = gW2
        gv["b2"][:] = gb2
    return float(loss_val), grad


def loss(theta: np.ndarray, spec: ModelSpec, dataset: Dataset) -> float:
    """Mean cross-entropy, computed via a stable log-sum-exp."""
    dataset.require_nonempty()
    logits = _logits(theta, spec, dataset.X)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(len(dataset)), dataset.y]
    return float(np.mean(log_z - picked))


def local_train(
    theta: np.ndarray,
    spec: ModelSpec,
    dataset: Dataset,
    batch_size: int,
    local_epochs: int,
    lr: float,
    seed: int,
) -> np.ndarray:
    """Minibatch SGD for local_epochs passes; returns the effective
    gradient (start minus end, over lr). batch_size <= 0 means full batch.
    Shuffling is driven solely by the seed."""
    dataset.require_nonempty()
    if lr <= 0:
        raise TrainError("lr must be positive")
    if local_epochs < 0:
        raise TrainError("local_epochs must be non-negative")
    n = len(dataset)
    if batch_size <= 0 or batch_size > n:
        batch_size = n
    start = np.array(theta, dtype=np.float64, copy=True)
    current = start.copy()
    rng = np.random.default_rng(seed)
    for _ in range(local_epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            _, grad = _loss_grad(current, spec, dataset.X[idx], dataset.y[idx])
            current -= lr * grad
    return (start - current) / lr


def fedavg(
    gradients: list[tuple[str, np.ndarray]],
    weights: list[float],
    current: np.ndarray,
    lr: float,
) -> np.ndarray:
    """Weighted-average update: new = current - lr * sum(w_i/W * g_i),
    weights normalized by their sum, summed in list order."""
    if not gradients or len(gradients) != len(weights):
        raise LengthMismatch(f"{len(gradients)} gradients vs {len(weights)} weights")
    for w in weights:
        if w <= 0:
            raise NonPositiveWeight(f"weight {w} must be positive")
    total = float(sum(weights))
    step = np.zeros_like(current)
    for (_, grad), w in zip(gradients, weights):
        step += (w / total) * grad
    return current - lr * step


@dataclass(frozen=True)
class EvalReport:
    overall_accuracy: float
    per_class_accuracy: tuple[float, ...]
    loss: float

    def class_accuracy(self, cls: int) -> float:
        return self.per_class_accuracy[cls]


def evaluate(theta: np.ndarray, spec: ModelSpec, dataset: Dataset) -> EvalReport:
    """Overall and per-class accuracy plus loss. Classes absent from the
    dataset get NaN, not zero, so 'never seen' and 'always wrong' stay
    distinguishable."""
    dataset.require_nonempty()
    logits = _logits(theta, spec, dataset.X)
    predicted = logits.argmax(axis=1)
    correct = predicted == dataset.y
    per_class = []
    for cls in range(spec.n_classes):
        mask = dataset.y == cls
        count = int(mask.sum())
        per_class.append(float(correct[mask].sum() / count) if count else float("nan"))
    return EvalReport(
        overall_accuracy=float(correct.mean()),
        per_class_accuracy=tuple(per_class),
        loss=loss(theta, spec, dataset),
    )


def train_seed(base_seed: int, client_id: str, global_epoch: int) -> int:
    """Shuffle seed for one (client, epoch); independent of every other
    submission, so any subset of clients replays identically."""
    return derive_seed(base_seed, "train", client_id, global_epoch)


def client_epoch_gradients(
    theta: np.ndarray,
    spec: ModelSpec,
    dataset: Dataset,
    round_no: int,
    local_epochs: int,
    batch_size: int,
    lr: float,
    base_seed: int,
) -> list[np.ndarray]:
    """One client's per-epoch effective gradients for one round.

    The client steps its own copy forward by each published gradient
    before computing the next epoch, mirroring exactly what a verifier
    replaying the chain would reconstruct.
    """
    out = []
    local = np.array(theta, dtype=np.float64, copy=True)
    for e in range(local_epochs):
        global_epoch = (round_no - 1) * local_epochs + e
        seed = train_seed(base_seed, dataset.owner, global_epoch)
        grad = local_train(local, spec, dataset, batch_size, 1, lr, seed)
        out.append(grad)
        local = local - lr * grad
    return out


@dataclass(frozen=True)
class RoundSchedule:
    round_no: int
    participants: tuple[str, ...]


@dataclass(frozen=True)
class TrainingPlan:
    """Everything needed to rerun rounds: who participates when, and the
    shared hyperparameters and seed they all derive from."""

    rounds: tuple[RoundSchedule, ...]
    local_epochs: int
    batch_size: int
    lr: float
    base_seed: int
    dp: DPParams = field(default_factory=DPParams)


def run_round(
    theta: np.ndarray,
    spec: ModelSpec,
    datasets: dict[str, Dataset],
    participants: tuple[str, ...],
    round_no: int,
    plan: TrainingPlan,
) -> tuple[np.ndarray, dict[str, list[np.ndarray]]]:
    """Train every participant, privatize each epoch gradient, aggregate.

    Returns the new model and the privatized per-client gradients in the
    order they would appear on chain.
    """
    published: dict[str, list[np.ndarray]] = {}
    for cid in participants:
        raw = client_epoch_gradients(
            theta, spec, datasets[cid], round_no, plan.local_epochs, plan.batch_size, plan.lr, plan.base_seed
        )
        noised = []
        for e, grad in enumerate(raw):
            global_epoch = (round_no - 1) * plan.local_epochs + e
            dp = DPParams(
                clip_norm=plan.dp.clip_norm,
                noise_multiplier=plan.dp.noise_multiplier,
                rng_seed=submission_seed(plan.base_seed, cid, global_epoch),
            )
            noised.append(dp_apply(grad, dp))
        published[cid] = noised
    new_theta = apply_round(theta, [(cid, published[cid]) for cid in participants],
                            {cid: float(len(datasets[cid])) for cid in participants}, plan.lr)
    return new_theta, published


def apply_round(
    theta: np.ndarray,
    submissions: list[tuple[str, list[np.ndarray]]],
    weights: dict[str, float],
    lr: float,
) -> np.ndarray:
    """Fold one round of published gradients into the model.

    Per client, epoch gradients are summed in ascending-epoch order; the
    client totals then enter fedavg in submission order. Both the live
    contract and retraining call this same function, so their arithmetic
    cannot diverge.
    """
    totals = []
    ws = []
    for cid, grads in submissions:
        if not grads:
            continue
        acc = np.zeros_like(theta)
        for grad in grads:
            acc += grad
        totals.append((cid, acc))
        ws.append(weights[cid])
    if not totals:
        return np.array(theta, dtype=np.float64, copy=True)
    return fedavg(totals, ws, theta, lr)


def retrain_from(
    checkpoint_model: np.ndarray,
    spec: ModelSpec,
    datasets: dict[str, Dataset],
    plan: TrainingPlan,
) -> tuple[np.ndarray, list[tuple[int, np.ndarray, dict[str, list[np.ndarray]]]]]:
    """Rerun the recorded rounds over the surviving clients.

    Returns the final model plus, per round, the model after that round
    and the privatized gradients, so the caller can re-publish the
    retraining on chain. A round whose participants all left is a no-op.
    """
    theta = np.array(checkpoint_model, dtype=np.float64, copy=True)
    history = []
    for sched in plan.rounds:
        participants = tuple(cid for cid in sched.participants if cid in datasets)
        theta, published = run_round(theta, spec, datasets, participants, sched.round_no, plan)
        history.append((sched.round_no, theta.copy(), published))
    return theta, history
