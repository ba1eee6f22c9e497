"""Training loop, evaluation, gradient checking, and the two-stage transfer
experiment comparing Xavier initialization against stage-1 warm starts."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import nn
from .pipeline import EmptyManifestError, fmt, load_frames
from .rng import derive_stream

DEFAULT_ACCURACY_TOL_DEG = 1.5


class EmptyTestSetError(Exception):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    init: str = "xavier"  # "xavier" or "ckpt:<path>"
    accuracy_tol_deg: float = DEFAULT_ACCURACY_TOL_DEG

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.init != "xavier" and not self.init.startswith("ckpt:"):
            raise ValueError(f"init must be 'xavier' or 'ckpt:<path>', got {self.init!r}")


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float


def initial_network(config: TrainConfig, dtype=np.float32) -> nn.Network:
    if config.init == "xavier":
        return nn.Network.xavier(derive_stream(config.seed, 0xC0FFEE), dtype)
    return nn.load_checkpoint(config.init[len("ckpt:"):], dtype)


def _shuffled_indices(n: int, seed: int, epoch: int) -> list[int]:
    stream = derive_stream(seed, epoch)
    order = list(range(n))
    for i in range(n - 1, 0, -1):
        j = stream.next_raw() % (i + 1)
        order[i], order[j] = order[j], order[i]
    return order


def _validate(network: nn.Network, images: np.ndarray, labels_norm: np.ndarray, tol_deg: float):
    pred = network.predict(images).astype(np.float64)
    err = pred - labels_norm
    loss = float(np.mean(err**2))
    acc = float(np.mean(np.abs(err) * nn.STEER_NORM_DEG <= tol_deg))
    return loss, acc


def fit(
    network: nn.Network,
    train_images: np.ndarray,
    train_labels_deg: np.ndarray,
    val_images: np.ndarray,
    val_labels_deg: np.ndarray,
    config: TrainConfig,
) -> tuple[nn.Network, list[EpochMetrics]]:
    """Mini-batch SGD on MSE of normalized steering. Mutates and returns
    `network` (final weights) plus per-epoch metrics; the best-validation
    network is returned via metrics consumers through `fit_with_best`."""
    network, best, metrics = _fit_impl(
        network, train_images, train_labels_deg, val_images, val_labels_deg, config
    )
    return network, metrics


def fit_with_best(network, train_images, train_labels_deg, val_images, val_labels_deg, config):
    """Like `fit` but also returns the best-validation-loss snapshot."""
    return _fit_impl(network, train_images, train_labels_deg, val_images, val_labels_deg, config)


def _fit_impl(network, train_images, train_labels_deg, val_images, val_labels_deg, config):
    y_train = np.asarray(train_labels_deg, dtype=np.float64) / nn.STEER_NORM_DEG
    y_val = np.asarray(val_labels_deg, dtype=np.float64) / nn.STEER_NORM_DEG
    n = len(train_images)
    if n == 0 or len(val_images) == 0:
        raise EmptyManifestError("training and validation sets must be non-empty")

    metrics: list[EpochMetrics] = []
    best_loss = math.inf
    best = network.copy()
    for epoch in range(1, config.epochs + 1):
        order = _shuffled_indices(n, config.seed, epoch)
        total, seen = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            x = nn.normalize_images(train_images[idx], network.dtype)
            loss, grads = network.loss_and_grads(x, y_train[idx])
            network.sgd_step(grads, config.learning_rate)
            total += loss * len(idx)
            seen += len(idx)
        val_loss, val_acc = _validate(network, val_images, y_val, config.accuracy_tol_deg)
        metrics.append(EpochMetrics(epoch, total / seen, val_loss, val_acc))
        if val_loss < best_loss:
            best_loss = val_loss
            best = network.copy()
    return network, best, metrics


def write_metrics_csv(path, metrics: list[EpochMetrics]) -> None:
    lines = ["epoch,train_loss,val_loss,val_acc"]
    lines += [
        f"{m.epoch},{fmt(m.train_loss)},{fmt(m.val_loss)},{fmt(m.val_acc)}" for m in metrics
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def train(
    train_dir, val_dir, config: TrainConfig, out_path
) -> tuple[Path, list[EpochMetrics]]:
    """Train from manifest directories; saves final and best checkpoints and
    a metrics CSV alongside `out_path`."""
    train_images, train_labels = load_frames(train_dir)
    val_images, val_labels = load_frames(val_dir)
    network = initial_network(config)
    network, best, metrics = _fit_impl(
        network, train_images, train_labels, val_images, val_labels, config
    )
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    nn.save_checkpoint(out_path, network)
    nn.save_checkpoint(out_path.with_suffix(out_path.suffix + ".best"), best)
    write_metrics_csv(out_path.with_suffix(out_path.suffix + ".metrics.csv"), metrics)
    return out_path, metrics


def evaluate(
    network: nn.Network, test_images: np.ndarray, test_labels_deg: np.ndarray,
    per_frame_csv=None,
) -> float:
    """Mean absolute steering deviation in degrees on a test set."""
    if len(test_images) == 0:
        raise EmptyTestSetError("test set is empty")
    pred = network.predict(test_images).astype(np.float64)
    deviations = np.abs(
        nn.STEER_NORM_DEG * (pred - np.asarray(test_labels_deg, dtype=np.float64) / nn.STEER_NORM_DEG)
    )
    if per_frame_csv is not None:
        lines = ["frame_index,label_deg,pred_deg,deviation_deg"]
        lines += [
            f"{i},{fmt(test_labels_deg[i])},{fmt(pred[i] * nn.STEER_NORM_DEG)},{fmt(deviations[i])}"
            for i in range(len(deviations))
        ]
        Path(per_frame_csv).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return float(np.mean(deviations))


def evaluate_checkpoint(ckpt_path, data_dir, per_frame_csv=None) -> float:
    images, labels = load_frames(data_dir)
    return evaluate(nn.load_checkpoint(ckpt_path), images, labels, per_frame_csv)


def gradient_check(seed: int = 0, n_probes: int = 200, batch: int = 4, h: float = 1e-7):
    """Analytic vs central finite-difference gradients in float64.

    The step size balances truncation error against ReLU kink crossings: a
    perturbation of an early conv weight shifts every downstream
    pre-activation, so a large h flips activation signs and corrupts the
    finite difference long before float64 roundoff matters. Probes
    `n_probes` randomly chosen parameters spread across every tensor;
    returns (max relative error, per-probe list).
    """
    stream = derive_stream(seed, 0)
    network = nn.Network.xavier(stream, np.float64)
    gen = np.random.Generator(np.random.PCG64(stream.next_raw()))
    images = gen.integers(0, 256, size=(batch, nn.INPUT_HEIGHT, nn.INPUT_WIDTH), dtype=np.uint8)
    labels = gen.uniform(-1.0, 1.0, size=batch)
    x = nn.normalize_images(images, np.float64)

    _, grads = network.loss_and_grads(x, labels)

    def loss_at() -> float:
        pred = network.forward(x)
        return float(np.mean((pred - labels) ** 2))

    # At least one probe in every tensor, remainder spread at random.
    probes = []
    for t in range(len(network.params)):
        probes.append((t, int(gen.integers(network.params[t].size))))
    while len(probes) < n_probes:
        t = int(gen.integers(len(network.params)))
        probes.append((t, int(gen.integers(network.params[t].size))))

    results = []
    max_rel = 0.0
    for t, flat_idx in probes:
        p = network.params[t].reshape(-1)
        original = p[flat_idx]
        p[flat_idx] = original + h
        lp = loss_at()
        p[flat_idx] = original - h
        lm = loss_at()
        p[flat_idx] = original
        fd = (lp - lm) / (2.0 * h)
        analytic = float(grads[t].reshape(-1)[flat_idx])
        scale = max(abs(fd), abs(analytic))
        rel = abs(fd - analytic) / scale if scale > 1e-10 else abs(fd - analytic)
        results.append((t, flat_idx, analytic, fd, rel))
        max_rel = max(max_rel, rel)
    return max_rel, results


@dataclass
class TransferArm:
    init: str
    epochs_to_threshold: int | None
    final_val_loss: float
    test_deviation_deg: float
    val_losses: list[float]


def _epochs_to_threshold(val_losses: list[float], threshold: float) -> int | None:
    for i, loss in enumerate(val_losses, start=1):
        if loss <= threshold:
            return i
    return None


def transfer_experiment(
    stage1_dir,
    stage2_dir,
    seeds: list[int],
    config: TrainConfig | None = None,
    loss_threshold: float | None = None,
    out_report=None,
) -> dict:
    """Stage-1 pretraining, then per-seed stage-2 comparison of Xavier vs
    warm-started training with identical hyper-parameters.

    Each directory must contain train/ and val/ split manifests (stage 2
    additionally test/). The convergence threshold defaults to each seed's
    Xavier-arm final validation loss.
    """
    config = config or TrainConfig()
    stage1_dir, stage2_dir = Path(stage1_dir), Path(stage2_dir)

    s1_train = load_frames(stage1_dir / "train")
    s1_val = load_frames(stage1_dir / "val")
    s2_train = load_frames(stage2_dir / "train")
    s2_val = load_frames(stage2_dir / "val")
    s2_test = load_frames(stage2_dir / "test")

    stage1_net = nn.Network.xavier(derive_stream(config.seed, 0xC0FFEE))
    stage1_net, stage1_best, stage1_metrics = _fit_impl(
        stage1_net, s1_train[0], s1_train[1], s1_val[0], s1_val[1], config
    )

    per_seed = []
    transfer_faster = 0
    deviation_better = 0
    for seed in seeds:
        seed_config = replace(config, seed=seed)
        arms = {}
        for arm_name in ("xavier", "transfer"):
            if arm_name == "xavier":
                net = nn.Network.xavier(derive_stream(seed, 0xC0FFEE))
            else:
                net = stage1_best.copy()
            net, _, metrics = _fit_impl(
                net, s2_train[0], s2_train[1], s2_val[0], s2_val[1], seed_config
            )
            deviation = evaluate(net, s2_test[0], s2_test[1])
            arms[arm_name] = TransferArm(
                init=arm_name,
                epochs_to_threshold=None,
                final_val_loss=metrics[-1].val_loss,
                test_deviation_deg=deviation,
                val_losses=[m.val_loss for m in metrics],
            )
        threshold = loss_threshold if loss_threshold is not None else arms["xavier"].final_val_loss
        for arm in arms.values():
            arm.epochs_to_threshold = _epochs_to_threshold(arm.val_losses, threshold)
        xavier_epochs = arms["xavier"].epochs_to_threshold or config.epochs
        transfer_epochs = arms["transfer"].epochs_to_threshold
        if transfer_epochs is not None and transfer_epochs < xavier_epochs:
            transfer_faster += 1
        if arms["transfer"].test_deviation_deg <= arms["xavier"].test_deviation_deg:
            deviation_better += 1
        per_seed.append(
            {
                "seed": seed,
                "threshold": threshold,
                "arms": {
                    name: {
                        "epochs_to_threshold": arm.epochs_to_threshold,
                        "final_val_loss": arm.final_val_loss,
                        "test_deviation_deg": arm.test_deviation_deg,
                        "val_losses": arm.val_losses,
                    }
                    for name, arm in arms.items()
                },
            }
        )

    mean_dev = lambda arm: float(
        np.mean([s["arms"][arm]["test_deviation_deg"] for s in per_seed])
    )
    xavier_dev, transfer_dev = mean_dev("xavier"), mean_dev("transfer")
    report = {
        "config": {
            "learning_rate": config.learning_rate,
            "batch_size": config.batch_size,
            "epochs": config.epochs,
            "stage1_seed": config.seed,
            "seeds": list(seeds),
            "loss_threshold": loss_threshold,
        },
        "stage1_final_val_loss": stage1_metrics[-1].val_loss,
        "per_seed": per_seed,
        "summary": {
            "seeds_transfer_converges_faster": transfer_faster,
            "seeds_transfer_deviation_leq": deviation_better,
            "n_seeds": len(seeds),
            "mean_test_deviation_deg": {"xavier": xavier_dev, "transfer": transfer_dev},
            "relative_deviation_improvement": (
                (xavier_dev - transfer_dev) / xavier_dev if xavier_dev > 0 else 0.0
            ),
        },
    }
    if out_report is not None:
        Path(out_report).write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return report
