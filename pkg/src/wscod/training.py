"""Stage 2: training the segmentation network on mixed supervision."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .data import DatasetManifest, ManifestRecord, resize_image, resize_labels
from .errors import ConfigurationError, DataError
from .losses import LossWeights, SupervisionTarget, build_mixed_target, total_loss
from .metrics import evaluate_pairs
from .net import FrequencyAwareNet, NetworkConfig
from .scribbles import ScribbleAnnotation, load_binary_mask, load_image

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer schedule, supervision mode, and ablation switches."""

    batch_size: int = 4
    lr: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 5e-4
    warmup_epochs: int = 20
    schedule: str = "cosine"
    epochs: int = 100
    seed: int = 0
    dilation_radius: int = 3
    supervision: str = "mix"  # "mix" or "mask"
    use_debias: bool = True
    literal_debias: bool = False
    augment_hflip: bool = True
    checkpoint_every: int = 0  # epochs; 0 = only at the end
    weights: LossWeights = field(default_factory=LossWeights)
    network: NetworkConfig = field(default_factory=NetworkConfig)

    def __post_init__(self):
        if min(self.batch_size, self.epochs) < 1 or self.lr <= 0:
            raise ConfigurationError("batch_size, epochs must be >= 1 and lr > 0")
        if self.warmup_epochs < 0 or self.warmup_epochs >= self.epochs:
            raise ConfigurationError("warmup_epochs must lie in [0, epochs)")
        if self.schedule != "cosine":
            raise ConfigurationError(f"unsupported schedule {self.schedule!r}")
        if self.supervision not in ("mix", "mask"):
            raise ConfigurationError("supervision must be 'mix' or 'mask'")

    def effective_weights(self) -> LossWeights:
        w = self.weights
        if self.supervision == "mask":
            w = replace(w, alpha=0.0, beta=0.0)
        elif not self.use_debias:
            w = replace(w, beta=0.0)
        return w


def toy_train_config(**overrides) -> TrainConfig:
    from .net import toy_config

    defaults = dict(epochs=5, warmup_epochs=1, network=toy_config())
    defaults.update(overrides)
    return TrainConfig(**defaults)


def lr_at(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Per-step learning rate: linear warmup then cosine decay to 0."""
    if total_steps < 1:
        raise ConfigurationError("total_steps must be >= 1")
    step = min(step, total_steps)
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    t = (step - warmup_steps) / span
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * t))


@dataclass
class TrainSample:
    image: torch.Tensor  # (3, H, W) float32 in [0, 1]
    target: SupervisionTarget
    gt: np.ndarray | None = None


def load_training_sample(record: ManifestRecord, config: TrainConfig) -> TrainSample:
    """Load, resize, and target-build one manifest record."""
    size = config.network.image_size
    image = resize_image(load_image(record.image_path), size)
    from .scribbles import load_scribbles

    labels = load_scribbles(record.scribble_path).labels if record.scribble_path else None
    if labels is None:
        raise DataError(f"record {record.image_id} has no scribbles for training")
    scribbles = ScribbleAnnotation(resize_labels(labels, size))

    pseudo_masks: list[np.ndarray] = []
    if record.pseudo_path:
        pseudo_masks.append(resize_labels(
            load_binary_mask(record.pseudo_path).astype(np.uint8), size
        ).astype(bool))

    if config.supervision == "mask":
        # Pseudo masks only; scribble evidence is not mixed in.
        y_mix = np.zeros((size, size), dtype=np.float64)
        for m in pseudo_masks:
            y_mix = np.maximum(y_mix, m.astype(np.float64))
        base = build_mixed_target([], scribbles, dilation_radius=0)
        target = SupervisionTarget(
            y_mix=y_mix, scrib_class=base.scrib_class, scrib_polarity=base.scrib_polarity
        )
    else:
        target = build_mixed_target(pseudo_masks, scribbles, config.dilation_radius)

    gt = None
    if record.gt_path:
        gt = resize_labels(load_binary_mask(record.gt_path).astype(np.uint8), size).astype(bool)
    return TrainSample(image=image_to_tensor(image), target=target, gt=gt)


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    """(H, W, 3) uint8 -> (3, H, W) float32 in [0, 1]."""
    return torch.from_numpy(np.array(image, dtype=np.uint8)).permute(2, 0, 1).float() / 255.0


def _flip_sample(sample: TrainSample) -> TrainSample:
    t = sample.target
    return TrainSample(
        image=torch.flip(sample.image, dims=[2]),
        target=SupervisionTarget(
            y_mix=t.y_mix[:, ::-1].copy(),
            scrib_class=t.scrib_class[:, ::-1].copy(),
            scrib_polarity=t.scrib_polarity[:, ::-1].copy(),
        ),
        gt=None if sample.gt is None else sample.gt[:, ::-1].copy(),
    )


def _collate(batch: list[TrainSample]) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    images = torch.stack([s.image for s in batch])
    target = {
        "y_mix": torch.from_numpy(np.stack([s.target.y_mix for s in batch])).float(),
        "scrib_class": torch.from_numpy(
            np.stack([s.target.scrib_class for s in batch])
        ).float(),
        "scrib_polarity": torch.from_numpy(
            np.stack([s.target.scrib_polarity for s in batch])
        ).long(),
    }
    return images, target


@dataclass
class TrainResult:
    checkpoint_path: Path
    loss_history: list[float]
    breakdown_history: list[dict[str, float]]
    final_loss: float


def save_checkpoint(
    path: str | Path,
    model: FrequencyAwareNet,
    optimizer: torch.optim.Optimizer | None,
    train_config: TrainConfig,
    epoch: int,
    step: int,
) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "network_config": asdict(train_config.network),
        "train_config": _train_config_dict(train_config),
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer else None,
        "epoch": epoch,
        "step": step,
    }
    torch.save(payload, path)


def _train_config_dict(config: TrainConfig) -> dict:
    data = asdict(config)
    data.pop("network")
    return data


def load_checkpoint(path: str | Path) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if "version" not in payload:
        raise DataError(f"checkpoint {path} lacks a version field")
    if payload["version"] != CHECKPOINT_VERSION:
        raise DataError(
            f"checkpoint version {payload['version']} unsupported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    return payload


def model_from_checkpoint(path: str | Path) -> tuple[FrequencyAwareNet, dict]:
    payload = load_checkpoint(path)
    config = NetworkConfig(**{
        **payload["network_config"],
        "fusion_levels": tuple(payload["network_config"]["fusion_levels"]),
    })
    model = FrequencyAwareNet(config)
    model.load_state_dict(payload["model_state"])
    model.eval()
    return model, payload


def train(
    config: TrainConfig,
    manifest: DatasetManifest,
    out_dir: str | Path,
    resume_from: str | Path | None = None,
    log_path: str | Path | None = None,
) -> TrainResult:
    """SGD training loop with per-step warmup + cosine learning rate.

    Data order, weight init, and augmentation all derive from the
    config seed, so two runs (or an interrupted run resumed from its
    checkpoint) reproduce the same loss trajectory.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = [r for r in manifest.records if r.usable_for_training]
    if not records:
        raise DataError("manifest has no trainable records")

    torch.manual_seed(config.seed)
    model = FrequencyAwareNet(config.network)
    optimizer = torch.optim.SGD(
        model.parameters(),
        lr=config.lr,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
    )

    steps_per_epoch = max(1, math.ceil(len(records) / config.batch_size))
    total_steps = config.epochs * steps_per_epoch
    warmup_steps = config.warmup_epochs * steps_per_epoch

    start_epoch = 0
    step = 0
    if resume_from is not None:
        payload = load_checkpoint(resume_from)
        model.load_state_dict(payload["model_state"])
        if payload["optimizer_state"]:
            optimizer.load_state_dict(payload["optimizer_state"])
        start_epoch = payload["epoch"]
        step = payload["step"]

    samples = [load_training_sample(r, config) for r in records]
    weights = config.effective_weights()

    loss_history: list[float] = []
    breakdown_history: list[dict[str, float]] = []
    log_file = open(log_path, "a") if log_path else None
    model.train()
    try:
        for epoch in range(start_epoch, config.epochs):
            rng = np.random.default_rng(config.seed * 100003 + epoch)
            order = rng.permutation(len(samples))
            for lo in range(0, len(order), config.batch_size):
                batch_idx = order[lo : lo + config.batch_size]
                batch = []
                for i in batch_idx:
                    sample = samples[int(i)]
                    if config.augment_hflip and rng.random() < 0.5:
                        sample = _flip_sample(sample)
                    batch.append(sample)
                images, target = _collate(batch)

                lr = lr_at(step, total_steps, warmup_steps, config.lr)
                for group in optimizer.param_groups:
                    group["lr"] = lr
                optimizer.zero_grad()
                outputs = model(images)
                loss, breakdown = total_loss(
                    outputs, target, weights, literal_debias=config.literal_debias
                )
                loss.backward()
                optimizer.step()

                loss_history.append(breakdown["total"])
                breakdown_history.append(breakdown)
                if log_file:
                    log_file.write(json.dumps({"step": step, "lr": lr, **breakdown}) + "\n")
                step += 1
            if config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
                save_checkpoint(
                    out / f"checkpoint_ep{epoch + 1:04d}.pt",
                    model, optimizer, config, epoch + 1, step,
                )
    finally:
        if log_file:
            log_file.close()

    final_path = out / "checkpoint_final.pt"
    save_checkpoint(final_path, model, optimizer, config, config.epochs, step)
    final = loss_history[-1] if loss_history else float("nan")
    logger.info("training done: %d steps, final loss %.4f", step, final)
    return TrainResult(
        checkpoint_path=final_path,
        loss_history=loss_history,
        breakdown_history=breakdown_history,
        final_loss=final,
    )


@torch.no_grad()
def predict(model: FrequencyAwareNet, image: np.ndarray) -> np.ndarray:
    """Full-resolution foreground probability map for one RGB image."""
    model.eval()
    size = model.config.image_size
    tensor = image_to_tensor(resize_image(image, size))
    outputs = model(tensor.unsqueeze(0))
    prob = outputs.final_prediction()[0].numpy()
    if prob.shape != image.shape[:2]:
        prob_img = Image.fromarray((prob * 255).astype(np.uint8))
        prob = np.asarray(
            prob_img.resize((image.shape[1], image.shape[0]), Image.BILINEAR)
        ).astype(np.float64) / 255.0
    return prob


def evaluate(
    model: FrequencyAwareNet,
    manifest: DatasetManifest,
    max_images: int | None = None,
) -> dict[str, float]:
    """Average the four metrics over the manifest's evaluable records."""
    records = [r for r in manifest.records if r.usable_for_eval]
    if not records:
        raise DataError("manifest has no records with ground truth to evaluate")
    if max_images:
        records = records[:max_images]
    pairs = []
    for rec in records:
        image = load_image(rec.image_path)
        gt = load_binary_mask(rec.gt_path)
        pairs.append((predict(model, image), gt))
    return evaluate_pairs(pairs)
