"""Training loop: AdamW + cosine annealing + gradient clipping, per-epoch
metrics, best-checkpoint retention, and bit-exact checkpoint round trips.

Single-threaded and fully seeded: two runs with the same config produce
bit-identical loss logs. Checkpoints are a directory of tensor files plus a
text manifest mapping parameter names to files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import TrainConfig, load_config_file, model_config_from, model_config_to_mapping
from .kan import prune_weights
from .losses import LossConfig, class_weights, find_kan_linears, total_loss
from .metrics import SegMetrics, compute_metrics, confusion
from .model import KarmaNet, ModelConfig, build_model
from .module import Module
from .optim import AdamW, clip_grad_norm, cosine_lr
from .synthdata import Dataset
from .tensor import Tensor, no_grad


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    log_lines: list[str] = field(default_factory=list)
    best_val_miou: float = -1.0
    best_epoch: int = -1
    checkpoint_best: Path | None = None
    checkpoint_last: Path | None = None


def split_indices(n: int, val_every: int) -> tuple[list[int], list[int]]:
    """Deterministic index-based split; val_every=5 puts 20% in validation."""
    if val_every <= 0:
        idx = list(range(n))
        return idx, []
    val = [i for i in range(n) if i % val_every == 0]
    train = [i for i in range(n) if i % val_every != 0]
    return train, val


def _augment_pair(img: np.ndarray, mask: np.ndarray, rng: np.random.Generator):
    if rng.random() < 0.5:
        img = img[:, :, ::-1]
        mask = mask[:, ::-1]
    k = int(rng.integers(4))
    if k:
        img = np.rot90(img, k, axes=(1, 2))
        mask = np.rot90(mask, k, axes=(0, 1))
    return np.ascontiguousarray(img), np.ascontiguousarray(mask)


def evaluate(
    model: Module, images: list[np.ndarray], masks: list[np.ndarray], num_classes: int,
    batch_size: int = 4,
) -> SegMetrics:
    """Confusion-matrix metrics over a sample list (eval mode, no tape)."""
    was_training = model.training
    model.eval()
    cm = None
    with no_grad():
        for start in range(0, len(images), batch_size):
            x = np.stack(images[start : start + batch_size])
            y = np.stack(masks[start : start + batch_size])
            logits = model(Tensor(x))
            pred = logits.data.argmax(axis=1)
            c = confusion(pred, y, num_classes)
            cm = c if cm is None else cm + c
    model.train(was_training)
    return compute_metrics(cm)


def train(
    train_cfg: TrainConfig,
    model_cfg: ModelConfig,
    loss_cfg: LossConfig,
    dataset: Dataset,
    out_dir,
    log=None,
) -> TrainResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = TrainResult()

    def emit(line: str) -> None:
        result.log_lines.append(line)
        if log is not None:
            log(line)

    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    k = dataset.num_classes
    train_idx, val_idx = split_indices(n, train_cfg.val_every)
    train_imgs = [dataset.images[i] for i in train_idx]
    train_masks = [dataset.masks[i] for i in train_idx]
    val_imgs = [dataset.images[i] for i in val_idx]
    val_masks = [dataset.masks[i] for i in val_idx]

    weights = class_weights(np.stack(train_masks), k)
    if model_cfg.num_classes != k:
        raise ValueError(
            f"model expects {model_cfg.num_classes} classes, dataset has {k}"
        )

    rng = np.random.Generator(np.random.PCG64(train_cfg.seed))
    model = build_model(model_cfg, seed=train_cfg.seed)
    opt = AdamW(
        model, lr=train_cfg.lr, weight_decay=train_cfg.weight_decay
    )
    steps_per_epoch = math.ceil(len(train_idx) / train_cfg.batch_size)
    total_steps = train_cfg.epochs * steps_per_epoch
    gstep = 0
    kan_layers = find_kan_linears(model)
    if train_cfg.grid_noise > 0:
        from dataclasses import replace as _dc_replace

        for lin in kan_layers:
            lin.base_grid = _dc_replace(lin.base_grid, noise_scale=train_cfg.grid_noise)

    emit(
        f"event=start samples={n} train={len(train_idx)} val={len(val_idx)} "
        f"variant={model_cfg.variant} params={model.num_params()} total_steps={total_steps}"
    )

    for epoch in range(train_cfg.epochs):
        model.train(True)
        if train_cfg.grid_noise > 0:
            for lin in kan_layers:
                lin.refresh_grid(seed=train_cfg.seed * 1000003 + epoch)
        order = rng.permutation(len(train_idx))
        epoch_loss = 0.0
        lr = train_cfg.lr
        for start in range(0, len(order), train_cfg.batch_size):
            sel = order[start : start + train_cfg.batch_size]
            xs, ys = [], []
            for j in sel:
                img, msk = train_imgs[j], train_masks[j]
                if train_cfg.augment:
                    img, msk = _augment_pair(img, msk, rng)
                xs.append(img)
                ys.append(msk)
            x = np.stack(xs)
            y = np.stack(ys)
            lr = cosine_lr(gstep, total_steps, train_cfg.lr, train_cfg.lr_min)
            logits = model(Tensor(x))
            loss = total_loss(logits, y, model, loss_cfg, weights.w)
            opt.zero_grad()
            loss.backward()
            clip_grad_norm(model.params(), train_cfg.clip_norm)
            opt.step(lr)
            gstep += 1
            epoch_loss += loss.item()
        epoch_loss /= steps_per_epoch

        if train_cfg.prune_every and (epoch + 1) % train_cfg.prune_every == 0:
            tau = model_cfg.ranks.prune_threshold
            for lin in kan_layers:
                for p in lin.prunable_weights():
                    p.data = prune_weights(p.data, tau)

        if train_cfg.grid_noise > 0:
            for lin in kan_layers:
                lin.refresh_grid(None)
        train_metrics = evaluate(model, train_imgs, train_masks, k)
        if val_idx:
            val_metrics = evaluate(model, val_imgs, val_masks, k)
        else:
            val_metrics = train_metrics
        record = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": epoch_loss,
            "train_miou_wo_bg": train_metrics.miou_wo_bg,
            "val_miou_wo_bg": val_metrics.miou_wo_bg,
        }
        result.history.append(record)
        emit(
            f"event=epoch epoch={epoch} lr={lr:.12e} train_loss={epoch_loss:.17g} "
            f"train_miou_wo_bg={train_metrics.miou_wo_bg:.17g} "
            f"val_miou_wo_bg={val_metrics.miou_wo_bg:.17g}"
        )
        if val_metrics.miou_wo_bg > result.best_val_miou:
            result.best_val_miou = val_metrics.miou_wo_bg
            result.best_epoch = epoch
            result.checkpoint_best = save_checkpoint(model, model_cfg, out / "best")

    result.checkpoint_last = save_checkpoint(model, model_cfg, out / "last")
    emit(
        f"event=done best_epoch={result.best_epoch} "
        f"best_val_miou_wo_bg={result.best_val_miou:.17g}"
    )
    return result


# -- checkpoints ------------------------------------------------------------------


def save_checkpoint(model: KarmaNet, cfg: ModelConfig, path) -> Path:
    """Directory of one tensor file per parameter/buffer plus a manifest."""
    from .tensorfile import write_tensor

    root = Path(path)
    tdir = root / "tensors"
    tdir.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, (name, p) in enumerate(model.named_params()):
        fname = f"p{i:04d}.tnsr"
        write_tensor(tdir / fname, p.data)
        lines.append(f"param {name} tensors/{fname}")
    for i, (name, b) in enumerate(model.named_buffers()):
        fname = f"b{i:04d}.tnsr"
        write_tensor(tdir / fname, b)
        lines.append(f"buffer {name} tensors/{fname}")
    (root / "manifest.txt").write_text("\n".join(lines) + "\n")
    mapping = model_config_to_mapping(cfg)
    cfg_lines = ["[model]"] + [f"{k} = {v}" for k, v in mapping.items()]
    (root / "config.ini").write_text("\n".join(cfg_lines) + "\n")
    return root


def load_checkpoint(path) -> tuple[KarmaNet, ModelConfig]:
    root = Path(path)
    sections = load_config_file(root / "config.ini")
    cfg = model_config_from(sections["model"])
    model = build_model(cfg, seed=0)
    params = dict(model.named_params())
    buffers = dict(model.named_buffers())
    from .tensorfile import read_tensor

    for line in (root / "manifest.txt").read_text().splitlines():
        if not line.strip():
            continue
        kind, name, rel = line.split()
        arr = read_tensor(root / rel)
        if kind == "param":
            target = params[name]
            if target.data.shape != arr.shape:
                raise ValueError(f"shape mismatch for {name}")
            target.data = np.ascontiguousarray(arr)
        elif kind == "buffer":
            buffers[name][:] = arr
        else:
            raise ValueError(f"bad manifest line: {line}")
    return model, cfg
