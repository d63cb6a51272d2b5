"""IDM training on ATARA datasets, prepared-input caches and checkpoints."""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..atara.dataset import AtaraDataset
from ..kinematics import GRIPPER_INDICES
from ..segmentation import SeedSpec, seeds_for_camera
from .config import AugmentConfig, ModelConfig, TrainConfig
from .model import IdmModel
from .preprocess import augment, model_views, weighted_smooth_l1

CACHE_ENV = "ATARA_LAB_CACHE"


def cache_root() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "atara_lab"))


class TrainingAborted(RuntimeError):
    """Non-finite loss; the last good checkpoint (if any) is kept."""


# ---------------------------------------------------------------- prepared inputs


@dataclass
class PreparedInputs:
    """Resized uint8 sub-model inputs for every frame of a dataset (memory-mapped)."""

    views: dict  # name -> (N, S, S, 3) uint8
    actions: np.ndarray  # (N, 14)
    methods: np.ndarray  # (N,) 1 = flood fill, 0 = fallback, -1 = not split
    trajectory: np.ndarray  # (N,) trajectory index

    def __len__(self):
        return len(self.actions)


def default_seeds(dataset: AtaraDataset) -> SeedSpec:
    return seeds_for_camera(dataset.cameras["high"], dataset.chains)


def prepare_inputs(dataset: AtaraDataset, size: int, decoupled: bool, seeds: SeedSpec | None = None,
                   cache_dir=None) -> PreparedInputs:
    """Split, crop and resize every frame once; reuse the on-disk cache when present."""
    seeds = seeds or default_seeds(dataset)
    key = hashlib.sha256(
        json.dumps([dataset.manifest.get("manifest_hash"), size, decoupled, seeds.to_dict()], sort_keys=True).encode()
    ).hexdigest()[:20]
    root = Path(cache_dir) if cache_dir is not None else cache_root() / "prepared"
    d = root / key
    names = ("left", "right", "left_wrist", "right_wrist") if decoupled else ("high",)
    n = len(dataset)
    traj = np.repeat(np.arange(len(dataset.steps)), dataset.steps).astype(np.int32)
    done = d / "done.json"
    if not done.exists():
        d.mkdir(parents=True, exist_ok=True)
        mm = {k: np.lib.format.open_memmap(d / f"{k}.npy", "w+", np.uint8, (n, size, size, 3)) for k in names}
        methods = np.full(n, -1, dtype=np.int8)
        for i in range(n):
            views, res = model_views(dataset.frame(i), seeds, size, decoupled)
            for k in names:
                mm[k][i] = views[k]
            if res is not None:
                methods[i] = 1 if res.method == "flood_fill" else 0
        for m in mm.values():
            m.flush()
        np.save(d / "methods.npy", methods)
        done.write_text(json.dumps({"n": n, "size": size, "decoupled": decoupled}))
    views = {k: np.load(d / f"{k}.npy", mmap_mode="r") for k in names}
    return PreparedInputs(views, dataset.actions().astype(np.float32), np.load(d / "methods.npy"), traj)


def split_train_val(prepared: PreparedInputs, val_fraction: float):
    """Hold out whole trajectories (the last ones) so near-duplicate frames do not leak."""
    n_traj = int(prepared.trajectory.max()) + 1 if len(prepared) else 0
    n_val = int(round(val_fraction * n_traj))
    if val_fraction > 0 and n_traj > 1:
        n_val = max(1, n_val)
    n_val = min(n_val, max(n_traj - 1, 0))
    cut = n_traj - n_val
    idx = np.arange(len(prepared))
    return idx[prepared.trajectory < cut], idx[prepared.trajectory >= cut]


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(model: IdmModel, path, iteration: int, seed: int, extra: dict | None = None) -> Path:
    """Manifest + flat little-endian float32 blob with a name -> (offset, shape) table."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    index, chunks, offset = {}, [], 0
    for name, t in model.state_dict().items():
        a = t.detach().cpu().numpy().astype("<f4").ravel()
        index[name] = {"offset": offset, "shape": list(t.shape)}
        chunks.append(a)
        offset += a.size
    blob = np.concatenate(chunks) if chunks else np.zeros(0, "<f4")
    tmp = path / "params.bin.tmp"
    blob.tofile(tmp)
    os.replace(tmp, path / "params.bin")
    manifest = {
        "format_version": 1,
        "model_config": model.cfg.to_dict(),
        "config_hash": model.cfg.hash(),
        "iteration": iteration,
        "seed": seed,
        "index": index,
        "chain_bounds": {"center": model_bounds(model)[0], "radius": model_bounds(model)[1]},
        **(extra or {}),
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def model_bounds(model: IdmModel):
    sd = model.state_dict()
    mids = [v.tolist() for k, v in sd.items() if k.endswith("scale.center")]
    halves = [v.tolist() for k, v in sd.items() if k.endswith("scale.radius")]
    return mids, halves


def load_checkpoint(path, chains) -> IdmModel:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    cfg = ModelConfig.from_dict(manifest["model_config"])
    model = IdmModel(cfg, chains)
    blob = np.fromfile(path / "params.bin", dtype="<f4")
    state = {}
    for name, info in manifest["index"].items():
        size = int(np.prod(info["shape"])) if info["shape"] else 1
        arr = blob[info["offset"] : info["offset"] + size].reshape(info["shape"])
        state[name] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    model.eval()
    model.checkpoint_manifest = manifest
    return model


# ---------------------------------------------------------------- training


def lr_factor(step: int, warmup: int, total: int) -> float:
    """Linear warmup to 1, then cosine decay to 0 at ``total``."""
    if warmup > 0 and step < warmup:
        return (step + 1) / warmup
    progress = (step - warmup) / max(1, total - warmup)
    return 0.5 * (1.0 + math.cos(math.pi * min(1.0, progress)))


def make_optimizer(model: IdmModel, cfg: TrainConfig):
    groups = [
        {"params": list(model.encoder_parameters()), "lr": cfg.lr_encoder, "base_lr": cfg.lr_encoder},
        {"params": model.head_parameters(), "lr": cfg.lr_head, "base_lr": cfg.lr_head},
    ]
    return torch.optim.AdamW(groups, betas=tuple(cfg.betas), eps=cfg.eps, weight_decay=cfg.weight_decay)


def batch_inputs(prepared: PreparedInputs, idx, names, aug: AugmentConfig, gen, train: bool) -> dict:
    return {k: augment(np.asarray(prepared.views[k][idx]), aug, gen, train=train) for k in names}


def threshold_pass(pred: np.ndarray, gt: np.ndarray, joint_thr: float = 0.06, grip_thr: float = 0.5):
    thr = np.full(14, joint_thr)
    thr[list(GRIPPER_INDICES)] = grip_thr
    ok = np.abs(pred - gt) < thr
    return ok.all(-1), ok


@torch.no_grad()
def predict_prepared(model: IdmModel, prepared: PreparedInputs, idx, aug: AugmentConfig, batch: int = 32):
    from .model import clamp_grippers

    out = []
    for s in range(0, len(idx), batch):
        b = np.asarray(idx[s : s + batch])
        out.append(clamp_grippers(model(batch_inputs(prepared, b, model.inputs, aug, None, False))).numpy())
    return np.concatenate(out) if out else np.zeros((0, 14))


@dataclass
class TrainResult:
    model: IdmModel
    log: list
    checkpoint: Path | None = None


def train_idm(dataset, model_cfg: ModelConfig, train_cfg: TrainConfig, seed: int, chains=None,
              aug_cfg: AugmentConfig | None = None, out_dir=None, log=None, prepared: PreparedInputs | None = None,
              seeds: SeedSpec | None = None, extra: dict | None = None) -> TrainResult:
    """Minimize the weighted smooth-L1 loss over (crops, wrist views) -> actions.

    Logged entries carry the iteration, training loss and (every
    ``val_every`` iterations) held-out sample accuracy. A non-finite loss
    raises :class:`TrainingAborted`; the last saved checkpoint is untouched.
    ``extra`` is merged into the checkpoint manifest.
    """
    aug = aug_cfg or AugmentConfig()
    chains = chains or dataset.chains
    if prepared is None:
        if len(dataset) == 0:
            raise ValueError("dataset is empty")
        prepared = prepare_inputs(dataset, model_cfg.encoder.input_size, model_cfg.decoupled, seeds)
    if len(prepared) == 0:
        raise ValueError("dataset is empty")
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    model = IdmModel(model_cfg, chains)
    model.train()
    opt = make_optimizer(model, train_cfg)
    train_idx, val_idx = split_train_val(prepared, train_cfg.val_fraction)
    if len(train_idx) == 0:
        train_idx = np.arange(len(prepared))
    val_idx = val_idx[: train_cfg.val_samples] if len(val_idx) else val_idx
    weights = torch.tensor(train_cfg.loss_weights, dtype=torch.float32)
    history: list = []
    ckpt = Path(out_dir) if out_dir is not None else None
    names = model.inputs
    for it in range(train_cfg.iterations):
        f = lr_factor(it, train_cfg.warmup, train_cfg.iterations)
        for g in opt.param_groups:
            g["lr"] = g["base_lr"] * f
        pick = torch.randint(len(train_idx), (train_cfg.batch_size,), generator=gen).numpy()
        idx = np.sort(train_idx[pick])
        batch = batch_inputs(prepared, idx, names, aug, gen, True)
        target = torch.from_numpy(np.asarray(prepared.actions[idx]))
        pred = model(batch)
        loss = weighted_smooth_l1(pred, target, weights, train_cfg.loss_beta)
        if not torch.isfinite(loss):
            raise TrainingAborted(f"non-finite loss at iteration {it}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        entry = {"iteration": it, "loss": float(loss.item())}
        last = it == train_cfg.iterations - 1
        if len(val_idx) and ((it + 1) % train_cfg.val_every == 0 or last):
            model.eval()
            p = predict_prepared(model, prepared, val_idx, aug)
            sample_ok, dim_ok = threshold_pass(p, prepared.actions[val_idx])
            entry.update(val_accuracy=float(sample_ok.mean()), val_dim_accuracy=dim_ok.mean(0).tolist())
            model.train()
        history.append(entry)
        if log is not None:
            log(entry)
        if ckpt is not None and train_cfg.checkpoint_every and (it + 1) % train_cfg.checkpoint_every == 0:
            save_checkpoint(model, ckpt, it + 1, seed, extra)
    model.eval()
    if ckpt is not None:
        save_checkpoint(model, ckpt, train_cfg.iterations, seed, {**(extra or {}), "train_config": train_cfg.to_dict()})
        (ckpt / "train_log.json").write_text(json.dumps(history))
    return TrainResult(model, history, ckpt)
