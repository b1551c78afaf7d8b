"""Deterministic training loop over a directory of images.

One seeded generator drives image choice, crop position, and flips, and the
quantizer noise is a pure function of content, so two runs with the same
seed and data produce bit-identical checkpoints.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field

import numpy as np

from . import dataio
from . import tensor as tt
from .checkpoint import save_checkpoint
from .errors import ConfigError, IngestError, NumericError
from .model import CodecModel, ModelConfig
from .optim import Adam, lr_at
from .tensor import Tensor


@dataclass
class TrainConfig:
    steps: int = 300
    batch_size: int = 4
    crop: int = 64
    base_lr: float = 1e-4
    log_every: int = 1
    checkpoint_every: int = 0  # 0 = final only
    out_path: str = "checkpoint.bin"
    log_path: str | None = None
    val_frac: float = 0.0
    split_seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.crop < 64 or self.crop % 64:
            raise ConfigError(f"crop must be >= 64 and divisible by 64, got {self.crop}")
        if not 0.0 <= self.val_frac < 1.0:
            raise ConfigError("val_frac must be in [0, 1)")


class Dataset:
    """Images filtered to those that admit the crop size."""

    def __init__(self, paths: list):
        self.paths = list(paths)
        self._cache: dict = {}

    @classmethod
    def from_dir(cls, directory: str, crop: int) -> "Dataset":
        usable = []
        for p in dataio.list_images(directory):
            try:
                h, w = dataio.probe_size(p)
            except IngestError as e:
                print(f"warning: skipping {p}: {e}", file=sys.stderr)
                continue
            if h < crop or w < crop:
                print(f"warning: excluding {p}: {h}x{w} smaller than crop {crop}",
                      file=sys.stderr)
                continue
            usable.append(p)
        if not usable:
            raise IngestError(f"{directory}: no usable images of at least "
                              f"{crop}x{crop}")
        return cls(usable)

    def __len__(self):
        return len(self.paths)

    def image(self, i: int) -> np.ndarray:
        if i not in self._cache:
            self._cache[i] = dataio.load_image(self.paths[i])
        return self._cache[i]

    def sample_batch(self, rng: np.random.Generator, batch: int,
                     crop: int) -> np.ndarray:
        out = np.empty((batch, 3, crop, crop), dtype=np.float32)
        for b in range(batch):
            img = self.image(int(rng.integers(0, len(self.paths))))
            patch = dataio.random_crop(img, crop, rng)
            if rng.random() < 0.5:
                patch = dataio.hflip(patch)
            out[b] = patch
        return out

    def split(self, val_frac: float, seed: int):
        """Deterministic holdout split; returns (train_idx, val_idx)."""
        n = len(self.paths)
        n_val = int(round(n * val_frac))
        order = np.random.default_rng(seed).permutation(n)
        return np.sort(order[n_val:]), np.sort(order[:n_val])


@dataclass
class TrainResult:
    model: CodecModel
    history: list = field(default_factory=list)
    checkpoint_path: str = ""
    final_loss: float = 0.0
    val_loss: float | None = None


def _log_record(fh, history, record):
    history.append(record)
    if fh is not None:
        fh.write(json.dumps(record) + "\n")
        fh.flush()


def train(data_dir: str, model_cfg: ModelConfig, tcfg: TrainConfig) -> TrainResult:
    ds = Dataset.from_dir(data_dir, tcfg.crop)
    val_idx = np.array([], dtype=np.int64)
    work = ds
    if tcfg.val_frac > 0:
        train_idx, val_idx = ds.split(tcfg.val_frac, tcfg.split_seed)
        if len(train_idx) == 0:
            raise ConfigError("validation split leaves no training images")
        work = Dataset([ds.paths[i] for i in train_idx])

    model = CodecModel(model_cfg)
    opt = Adam(model.params(), lr=tcfg.base_lr)
    rng = np.random.default_rng(model_cfg.seed)
    result = TrainResult(model=model)
    fh = open(tcfg.log_path, "w") if tcfg.log_path else None
    last_good_step = -1

    try:
        for step in range(tcfg.steps):
            opt.lr = lr_at(step, tcfg.steps, tcfg.base_lr)
            batch = Tensor(work.sample_batch(rng, tcfg.batch_size, tcfg.crop))
            opt.zero_grad()
            try:
                state, lb = model.forward_train(batch, mode="noise")
                lb.loss.backward()
                opt.step()
            except NumericError as e:
                _log_record(fh, result.history, {
                    "step": step, "event": "abort", "error": str(e)})
                if last_good_step >= 0:
                    save_checkpoint(tcfg.out_path, model, step=last_good_step,
                                    optimizer=opt)
                raise NumericError(
                    f"training aborted at step {step}: {e} "
                    f"(last good checkpoint: step {last_good_step})") from e
            last_good_step = step
            if step % tcfg.log_every == 0 or step == tcfg.steps - 1:
                _log_record(fh, result.history, {
                    "step": step, "L": lb.total, "R_bpp": lb.rate_bpp,
                    "D": lb.distortion, "lr": opt.lr})
            result.final_loss = lb.total
            if tcfg.checkpoint_every and (step + 1) % tcfg.checkpoint_every == 0:
                save_checkpoint(tcfg.out_path, model, step=step + 1, optimizer=opt)

        if len(val_idx):
            vals = []
            vrng = np.random.default_rng(tcfg.split_seed)
            for i in val_idx:
                img = ds.image(int(i))
                patch = dataio.random_crop(img, tcfg.crop, vrng)
                with tt.no_grad():
                    _, lb = model.forward_train(Tensor(patch[None]), mode="round")
                vals.append(lb.total)
            result.val_loss = float(np.mean(vals))
            _log_record(fh, result.history, {
                "step": tcfg.steps, "event": "validation",
                "val_L": result.val_loss, "images": len(val_idx)})

        save_checkpoint(tcfg.out_path, model, step=tcfg.steps, optimizer=opt)
        result.checkpoint_path = tcfg.out_path
    finally:
        if fh is not None:
            fh.close()
    return result
