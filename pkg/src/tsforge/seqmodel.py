"""Masked encoder-decoder that extrapolates a sequence from its first frame.

Training uses teacher forcing: encoder and decoder both see frames
0..T-2, targets are frames 1..T-1. Encoder blocks are causal; the last one
additionally restricts each position to its ``window`` most recent positions.
Generation grows the prefix one frame at a time.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import netcore as nc
from .segloss import IntervalSegmentation, interval_losses, plain_mse, weighted_mse


def build_causal_mask(length: int) -> np.ndarray:
    if length < 1:
        raise ValueError("mask length must be >= 1")
    keep = np.tril(np.ones((length, length), dtype=bool))
    return np.where(keep, 0.0, nc.MASK_VALUE)


def build_view_mask(length: int, window: int) -> np.ndarray:
    """Row i sees keys max(0, i-window+1)..i."""
    if window < 1:
        raise ValueError("window size must be >= 1")
    if length < 1:
        raise ValueError("mask length must be >= 1")
    i = np.arange(length)[:, None]
    j = np.arange(length)[None, :]
    keep = (j <= i) & (j >= i - window + 1)
    return np.where(keep, 0.0, nc.MASK_VALUE)


def sinusoidal_positions(length: int, width: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    rate = np.exp(-math.log(10000.0) * (np.arange(0, width, 2) / width))
    table = np.zeros((length, width))
    table[:, 0::2] = np.sin(pos * rate)
    table[:, 1::2] = np.cos(pos * rate[: width // 2])
    return table


@dataclass
class SeqModelConfig:
    width: int = 64
    heads: int = 4
    depth: int = 2
    window: int = 3
    length: int = 64
    features: int = 8
    classes: int = 10
    ffn_mult: int = 2
    dtype: str = "float32"
    seed: int = 0

    def validate(self):
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")
        if self.window < 1 or self.depth < 1 or self.length < 1:
            raise ValueError("window, depth and length must be >= 1")


class SeqModel:
    def __init__(self, config: SeqModelConfig):
        config.validate()
        self.config = c = config
        with nc.default_dtype(c.dtype):
            self._build()
        self.positions = sinusoidal_positions(c.length, c.width)
        self._masks = {}

    def _build(self):
        c = self.config
        s = self.store = nc.ParameterStore(c.seed)
        w = c.width
        s.dense("enc_in", c.features, w)
        s.dense("dec_in", c.features, w)
        s.embedding("label_emb", c.classes, w)
        for i in range(c.depth):
            p = f"enc{i}"
            nc.init_attention(s, f"{p}.attn", w)
            s.norm(f"{p}.norm1", w)
            s.dense(f"{p}.ff1", w, c.ffn_mult * w)
            s.dense(f"{p}.ff2", c.ffn_mult * w, w)
            s.norm(f"{p}.norm2", w)
        for i in range(c.depth):
            p = f"dec{i}"
            nc.init_attention(s, f"{p}.self", w)
            s.norm(f"{p}.norm1", w)
            nc.init_attention(s, f"{p}.cross", w)
            s.norm(f"{p}.norm2", w)
            s.dense(f"{p}.ff1", w, c.ffn_mult * w)
            s.dense(f"{p}.ff2", c.ffn_mult * w, w)
            s.norm(f"{p}.norm3", w)
        s.dense("head", w, c.features)

    def masks(self, length: int):
        """(causal mask, causal-and-window mask) for an input of ``length``."""
        if length not in self._masks:
            causal = build_causal_mask(length)
            self._masks[length] = (causal, np.minimum(causal, build_view_mask(length, self.config.window)))
        return self._masks[length]

    def _embed(self, name, frames, labels):
        L = frames.shape[1]
        if L > self.config.length:
            raise ValueError(f"input length {L} exceeds configured length {self.config.length}")
        s = self.store
        return nc.dense(s, name, frames) + self.positions[:L] + nc.reshape(
            s["label_emb"][labels], (len(labels), 1, self.config.width))

    def _ffn(self, p, x):
        s = self.store
        return nc.dense(s, f"{p}.ff2", nc.gelu(nc.dense(s, f"{p}.ff1", x)))

    def encode(self, frames, labels) -> nc.Tensor:
        c, s = self.config, self.store
        causal, view = self.masks(frames.shape[1])
        x = self._embed("enc_in", frames, labels)
        for i in range(c.depth):
            p = f"enc{i}"
            mask = view if i == c.depth - 1 else causal
            x = nc.norm(s, f"{p}.norm1", x + nc.multi_head_attention(s, f"{p}.attn", x, x, mask, c.heads))
            x = nc.norm(s, f"{p}.norm2", x + self._ffn(p, x))
        return x

    def decode(self, frames, labels, memory) -> nc.Tensor:
        c, s = self.config, self.store
        causal, _ = self.masks(frames.shape[1])
        y = self._embed("dec_in", frames, labels)
        for i in range(c.depth):
            p = f"dec{i}"
            y = nc.norm(s, f"{p}.norm1", y + nc.multi_head_attention(s, f"{p}.self", y, y, causal, c.heads))
            y = nc.norm(s, f"{p}.norm2", y + nc.multi_head_attention(s, f"{p}.cross", y, memory, causal, c.heads))
            y = nc.norm(s, f"{p}.norm3", y + self._ffn(p, y))
        return nc.sigmoid(nc.dense(s, "head", y))

    def forward(self, enc_frames, dec_frames, labels) -> nc.Tensor:
        enc_frames = np.asarray(enc_frames, dtype=float)
        dec_frames = np.asarray(dec_frames, dtype=float)
        labels = np.asarray(labels, dtype=int)
        if np.any(labels < 0) or np.any(labels >= self.config.classes):
            raise ValueError(f"label outside [0, {self.config.classes})")
        if enc_frames.shape != dec_frames.shape:
            raise ValueError("encoder and decoder inputs must share a shape")
        with nc.default_dtype(self.config.dtype):
            return self.decode(dec_frames, labels, self.encode(enc_frames, labels))

    def save(self, path):
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        (path / "config.json").write_text(json.dumps(asdict(self.config), indent=1) + "\n")
        self.store.save(path / "weights.json")
        return path

    @classmethod
    def load(cls, path) -> "SeqModel":
        path = Path(path)
        model = cls(SeqModelConfig(**json.loads((path / "config.json").read_text())))
        with nc.default_dtype(model.config.dtype):
            model.store.load(path / "weights.json")
        return model


def seq_forward(model: SeqModel, enc_frames, dec_frames, labels) -> np.ndarray:
    return model.forward(enc_frames, dec_frames, labels).data


def teacher_forcing_batch(frames: np.ndarray, noise_std: float = 0.0, rng=None):
    """(encoder input, decoder input, targets); only the encoder's first frame is perturbed."""
    frames = np.asarray(frames, dtype=float)
    enc = frames[:, :-1].copy()
    dec = frames[:, :-1]
    if noise_std > 0:
        enc[:, 0] += noise_std * rng.standard_normal(enc[:, 0].shape)
    return enc, dec, frames[:, 1:]


def teacher_forced_loss(model: SeqModel, frames, labels, loss_fn, noise_std: float = 0.0, rng=None):
    """``loss_fn(pred_tensor, targets)`` is plain MSE or a bound weighted MSE."""
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    enc, dec, targets = teacher_forcing_batch(frames, noise_std, rng)
    pred = model.forward(enc, dec, labels)
    with nc.default_dtype(model.config.dtype):
        loss = loss_fn(pred, targets)
    return loss, pred.data, targets


def target_times(length: int) -> np.ndarray:
    """1-based time indices of the teacher-forcing targets (frames 1..T-1)."""
    return np.arange(2, length + 1)


def make_loss(kind: str, segmentation: IntervalSegmentation | None, length: int):
    if kind == "mse":
        return plain_mse
    if kind == "weighted":
        times = target_times(length)
        return lambda pred, tgt: weighted_mse(pred, tgt, segmentation, times)
    raise ValueError(f"unknown loss {kind!r}")


def generate_sequence(model: SeqModel, first_frames, labels, length: int) -> np.ndarray:
    """Autoregressively extend each first frame to ``length`` frames (n x length x d)."""
    if length < 1:
        raise ValueError("length must be >= 1")
    first = np.atleast_2d(np.asarray(first_frames, dtype=float))
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    out = np.zeros((first.shape[0], length, first.shape[1]))
    out[:, 0] = first
    for L in range(1, length):
        prefix = out[:, :L]
        pred = model.forward(prefix, prefix, labels).data
        out[:, L] = pred[:, -1]
    return out


@dataclass
class TrainSchedule:
    # (loss kind, epochs, learning rate) per phase
    phases: list = field(default_factory=lambda: [("weighted", 200, 1e-4), ("mse", 100, 1e-4),
                                                  ("weighted", 100, 1e-5)])
    epoch_scale: float = 1.0
    batch_size: int = 25
    noise_std: float = 0.1
    seed: int = 0

    def scaled_phases(self):
        return [(kind, max(1, int(round(epochs * self.epoch_scale))), float(lr))
                for kind, epochs, lr in self.phases]


def alternating_train(model: SeqModel, frames, labels, segmentation: IntervalSegmentation,
                      schedule: TrainSchedule | None = None, progress=None):
    """Run the weighted / MSE / weighted phases. Returns the per-epoch log."""
    schedule = schedule or TrainSchedule()
    frames = np.asarray(frames, dtype=float)
    labels = np.asarray(labels, dtype=int)
    length = frames.shape[1]
    times = target_times(length)
    weighted = make_loss("weighted", segmentation, length)
    rng = np.random.default_rng(schedule.seed)
    n = len(frames)
    log = []
    epoch = 0
    for phase_no, (kind, epochs, lr) in enumerate(schedule.scaled_phases(), start=1):
        loss_fn = make_loss(kind, segmentation, length)
        for _ in range(epochs):
            order = rng.permutation(n)
            sums = {"loss": 0.0, "mse": 0.0, "weighted": 0.0}
            per_interval = np.zeros(4)
            for start in range(0, n, schedule.batch_size):
                idx = order[start:start + schedule.batch_size]
                model.store.zero_grad()
                loss, pred, targets = teacher_forced_loss(model, frames[idx], labels[idx], loss_fn,
                                                          schedule.noise_std, rng)
                loss.backward()
                nc.optimizer_step(model.store, lr)
                k = len(idx)
                sums["loss"] += float(loss.data) * k
                sums["mse"] += float(((pred - targets) ** 2).mean()) * k
                sums["weighted"] += float(weighted(pred, targets).data) * k
                per_interval += np.nan_to_num(interval_losses(pred, targets, segmentation, times)) * k
            row = {"epoch": epoch, "phase": phase_no, "loss_fn": kind, "lr": lr}
            row.update({key: v / n for key, v in sums.items()})
            row.update({f"interval{i + 1}": float(v / n) for i, v in enumerate(per_interval)})
            log.append(row)
            if progress is not None:
                progress(row)
            epoch += 1
    return log
