"""Diffusion generator for first-frame feature vectors.

A small dense denoiser conditioned on additive time-step and label
embeddings. The default target is the clean vector (sigmoid head, so outputs
stay in (0, 1)); an ``eps`` target without the sigmoid exists for comparison
runs. Sampling runs the DDPM posterior from pure noise down to t = 1.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import netcore as nc


@dataclass
class NoiseSchedule:
    betas: np.ndarray  # index t-1 for t = 1..T_diff

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=float)
        if np.any(self.betas <= 0) or np.any(self.betas >= 1):
            raise ValueError("every beta must lie in (0, 1)")
        self.alphas = 1.0 - self.betas
        # alpha_bar[t] for t = 0..T_diff; alpha_bar[0] = 1 is the noise-free state
        self.alpha_bar = np.concatenate([[1.0], np.cumprod(self.alphas)])
        # 1 - alpha_bar accumulated directly, so that it equals beta_1 exactly at t = 1
        self.one_minus_ab = np.concatenate([[0.0], np.cumsum(self.alpha_bar[:-1] * self.betas)])
        om_prev, om = self.one_minus_ab[:-1], self.one_minus_ab[1:]
        self.posterior_var = np.concatenate([[0.0], self.betas * om_prev / om])

    @property
    def steps(self) -> int:
        return len(self.betas)

    def posterior_coefficients(self, t: int) -> tuple[float, float]:
        """(coef on x0_hat, coef on x_t) of the posterior mean at step t."""
        om, om_prev = self.one_minus_ab[t], self.one_minus_ab[t - 1]
        ab_prev, beta = self.alpha_bar[t - 1], self.betas[t - 1]
        return np.sqrt(ab_prev) * beta / om, np.sqrt(1.0 - beta) * om_prev / om


def make_schedule(steps: int = 10, beta_min: float = 1e-2, beta_max: float = 0.3) -> NoiseSchedule:
    if steps < 1:
        raise ValueError("need at least one diffusion step")
    if not (0 < beta_min <= beta_max < 1):
        raise ValueError(f"need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")
    return NoiseSchedule(np.linspace(beta_min, beta_max, steps))


def forward_noise(x0, t, eps, schedule: NoiseSchedule | None = None, alpha_bar=None) -> np.ndarray:
    """x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps; ``t`` may be per-row."""
    x0 = np.asarray(x0, dtype=float)
    if alpha_bar is None:
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > schedule.steps):
            raise ValueError(f"diffusion step must lie in [1, {schedule.steps}]")
        alpha_bar = schedule.alpha_bar[t]
    ab = np.asarray(alpha_bar, dtype=float)
    if ab.ndim == 1 and x0.ndim == 2:
        ab = ab[:, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * np.asarray(eps, dtype=float)


@dataclass
class DiffusionConfig:
    steps: int = 10
    beta_min: float = 1e-2
    beta_max: float = 0.3
    hidden: int = 128
    epochs: int = 1500
    lr: float = 2e-3
    batch_size: int = 64
    target: str = "x0"  # or "eps"
    seed: int = 0

    def validate(self):
        if self.target not in ("x0", "eps"):
            raise ValueError(f"target must be 'x0' or 'eps', got {self.target!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.hidden < 1 or self.lr < 0:
            raise ValueError("epochs, batch_size, hidden and lr must be non-negative/positive")
        make_schedule(self.steps, self.beta_min, self.beta_max)


class DenoiserModel:
    def __init__(self, features: int, classes: int, config: DiffusionConfig):
        config.validate()
        self.features = features
        self.classes = classes
        self.config = config
        self.schedule = make_schedule(config.steps, config.beta_min, config.beta_max)
        h = config.hidden
        s = self.store = nc.ParameterStore(config.seed)
        s.dense("in", features, h)
        s.embedding("time_emb", config.steps, h)
        s.embedding("label_emb", classes, h)
        s.dense("hidden1", h, h)
        s.dense("hidden2", h, h)
        s.dense("out", h, features)

    def forward(self, x_t, t, labels) -> nc.Tensor:
        t = np.asarray(t)
        labels = np.asarray(labels)
        if np.any(labels < 0) or np.any(labels >= self.classes):
            raise ValueError(f"label outside [0, {self.classes})")
        if np.any(t < 1) or np.any(t > self.config.steps):
            raise ValueError(f"diffusion step outside [1, {self.config.steps}]")
        s = self.store
        h = nc.dense(s, "in", x_t) + s["time_emb"][t - 1] + s["label_emb"][labels]
        h = nc.gelu(h)
        h = nc.gelu(nc.dense(s, "hidden1", h))
        h = nc.gelu(nc.dense(s, "hidden2", h))
        out = nc.dense(s, "out", h)
        return nc.sigmoid(out) if self.config.target == "x0" else out

    def predict_x0(self, x_t, t, labels) -> np.ndarray:
        """Clean-vector estimate; the eps target is converted algebraically."""
        out = self.forward(x_t, t, labels).data
        if self.config.target == "x0":
            return out
        ab = self.schedule.alpha_bar[np.asarray(t)]
        ab = ab[:, None] if np.ndim(ab) == 1 else ab
        return (np.asarray(x_t) - np.sqrt(1.0 - ab) * out) / np.sqrt(ab)

    def save(self, path):
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        meta = {"features": self.features, "classes": self.classes, "config": asdict(self.config)}
        (path / "config.json").write_text(json.dumps(meta, indent=1) + "\n")
        self.store.save(path / "weights.json")
        return path

    @classmethod
    def load(cls, path) -> "DenoiserModel":
        path = Path(path)
        meta = json.loads((path / "config.json").read_text())
        model = cls(meta["features"], meta["classes"], DiffusionConfig(**meta["config"]))
        model.store.load(path / "weights.json")
        return model


def denoise_predict(model: DenoiserModel, x_t, t, labels) -> np.ndarray:
    return model.predict_x0(x_t, t, labels)


def diffusion_loss(model: DenoiserModel, x0, labels, rng) -> nc.Tensor:
    """MSE between the target (x0 or eps) and the prediction at a random step."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape[0] == 0:
        raise ValueError("empty batch")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    n = x0.shape[0]
    t = rng.integers(1, model.config.steps + 1, size=n)
    eps = rng.standard_normal(x0.shape)
    x_t = forward_noise(x0, t, eps, model.schedule)
    pred = model.forward(x_t, t, labels)
    target = x0 if model.config.target == "x0" else eps
    return nc.mse(pred, target)


def train_diffusion(first_frames, labels, classes: int, config: DiffusionConfig | None = None):
    """Returns (model, per-epoch mean loss list)."""
    config = config or DiffusionConfig()
    first_frames = np.asarray(first_frames, dtype=float)
    labels = np.asarray(labels, dtype=int)
    model = DenoiserModel(first_frames.shape[1], classes, config)
    rng = np.random.default_rng(config.seed + 1)
    n = len(first_frames)
    history = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            model.store.zero_grad()
            loss = diffusion_loss(model, first_frames[idx], labels[idx], rng)
            loss.backward()
            nc.optimizer_step(model.store, config.lr)
            total += float(loss.data) * len(idx)
        history.append(total / n)
    return model, history


def reverse_sample(predict_x0: Callable, schedule: NoiseSchedule, x_T: np.ndarray,
                   rng=None, noise: bool = True, bounds=(0.0, 1.0)) -> np.ndarray:
    """Posterior sampling loop from x_T down to x_0.

    ``predict_x0(x_t, t)`` returns the clean estimate. With ``noise=False`` the
    loop is deterministic (z = 0 everywhere).
    """
    x = np.asarray(x_T, dtype=float)
    for t in range(schedule.steps, 0, -1):
        x0_hat = predict_x0(x, t)
        c0, ct = schedule.posterior_coefficients(t)
        mu = c0 * x0_hat + ct * x
        if noise and t > 1:
            x = mu + np.sqrt(schedule.posterior_var[t]) * rng.standard_normal(x.shape)
        else:
            x = mu
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite values at diffusion step {t}")
    if bounds is not None:
        x = np.clip(x, bounds[0], bounds[1])
    return x


def sample_first_steps(model: DenoiserModel, label: int, count: int, seed: int = 0,
                       bounds=(0.0, 1.0)) -> np.ndarray:
    """Draw ``count`` first frames for class ``label`` in scaled space."""
    if count <= 0:
        raise ValueError("count must be positive")
    if not 0 <= label < model.classes:
        raise ValueError(f"label {label} outside [0, {model.classes})")
    rng = np.random.default_rng(seed)
    labels = np.full(count, label)
    x_T = rng.standard_normal((count, model.features))

    def predict(x, t):
        return model.predict_x0(x, np.full(count, t), labels)

    return reverse_sample(predict, model.schedule, x_T, rng, bounds=bounds)
