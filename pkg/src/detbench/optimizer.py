"""Spectral-normalized gradient descent and a small model to verify it on.

The update divides each layer's gradient by its largest singular value, so
every step moves the weights by exactly the learning rate in spectral norm.
An orthogonalized variant (Newton-Schulz) is available behind a config flag.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

# Gradients with spectral norm below this are treated as null updates.
NULL_GRAD_NORM = 1e-12

DIVERGENCE_LIMIT = 1e12


@dataclass(frozen=True)
class MuSgdConfig:
    """Step size plus power-iteration budget for the spectral norm."""

    eta: float = 0.01
    power_iters: int = 50
    tol: float = 1e-10
    orthogonalize: bool = False

    def __post_init__(self) -> None:
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.power_iters < 1:
            raise ValueError("power_iters must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


def _as_matrix(m: np.ndarray) -> np.ndarray:
    """Promote vectors to single-row matrices; reject non-finite input."""
    a = np.asarray(m, dtype=float)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ValueError(f"expected a matrix, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    return a


def spectral_norm(m: np.ndarray, cfg: MuSgdConfig = MuSgdConfig()) -> float:
    """Largest singular value via power iteration on ``m.T @ m``.

    Iterates until the Rayleigh-quotient estimate moves by less than
    ``cfg.tol`` (relative) or ``cfg.power_iters`` is exhausted. The zero
    matrix maps to 0. Deterministic: the start vector comes from a fixed
    seed.
    """
    a = _as_matrix(m)
    scale = float(np.max(np.abs(a)))
    if scale == 0.0:
        return 0.0
    a = a / scale  # keeps a.T @ a away from overflow for extreme inputs
    gram = a.T @ a

    v = np.random.default_rng(0x5EED).standard_normal(gram.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(cfg.power_iters):
        w = gram @ v
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            # Start vector landed in the null space; restart once off-axis.
            v = np.ones(gram.shape[0]) / np.sqrt(gram.shape[0])
            w = gram @ v
            norm_w = np.linalg.norm(w)
            if norm_w == 0.0:
                return 0.0
        v = w / norm_w
        new_lam = float(v @ gram @ v)
        if abs(new_lam - lam) <= cfg.tol * max(1.0, new_lam):
            lam = new_lam
            break
        lam = new_lam
    return scale * float(np.sqrt(max(lam, 0.0)))


def newton_schulz_orthogonalize(g: np.ndarray, steps: int = 5) -> np.ndarray:
    """Quintic Newton-Schulz iteration toward the orthogonal factor of ``g``."""
    a, b, c = 3.4445, -4.7750, 2.0315
    x = _as_matrix(g).copy()
    transposed = x.shape[0] > x.shape[1]
    if transposed:
        x = x.T
    x /= np.linalg.norm(x) + 1e-7
    for _ in range(steps):
        xxt = x @ x.T
        x = a * x + (b * xxt + c * xxt @ xxt) @ x
    if transposed:
        x = x.T
    return x


def musgd_step(w: np.ndarray, grad: np.ndarray, cfg: MuSgdConfig) -> np.ndarray:
    """One update ``w - eta * grad / sigma_max(grad)``.

    Near-zero gradients leave the weights untouched. With
    ``cfg.orthogonalize`` the normalized gradient is replaced by its
    Newton-Schulz orthogonalization.
    """
    w_arr = np.asarray(w, dtype=float)
    g_arr = np.asarray(grad, dtype=float)
    if w_arr.shape != g_arr.shape:
        raise ValueError(f"weight shape {w_arr.shape} != gradient shape {g_arr.shape}")
    sigma = spectral_norm(g_arr, cfg)
    if sigma < NULL_GRAD_NORM:
        return w_arr.copy()
    if cfg.orthogonalize:
        direction = newton_schulz_orthogonalize(g_arr).reshape(w_arr.shape)
    else:
        direction = g_arr / sigma
    return w_arr - cfg.eta * direction


@dataclass
class ToyModel:
    """Two-layer ReLU regression network: ``y = w2 @ relu(w1 @ x)``.

    Inputs and targets are matrices whose columns are samples.
    """

    w1: np.ndarray
    w2: np.ndarray

    def __post_init__(self) -> None:
        self.w1 = _as_matrix(self.w1)
        self.w2 = _as_matrix(self.w2)
        if self.w2.shape[1] != self.w1.shape[0]:
            raise ValueError(
                f"layer shapes do not compose: w1 {self.w1.shape}, w2 {self.w2.shape}"
            )

    @classmethod
    def initialize(cls, in_dim: int, hidden_dim: int, out_dim: int, seed: int = 0) -> "ToyModel":
        """Scaled-uniform init, deterministic for a given seed."""
        rng = np.random.default_rng(seed)
        w1 = rng.uniform(-1.0, 1.0, size=(hidden_dim, in_dim)) / np.sqrt(in_dim)
        w2 = rng.uniform(-1.0, 1.0, size=(out_dim, hidden_dim)) / np.sqrt(hidden_dim)
        return cls(w1=w1, w2=w2)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.w2 @ np.maximum(self.w1 @ x, 0.0)

    def loss(self, x: np.ndarray, target: np.ndarray) -> float:
        diff = self.forward(x) - target
        return float(np.mean(diff**2))


def toy_model_grad(model: ToyModel, x: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Analytic mean-squared-error gradients for both layers."""
    x = np.asarray(x, dtype=float)
    target = np.asarray(target, dtype=float)
    if x.ndim != 2 or x.shape[0] != model.w1.shape[1]:
        raise ValueError(f"input shape {x.shape} does not feed w1 {model.w1.shape}")
    pre = model.w1 @ x
    hidden = np.maximum(pre, 0.0)
    out = model.w2 @ hidden
    if out.shape != target.shape:
        raise ValueError(f"output shape {out.shape} != target shape {target.shape}")

    d_out = 2.0 * (out - target) / out.size
    grad_w2 = d_out @ hidden.T
    d_hidden = model.w2.T @ d_out
    d_pre = d_hidden * (pre > 0.0)
    grad_w1 = d_pre @ x.T
    return grad_w1, grad_w2


def train_toy(
    model: ToyModel,
    data: list[tuple[np.ndarray, np.ndarray]],
    cfg: MuSgdConfig,
    epochs: int,
    schedule=None,
) -> list[float]:
    """Train ``model`` in place; returns the per-epoch mean loss.

    With a ``ProgLossSchedule`` the step size is modulated by the schedule's
    epoch weight (step ``eta * weight(t)``), mirroring how the scheduled
    objective shifts emphasis over training. Divergence (loss above 1e12)
    stops training with a warning instead of raising.
    """
    if not data:
        raise ValueError("data must be non-empty")
    if epochs < 0:
        raise ValueError("epochs must be >= 0")

    from .losses import progloss_lambda  # local import avoids a hard coupling

    trajectory: list[float] = []
    for epoch in range(epochs):
        step_cfg = cfg
        if schedule is not None:
            weight = progloss_lambda(min(epoch, schedule.total_epochs), schedule)
            if weight > 0.0:
                step_cfg = MuSgdConfig(
                    eta=cfg.eta * weight,
                    power_iters=cfg.power_iters,
                    tol=cfg.tol,
                    orthogonalize=cfg.orthogonalize,
                )
            else:
                step_cfg = None  # weight 0: skip updates this epoch

        losses = []
        for x, target in data:
            losses.append(model.loss(x, target))
            if step_cfg is not None:
                grad_w1, grad_w2 = toy_model_grad(model, x, target)
                model.w1 = musgd_step(model.w1, grad_w1, step_cfg)
                model.w2 = musgd_step(model.w2, grad_w2, step_cfg)
        epoch_loss = float(np.mean(losses))
        trajectory.append(epoch_loss)
        if epoch_loss > DIVERGENCE_LIMIT:
            warnings.warn(f"training diverged at epoch {epoch}: loss {epoch_loss:.3e}", RuntimeWarning)
            break
    return trajectory
