"""Training-recipe optimization: RAdam wrapped in Lookahead, poly LR,
decoupled weight decay.

RAdam tracks Adam's two moments and switches between a variance-
rectified adaptive step and a plain (bias-corrected) momentum step,
depending on how trustworthy the variance estimate is at step t:

    rho_inf = 2 / (1 - beta2) - 1
    rho_t   = rho_inf - 2 t beta2^t / (1 - beta2^t)

When rho_t > 4 the rectified step applies

    r_t = sqrt( (rho_t-4)(rho_t-2) rho_inf / ((rho_inf-4)(rho_inf-2) rho_t) )
    p  -= lr * r_t * m_hat / (sqrt(v_hat) + eps)

otherwise p -= lr * m_hat. Weight decay is decoupled (applied to the
weights, never folded into the gradient) and skips batch-norm
gamma/beta by default. Lookahead keeps a slow copy of every parameter
and every k inner steps pulls it toward the fast weights by alpha, then
resets the fast weights onto it.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .engine import DiffValue
from .errors import OptimError


def poly_lr(step: int, max_steps: int, lr0: float, power: float = 0.9) -> float:
    """lr0 * (1 - step/max_steps)^power, clamped to 0 past the end."""
    if step < 0:
        raise OptimError(f"negative step {step}")
    if step > max_steps:
        warnings.warn(
            f"poly_lr called with step {step} > max_steps {max_steps}; clamping lr to 0",
            RuntimeWarning,
            stacklevel=2,
        )
        return 0.0
    return lr0 * (1.0 - step / max_steps) ** power


@dataclass
class OptimConfig:
    lr0: float = 1e-3
    max_steps: int = 1000
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    poly_power: float = 0.9
    lookahead_k: int = 5
    lookahead_alpha: float = 0.5
    decay_bn_params: bool = False  # gamma/beta exempt from decay by default

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _is_bn_param(name: str) -> bool:
    return name.endswith("/gamma") or name.endswith("/beta")


class LookaheadRAdam:
    """The full optimizer stack over a named parameter dict."""

    def __init__(self, params: dict[str, DiffValue], cfg: OptimConfig):
        self.cfg = cfg
        self.params = dict(params)
        self.t = 0
        self.m = {n: np.zeros_like(p.value) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.value) for n, p in self.params.items()}
        self.slow = {n: p.value.copy() for n, p in self.params.items()}
        self.rho_inf = 2.0 / (1.0 - cfg.beta2) - 1.0

    @property
    def lr(self) -> float:
        """Rate the next step() will use (poly schedule over 0-based steps)."""
        return poly_lr(min(self.t, self.cfg.max_steps), self.cfg.max_steps,
                       self.cfg.lr0, self.cfg.poly_power)

    def step(self) -> float:
        """One RAdam update from accumulated grads, then a Lookahead sync.

        Returns the learning rate used. Aborts (raising, mutating
        nothing) if any gradient is non-finite.
        """
        cfg = self.cfg
        for name, p in self.params.items():
            if not np.isfinite(p.grad).all():
                raise OptimError(f"non-finite gradient in parameter {name!r}; step aborted")

        lr = self.lr
        self.t += 1
        t = self.t
        b1, b2 = cfg.beta1, cfg.beta2
        b1t, b2t = b1 ** t, b2 ** t
        rho = self.rho_inf - 2.0 * t * b2t / (1.0 - b2t)

        rect = None
        if rho > 4.0:
            rect = math.sqrt(
                ((rho - 4.0) * (rho - 2.0) * self.rho_inf)
                / ((self.rho_inf - 4.0) * (self.rho_inf - 2.0) * rho)
            )

        for name, p in self.params.items():
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)

            if cfg.weight_decay and (cfg.decay_bn_params or not _is_bn_param(name)):
                p.value -= (lr * cfg.weight_decay) * p.value

            m_hat = m / (1.0 - b1t)
            if rect is not None:
                v_hat = np.sqrt(v / (1.0 - b2t))
                p.value -= (lr * rect) * m_hat / (v_hat + cfg.eps)
            else:
                p.value -= lr * m_hat

        self._lookahead_sync()
        return lr

    def _lookahead_sync(self) -> None:
        if self.t % self.cfg.lookahead_k:
            return
        alpha = self.cfg.lookahead_alpha
        for name, p in self.params.items():
            slow = self.slow[name]
            slow += alpha * (p.value - slow)
            p.value = slow.copy()

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    # ---- exact-resume state -------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"t": np.array([self.t], dtype=np.float32)}
        for name in self.params:
            out[f"m/{name}"] = self.m[name]
            out[f"v/{name}"] = self.v[name]
            out[f"slow/{name}"] = self.slow[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays["t"][0])
        for name, p in self.params.items():
            for store, key in ((self.m, f"m/{name}"), (self.v, f"v/{name}"), (self.slow, f"slow/{name}")):
                if key not in arrays:
                    raise OptimError(f"optimizer state lacks {key!r}")
                arr = np.asarray(arrays[key], dtype=p.value.dtype)
                if arr.shape != p.value.shape:
                    raise OptimError(f"optimizer state {key!r} shape {arr.shape} != {p.value.shape}")
                store[name] = arr.copy()
