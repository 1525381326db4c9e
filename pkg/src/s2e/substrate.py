"""Minimal reverse-mode layers for the joint embedding model.

Small explicit layers with cached forward state and hand-derived backward
passes.  Everything runs in float64 so finite-difference checks are sharp;
checkpoints quantize to the float32 grid (see :mod:`s2e.embedding`).
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .errors import NonFinite


def _init_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float64)


class Layer:
    """Base: named parameters plus matching gradient buffers."""

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def grads(self) -> dict[str, np.ndarray]:
        return {}

    def zero_grads(self) -> None:
        for g in self.grads().values():
            g[...] = 0.0


class Linear(Layer):
    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int):
        self.W = _init_uniform(rng, (n_in, n_out), n_in)
        self.b = _init_uniform(rng, (n_out,), n_in)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self._x = None

    def params(self):
        return {"W": self.W, "b": self.b}

    def grads(self):
        return {"W": self.dW, "b": self.db}

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.W + self.b

    def backward(self, gout: np.ndarray) -> np.ndarray:
        self.dW += self._x.T @ gout
        self.db += gout.sum(axis=0)
        return gout @ self.W.T


class Relu(Layer):
    def __init__(self):
        self._mask = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0.0
        return np.where(self._mask, x, 0.0)

    def backward(self, gout: np.ndarray) -> np.ndarray:
        return np.where(self._mask, gout, 0.0)


class Conv3x3(Layer):
    """3x3 convolution, stride 1, NCHW layout; optional zero padding."""

    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int,
                 pad: int = 0):
        fan_in = n_in * 9
        self.W = _init_uniform(rng, (n_out, n_in, 3, 3), fan_in)
        self.b = _init_uniform(rng, (n_out,), fan_in)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self.pad = pad
        self._x = None

    def params(self):
        return {"W": self.W, "b": self.b}

    def grads(self):
        return {"W": self.dW, "b": self.db}

    @staticmethod
    def _patches(x: np.ndarray) -> np.ndarray:
        """(B, C, H, W) -> (B, Ho*Wo, C*9) sliding 3x3 windows."""
        B, C, H, Wd = x.shape
        Ho, Wo = H - 2, Wd - 2
        s = x.strides
        windows = np.lib.stride_tricks.as_strided(
            x, (B, C, Ho, Wo, 3, 3), (s[0], s[1], s[2], s[3], s[2], s[3])
        )
        return windows.transpose(0, 2, 3, 1, 4, 5).reshape(B, Ho * Wo, C * 9)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if self.pad:
            p = self.pad
            x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        self._x = x
        B, C, H, Wd = x.shape
        Ho, Wo = H - 2, Wd - 2
        cols = self._patches(x)
        self._cols = cols
        y = cols @ self.W.reshape(self.W.shape[0], -1).T + self.b
        return y.transpose(0, 2, 1).reshape(B, self.W.shape[0], Ho, Wo)

    def backward(self, gout: np.ndarray) -> np.ndarray:
        x = self._x
        B, C, H, Wd = x.shape
        Ho, Wo = H - 2, Wd - 2
        O = self.W.shape[0]
        gflat = gout.reshape(B, O, Ho * Wo).transpose(0, 2, 1)  # (B, P, O)
        self.dW += np.tensordot(gflat, self._cols, axes=([0, 1], [0, 1])).reshape(
            self.W.shape
        )
        self.db += gout.sum(axis=(0, 2, 3))
        dcols = gflat @ self.W.reshape(O, -1)  # (B, P, C*9)
        dwin = dcols.reshape(B, Ho, Wo, C, 3, 3)
        dx = np.zeros_like(x)
        for di in range(3):
            for dj in range(3):
                dx[:, :, di:di + Ho, dj:dj + Wo] += dwin[:, :, :, :, di, dj].transpose(
                    0, 3, 1, 2
                )
        if self.pad:
            p = self.pad
            return dx[:, :, p:-p, p:-p]
        return dx


class EmbeddingTable(Layer):
    """Token id -> dense row lookup.  Row 0 is the padding token."""

    def __init__(self, rng: np.random.Generator, n_tokens: int, dim: int):
        # hot start (3x the usual fan-in scale): token rows need to differ
        # enough at init for the recurrent tower to spread the small set of
        # templated texts apart before the state tower locks onto them
        self.W = 3.0 * _init_uniform(rng, (n_tokens, dim), dim)
        self.dW = np.zeros_like(self.W)
        self._ids = None

    def params(self):
        return {"W": self.W}

    def grads(self):
        return {"W": self.dW}

    def forward(self, ids: np.ndarray) -> np.ndarray:
        self._ids = ids
        return self.W[ids]

    def backward(self, gout: np.ndarray) -> None:
        np.add.at(self.dW, self._ids, gout)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


class LSTM(Layer):
    """Single-layer LSTM over padded batches; masked final-state readout.

    Padded positions (mask 0) carry the previous hidden and cell state
    through unchanged, so trailing padding cannot affect the output.
    """

    def __init__(self, rng: np.random.Generator, n_in: int, n_hidden: int):
        H = n_hidden
        self.Wx = 3.0 * _init_uniform(rng, (n_in, 4 * H), n_in + H)
        self.Wh = _init_uniform(rng, (H, 4 * H), n_in + H)
        self.b = np.zeros(4 * H)
        # forget gate opens near 1 at init so early tokens survive to the
        # final-state readout, and input/x weights start hot: otherwise the
        # few templated texts (many sharing a suffix) begin the joint
        # training merged, and the two towers co-adapt into a minimum where
        # singleton-concept states glue onto composite-concept texts
        self.b[H:2 * H] = 3.0
        self.dWx = np.zeros_like(self.Wx)
        self.dWh = np.zeros_like(self.Wh)
        self.db = np.zeros_like(self.b)
        self.n_hidden = H
        self._cache = None

    def params(self):
        return {"Wx": self.Wx, "Wh": self.Wh, "b": self.b}

    def grads(self):
        return {"Wx": self.dWx, "Wh": self.dWh, "b": self.db}

    def forward(self, x: np.ndarray, mask: np.ndarray) -> np.ndarray:
        B, T, _ = x.shape
        H = self.n_hidden
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        steps = []
        for t in range(T):
            m = mask[:, t][:, None]
            z = x[:, t] @ self.Wx + h @ self.Wh + self.b
            i = _sigmoid(z[:, :H])
            f = _sigmoid(z[:, H:2 * H])
            g = np.tanh(z[:, 2 * H:3 * H])
            o = _sigmoid(z[:, 3 * H:])
            c_new = f * c + i * g
            tc = np.tanh(c_new)
            h_new = o * tc
            steps.append((m, i, f, g, o, c, tc, h, x[:, t]))
            h = m * h_new + (1.0 - m) * h
            c = m * c_new + (1.0 - m) * c
        self._cache = steps
        return h

    def backward(self, gout: np.ndarray) -> np.ndarray:
        steps = self._cache
        B = gout.shape[0]
        T = len(steps)
        H = self.n_hidden
        dx = np.zeros((B, T, self.Wx.shape[0]))
        dh = gout.copy()
        dc = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            m, i, f, g, o, c_prev, tc, h_prev, x_t = steps[t]
            dh_new = dh * m
            dc_new = dc * m
            dh_prev = dh * (1.0 - m)
            dc_prev = dc * (1.0 - m)
            do = dh_new * tc
            dc_new = dc_new + dh_new * o * (1.0 - tc * tc)
            df = dc_new * c_prev
            dc_prev = dc_prev + dc_new * f
            di = dc_new * g
            dg = dc_new * i
            dz = np.concatenate(
                [
                    di * i * (1.0 - i),
                    df * f * (1.0 - f),
                    dg * (1.0 - g * g),
                    do * o * (1.0 - o),
                ],
                axis=1,
            )
            self.dWx += x_t.T @ dz
            self.dWh += h_prev.T @ dz
            self.db += dz.sum(axis=0)
            dx[:, t] = dz @ self.Wx.T
            dh = dh_prev + dz @ self.Wh.T
            dc = dc_prev
        return dx


def contrastive_loss(
    s_embed: np.ndarray, e_embed: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """L = mean((||s - e||_2 - y)^2) with gradients w.r.t. both embeddings."""
    if s_embed.shape != e_embed.shape or len(s_embed) == 0:
        raise ValueError("embedding batches must be non-empty and congruent")
    diff = s_embed - e_embed
    d = np.sqrt((diff * diff).sum(axis=1))
    r = d - y
    loss = float((r * r).mean())
    d_safe = np.maximum(d, 1e-12)
    gs = (2.0 * r / len(y))[:, None] * diff / d_safe[:, None]
    return loss, gs, -gs


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            p -= self.lr * (self.m[k] / b1t) / (np.sqrt(self.v[k] / b2t) + self.eps)


def grad_check(
    fn: Callable[[dict[str, np.ndarray]], tuple[float, dict[str, np.ndarray]]],
    params: dict[str, np.ndarray],
    epsilon: float = 1e-5,
    max_entries_per_tensor: int | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` evaluates the scalar objective on ``params`` and returns it with
    a full gradient dict.  ``max_entries_per_tensor`` probes a deterministic
    evenly spaced subset when tensors are large.
    """
    if not (1e-7 <= epsilon <= 1e-3):
        raise ValueError("epsilon out of range")
    loss, grads = fn(params)
    if not np.isfinite(loss):
        raise NonFinite("objective is not finite")
    worst = 0.0
    for name, p in params.items():
        g = grads[name]
        flat = p.reshape(-1)
        n = flat.size
        if max_entries_per_tensor is not None and n > max_entries_per_tensor:
            idxs = np.linspace(0, n - 1, max_entries_per_tensor).astype(int)
        else:
            idxs = range(n)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + epsilon
            lp, _ = fn(params)
            flat[i] = orig - epsilon
            lm, _ = fn(params)
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NonFinite("objective is not finite under perturbation")
            fd = (lp - lm) / (2.0 * epsilon)
            an = g.reshape(-1)[i]
            err = abs(an - fd) / (abs(an) + abs(fd) + 1e-12)
            worst = max(worst, err)
    return worst
