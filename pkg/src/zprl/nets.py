"""Plain numpy MLPs with hand-derived backward passes.

Parameters live in one flat float64 array per network (layer by layer, weight
matrix in row-major order then bias). Backward passes return gradients for
that flat array and/or for the network input, so callers can chain networks
and drop parameter gradients entirely when a net must stay frozen. Gradient
blocking is therefore structural: a gradient that is never computed cannot
leak.

GELU uses the exact Gaussian-CDF form gelu(x) = x * Phi(x); this is the one
activation form used everywhere in the package, and the finite-difference
checks in the test suite are run against it.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: np.ndarray) -> np.ndarray:
    return x * 0.5 * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    return cdf + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)


_ACTS = {
    "gelu": (gelu, gelu_grad),
    "tanh": (np.tanh, lambda x: 1.0 - np.tanh(x) ** 2),
    "identity": (lambda x: x, lambda x: np.ones_like(x)),
}


def n_params(widths: Sequence[int]) -> int:
    return sum((fi + 1) * fo for fi, fo in zip(widths[:-1], widths[1:]))


def init_params(widths: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    """Uniform fan-in init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for W and b."""
    chunks = []
    for fi, fo in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fi)
        chunks.append(rng.uniform(-bound, bound, size=fi * fo))
        chunks.append(rng.uniform(-bound, bound, size=fo))
    return np.concatenate(chunks)


def pack_layers(layers: Iterable[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Flatten explicit (W, b) pairs into the layout Mlp expects."""
    return np.concatenate([np.concatenate([W.ravel(), b.ravel()]) for W, b in layers])


@dataclass
class MlpCache:
    x: np.ndarray                # input as seen by layer 0, always 2-D
    pre: list[np.ndarray]        # pre-activation per layer
    post: list[np.ndarray]       # post-activation per layer (last = output)
    squeezed: bool


class Mlp:
    """Fully connected net: hidden_act between layers, output_act on the last."""

    def __init__(
        self,
        widths: Sequence[int],
        params: np.ndarray,
        hidden_act: str = "gelu",
        output_act: str = "identity",
    ):
        self.widths = tuple(int(w) for w in widths)
        if len(self.widths) < 2:
            raise ValueError("need at least input and output widths")
        if hidden_act not in _ACTS or output_act not in _ACTS:
            raise ValueError(f"unknown activation {hidden_act!r}/{output_act!r}")
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (n_params(self.widths),):
            raise ValueError(
                f"expected {n_params(self.widths)} params for widths {self.widths}, "
                f"got {params.shape}"
            )
        self.params = params
        self.hidden_act = hidden_act
        self.output_act = output_act
        self._offsets = []
        off = 0
        for fi, fo in zip(self.widths[:-1], self.widths[1:]):
            self._offsets.append((off, off + fi * fo, off + fi * fo + fo, fi, fo))
            off = self._offsets[-1][2]

    @classmethod
    def init(
        cls,
        widths: Sequence[int],
        rng: np.random.Generator,
        hidden_act: str = "gelu",
        output_act: str = "identity",
    ) -> "Mlp":
        return cls(widths, init_params(widths, rng), hidden_act, output_act)

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def layer(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        w0, w1, w2, fi, fo = self._offsets[i]
        return self.params[w0:w1].reshape(fi, fo), self.params[w1:w2]

    def _act(self, i: int):
        name = self.output_act if i == self.n_layers - 1 else self.hidden_act
        return _ACTS[name]

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self._run(np.asarray(x, dtype=np.float64), keep=False)
        return y

    def forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, MlpCache]:
        return self._run(np.asarray(x, dtype=np.float64), keep=True)

    def _run(self, x: np.ndarray, keep: bool):
        squeezed = x.ndim == 1
        h = x[None, :] if squeezed else x
        if h.shape[1] != self.widths[0]:
            raise ValueError(f"input dim {h.shape[1]} != {self.widths[0]}")
        x0 = h
        pres, posts = [], []
        for i in range(self.n_layers):
            W, b = self.layer(i)
            pre = h @ W + b
            h = self._act(i)[0](pre)
            if keep:
                pres.append(pre)
                posts.append(h)
        out = h[0] if squeezed else h
        cache = MlpCache(x0, pres, posts, squeezed) if keep else None
        return out, cache

    def backward(
        self,
        cache: MlpCache,
        grad_out: np.ndarray,
        param_grads: bool = True,
        input_grad: bool = True,
    ) -> tuple[np.ndarray | None, np.ndarray | None]:
        """Backpropagate grad_out through the cached forward pass.

        Returns (flat parameter gradient or None, input gradient or None).
        With param_grads=False the parameter gradient is never formed, which
        is how frozen networks are chained into larger losses.
        """
        g = np.asarray(grad_out, dtype=np.float64)
        if cache.squeezed and g.ndim == 1:
            g = g[None, :]
        gp = np.zeros_like(self.params) if param_grads else None
        for i in range(self.n_layers - 1, -1, -1):
            gpre = g * self._act(i)[1](cache.pre[i])
            xin = cache.post[i - 1] if i > 0 else cache.x
            if param_grads:
                w0, w1, w2, fi, fo = self._offsets[i]
                gp[w0:w1] = (xin.T @ gpre).ravel()
                gp[w1:w2] = gpre.sum(axis=0)
            if i > 0 or input_grad:
                W, _ = self.layer(i)
                g = gpre @ W.T
        if not input_grad:
            return gp, None
        gx = g[0] if cache.squeezed else g
        return gp, gx

    def checksum(self) -> str:
        return hashlib.sha256(self.params.tobytes()).hexdigest()

    def clone(self) -> "Mlp":
        return Mlp(self.widths, self.params.copy(), self.hidden_act, self.output_act)
