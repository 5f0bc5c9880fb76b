"""Two-layer MLP from flattened observations to per-point logits."""

from __future__ import annotations

import json

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor

__all__ = ["MLPModel"]


class MLPModel:
    """relu MLP; downstream code softmaxes the logits into a probability map."""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, seed: int = 0, _init: bool = True):
        self.in_dim = int(in_dim)
        self.hidden_dim = int(hidden_dim)
        self.out_dim = int(out_dim)
        if _init:
            rng = np.random.default_rng([int(seed), 7310])
            w1 = rng.normal(0.0, np.sqrt(2.0 / in_dim), (in_dim, hidden_dim))
            w2 = rng.normal(0.0, np.sqrt(2.0 / hidden_dim), (hidden_dim, out_dim))
            self.w1 = Tensor(w1, requires_grad=True)
            self.b1 = Tensor(np.zeros(hidden_dim), requires_grad=True)
            self.w2 = Tensor(w2, requires_grad=True)
            self.b2 = Tensor(np.zeros(out_dim), requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]

    def logits(self, obs: np.ndarray) -> Tensor:
        """(batch, in_dim) observations to (batch, out_dim) logits."""
        x = np.asarray(obs, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected (batch, {self.in_dim}) observations, got {x.shape}")
        hidden = ad.relu(ad.add(ad.matrix_multiply(Tensor(x), self.w1), self.b1))
        return ad.add(ad.matrix_multiply(hidden, self.w2), self.b2)

    def logit_values(self, obs: np.ndarray) -> np.ndarray:
        """Forward pass without recording; identical numbers to logits()."""
        with ad.no_grad():
            return self.logits(obs).values

    def save(self, path) -> None:
        meta = {"in_dim": self.in_dim, "hidden_dim": self.hidden_dim, "out_dim": self.out_dim}
        np.savez(
            path,
            meta=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
            w1=self.w1.values,
            b1=self.b1.values,
            w2=self.w2.values,
            b2=self.b2.values,
        )

    @classmethod
    def load(cls, path) -> "MLPModel":
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode("utf-8"))
            model = cls(meta["in_dim"], meta["hidden_dim"], meta["out_dim"], _init=False)
            model.w1 = Tensor(data["w1"], requires_grad=True)
            model.b1 = Tensor(data["b1"], requires_grad=True)
            model.w2 = Tensor(data["w2"], requires_grad=True)
            model.b2 = Tensor(data["b2"], requires_grad=True)
        return model
