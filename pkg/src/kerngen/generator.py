"""Two-layer fully connected generator network.

Forward pass:  W = A z + a,  S = relu(W),  T = B S + b,  Y = sigmoid(T).
The backward pass exploits the fact that for a scalar kernel loss the
per-sample gradient with respect to each layer's [weights bias] block is a
rank-one outer product, so no general autodiff machinery is needed.

All operations accept either a single column (1-D input) or a batch of
columns (2-D input, one sample per column); batched gradients sum over the
batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NetShape:
    """Layer geometry: latent n -> hidden m -> output k."""

    n: int
    m: int
    k: int

    def __post_init__(self):
        if min(self.n, self.m, self.k) < 1:
            raise ValueError(f"all dimensions must be >= 1, got {(self.n, self.m, self.k)}")


@dataclass
class GeneratorParams:
    """Trainable arrays of the two layers: A (m, n), a (m,), B (k, m), b (k,)."""

    A: np.ndarray
    a: np.ndarray
    B: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        m, n = self.A.shape
        k = self.B.shape[0]
        if self.a.shape != (m,) or self.B.shape != (k, m) or self.b.shape != (k,):
            raise ValueError(
                "inconsistent parameter shapes: "
                f"A {self.A.shape}, a {self.a.shape}, B {self.B.shape}, b {self.b.shape}"
            )
        for name in ("A", "a", "B", "b"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"parameter array {name} contains non-finite entries")

    @property
    def shape(self) -> NetShape:
        return NetShape(n=self.A.shape[1], m=self.A.shape[0], k=self.B.shape[0])

    def copy(self) -> "GeneratorParams":
        return GeneratorParams(self.A.copy(), self.a.copy(), self.B.copy(), self.b.copy())


@dataclass
class GradPower:
    """Running per-entry gradient power: M shaped like [B b], N shaped like [A a]."""

    M: np.ndarray
    N: np.ndarray

    @classmethod
    def zeros(cls, shape: NetShape) -> "GradPower":
        return cls(
            M=np.zeros((shape.k, shape.m + 1)),
            N=np.zeros((shape.m, shape.n + 1)),
        )

    def copy(self) -> "GradPower":
        return GradPower(self.M.copy(), self.N.copy())


@dataclass
class LayerCache:
    """Forward-pass intermediates, kept around for the backward pass."""

    Z: np.ndarray
    W: np.ndarray
    S: np.ndarray
    T: np.ndarray
    Y: np.ndarray


@dataclass
class BackpropPair:
    """Backpropagated residuals: V at the output layer, U at the hidden layer."""

    V: np.ndarray
    U: np.ndarray


def init_params(shape: NetShape, seed: int) -> GeneratorParams:
    """Scaled-normal init for the weight matrices, zero offsets.

    A ~ N(0, 2/m) entrywise, B ~ N(0, 4/(k+m)) entrywise; a = b = 0.
    A is drawn before B, so the result is fully determined by the seed.
    """
    rng = np.random.default_rng(seed)
    n, m, k = shape.n, shape.m, shape.k
    A = rng.standard_normal((m, n)) / np.sqrt(m / 2.0)
    B = rng.standard_normal((k, m)) / np.sqrt((k + m) / 4.0)
    return GeneratorParams(A=A, a=np.zeros(m), B=B, b=np.zeros(k))


def _add_bias(M: np.ndarray, bias: np.ndarray) -> np.ndarray:
    return M + bias if M.ndim == 1 else M + bias[:, None]


def forward(params: GeneratorParams, z) -> LayerCache:
    """Run the network on one latent column or a (n, batch) block of columns."""
    z = np.asarray(z, dtype=np.float64)
    n_expected = params.A.shape[1]
    if z.ndim not in (1, 2) or z.shape[0] != n_expected:
        raise ValueError(
            f"latent input has shape {z.shape}, network expects length {n_expected} columns"
        )
    W = _add_bias(params.A @ z, params.a)
    S = np.maximum(W, 0.0)
    T = _add_bias(params.B @ S, params.b)
    Y = 1.0 / (1.0 + np.exp(-T))
    return LayerCache(Z=z, W=W, S=S, T=T, Y=Y)


def backprop_pair(params: GeneratorParams, cache: LayerCache, r) -> BackpropPair:
    """Backpropagate an output-space residual r through both nonlinearities.

    V = sigmoid'(T) .* r, computed as (Y - Y^2) .* r from the cached output;
    U = relu'(W) .* (B^T V), with relu' taken as 0 at exactly W == 0.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.shape != cache.Y.shape:
        raise ValueError(f"residual has shape {r.shape}, output has shape {cache.Y.shape}")
    V = (cache.Y - cache.Y * cache.Y) * r
    U = np.where(cache.W > 0.0, params.B.T @ V, 0.0)
    return BackpropPair(V=V, U=U)


def _augment_columns(M: np.ndarray) -> np.ndarray:
    # [M^T 1]: one row per batch column, trailing ones column for the offset.
    return np.concatenate([M.T, np.ones((M.shape[1], 1))], axis=1)


def outer_grad(coef: np.ndarray, feats: np.ndarray) -> np.ndarray:
    """coef [feats^T 1]: the gradient block of one layer.

    Rank-one for a single sample (1-D inputs); for (dim, K) blocks the
    matrix product sums the K per-column outer products.
    """
    if coef.ndim == 1:
        return np.outer(coef, np.concatenate([feats, [1.0]]))
    return coef @ _augment_columns(feats)


def layer_gradients(pair: BackpropPair, cache: LayerCache) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample kernel gradients G = V [S^T 1] and D = U [Z^T 1].

    G is k x (m+1) and applies to [B b]; D is m x (n+1) and applies to [A a].
    The last column of G is V itself (the offset gradient), likewise D and U.
    """
    return outer_grad(pair.V, cache.S), outer_grad(pair.U, cache.Z)
