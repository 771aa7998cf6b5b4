"""Gaussian kernel primitives and kernel two-sample distances.

Everything here is a pure function of its inputs. Sample collections are
column-major: one vector per column, matching the rest of the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian kernel k(u, v) = exp(-||u - v||^2 / h).

    ``bandwidth_h`` is the squared-distance scale; it is always explicit,
    there is no automatic bandwidth selection.
    """

    bandwidth_h: float

    def __post_init__(self):
        if not self.bandwidth_h > 0:
            raise ValueError(f"bandwidth_h must be positive, got {self.bandwidth_h}")


@dataclass(frozen=True)
class SampleSet:
    """A collection of real vectors stored as the columns of a (dim, count) array."""

    vectors: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"vectors must be a (dim, count) matrix, got shape {v.shape}")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"need dim >= 1 and count >= 1, got shape {v.shape}")
        object.__setattr__(self, "vectors", v)

    @property
    def dim(self) -> int:
        return self.vectors.shape[0]

    @property
    def count(self) -> int:
        return self.vectors.shape[1]


def _as_vector(name: str, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector, got shape {x.shape}")
    return x


def _check_same_length(name_a: str, a: np.ndarray, name_b: str, b: np.ndarray):
    if a.shape[0] != b.shape[0]:
        raise ValueError(
            f"dimension mismatch: {name_a} has length {a.shape[0]}, "
            f"{name_b} has length {b.shape[0]}"
        )


def gaussian_kernel(u, v, spec: KernelSpec) -> float:
    """Evaluate exp(-||u - v||^2 / h). Always in (0, 1], and 1 iff u == v."""
    u = _as_vector("u", u)
    v = _as_vector("v", v)
    _check_same_length("u", u, "v", v)
    d = u - v
    return float(np.exp(-np.sum(d * d) / spec.bandwidth_h))


def kernel_grad_first(y, u, spec: KernelSpec) -> np.ndarray:
    """Gradient of the Gaussian kernel with respect to its first argument.

    Returns -(2/h) * exp(-||y - u||^2 / h) * (y - u).
    """
    y = _as_vector("y", y)
    u = _as_vector("u", u)
    _check_same_length("y", y, "u", u)
    h = spec.bandwidth_h
    d = y - u
    return (-2.0 / h) * np.exp(-np.sum(d * d) / h) * d


def triple_loss(y1, y2, x, spec: KernelSpec) -> float:
    """Instantaneous loss sample k(y1, y2) - k(y1, x) - k(y2, x).

    This is the quantity whose expectation over independent (y1, y2, x) the
    generator training minimizes; values lie in (-2, 1].
    """
    y1 = _as_vector("y1", y1)
    y2 = _as_vector("y2", y2)
    x = _as_vector("x", x)
    _check_same_length("y1", y1, "y2", y2)
    _check_same_length("y1", y1, "x", x)
    return (
        gaussian_kernel(y1, y2, spec)
        - gaussian_kernel(y1, x, spec)
        - gaussian_kernel(y2, x, spec)
    )


def _gram_block(cols_a: np.ndarray, cols_b: np.ndarray, h: float) -> np.ndarray:
    # cdist wants one row per point; our convention is one column per point.
    return np.exp(-cdist(cols_a.T, cols_b.T, "sqeuclidean") / h)


def mmd_score(a: SampleSet, b: SampleSet, spec: KernelSpec) -> float:
    """Biased (V-statistic) estimate of the squared kernel distance between two samples.

    mean_ij k(a_i, a_j) + mean_ij k(b_i, b_j) - 2 mean_ij k(a_i, b_j).

    Including the i == j terms keeps the estimate non-negative (up to
    floating-point rounding), which is what makes it usable as a quality
    score: smaller means the two samples look more alike under the kernel.
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: a has dim {a.dim}, b has dim {b.dim}")
    h = spec.bandwidth_h
    kaa = _gram_block(a.vectors, a.vectors, h).mean()
    kbb = _gram_block(b.vectors, b.vectors, h).mean()
    kab = _gram_block(a.vectors, b.vectors, h).mean()
    return float(kaa + kbb - 2.0 * kab)


def gram_matrix(s: SampleSet, spec: KernelSpec) -> np.ndarray:
    """Symmetric (count, count) kernel matrix of a sample set; unit diagonal."""
    return _gram_block(s.vectors, s.vectors, spec.bandwidth_h)
