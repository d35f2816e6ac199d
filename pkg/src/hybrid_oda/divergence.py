"""Bregman divergences used for the prototype partition and for merging."""
from __future__ import annotations

import enum
from typing import Sequence

import numpy as np

from .errors import ContractViolation, InvalidInput


class Divergence(enum.Enum):
    """Supported Bregman generators. Only the squared Euclidean one for now."""

    SQUARED_EUCLIDEAN = "squared_euclidean"

    def __call__(self, x, mu) -> float:
        return evaluate(self, x, mu)


def _as_vector(v, name: str) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1)
    if a.ndim != 1 or a.size == 0:
        raise ContractViolation(f"{name} must be a non-empty vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return a


def evaluate(div: Divergence, x, mu) -> float:
    """Return ``d(x, mu)``. For squared Euclidean this is ``sum((x - mu)**2)``."""
    x = _as_vector(x, "x")
    mu = _as_vector(mu, "mu")
    if x.shape != mu.shape:
        raise ContractViolation(f"dimension mismatch: {x.shape} vs {mu.shape}")
    if div is Divergence.SQUARED_EUCLIDEAN:
        diff = x - mu
        return float(diff @ diff)
    raise NotImplementedError(div)


def to_prototypes(x, prototypes) -> np.ndarray:
    """Return ``d(x, p_j)`` for every row ``p_j`` of ``prototypes``."""
    diff = np.asarray(prototypes, dtype=float) - x
    return np.einsum("ij,ij->i", diff, diff)


def nearest(div: Divergence, x, prototypes: Sequence) -> int:
    """Index of the closest prototype. Ties go to the lowest index."""
    x = _as_vector(x, "x")
    protos = np.asarray(prototypes, dtype=float)
    if protos.size == 0:
        raise InvalidInput("empty prototype list")
    if protos.ndim == 1:
        protos = protos.reshape(-1, 1) if x.size == 1 else protos.reshape(1, -1)
    if protos.shape[1] != x.size:
        raise ContractViolation(
            f"prototype dimension {protos.shape[1]} does not match x dimension {x.size}"
        )
    if not np.all(np.isfinite(protos)):
        raise InvalidInput("prototypes contain non-finite entries")
    if div is not Divergence.SQUARED_EUCLIDEAN:
        raise NotImplementedError(div)
    # np.argmin returns the first occurrence, which is the tie rule we want
    return int(np.argmin(to_prototypes(x, protos)))


def bisector(mu_i, mu_j) -> tuple[np.ndarray, float]:
    """Hyperplane ``a @ phi - b`` separating the cells of ``mu_i`` and ``mu_j``.

    ``d(phi, mu_i) - d(phi, mu_j)`` has the same sign as ``a @ phi - b`` with
    ``a = 2 (mu_j - mu_i)`` and ``b = |mu_j|^2 - |mu_i|^2``.
    """
    mu_i = _as_vector(mu_i, "mu_i")
    mu_j = _as_vector(mu_j, "mu_j")
    return 2.0 * (mu_j - mu_i), float(mu_j @ mu_j - mu_i @ mu_i)
