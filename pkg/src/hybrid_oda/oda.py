"""Online deterministic annealing over augmented codevectors.

Each codevector ``i`` keeps a location ``phi_hat_i`` in feature space and two
accumulators ``rho_i`` (cell mass) and ``sigma_i`` (mass-weighted location)
with ``phi_hat_i = sigma_i / rho_i``. Observations ``x = [psi; phi]`` are
softly associated to the augmented codevectors ``mu_i = [Theta_i phi;
phi_hat_i]`` through Gibbs weights at temperature ``lam``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .divergence import Divergence
from .errors import ContractViolation, InvalidInput

UPDATE_ORDERS = ("synchronous", "sequential")

# lower bound on association weights inside the recursions: a weight that
# underflows to 0 combined with beta=1 would otherwise zero a cell's mass
MASS_FLOOR = 1e-300


@dataclass
class Codevector:
    phi_hat: np.ndarray
    rho: float
    sigma: np.ndarray
    theta_index: int
    fresh: bool = False


class Codebook:
    """Array-backed set of codevectors.

    ``theta_index[i]`` is a key into the owner's parameter pool; ``fresh[i]``
    marks a child created by the most recent split that carries a cloned
    candidate parameter vector.
    """

    def __init__(self, phi, rho, sigma, theta_index, fresh=None):
        self.phi = np.array(phi, dtype=float, ndmin=2)
        self.rho = np.array(rho, dtype=float, ndmin=1)
        self.sigma = np.array(sigma, dtype=float, ndmin=2)
        self.theta_index = np.array(theta_index, dtype=int, ndmin=1)
        K = len(self.rho)
        self.fresh = np.zeros(K, dtype=bool) if fresh is None else np.array(fresh, dtype=bool, ndmin=1)
        if not (self.phi.shape[0] == self.sigma.shape[0] == len(self.theta_index) == len(self.fresh) == K):
            raise ContractViolation("codebook arrays must have matching lengths")
        if np.any(self.rho <= 0):
            raise InvalidInput("codevector masses must be positive")

    @classmethod
    def initial(cls, phi, theta_index: int = 0) -> "Codebook":
        """One codevector at ``phi`` with unit mass."""
        phi = np.asarray(phi, dtype=float).reshape(1, -1)
        return cls(phi.copy(), [1.0], phi.copy(), [theta_index])

    @property
    def K(self) -> int:
        return len(self.rho)

    @property
    def dim(self) -> int:
        return self.phi.shape[1]

    def __len__(self) -> int:
        return self.K

    def copy(self) -> "Codebook":
        return Codebook(self.phi.copy(), self.rho.copy(), self.sigma.copy(),
                        self.theta_index.copy(), self.fresh.copy())

    def take(self, idx) -> "Codebook":
        idx = np.asarray(idx, dtype=int)
        return Codebook(self.phi[idx], self.rho[idx], self.sigma[idx],
                        self.theta_index[idx], self.fresh[idx])

    def codevectors(self) -> list[Codevector]:
        return [
            Codevector(self.phi[i].copy(), float(self.rho[i]), self.sigma[i].copy(),
                       int(self.theta_index[i]), bool(self.fresh[i]))
            for i in range(self.K)
        ]

    def to_dict(self) -> dict:
        return {
            "phi_hat": self.phi.tolist(),
            "rho": self.rho.tolist(),
            "sigma": self.sigma.tolist(),
            "theta_index": self.theta_index.tolist(),
            "fresh": self.fresh.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Codebook":
        cb = cls(data["phi_hat"], data["rho"], data["sigma"], data["theta_index"], data.get("fresh"))
        return cb


def augmented_codevector(phi_hat, phi, theta) -> np.ndarray:
    """``mu = [Theta phi; phi_hat]``.

    ``theta`` may be an ``(m, d)`` matrix or its column-major vectorization
    (then ``m = len(theta) // d``).
    """
    phi_hat = np.asarray(phi_hat, dtype=float).ravel()
    phi = np.asarray(phi, dtype=float).ravel()
    theta = np.asarray(theta, dtype=float)
    if phi_hat.shape != phi.shape:
        raise ContractViolation("prototype and feature dimensions differ")
    if theta.ndim == 1:
        if theta.size % phi.size:
            raise ContractViolation("parameter vector length is not a multiple of d")
        theta = theta.reshape(-1, phi.size, order="F")
    if theta.shape[1] != phi.size:
        raise ContractViolation("parameter matrix does not match feature dimension")
    return np.concatenate([theta @ phi, phi_hat])


def augmented_divergences(codebook: Codebook, psi, phi, thetas) -> np.ndarray:
    """``d([psi; phi], mu_i)`` for every codevector.

    ``thetas`` is a ``(K, m, d)`` stack of the parameter matrices referenced by
    the codevectors, in codebook order.
    """
    pred_err = np.einsum("kmd,d->km", thetas, phi) - psi
    loc_err = codebook.phi - phi
    return np.einsum("km,km->k", pred_err, pred_err) + np.einsum("kd,kd->k", loc_err, loc_err)


def gibbs_weights(divs, rho, lam: float) -> np.ndarray:
    """``p_i ∝ rho_i exp(-(1-lam)/lam * d_i)`` with a max-shifted exponent."""
    divs = np.asarray(divs, dtype=float)
    if not 0 < lam < 1:
        raise InvalidInput(f"temperature must lie in (0, 1), got {lam}")
    if np.any(np.isnan(divs)):
        raise InvalidInput("divergence values contain NaN")
    beta = (1.0 - lam) / lam
    w = np.asarray(rho, dtype=float) * np.exp(-beta * (divs - divs.min()))
    total = w.sum()
    if not total > 0:
        # every codevector at the minimum has zero mass; fall back to hard assignment
        w = (divs == divs.min()).astype(float)
        total = w.sum()
    return w / total


def gibbs_probs(codebook: Codebook, psi, phi, thetas, lam: float) -> np.ndarray:
    return gibbs_weights(augmented_divergences(codebook, psi, phi, thetas), codebook.rho, lam)


def oda_update(
    codebook: Codebook, psi, phi, thetas, lam: float, beta: float, order: str = "synchronous"
) -> np.ndarray:
    """Apply the accumulator recursions in place and return the association
    probabilities used.

    ``rho_i += beta (p_i - rho_i)`` and ``sigma_i += beta (phi p_i - sigma_i)``
    followed by ``phi_hat_i = sigma_i / rho_i``. In ``synchronous`` order every
    ``p_i`` comes from the pre-update state; in ``sequential`` order the
    probabilities are recomputed before each codevector's update.
    """
    if not 0 < beta <= 1:
        raise InvalidInput(f"slow stepsize must lie in (0, 1], got {beta}")
    psi = np.asarray(psi, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if order == "synchronous":
        p = gibbs_probs(codebook, psi, phi, thetas, lam)
        q = np.maximum(p, MASS_FLOOR)
        # convex-combination form of rho += beta (p - rho); exact at beta = 1
        codebook.rho = (1.0 - beta) * codebook.rho + beta * q
        codebook.sigma = (1.0 - beta) * codebook.sigma + beta * np.outer(q, phi)
        codebook.phi = codebook.sigma / codebook.rho[:, None]
    elif order == "sequential":
        p = np.empty(codebook.K)
        for i in range(codebook.K):
            p_i = gibbs_probs(codebook, psi, phi, thetas, lam)[i]
            q_i = max(p_i, MASS_FLOOR)
            codebook.rho[i] = (1.0 - beta) * codebook.rho[i] + beta * q_i
            codebook.sigma[i] = (1.0 - beta) * codebook.sigma[i] + beta * phi * q_i
            codebook.phi[i] = codebook.sigma[i] / codebook.rho[i]
            p[i] = p_i
    else:
        raise InvalidInput(f"unknown update order {order!r}")
    assert np.all(codebook.rho > 0), "codevector mass left (0, 1]"
    return p


def random_unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else np.eye(dim)[0]


def perturb_split(
    codebook: Codebook, delta: float, rng: np.random.Generator, K_max: Optional[int] = None
) -> Codebook:
    """Replace codevectors by perturbed pairs ``phi_hat ± delta v``.

    Children share the parent's mass and accumulator equally and inherit its
    ``theta_index``; the second child of each pair is flagged ``fresh``. When
    doubling would exceed ``K_max`` only the ``K_max - K`` heaviest
    codevectors are split.
    """
    K = codebook.K
    if K_max is None or 2 * K <= K_max:
        chosen = set(range(K))
    else:
        room = max(K_max - K, 0)
        order = np.argsort(-codebook.rho, kind="stable")
        chosen = set(order[:room].tolist())

    phi, rho, theta_index, fresh = [], [], [], []
    for i in range(K):
        if i not in chosen:
            phi.append(codebook.phi[i])
            rho.append(codebook.rho[i])
            theta_index.append(codebook.theta_index[i])
            fresh.append(False)
            continue
        v = random_unit(rng, codebook.dim)
        for sign, is_fresh in ((1.0, False), (-1.0, True)):
            phi.append(codebook.phi[i] + sign * delta * v)
            rho.append(codebook.rho[i] / 2.0)
            theta_index.append(codebook.theta_index[i])
            fresh.append(is_fresh)
    phi = np.array(phi)
    rho = np.array(rho)
    # sigma_i / 2 shifted consistently with the perturbed location
    sigma = phi * rho[:, None]
    return Codebook(phi, rho, sigma, theta_index, fresh)


def merge(
    codebook: Codebook,
    lam: float,
    eps_n: float,
    div: Divergence = Divergence.SQUARED_EUCLIDEAN,
    can_merge: Optional[Callable[[int, int], bool]] = None,
) -> Codebook:
    """Coalesce codevectors with ``(1-lam)/lam * d(phi_i, phi_j) <= eps_n``.

    Pairs are scanned in index order; the lower index survives and absorbs the
    other's ``rho`` and ``sigma``. Scanning repeats until no pair qualifies.
    ``can_merge(theta_index_i, theta_index_j)`` may veto a pair.
    """
    if div is not Divergence.SQUARED_EUCLIDEAN:
        raise NotImplementedError(div)
    scale = (1.0 - lam) / lam
    cb = codebook.copy()
    alive = list(range(cb.K))
    changed = True
    while changed:
        changed = False
        for a in range(len(alive)):
            i = alive[a]
            for b in range(a + 1, len(alive)):
                j = alive[b]
                diff = cb.phi[i] - cb.phi[j]
                if scale * float(diff @ diff) > eps_n:
                    continue
                if can_merge is not None and not can_merge(int(cb.theta_index[i]), int(cb.theta_index[j])):
                    continue
                cb.rho[i] += cb.rho[j]
                cb.sigma[i] += cb.sigma[j]
                cb.phi[i] = cb.sigma[i] / cb.rho[i]
                alive.pop(b)
                changed = True
                break
            if changed:
                break
    return cb.take(alive)


def free_energy(psis, phis, codebook: Codebook, thetas, lam: float) -> tuple[float, float, float]:
    """Empirical ``(F, D, H)`` with ``F = (1-lam) D - lam H``.

    ``H`` is the mean association entropy; the data entropy term does not
    depend on the codevectors and is left out.
    """
    psis = np.atleast_2d(np.asarray(psis, dtype=float))
    phis = np.atleast_2d(np.asarray(phis, dtype=float))
    if len(phis) == 0:
        raise InvalidInput("free energy needs at least one sample")
    D = H = 0.0
    for psi, phi in zip(psis, phis):
        divs = augmented_divergences(codebook, psi, phi, thetas)
        p = gibbs_weights(divs, codebook.rho, lam)
        D += float(p @ divs)
        nz = p > 0
        H -= float(p[nz] @ np.log(p[nz]))
    D /= len(phis)
    H /= len(phis)
    return (1.0 - lam) * D - lam * H, D, H
