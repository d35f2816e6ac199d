"""Fast-timescale recursive identification of local affine models.

A local model maps a feature vector ``phi`` (length ``d``) to a target
``psi`` (length ``m``) through a parameter matrix ``Theta`` of shape
``(m, d)``. The vectorized form used when comparing parameter sets is the
column-major ``vec(Theta)``, for which ``kron(phi, I_m) @ vec(Theta)`` equals
``Theta @ phi``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import ContractViolation, DivergenceError, InvalidInput


@dataclass
class LocalModel:
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        if not np.all(np.isfinite(self.theta)):
            raise InvalidInput("local model parameters must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        return self.theta.shape

    def vec(self) -> np.ndarray:
        return vec(self.theta)

    @classmethod
    def from_vec(cls, theta_vec, m: int) -> "LocalModel":
        return cls(unvec(theta_vec, m))

    def predict(self, phi) -> np.ndarray:
        return predict(self.theta, phi)

    def copy(self) -> "LocalModel":
        return LocalModel(self.theta.copy())


def vec(theta) -> np.ndarray:
    """Column-major vectorization."""
    return np.asarray(theta, dtype=float).reshape(-1, order="F")


def unvec(theta_vec, m: int) -> np.ndarray:
    v = np.asarray(theta_vec, dtype=float).ravel()
    if v.size % m:
        raise ContractViolation(f"length {v.size} is not a multiple of m={m}")
    return v.reshape(m, -1, order="F")


def regressor_matrix(phi, m: int) -> np.ndarray:
    """``[phi^T kron I_m]``, the (m, m*d) matrix acting on ``vec(Theta)``."""
    phi = np.asarray(phi, dtype=float).reshape(1, -1)
    return np.kron(phi, np.eye(m))


def _check(theta: np.ndarray, phi: np.ndarray) -> None:
    if theta.ndim != 2 or phi.ndim != 1 or theta.shape[1] != phi.shape[0]:
        raise ContractViolation(
            f"parameter shape {theta.shape} incompatible with feature shape {phi.shape}"
        )


def predict(theta, phi) -> np.ndarray:
    """Return ``Theta @ phi``."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    _check(theta, phi)
    return theta @ phi


def sgd_update(theta, phi, psi, alpha: float) -> np.ndarray:
    """One gradient step on ``0.5 * |Theta phi - psi|^2``.

    Returns the new parameter matrix ``Theta - alpha * eps phi^T`` with
    ``eps = Theta phi - psi``. Raises :class:`DivergenceError` if the result
    is not finite.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    psi = np.atleast_1d(np.asarray(psi, dtype=float))
    _check(theta, phi)
    if psi.shape != (theta.shape[0],):
        raise ContractViolation(f"target shape {psi.shape} does not match m={theta.shape[0]}")
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(psi)) and math.isfinite(alpha)):
        raise InvalidInput("non-finite input to sgd_update")
    if alpha <= 0:
        raise InvalidInput(f"stepsize must be positive, got {alpha}")
    # overflow is reported below as a divergence
    with np.errstate(over="ignore", invalid="ignore"):
        eps = theta @ phi - psi
        new = theta - alpha * np.outer(eps, phi)
    if not np.all(np.isfinite(new)):
        raise DivergenceError("parameter update produced non-finite values")
    return new


# -- stepsize schedules ------------------------------------------------------

SCHEDULE_KINDS = ("harmonic", "harmonic_log", "power", "constant")


@dataclass(frozen=True)
class StepSchedule:
    """Stepsize sequence indexed by an integer counter ``t >= 0``.

    ``harmonic``      1 / (1 + c t)
    ``harmonic_log``  1 / (1 + c t ln(t + 1))
    ``power``         1 / (1 + t)^c
    ``constant``      c
    """

    kind: str
    c: float

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "constant":
            if not 0 < self.c <= 1:
                raise ValueError("constant stepsize must lie in (0, 1]")
        elif self.c <= 0:
            raise ValueError("schedule coefficient must be positive")

    def __call__(self, t: int) -> float:
        if t < 0:
            raise ValueError("schedule counter must be nonnegative")
        if self.kind == "harmonic":
            return 1.0 / (1.0 + self.c * t)
        if self.kind == "harmonic_log":
            return 1.0 / (1.0 + self.c * t * math.log(t + 1.0))
        if self.kind == "power":
            return 1.0 / (1.0 + t) ** self.c
        return self.c

    def values(self, ts) -> np.ndarray:
        return np.array([self(int(t)) for t in ts])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "c": self.c}

    @classmethod
    def from_dict(cls, data: dict) -> "StepSchedule":
        return cls(str(data["kind"]), float(data["c"]))


def harmonic(c: float) -> StepSchedule:
    return StepSchedule("harmonic", c)


def harmonic_log(c: float) -> StepSchedule:
    return StepSchedule("harmonic_log", c)


def power(p: float) -> StepSchedule:
    return StepSchedule("power", p)


def constant(gamma: float) -> StepSchedule:
    return StepSchedule("constant", gamma)


def converge_single(
    phis,
    psis,
    gain,
    theta0=None,
    theta_ref=None,
    passes: int = 1,
    max_steps: Optional[int] = None,
    record_every: int = 1,
):
    """Run the gradient recursion over a single-mode stream.

    ``gain`` is a :class:`StepSchedule` or a positive float (constant gain,
    which may exceed 1 for unnormalized data). The stream is replayed
    ``passes`` times unless ``max_steps`` is given. Returns ``(theta,
    history)`` where ``history`` holds the Frobenius error to ``theta_ref``
    after every ``record_every``-th step (empty without a reference).

    Inputs are validated once up front, so the inner loop skips the
    per-call checks of :func:`sgd_update`.
    """
    phis = np.atleast_2d(np.asarray(phis, dtype=float))
    psis = np.asarray(psis, dtype=float)
    if psis.ndim == 1:
        psis = psis.reshape(-1, 1)
    if len(phis) != len(psis):
        raise ContractViolation("phis and psis must have the same length")
    if not (np.all(np.isfinite(phis)) and np.all(np.isfinite(psis))):
        raise InvalidInput("non-finite samples")
    if record_every < 1:
        raise InvalidInput("record_every must be at least 1")
    m, d = psis.shape[1], phis.shape[1]
    theta = np.zeros((m, d)) if theta0 is None else np.array(theta0, dtype=float).reshape(m, d)
    ref = None if theta_ref is None else np.asarray(theta_ref, dtype=float).reshape(m, d)
    if callable(gain):
        step = gain
    else:
        g = float(gain)
        if not g > 0:
            raise InvalidInput("constant gain must be positive")
        step = lambda _t: g  # noqa: E731

    n = len(phis)
    total = passes * n if max_steps is None else max_steps
    history = []
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(total):
            phi = phis[t % n]
            eps = theta @ phi - psis[t % n]
            theta -= step(t) * np.outer(eps, phi)
            if ref is not None and (t + 1) % record_every == 0:
                history.append(float(np.linalg.norm(theta - ref)))
    if not np.all(np.isfinite(theta)):
        raise DivergenceError("parameter recursion produced non-finite values")
    return theta, np.asarray(history)


def frobenius_errors(thetas: Iterable[np.ndarray], ref) -> np.ndarray:
    ref = np.asarray(ref, dtype=float)
    return np.array([np.linalg.norm(np.asarray(th) - ref) for th in thetas])
