"""Two-timescale identifier: annealed partition + recursive local models.

Every observation ``(phi, psi)`` drives two updates:

* fast: the parameter set linked to the winning (nearest) codevector takes
  one gradient step with stepsize ``alpha(t)``;
* slow: every codevector takes one annealing step with stepsize ``beta(t)``.

Temperature levels run from ``lambda_max`` down to ``lambda_min``. Each level
splits the codevectors into perturbed pairs, iterates until the prototypes
settle, merges pairs that did not separate, promotes candidate parameter
sets that differ from every confirmed mode, and cools ``lam <- gamma*lam``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Iterator, Optional

import numpy as np

from . import divergence as dv
from . import localid, oda
from .errors import ConfigError, ContractViolation, InvalidInput
from .localid import StepSchedule
from .simulate import Trajectory, make_rng


@dataclass
class IdentifierConfig:
    lambda_max: float = 0.99
    lambda_min: float = 0.2
    gamma: float = 0.8
    eps_n: Optional[float] = None
    eps_s: Optional[float] = None
    delta: Optional[float] = None
    K_max: int = 16
    alpha: StepSchedule = field(default_factory=lambda: localid.harmonic(0.01))
    beta: StepSchedule = field(default_factory=lambda: localid.harmonic_log(0.9))
    tol_conv: Optional[float] = None
    max_iters_per_level: Optional[int] = None
    update_order: str = "synchronous"
    seed: int = 0
    theta0: Optional[list] = None
    normalize_gain: bool = True
    slow_every: int = 1
    slow_offset: int = 0
    conv_window: int = 50

    def __post_init__(self):
        if self.theta0 is not None:
            self.theta0 = np.asarray(self.theta0, dtype=float).tolist()
        if isinstance(self.alpha, dict):
            self.alpha = StepSchedule.from_dict(self.alpha)
        if isinstance(self.beta, dict):
            self.beta = StepSchedule.from_dict(self.beta)
        self.validate()

    def validate(self) -> None:
        if not 0 < self.lambda_min < self.lambda_max < 1:
            raise ConfigError("lambda_min", "need 0 < lambda_min < lambda_max < 1")
        if not 0 < self.gamma < 1:
            raise ConfigError("gamma", "need 0 < gamma < 1")
        for name in ("eps_n", "eps_s", "delta", "tol_conv"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ConfigError(name, "must be positive")
        if self.K_max < 1:
            raise ConfigError("K_max", "must be at least 1")
        if self.max_iters_per_level is not None and self.max_iters_per_level < 1:
            raise ConfigError("max_iters_per_level", "must be at least 1")
        if self.update_order not in oda.UPDATE_ORDERS:
            raise ConfigError("update_order", f"choose from {oda.UPDATE_ORDERS}")
        if self.slow_every < 1:
            raise ConfigError("slow_every", "must be at least 1")
        if self.slow_offset < 0:
            raise ConfigError("slow_offset", "must be nonnegative")
        if self.conv_window < 1:
            raise ConfigError("conv_window", "must be at least 1")
        if not check_timescales(self.alpha, self.beta):
            raise ConfigError("beta", "beta(t)/alpha(t) must decrease towards 0 (slow partition updates)")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["alpha"] = self.alpha.to_dict()
        data["beta"] = self.beta.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "IdentifierConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown identifier setting")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError("identifier", str(exc)) from exc


def check_timescales(alpha: StepSchedule, beta: StepSchedule, grid=None) -> bool:
    """``beta/alpha`` is nonincreasing on a log grid and ends well below 1."""
    if grid is None:
        grid = np.unique(np.logspace(0, 7, 200).astype(int))
    ratio = beta.values(grid) / alpha.values(grid)
    return bool(np.all(np.diff(ratio) <= 1e-12) and ratio[-1] < 0.1)


# -- mode bookkeeping -----------------------------------------------------------

def theta_rule(theta_vec, mode_set, div: dv.Divergence = dv.Divergence.SQUARED_EUCLIDEAN) -> int:
    """Index of the confirmed mode whose parameters are closest to ``theta_vec``."""
    if len(mode_set) == 0:
        raise InvalidInput("mode set is empty")
    return dv.nearest(div, np.ravel(theta_vec), [np.ravel(m) for m in mode_set])


def mode_insert_check(candidate, mode_set, eps_s: float,
                      div: dv.Divergence = dv.Divergence.SQUARED_EUCLIDEAN) -> bool:
    """True iff the candidate is farther than ``eps_s`` from every confirmed mode."""
    if eps_s <= 0:
        raise InvalidInput("eps_s must be positive")
    cand = np.ravel(candidate)
    return all(dv.evaluate(div, cand, np.ravel(m)) > eps_s for m in mode_set)


@dataclass
class ModeSet:
    """Confirmed local models, in order of confirmation."""

    thetas: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.thetas)

    @property
    def s_hat(self) -> int:
        return len(self.thetas)

    def vectors(self) -> list[np.ndarray]:
        return [localid.vec(t) for t in self.thetas]


@dataclass
class EstimatedHybridModel:
    mode_set: ModeSet
    prototypes: np.ndarray
    assignment: np.ndarray
    lam: float

    @property
    def s_hat(self) -> int:
        return self.mode_set.s_hat

    @property
    def K(self) -> int:
        return len(self.prototypes)

    def cell(self, phi) -> int:
        return dv.nearest(dv.Divergence.SQUARED_EUCLIDEAN, phi, self.prototypes)

    def mode_of(self, phi) -> int:
        return int(self.assignment[self.cell(phi)])

    def cells_of_mode(self, i: int) -> list[int]:
        return [j for j, a in enumerate(self.assignment) if a == i]

    def to_dict(self) -> dict:
        return {
            "s_hat": self.s_hat,
            "K": self.K,
            "lambda": self.lam,
            "thetas": [t.tolist() for t in self.mode_set.thetas],
            "prototypes": self.prototypes.tolist(),
            "assignment": self.assignment.tolist(),
        }


def predict_hard(model: EstimatedHybridModel, phi) -> np.ndarray:
    """Prediction of the mode owning the nearest codevector's cell."""
    phi = np.asarray(phi, dtype=float)
    return model.mode_set.thetas[model.mode_of(phi)] @ phi


def predict_smooth(model: EstimatedHybridModel, phi, lam_eval: float) -> np.ndarray:
    """Mixture of per-cell predictions weighted by Gibbs associations to the
    codevector locations (uniform priors)."""
    phi = np.asarray(phi, dtype=float)
    divs = dv.to_prototypes(phi, model.prototypes)
    w = oda.gibbs_weights(divs, np.ones(model.K), lam_eval)
    preds = np.array([model.mode_set.thetas[a] @ phi for a in model.assignment])
    return w @ preds


# -- observation sources ----------------------------------------------------------

class ReplaySource:
    """Cycles a recorded trajectory; stream indices keep increasing across passes."""

    def __init__(self, trajectory: Trajectory, start: int = 0):
        if len(trajectory) == 0:
            raise InvalidInput("empty trajectory")
        if start < 0:
            raise InvalidInput("start index must be nonnegative")
        self.trajectory = trajectory
        self._k = start

    def __len__(self) -> int:
        return len(self.trajectory)

    def __iter__(self) -> Iterator:
        return self

    def __next__(self):
        n = len(self.trajectory)
        k = self._k
        self._k += 1
        return k, self.trajectory.phi[k % n], self.trajectory.psi[k % n]


class IterSource:
    """Wraps a live iterator of ``(t, phi, psi)``."""

    def __init__(self, iterable: Iterable):
        self._it = iter(iterable)

    def __iter__(self):
        return self

    def __next__(self):
        return next(self._it)


# -- identifier ----------------------------------------------------------------

@dataclass
class LevelSummary:
    lam: float
    K: int
    s_hat: int
    iterations: int
    converged: bool
    split: int
    merged: int
    confirmed: int


class HybridIdentifier:
    """Stateful identifier; feed it with :meth:`run_level` or :meth:`process_sample`.

    Parameters live in a pool keyed by integer ids. ``modes`` lists the ids
    of confirmed modes; codevectors flagged ``fresh`` point at candidate ids.
    """

    def __init__(self, config: IdentifierConfig, m: int, d: int):
        self.config = config
        self.m, self.d = m, d
        self.div = dv.Divergence.SQUARED_EUCLIDEAN
        self.rng = make_rng(config.seed)
        self.lam = config.lambda_max
        self.params: dict[int, np.ndarray] = {}
        self.modes: list[int] = []
        self._next_id = 0
        self.codebook: Optional[oda.Codebook] = None
        self.t = 0
        self.t_total = 0
        self.last_obs: Optional[int] = None
        self.levels: list[LevelSummary] = []
        self.records: list[dict] = []
        self.keep_records = True
        # running feature spread (Welford) for scale-dependent defaults
        self._n = 0
        self._mean = np.zeros(d)
        self._m2 = 0.0
        theta0 = np.zeros((m, d)) if config.theta0 is None else np.asarray(config.theta0, dtype=float).reshape(m, d)
        self.modes.append(self._new_param(theta0))

    # -- parameter pool

    def _new_param(self, theta) -> int:
        key = self._next_id
        self._next_id += 1
        self.params[key] = np.array(theta, dtype=float)
        return key

    @property
    def mode_set(self) -> ModeSet:
        return ModeSet([self.params[k].copy() for k in self.modes])

    @property
    def s_hat(self) -> int:
        return len(self.modes)

    @property
    def K(self) -> int:
        return 0 if self.codebook is None else self.codebook.K

    @property
    def finished(self) -> bool:
        return self.lam <= self.config.lambda_min

    # -- scale estimates

    def _observe_scale(self, phi) -> None:
        self._n += 1
        delta = phi - self._mean
        self._mean += delta / self._n
        self._m2 += float(delta @ (phi - self._mean))

    @property
    def radius(self) -> float:
        """RMS distance of the features seen so far from their mean."""
        return math.sqrt(self._m2 / self._n) if self._n > 1 else 0.0

    @property
    def eps_n(self) -> float:
        if self.config.eps_n is not None:
            return self.config.eps_n
        return max(0.01 * self.radius ** 2, 1e-12)

    @property
    def delta(self) -> float:
        return self.config.delta if self.config.delta is not None else 0.01 * self.radius

    @property
    def tol_conv(self) -> float:
        if self.config.tol_conv is not None:
            return self.config.tol_conv
        return 1e-4 * self.radius

    @property
    def eps_s(self) -> float:
        if self.config.eps_s is not None:
            return self.config.eps_s
        if len(self.modes) < 2:
            return 0.5
        vecs = [localid.vec(self.params[k]) for k in self.modes]
        dists = [dv.evaluate(self.div, vecs[i], vecs[j])
                 for i in range(len(vecs)) for j in range(i + 1, len(vecs))]
        return 0.25 * float(np.median(dists))

    # -- per-sample processing

    def _stack_thetas(self) -> np.ndarray:
        return np.stack([self.params[int(k)] for k in self.codebook.theta_index])

    def process_sample(self, phi, psi, t_obs: Optional[int] = None) -> dict:
        """Route one observation to the fast and slow updates."""
        phi = np.asarray(phi, dtype=float).ravel()
        psi = np.asarray(psi, dtype=float).ravel()
        if phi.shape != (self.d,) or psi.shape != (self.m,):
            raise ContractViolation(f"expected phi[{self.d}] and psi[{self.m}]")
        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(psi))):
            raise InvalidInput("observation contains non-finite values")
        if t_obs is not None:
            if self.last_obs is not None and t_obs <= self.last_obs:
                raise InvalidInput(f"observation index {t_obs} is not after {self.last_obs}")
            self.last_obs = t_obs
        self._observe_scale(phi)
        if self.codebook is None:
            self.codebook = oda.Codebook.initial(phi, self.modes[0])

        cb = self.codebook
        w = int(np.argmin(dv.to_prototypes(phi, cb.phi)))
        key = int(cb.theta_index[w])
        theta = self.params[key]
        err = theta @ phi - psi
        alpha = self.config.alpha(self.t)
        if self.config.normalize_gain:
            alpha = alpha / max(float(phi @ phi), 1e-12)
        self.params[key] = localid.sgd_update(theta, phi, psi, alpha)

        # with slow_every > 1 the codevectors are held between update instants
        if self.t % self.config.slow_every == 0:
            k = self.t // self.config.slow_every + self.config.slow_offset
            oda.oda_update(cb, psi, phi, self._stack_thetas(), self.lam,
                           self.config.beta(k), self.config.update_order)

        record = {
            "t": self.t_total,
            "lambda": self.lam,
            "K": cb.K,
            "s_hat": self.s_hat,
            "winner": w,
            "err_norm": float(np.linalg.norm(err)),
        }
        if self.keep_records:
            record["thetas"] = [self.params[k].copy() for k in self.modes]
            record["phis"] = cb.phi.copy()
            self.records.append(record)
        self.t += 1
        self.t_total += 1
        return record

    # -- temperature levels

    def _can_merge(self, a: int, b: int) -> bool:
        confirmed = set(self.modes)
        return not (a in confirmed and b in confirmed and a != b)

    def run_level(self, source) -> LevelSummary:
        """Split, iterate to convergence, merge, confirm modes, cool."""
        if self.finished:
            raise RuntimeError("temperature already at lambda_min; call finalize()")
        cfg = self.config
        max_iters = cfg.max_iters_per_level
        if max_iters is None:
            if not hasattr(source, "__len__"):
                raise ConfigError("max_iters_per_level", "required for sources of unknown length")
            max_iters = len(source)

        it = iter(source)
        if self.codebook is None:
            t_obs, phi, psi = next(it)
            self.process_sample(phi, psi, t_obs)
            max_iters -= 1

        K_before = self.K
        if self.K < cfg.K_max:
            self.codebook = oda.perturb_split(self.codebook, self.delta, self.rng, cfg.K_max)
            for i in np.flatnonzero(self.codebook.fresh):
                parent = int(self.codebook.theta_index[i])
                self.codebook.theta_index[i] = self._new_param(self.params[parent].copy())
        n_split = self.K - K_before

        self.t = 0
        converged = False
        iterations = 0
        tol = self.tol_conv
        calm = 0
        for _ in range(max_iters):
            try:
                t_obs, phi, psi = next(it)
            except StopIteration:
                break
            before = self.codebook.phi.copy()
            self.process_sample(phi, psi, t_obs)
            iterations += 1
            shift = np.max(np.linalg.norm(self.codebook.phi - before, axis=1))
            calm = calm + 1 if shift < tol else 0
            if calm >= cfg.conv_window:
                converged = True
                break

        K_pre_merge = self.K
        self.codebook = oda.merge(self.codebook, self.lam, self.eps_n, self.div, self._can_merge)
        n_merged = K_pre_merge - self.K

        n_confirmed = self._resolve_candidates()
        if self.keep_records and self.records:
            # the level's last row reports the state after merging and confirmation
            last = self.records[-1]
            last.update(K=self.K, s_hat=self.s_hat, phis=self.codebook.phi.copy(),
                        thetas=[self.params[k].copy() for k in self.modes])

        summary = LevelSummary(self.lam, self.K, self.s_hat, iterations, converged,
                               n_split, n_merged, n_confirmed)
        self.levels.append(summary)
        self.lam *= cfg.gamma
        return summary

    def _resolve_candidates(self) -> int:
        cb = self.codebook
        confirmed = 0
        eps_s = self.eps_s
        for i in range(cb.K):
            key = int(cb.theta_index[i])
            if key in self.modes:
                continue
            cand = self.params[key]
            if mode_insert_check(cand, [self.params[k] for k in self.modes], eps_s, self.div):
                self.modes.append(key)
                confirmed += 1
                eps_s = self.eps_s
            else:
                winner = theta_rule(localid.vec(cand), [localid.vec(self.params[k]) for k in self.modes], self.div)
                cb.theta_index[i] = self.modes[winner]
        cb.fresh[:] = False
        live = set(self.modes)
        for key in list(self.params):
            if key not in live:
                del self.params[key]
        return confirmed

    def run(self, source) -> "EstimatedHybridModel":
        """Run all temperature levels on ``source`` and finalize."""
        while not self.finished:
            self.run_level(source)
        return self.finalize()

    def finalize(self) -> EstimatedHybridModel:
        if self.codebook is None or not self.modes:
            raise RuntimeError("nothing to finalize: no observations processed")
        vecs = [localid.vec(self.params[k]) for k in self.modes]
        assignment = np.array([
            theta_rule(localid.vec(self.params[int(k)]), vecs, self.div)
            for k in self.codebook.theta_index
        ], dtype=int)
        return EstimatedHybridModel(self.mode_set, self.codebook.phi.copy(), assignment, self.lam)

    # -- checkpointing

    def snapshot(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "m": self.m,
            "d": self.d,
            "lambda": self.lam,
            "t": self.t,
            "t_total": self.t_total,
            "last_obs": self.last_obs,
            "codevectors": None if self.codebook is None else self.codebook.to_dict(),
            "params": {str(k): v.tolist() for k, v in self.params.items()},
            "candidate_thetas": [
                self.params[k].tolist() for k in sorted(self.params) if k not in self.modes
            ],
            "mode_set": [self.params[k].tolist() for k in self.modes],
            "mode_keys": [int(k) for k in self.modes],
            "next_id": self._next_id,
            "scale": {"n": self._n, "mean": self._mean.tolist(), "m2": self._m2},
            "rng_state": self.rng.bit_generator.state,
            "levels": [asdict(lv) for lv in self.levels],
        }

    @classmethod
    def restore(cls, snap: dict) -> "HybridIdentifier":
        ident = cls(IdentifierConfig.from_dict(snap["config"]), snap["m"], snap["d"])
        ident.lam = float(snap["lambda"])
        ident.t = int(snap["t"])
        ident.t_total = int(snap["t_total"])
        ident.last_obs = snap.get("last_obs")
        if snap["codevectors"] is not None:
            ident.codebook = oda.Codebook.from_dict(snap["codevectors"])
        ident.params = {int(k): np.asarray(v, dtype=float) for k, v in snap["params"].items()}
        ident.modes = [int(k) for k in snap["mode_keys"]]
        ident._next_id = int(snap["next_id"])
        ident._n = int(snap["scale"]["n"])
        ident._mean = np.asarray(snap["scale"]["mean"], dtype=float)
        ident._m2 = float(snap["scale"]["m2"])
        ident.rng.bit_generator.state = snap["rng_state"]
        ident.levels = [LevelSummary(**lv) for lv in snap["levels"]]
        return ident

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.snapshot(), fh)

    @classmethod
    def load(cls, path) -> "HybridIdentifier":
        with open(path) as fh:
            return cls.restore(json.load(fh))
