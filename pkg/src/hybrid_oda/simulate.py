"""Ground-truth switched affine systems and observation streams.

Two system kinds are supported:

``pwarx``
    ``psi_t = y_t`` and ``phi_t = [r_t; 1]`` where ``r_t`` stacks past outputs
    and current/past inputs (see :func:`build_regressor`).
``state_space``
    ``psi_t = x_{t+1}`` and ``phi_t = [x_t; u_t]``; the emitted target becomes
    the next state.

Mode regions are intersections of closed halfspaces ``a @ phi <= b`` over the
feature domain. A feature vector belongs to the lowest-indexed region that
contains it.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ContractViolation, InvalidInput, OutOfDomainError

RNG_ALGORITHM = "numpy.random.Generator(PCG64)"

BOUNDARY_TOL = 1e-12


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class Halfspace:
    a: tuple
    b: float

    def __post_init__(self):
        a = tuple(float(v) for v in np.atleast_1d(self.a))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))
        if not any(a):
            raise InvalidInput("halfspace normal must be nonzero")

    def contains(self, phi) -> bool:
        return float(np.dot(self.a, phi)) <= self.b + BOUNDARY_TOL


@dataclass
class AffineMode:
    theta: np.ndarray
    region: list

    def __post_init__(self):
        self.theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        if not np.all(np.isfinite(self.theta)):
            raise InvalidInput("mode parameters must be finite")
        if not self.region:
            raise InvalidInput("mode region needs at least one halfspace")
        self.region = [h if isinstance(h, Halfspace) else Halfspace(h["a"], h["b"]) for h in self.region]

    def contains(self, phi) -> bool:
        return all(h.contains(phi) for h in self.region)


@dataclass(frozen=True)
class InputSignal:
    """Bounded scalar input ``u_t``.

    ``sinusoid``  amplitude * cos(2 pi frequency t dt)
    ``uniform``   uniform draw on [lo, hi] from the run's generator
    ``sequence``  explicit values, one per time step
    """

    kind: str
    amplitude: float = 1.0
    frequency: float = 1.0
    lo: float = -1.0
    hi: float = 1.0
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in ("sinusoid", "uniform", "sequence"):
            raise InvalidInput(f"unknown input kind {self.kind!r}")
        if self.kind == "uniform" and not self.lo < self.hi:
            raise InvalidInput("uniform input needs lo < hi")
        if self.kind == "sequence":
            vals = tuple(float(v) for v in self.values)
            if not vals or not all(math.isfinite(v) for v in vals):
                raise InvalidInput("sequence input needs finite values")
            object.__setattr__(self, "values", vals)

    def sample(self, t: int, dt: float, rng: np.random.Generator) -> float:
        if self.kind == "sinusoid":
            return self.amplitude * math.cos(2.0 * math.pi * self.frequency * t * dt)
        if self.kind == "uniform":
            return float(rng.uniform(self.lo, self.hi))
        if t >= len(self.values):
            raise InvalidInput(f"input sequence has no value for t={t}")
        return self.values[t]

    def to_dict(self) -> dict:
        if self.kind == "sinusoid":
            return {"kind": "sinusoid", "amplitude": self.amplitude, "frequency": self.frequency}
        if self.kind == "uniform":
            return {"kind": "uniform", "lo": self.lo, "hi": self.hi}
        return {"kind": "sequence", "values": list(self.values)}

    @classmethod
    def from_dict(cls, data: dict) -> "InputSignal":
        data = dict(data)
        if "values" in data:
            data["values"] = tuple(data["values"])
        return cls(**data)


@dataclass
class SwitchedSystemSpec:
    m: int
    d: int
    modes: list
    input: InputSignal
    noise_std: float = 0.0
    dt: float = 1.0
    n_a: int = 0
    n_b: int = 0
    kind: str = "pwarx"
    x0: Optional[Sequence[float]] = None
    name: str = "custom"

    def __post_init__(self):
        if not self.modes:
            raise InvalidInput("a system needs at least one mode")
        if self.kind not in ("pwarx", "state_space"):
            raise InvalidInput(f"unknown system kind {self.kind!r}")
        if self.noise_std < 0 or self.dt <= 0:
            raise InvalidInput("noise_std must be >= 0 and dt > 0")
        if self.n_a < 0 or self.n_b < 0:
            raise InvalidInput("orders must be nonnegative")
        for mode in self.modes:
            if mode.theta.shape != (self.m, self.d):
                raise ContractViolation(f"mode parameters {mode.theta.shape} != ({self.m}, {self.d})")
            for h in mode.region:
                if len(h.a) != self.d:
                    raise ContractViolation("halfspace dimension does not match d")
        if self.kind == "state_space":
            if self.d <= self.m:
                raise ContractViolation("state-space systems need d = n + p with p >= 1")
        elif self.d != self.m * self.n_a + (self.n_b + 1) + 1:
            raise ContractViolation("pwarx d must equal q*n_a + (n_b+1) + 1 for scalar input")

    @property
    def s(self) -> int:
        return len(self.modes)

    def distinct_dynamics(self) -> list[int]:
        """Map each region to the first region index with identical parameters."""
        labels = []
        for i, mode in enumerate(self.modes):
            for j in range(i):
                if np.array_equal(self.modes[j].theta, mode.theta):
                    labels.append(labels[j])
                    break
            else:
                labels.append(i)
        return labels

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "m": self.m,
            "d": self.d,
            "modes": [
                {
                    "theta": mode.theta.tolist(),
                    "region": [{"a": list(h.a), "b": h.b} for h in mode.region],
                }
                for mode in self.modes
            ],
            "noise_std": self.noise_std,
            "dt": self.dt,
            "input": self.input.to_dict(),
            "n_a": self.n_a,
            "n_b": self.n_b,
            "x0": None if self.x0 is None else list(self.x0),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SwitchedSystemSpec":
        try:
            modes = [AffineMode(np.asarray(md["theta"], dtype=float), md["region"]) for md in data["modes"]]
            return cls(
                m=int(data["m"]),
                d=int(data["d"]),
                modes=modes,
                input=InputSignal.from_dict(data["input"]),
                noise_std=float(data.get("noise_std", 0.0)),
                dt=float(data.get("dt", 1.0)),
                n_a=int(data.get("n_a", 0)),
                n_b=int(data.get("n_b", 0)),
                kind=data.get("kind", "pwarx"),
                x0=data.get("x0"),
                name=data.get("name", "custom"),
            )
        except KeyError as exc:
            raise InvalidInput(f"missing field {exc.args[0]!r} in system spec") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SwitchedSystemSpec":
        return cls.from_dict(json.loads(text))


# -- presets -----------------------------------------------------------------

def exp1(noise_std: float = 0.2) -> SwitchedSystemSpec:
    """Scalar PWARX map with a jump at r=2 and identical outer dynamics.

    Regions are ordered [-4,-1], [2,4], [-1,2] so the shared boundary points
    r=-1 and r=2 resolve to the closed outer intervals.
    """
    th_outer = [[1.0, 2.0]]
    th_inner = [[-1.0, 0.0]]
    modes = [
        AffineMode(th_outer, [Halfspace([-1, 0], 4.0), Halfspace([1, 0], -1.0)]),
        AffineMode(th_outer, [Halfspace([-1, 0], -2.0), Halfspace([1, 0], 4.0)]),
        AffineMode(th_inner, [Halfspace([-1, 0], 1.0), Halfspace([1, 0], 2.0)]),
    ]
    return SwitchedSystemSpec(
        m=1, d=2, modes=modes, input=InputSignal("uniform", lo=-4.0, hi=4.0),
        noise_std=noise_std, n_a=0, n_b=0, kind="pwarx", name="exp1",
    )


def exp2_matrices(dt: float = 0.01) -> tuple[np.ndarray, np.ndarray]:
    """Discretized ``[A | B]`` for the high-input and low-input modes."""
    a_hi = np.eye(2) + dt * np.array([[0.0, 1.0], [0.0, 0.0]])
    b_hi = dt * np.array([[0.0], [1.0]])
    a_lo = np.eye(2) + dt * np.array([[0.0, 1.0], [0.0, -1.0]])
    b_lo = np.zeros((2, 1))
    return np.hstack([a_hi, b_hi]), np.hstack([a_lo, b_lo])


def exp2(noise_std: float = math.sqrt(0.1), dt: float = 0.01) -> SwitchedSystemSpec:
    """Double integrator for |u| > 1, damped autonomous motion for |u| <= 1."""
    th_hi, th_lo = exp2_matrices(dt)
    modes = [
        AffineMode(th_lo, [Halfspace([0, 0, 1], 1.0), Halfspace([0, 0, -1], 1.0)]),
        AffineMode(th_hi, [Halfspace([0, 0, 1], -1.0)]),
        AffineMode(th_hi, [Halfspace([0, 0, -1], -1.0)]),
    ]
    return SwitchedSystemSpec(
        m=2, d=3, modes=modes, input=InputSignal("sinusoid", amplitude=2.0, frequency=1.0),
        noise_std=noise_std, dt=dt, kind="state_space", x0=[0.0, 0.0], name="exp2",
    )


PRESETS = {"exp1": exp1, "exp2": exp2}


def preset(name: str) -> SwitchedSystemSpec:
    try:
        return PRESETS[name]()
    except KeyError:
        raise InvalidInput(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# -- operations ---------------------------------------------------------------

def active_mode(spec: SwitchedSystemSpec, phi, t: Optional[int] = None) -> int:
    phi = np.asarray(phi, dtype=float)
    if not np.all(np.isfinite(phi)):
        raise InvalidInput("feature vector must be finite")
    for i, mode in enumerate(spec.modes):
        if mode.contains(phi):
            return i
    raise OutOfDomainError(f"feature {phi.tolist()} lies in no region", t)


def step(spec: SwitchedSystemSpec, phi, rng: np.random.Generator, t: Optional[int] = None):
    """Return ``(psi, mode)`` with ``psi = Theta_mode phi + e``."""
    phi = np.asarray(phi, dtype=float)
    mode = active_mode(spec, phi, t)
    psi = spec.modes[mode].theta @ phi
    if spec.noise_std > 0:
        psi = psi + spec.noise_std * rng.standard_normal(spec.m)
    return psi, mode


def build_regressor(ys: Sequence, us: Sequence, n_a: int, n_b: int) -> np.ndarray:
    """Stack ``[y_{t-1} .. y_{t-n_a}, u_t, u_{t-1} .. u_{t-n_b}]``.

    ``ys`` holds past outputs ending with ``y_{t-1}``; ``us`` holds inputs
    ending with the current ``u_t``. The affine 1 is not appended.
    """
    if len(ys) < n_a or len(us) < n_b + 1:
        raise InvalidInput(
            f"need {n_a} past outputs and {n_b + 1} inputs, got {len(ys)} and {len(us)}"
        )
    parts = [np.atleast_1d(np.asarray(ys[-k], dtype=float)) for k in range(1, n_a + 1)]
    parts += [np.atleast_1d(np.asarray(us[-k], dtype=float)) for k in range(1, n_b + 2)]
    return np.concatenate(parts)


@dataclass
class Trajectory:
    t: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    mode: np.ndarray = field(default=None)

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self):
        for k in range(len(self.t)):
            yield int(self.t[k]), self.phi[k], self.psi[k]

    def to_csv(self, path) -> None:
        d, m = self.phi.shape[1], self.psi.shape[1]
        header = ["t"] + [f"phi_{k}" for k in range(d)] + [f"psi_{k}" for k in range(m)]
        if self.mode is not None:
            header.append("true_mode")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for k in range(len(self)):
                row = [int(self.t[k])] + [repr(float(v)) for v in self.phi[k]]
                row += [repr(float(v)) for v in self.psi[k]]
                if self.mode is not None:
                    row.append(int(self.mode[k]))
                writer.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [r for r in reader if r]
        phi_cols = [i for i, h in enumerate(header) if h.startswith("phi_")]
        psi_cols = [i for i, h in enumerate(header) if h.startswith("psi_")]
        if header[0] != "t" or not phi_cols or not psi_cols:
            raise InvalidInput(f"{path}: expected columns t, phi_*, psi_*")
        data = np.array([[float(v) for v in r] for r in rows], dtype=float)
        if data.size == 0:
            raise InvalidInput(f"{path}: no samples")
        mode = None
        if "true_mode" in header:
            mode = data[:, header.index("true_mode")].astype(int)
        t = data[:, 0].astype(int)
        if np.any(np.diff(t) <= 0):
            raise InvalidInput(f"{path}: timestamps must be strictly increasing")
        return cls(t, data[:, phi_cols], data[:, psi_cols], mode)


def generate_trajectory(
    spec: SwitchedSystemSpec, N: int, seed: int, initial_state=None
) -> Trajectory:
    """Simulate ``N`` samples. Deterministic in ``(spec, N, seed, initial_state)``."""
    if N < 1:
        raise InvalidInput("N must be at least 1")
    rng = make_rng(seed)
    phis = np.empty((N, spec.d))
    psis = np.empty((N, spec.m))
    modes = np.empty(N, dtype=int)

    if spec.kind == "state_space":
        n = spec.m
        x0 = initial_state if initial_state is not None else spec.x0
        x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).reshape(n)
        for t in range(N):
            u = spec.input.sample(t, spec.dt, rng)
            phi = np.concatenate([x, [u]])
            psi, mode = step(spec, phi, rng, t)
            phis[t], psis[t], modes[t] = phi, psi, mode
            x = psi
    else:
        q = spec.m
        ys = [np.zeros(q) for _ in range(spec.n_a)]
        if initial_state is not None:
            ys = [np.atleast_1d(np.asarray(y, dtype=float)) for y in initial_state]
        us = [0.0] * spec.n_b
        for t in range(N):
            us.append(spec.input.sample(t, spec.dt, rng))
            r = build_regressor(ys, us, spec.n_a, spec.n_b)
            phi = np.concatenate([r, [1.0]])
            psi, mode = step(spec, phi, rng, t)
            phis[t], psis[t], modes[t] = phi, psi, mode
            ys.append(psi)
    return Trajectory(np.arange(N), phis, psis, modes)


def evaluation_grid(spec: SwitchedSystemSpec, points: int = 801, lo: float = -4.0, hi: float = 4.0):
    """Noise-free samples of a static scalar PWARX map on an even grid."""
    if spec.kind != "pwarx" or spec.d != 2:
        raise InvalidInput("grid evaluation needs a static scalar pwarx system")
    r = np.linspace(lo, hi, points)
    phis = np.column_stack([r, np.ones_like(r)])
    modes = np.array([active_mode(spec, p) for p in phis])
    psis = np.array([spec.modes[k].theta @ p for k, p in zip(modes, phis)])
    return Trajectory(np.arange(points), phis, psis, modes)


def pe_check(trajectory, window: int) -> tuple[float, float]:
    """Extreme eigenvalues of windowed Gram matrices of the features.

    For every window ``[t, t + window]`` (``window + 1`` samples) forms
    ``sum phi phi^T`` and returns the smallest minimum eigenvalue and the
    largest maximum eigenvalue over all windows.
    """
    phis = trajectory.phi if isinstance(trajectory, Trajectory) else np.asarray(trajectory, dtype=float)
    phis = np.atleast_2d(phis)
    if window < 1 or len(phis) <= window:
        raise InvalidInput(f"window {window} needs a trajectory longer than it (got {len(phis)})")
    # windows along axis 0: shape (n_windows, d, window + 1)
    views = np.lib.stride_tricks.sliding_window_view(phis, window + 1, axis=0)
    grams = np.einsum("wik,wjk->wij", views, views)
    eig = np.linalg.eigvalsh(grams)
    alpha_min = max(float(eig[:, 0].min()), 0.0)
    # clamp round-off for rank-deficient windows
    scale = max(float(np.abs(eig).max()), 1.0)
    if alpha_min <= 1e-12 * scale:
        alpha_min = 0.0
    return alpha_min, float(eig[:, -1].max())


def save_spec(spec: SwitchedSystemSpec, path) -> None:
    Path(path).write_text(spec.to_json())


def load_spec(path) -> SwitchedSystemSpec:
    return SwitchedSystemSpec.from_json(Path(path).read_text())
