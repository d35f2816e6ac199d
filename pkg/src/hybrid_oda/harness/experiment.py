"""Experiment runner: presets, metrics, per-sample logs and reports."""
from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .. import divergence as dv
from .. import hybrid, localid
from .. import simulate as sim
from ..errors import ConfigError, InvalidInput
from ..hybrid import EstimatedHybridModel, HybridIdentifier, IdentifierConfig

REPORT_FILE = "report.json"
SAMPLES_FILE = "samples.csv"
TRAJECTORY_FILE = "trajectory.csv"
CHECKPOINT_FILE = "checkpoint.json"
MODEL_FILE = "model.json"
SAMPLE_COLUMNS = ["t", "lambda", "K", "s_hat", "winner", "err_norm"]

# seed offset for the noise-free evaluation trajectory of dynamic presets
EVAL_SEED_OFFSET = 10_007


def preset_identifier(name: str, seed: int = 0) -> IdentifierConfig:
    """Identifier settings for the built-in experiments."""
    if name == "exp1":
        return IdentifierConfig(
            lambda_max=0.99, lambda_min=0.2, gamma=0.8,
            alpha=localid.harmonic(0.01), beta=localid.harmonic_log(0.9),
            eps_n=2.0, eps_s=4.0, delta=0.05, K_max=8,
            max_iters_per_level=900, theta0=[[1.0, 1.0]],
            slow_offset=10, seed=seed,
        )
    if name == "exp2":
        return IdentifierConfig(
            lambda_max=0.99, lambda_min=0.1, gamma=0.8,
            alpha=localid.harmonic(0.01), beta=localid.harmonic_log(0.9),
            eps_s=1.0, K_max=8,
            max_iters_per_level=300, theta0=np.ones((2, 3)).tolist(),
            slow_offset=10, seed=seed,
        )
    raise ConfigError("system", f"no identifier preset for {name!r}")


PRESET_N = {"exp1": 150, "exp2": 300}


@dataclass
class ExperimentConfig:
    system: Union[str, sim.SwitchedSystemSpec] = "exp1"
    identifier: Optional[IdentifierConfig] = None
    N: Optional[int] = None
    repeats: int = 1
    seed: int = 0
    output_dir: Optional[str] = None
    eval_points: int = 801
    plots: bool = True

    def __post_init__(self):
        if isinstance(self.system, dict):
            self.system = sim.SwitchedSystemSpec.from_dict(self.system)
        if isinstance(self.identifier, dict):
            self.identifier = IdentifierConfig.from_dict(self.identifier)
        if isinstance(self.system, str):
            if self.system not in sim.PRESETS:
                raise ConfigError("system", f"unknown preset {self.system!r}")
            if self.identifier is None:
                self.identifier = preset_identifier(self.system, self.seed)
            if self.N is None:
                self.N = PRESET_N[self.system]
        if self.identifier is None:
            self.identifier = IdentifierConfig(seed=self.seed)
        if self.N is None or self.N < 1:
            raise ConfigError("N", "must be at least 1")
        if self.repeats < 1:
            raise ConfigError("repeats", "must be at least 1")
        if self.eval_points < 2:
            raise ConfigError("eval_points", "must be at least 2")

    @property
    def spec(self) -> sim.SwitchedSystemSpec:
        return sim.preset(self.system) if isinstance(self.system, str) else self.system

    def to_dict(self) -> dict:
        return {
            "system": self.system if isinstance(self.system, str) else self.system.to_dict(),
            "identifier": self.identifier.to_dict(),
            "N": self.N,
            "repeats": self.repeats,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "eval_points": self.eval_points,
            "plots": self.plots,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown experiment setting")
        data = dict(data)
        ident = data.get("identifier")
        if isinstance(ident, dict) and isinstance(data.get("system", "exp1"), str):
            # partial identifier blocks override the preset's settings
            base = preset_identifier(data.get("system", "exp1"), data.get("seed", 0)).to_dict()
            base.update(ident)
            data["identifier"] = base
        try:
            return cls(**data)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError("experiment", str(exc)) from exc


@dataclass
class RunReport:
    s_hat: int
    K_final: int
    param_errors: list
    misclassification: float
    rmse_hard: float
    rmse_smooth: float
    seconds: float
    seed: int
    thetas: list = field(default_factory=list)
    matched_true: list = field(default_factory=list)
    levels: int = 0
    rng: str = sim.RNG_ALGORITHM

    def __post_init__(self):
        if not 0.0 <= self.misclassification <= 1.0:
            raise InvalidInput("misclassification rate must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


# -- metrics --------------------------------------------------------------------

def true_dynamics(spec: sim.SwitchedSystemSpec) -> list[np.ndarray]:
    """Distinct parameter matrices of the ground-truth system."""
    labels = spec.distinct_dynamics()
    return [spec.modes[i].theta for i in sorted(set(labels))]


def match_modes(estimated, truth) -> list[tuple[int, int, float]]:
    """Greedy minimal-distance pairing of estimated and true parameter sets.

    Returns ``(est_index, true_index, sup_error)`` triples, closest pairs
    first; each index is used at most once.
    """
    pairs = []
    for i, est in enumerate(estimated):
        for j, tru in enumerate(truth):
            pairs.append((dv.evaluate(dv.Divergence.SQUARED_EUCLIDEAN,
                                      np.ravel(est), np.ravel(tru)), i, j))
    pairs.sort()
    used_e, used_t, out = set(), set(), []
    for _, i, j in pairs:
        if i in used_e or j in used_t:
            continue
        used_e.add(i)
        used_t.add(j)
        out.append((i, j, float(np.max(np.abs(np.asarray(estimated[i]) - np.asarray(truth[j]))))))
    return out


def evaluation_set(spec: sim.SwitchedSystemSpec, N: int, seed: int, points: int = 801) -> sim.Trajectory:
    """Noise-free grid for static maps, a fresh noise-free run otherwise."""
    clean = sim.SwitchedSystemSpec.from_dict({**spec.to_dict(), "noise_std": 0.0})
    if clean.kind == "pwarx" and clean.d == 2 and clean.n_a == 0:
        return sim.evaluation_grid(clean, points)
    return sim.generate_trajectory(clean, N, seed + EVAL_SEED_OFFSET)


def evaluate_mode_accuracy(model: EstimatedHybridModel, spec: sim.SwitchedSystemSpec,
                           eval_set: sim.Trajectory) -> float:
    """Fraction of evaluation points whose identified mode, mapped to the
    nearest true dynamics, differs from the true active dynamics."""
    if len(eval_set) == 0:
        raise InvalidInput("empty evaluation set")
    labels = spec.distinct_dynamics()
    distinct = sorted(set(labels))
    truth = [spec.modes[i].theta for i in distinct]
    to_truth = [hybrid.theta_rule(localid.vec(th), [localid.vec(t) for t in truth])
                for th in model.mode_set.thetas]
    wrong = 0
    for phi in eval_set.phi:
        true_label = distinct.index(labels[sim.active_mode(spec, phi)])
        wrong += to_truth[model.mode_of(phi)] != true_label
    return wrong / len(eval_set)


def prediction_rmse(model: EstimatedHybridModel, eval_set: sim.Trajectory,
                    lam_eval: Optional[float] = None) -> tuple[float, float]:
    lam_eval = model.lam if lam_eval is None else lam_eval
    hard = np.array([hybrid.predict_hard(model, p) for p in eval_set.phi])
    smooth = np.array([hybrid.predict_smooth(model, p, lam_eval) for p in eval_set.phi])
    rmse = lambda pred: float(np.sqrt(np.mean(np.sum((pred - eval_set.psi) ** 2, axis=1))))  # noqa: E731
    return rmse(hard), rmse(smooth)


# -- logging --------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def sample_header(records: list[dict], m: int, d: int) -> list[str]:
    s_max = max((len(r["thetas"]) for r in records), default=0)
    k_max = max((len(r["phis"]) for r in records), default=0)
    cols = list(SAMPLE_COLUMNS)
    cols += [f"theta{i}_{r}_{c}" for i in range(s_max) for r in range(m) for c in range(d)]
    cols += [f"phi{j}_{k}" for j in range(k_max) for k in range(d)]
    return cols


def write_samples(path, records: list[dict], m: int, d: int) -> None:
    """Per-sample CSV; cells for modes or codevectors absent at a step stay empty."""
    header = sample_header(records, m, d)
    n_theta = sum(h.startswith("theta") for h in header)
    n_phi = sum(h.startswith("phi") for h in header)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for r in records:
            row = [r["t"], _fmt(r["lambda"]), r["K"], r["s_hat"], r["winner"], _fmt(r["err_norm"])]
            th = [_fmt(v) for theta in r["thetas"] for v in np.asarray(theta).ravel()]
            ph = [_fmt(v) for v in np.asarray(r["phis"]).ravel()]
            row += th + [""] * (n_theta - len(th)) + ph + [""] * (n_phi - len(ph))
            writer.writerow(row)


def read_samples(path) -> tuple[list[str], np.ndarray]:
    """Header and a float array (NaN for empty cells) of a per-sample CSV."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) if v != "" else np.nan for v in r] for r in reader if r]
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return header, data


# -- running --------------------------------------------------------------------

def identify(ident: HybridIdentifier, source) -> EstimatedHybridModel:
    while not ident.finished:
        ident.run_level(source)
    return ident.finalize()


def run_single(config: ExperimentConfig, seed: int, out: Optional[Path]) -> RunReport:
    """One seeded run; writes artifacts to ``out`` when given."""
    spec = config.spec
    ident_cfg = IdentifierConfig.from_dict({**config.identifier.to_dict(), "seed": seed})
    traj = sim.generate_trajectory(spec, config.N, seed)
    ident = HybridIdentifier(ident_cfg, spec.m, spec.d)
    start = time.perf_counter()
    model = identify(ident, hybrid.ReplaySource(traj))
    seconds = time.perf_counter() - start

    eval_set = evaluation_set(spec, config.N, seed, config.eval_points)
    truth = true_dynamics(spec)
    matches = match_modes(model.mode_set.thetas, truth)
    hard, smooth = prediction_rmse(model, eval_set)
    report = RunReport(
        s_hat=model.s_hat,
        K_final=model.K,
        param_errors=[e for _, _, e in sorted(matches)],
        misclassification=evaluate_mode_accuracy(model, spec, eval_set),
        rmse_hard=hard,
        rmse_smooth=smooth,
        seconds=seconds,
        seed=seed,
        thetas=[t.tolist() for t in model.mode_set.thetas],
        matched_true=[j for _, j, _ in sorted(matches)],
        levels=len(ident.levels),
    )
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_samples(out / SAMPLES_FILE, ident.records, spec.m, spec.d)
        traj.to_csv(out / TRAJECTORY_FILE)
        sim.save_spec(spec, out / "system.json")
        ident.save(out / CHECKPOINT_FILE)
        (out / MODEL_FILE).write_text(json.dumps(model.to_dict(), indent=2))
        (out / REPORT_FILE).write_text(json.dumps(report.to_dict(), indent=2))
        if config.plots:
            from . import plots
            plots.emit_plots(out, spec=spec, model=model, eval_set=eval_set)
    return report


def aggregate(reports: list[RunReport]) -> dict:
    s = np.array([r.s_hat for r in reports])
    return {
        "runs": len(reports),
        "seeds": [r.seed for r in reports],
        "s_hat_counts": {str(k): int(np.sum(s == k)) for k in sorted(set(s.tolist()))},
        "K_final": [r.K_final for r in reports],
        "misclassification_mean": float(np.mean([r.misclassification for r in reports])),
        "rmse_hard_mean": float(np.mean([r.rmse_hard for r in reports])),
        "rmse_smooth_mean": float(np.mean([r.rmse_smooth for r in reports])),
        "seconds_max": float(max(r.seconds for r in reports)),
    }


def run_experiment(config: ExperimentConfig, workers: int = 1) -> tuple[list[RunReport], dict]:
    """Run ``config.repeats`` seeds (``seed, seed+1, ...``) and aggregate.

    With several repeats each run writes into ``run_<seed>/`` below the
    output directory and the aggregate goes to the top-level report.
    """
    root = Path(config.output_dir) if config.output_dir else None
    seeds = [config.seed + k for k in range(config.repeats)]

    def job(seed):
        out = None
        if root is not None:
            out = root if config.repeats == 1 else root / f"run_{seed}"
        return run_single(config, seed, out)

    if workers > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(job, seeds))
    else:
        reports = [job(s) for s in seeds]
    summary = aggregate(reports)
    if root is not None and config.repeats > 1:
        root.mkdir(parents=True, exist_ok=True)
        doc = {"config": config.to_dict(), "aggregate": summary,
               "runs": [r.to_dict() for r in reports]}
        (root / REPORT_FILE).write_text(json.dumps(doc, indent=2))
    return reports, summary


def resume(checkpoint, trajectory: sim.Trajectory, out: Optional[Path] = None,
           levels: Optional[int] = None) -> tuple[HybridIdentifier, Optional[EstimatedHybridModel]]:
    """Continue an identifier from a checkpoint on the trajectory it was fed.

    Runs ``levels`` more temperature levels (all remaining when ``None``) and
    finalizes once the schedule is exhausted.
    """
    ident = HybridIdentifier.load(checkpoint)
    start = 0 if ident.last_obs is None else ident.last_obs + 1
    source = hybrid.ReplaySource(trajectory, start=start)
    done = 0
    while not ident.finished and (levels is None or done < levels):
        ident.run_level(source)
        done += 1
    model = ident.finalize() if ident.finished else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_samples(out / SAMPLES_FILE, ident.records, ident.m, ident.d)
        ident.save(out / CHECKPOINT_FILE)
        if model is not None:
            (out / MODEL_FILE).write_text(json.dumps(model.to_dict(), indent=2))
    return ident, model
