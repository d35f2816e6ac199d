"""SVG figures from per-sample logs."""
from __future__ import annotations

from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .. import hybrid  # noqa: E402
from .. import simulate as sim  # noqa: E402
from .experiment import SAMPLES_FILE, read_samples, true_dynamics  # noqa: E402

BIFURCATION_FILE = "bifurcation.svg"
CONVERGENCE_FILE = "convergence.svg"
PREDICTION_FILE = "prediction.svg"


def default_coordinate(spec: Optional[sim.SwitchedSystemSpec]) -> int:
    """Feature coordinate shown in the bifurcation plot (the input for
    state-space systems, the first regressor entry otherwise)."""
    if spec is not None and spec.kind == "state_space":
        return spec.d - 1
    return 0


def _save(fig, path: Path) -> Path:
    try:
        fig.savefig(path, format="svg")
    except OSError as exc:
        raise OSError(f"cannot write plot {path}: {exc}") from exc
    finally:
        plt.close(fig)
    return path


def plot_bifurcation(header, data, path, coord: int = 0) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    t = data[:, header.index("t")] if len(data) else np.array([])
    cols = [i for i, h in enumerate(header) if h.startswith("phi") and h.endswith(f"_{coord}")]
    for i in cols:
        ax.plot(t, data[:, i], ".", ms=1.0, color="C0")
    ax.set_xlabel("iteration")
    ax.set_ylabel(f"codevector coordinate {coord}")
    ax.set_title("codevector locations")
    return _save(fig, Path(path))


def plot_convergence(header, data, path, truth=None) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    t = data[:, header.index("t")] if len(data) else np.array([])
    for i, h in enumerate(header):
        if h.startswith("theta"):
            ax.plot(t, data[:, i], lw=0.8, label=h)
    for th in truth or []:
        for v in np.ravel(th):
            ax.axhline(v, color="k", ls="--", lw=0.6)
    ax.set_xlabel("iteration")
    ax.set_ylabel("mode parameters")
    if any(h.startswith("theta") for h in header) and len(data):
        ax.legend(fontsize=6, ncol=2)
    return _save(fig, Path(path))


def plot_prediction(model, spec, eval_set, path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    if spec.kind == "pwarx" and spec.d == 2:
        x = eval_set.phi[:, 0]
        xlabel = "regressor"
    else:
        x = np.arange(len(eval_set))
        xlabel = "sample"
    pred = np.array([hybrid.predict_hard(model, p) for p in eval_set.phi])
    for k in range(spec.m):
        ax.plot(x, eval_set.psi[:, k], "k-", lw=1.0, label="truth" if k == 0 else None)
        ax.plot(x, pred[:, k], "--", lw=1.0, label="identified" if k == 0 else None)
    labels = np.array([model.mode_of(p) for p in eval_set.phi])
    change = np.flatnonzero(np.diff(labels)) + 1
    edges = np.concatenate([[0], change, [len(labels)]])
    for a, b in zip(edges[:-1], edges[1:]):
        ax.axvspan(x[a], x[b - 1], color=f"C{labels[a] % 10}", alpha=0.12, lw=0)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("output")
    ax.legend(fontsize=7)
    return _save(fig, Path(path))


def emit_plots(out_dir, spec: Optional[sim.SwitchedSystemSpec] = None,
               model: Optional[hybrid.EstimatedHybridModel] = None,
               eval_set: Optional[sim.Trajectory] = None,
               coord: Optional[int] = None) -> list[Path]:
    """Write the bifurcation and convergence plots from ``samples.csv`` in
    ``out_dir``; the prediction plot needs a model and an evaluation set."""
    out_dir = Path(out_dir)
    samples = out_dir / SAMPLES_FILE
    if not samples.exists():
        raise FileNotFoundError(f"no per-sample log at {samples}")
    header, data = read_samples(samples)
    coord = default_coordinate(spec) if coord is None else coord
    truth = true_dynamics(spec) if spec is not None else None
    paths = [
        plot_bifurcation(header, data, out_dir / BIFURCATION_FILE, coord),
        plot_convergence(header, data, out_dir / CONVERGENCE_FILE, truth),
    ]
    if model is not None and spec is not None and eval_set is not None:
        paths.append(plot_prediction(model, spec, eval_set, out_dir / PREDICTION_FILE))
    return paths
