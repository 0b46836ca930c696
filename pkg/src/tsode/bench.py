"""Benchmark grid: datasets x horizons x noise levels x repeats, MAE tables, SVG plots."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import statistics
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .baselines import FcnnForecaster, LatentOdeForecaster, LstmModel, Repeater, Sarima
from .closed_form import ClosedFormForecaster
from .series import NoiseSpec, TimeSeries, add_noise, load_csv, split, synth, window_arrays

__all__ = [
    "MODEL_NAMES",
    "BUNDLED_DATASETS",
    "GridConfig",
    "MetricRow",
    "CellFailure",
    "MetricTable",
    "bundled_dataset",
    "load_dataset",
    "make_forecaster",
    "cell_seed",
    "prepare_series",
    "run_grid",
    "emit_table",
    "format_cell",
    "emit_plot",
]

MODEL_NAMES = ("repeater", "fcnn", "arima", "lstm", "latent_ode", "closed_form")

_FACTORIES = {
    "repeater": Repeater,
    "fcnn": FcnnForecaster,
    "arima": Sarima,
    "lstm": LstmModel,
    "latent_ode": LatentOdeForecaster,
    "closed_form": ClosedFormForecaster,
}

# Long enough that the 10% test split holds windows for m = n = 500.
BUNDLED_DATASETS = {
    "seasonal24": ("seasonal24", 11000, 0.0, 11000.0),
    "two_tone": ("two_tone", 11000, 0.0, 1100.0),
}


def bundled_dataset(name: str) -> TimeSeries:
    """Synthetic series shipped with the harness: ``seasonal24`` (dt 1) or ``two_tone`` (dt 0.1)."""
    try:
        args = BUNDLED_DATASETS[name]
    except KeyError:
        raise ValueError(f"unknown bundled dataset {name!r}; choose from {sorted(BUNDLED_DATASETS)}") from None
    return synth(*args)


def _dataset_name(spec) -> str:
    if isinstance(spec, str):
        return spec
    return spec.get("name") or f"{Path(spec['path']).stem}:{spec['column']}"


def load_dataset(spec) -> TimeSeries:
    """A bundled name, or ``{"path", "column", ["time_column"], ["name"]}`` for a CSV file."""
    if isinstance(spec, str):
        return bundled_dataset(spec)
    return load_csv(spec["path"], spec["column"], spec.get("time_column"))


def make_forecaster(name: str, options: dict | None = None):
    if name not in _FACTORIES:
        raise ValueError(f"unknown model {name!r}; choose from {MODEL_NAMES}")
    return _FACTORIES[name](**(options or {}))


@dataclass
class GridConfig:
    datasets: list = field(default_factory=lambda: ["seasonal24", "two_tone"])
    models: list = field(default_factory=lambda: list(MODEL_NAMES))
    m: int | None = None  # history length; None matches each horizon
    horizons: list = field(default_factory=lambda: [100, 250, 500])
    sigmas: list = field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3])
    k: int = 5
    seed: int = 0
    workers: int = 1
    model_options: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.datasets:
            raise ValueError("at least one dataset is required")
        if not self.horizons or not self.sigmas:
            raise ValueError("horizons and sigmas must be non-empty")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if (self.m is not None and self.m < 1) or any(int(n) < 1 for n in self.horizons):
            raise ValueError("m and every horizon must be positive")
        if any(s < 0 for s in self.sigmas):
            raise ValueError("noise levels must be non-negative")
        unknown = set(self.models) - set(MODEL_NAMES)
        if unknown:
            raise ValueError(f"unknown models {sorted(unknown)}; choose from {MODEL_NAMES}")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")

    @classmethod
    def from_json(cls, path) -> "GridConfig":
        doc = json.loads(Path(path).read_text())
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        return cls(**doc)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


@dataclass(frozen=True)
class MetricRow:
    dataset: str
    model: str
    sigma: float
    horizon: int
    mae_mean: float
    mae_std: float


@dataclass(frozen=True)
class CellFailure:
    dataset: str
    model: str
    sigma: float
    horizon: int
    repeat: int
    seed: int
    error: str


@dataclass
class MetricTable:
    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    examples: dict = field(default_factory=dict)

    def row(self, dataset, model, sigma, horizon) -> MetricRow:
        for r in self.rows:
            if (r.dataset, r.model, r.sigma, r.horizon) == (dataset, model, sigma, horizon):
                return r
        raise KeyError((dataset, model, sigma, horizon))

    def without_model(self, model) -> "MetricTable":
        return MetricTable(
            [r for r in self.rows if r.model != model],
            [f for f in self.failures if f.model != model],
        )


def cell_seed(master, *key) -> int:
    """Order-independent 32-bit seed from the master seed and a cell key."""
    blob = json.dumps([master, *key]).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:4], "big")


def prepare_series(ts: TimeSeries, sigma: float, seed: int):
    """Standardize with train-split statistics, add noise, split 70/20/10."""
    train, _, _ = split(ts)
    mean = float(np.mean(train.values))
    std = float(np.std(train.values))
    if std == 0.0:
        std = 1.0
    scaled = ts.with_values((ts.values - mean) / std)
    noisy = add_noise(scaled, NoiseSpec(sigma, seed))
    return split(noisy)


def _plot_windows(count, master, dataset, sigma, horizon):
    if count == 0:
        return []
    rng = np.random.default_rng(cell_seed(master, dataset, sigma, horizon, "plot"))
    picks = [0, int(rng.integers(0, count))]
    return sorted(set(picks))


def _run_cell(task):
    """Fit and score one (dataset, model, sigma, horizon) cell over all repeats."""
    cfg, ds_spec, model, sigma, horizon = task
    dataset = _dataset_name(ds_spec)
    ts = load_dataset(ds_spec)
    train, _, test = prepare_series(ts, sigma, cell_seed(cfg["seed"], dataset, sigma, "noise"))
    n = int(horizon)
    m = cfg["m"] or n
    maes = []
    example = None
    for r in range(cfg["k"]):
        seed = cell_seed(cfg["seed"], dataset, model, sigma, n, r)
        try:
            H, Y = window_arrays(test.values, m, n)
            if len(H) == 0:
                raise ValueError(f"test split of length {len(test)} has no window of length {m + n}")
            fc = make_forecaster(model, cfg["model_options"].get(model)).fit(train, m, n, seed)
            pred = np.asarray(fc.predict(H), dtype=float)
            if pred.shape != Y.shape or not np.all(np.isfinite(pred)):
                raise FloatingPointError(f"forecast has shape {pred.shape} or non-finite values")
        except Exception as exc:  # a failing cell must not abort the grid
            msg = f"{type(exc).__name__}: {exc}"
            tb = traceback.format_exc(limit=3)
            return None, CellFailure(dataset, model, float(sigma), n, r, seed, msg + "\n" + tb), None
        maes.append(float(np.mean(np.abs(pred - Y))))
        if r == 0:
            picks = _plot_windows(len(H), cfg["seed"], dataset, sigma, n)
            example = {i: (H[i], Y[i], pred[i]) for i in picks}
    # exact summation, so identical repeats give a std of exactly zero
    row = MetricRow(dataset, model, float(sigma), n, statistics.fmean(maes), statistics.pstdev(maes))
    return row, None, example


def run_grid(config: GridConfig) -> MetricTable:
    """Run every cell of the grid; failed cells are recorded, never raised."""
    cfg = {"seed": config.seed, "m": config.m, "k": config.k, "model_options": config.model_options}
    tasks = [
        (cfg, ds, model, float(sigma), int(n))
        for ds in config.datasets
        for model in config.models
        for sigma in config.sigmas
        for n in config.horizons
    ]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_cell, tasks))
    else:
        results = [_run_cell(t) for t in tasks]
    table = MetricTable()
    for task, (row, failure, example) in zip(tasks, results):
        if row is not None:
            table.rows.append(row)
        if failure is not None:
            table.failures.append(failure)
        if example:
            _, ds, model, sigma, n = task
            for idx, (hist, truth, pred) in example.items():
                slot = table.examples.setdefault((_dataset_name(ds), sigma, n, idx), {"history": hist, "truth": truth, "predictions": {}})
                slot["predictions"][model] = pred
    return table


# -- output -------------------------------------------------------------------


def format_cell(value: float, decimals: int = 3) -> str:
    """Round half away from zero on the shortest decimal representation."""
    q = Decimal(1).scaleb(-decimals)
    return str(Decimal(repr(float(value))).quantize(q, rounding=ROUND_HALF_UP))


def _markdown(table: MetricTable) -> str:
    lines = []
    failed = {(f.dataset, f.model, f.sigma, f.horizon) for f in table.failures}
    keys = {(r.dataset, r.model, r.sigma, r.horizon): r for r in table.rows}
    blocks = list(dict.fromkeys([(k[0], k[1]) for k in keys] + [(k[0], k[1]) for k in failed]))
    for ds, model in blocks:
        cells = [k for k in [*keys, *failed] if k[:2] == (ds, model)]
        sigmas = sorted({k[2] for k in cells})
        horizons = sorted({k[3] for k in cells})
        lines.append(f"### {model} ({ds})")
        lines.append("")
        lines.append("| Noise level | " + " | ".join(f"{n} points" for n in horizons) + " |")
        lines.append("|---|" + "---|" * len(horizons))
        for s in sigmas:
            out = []
            for n in horizons:
                r = keys.get((ds, model, s, n))
                if r is not None:
                    out.append(f"{format_cell(r.mae_mean)} ± {format_cell(r.mae_std)}")
                else:
                    out.append("failed" if (ds, model, s, n) in failed else "")
            lines.append(f"| {s:g} | " + " | ".join(out) + " |")
        lines.append("")
    if table.failures:
        lines.append("### Failed cells")
        lines.append("")
        for f in table.failures:
            lines.append(f"- {f.dataset} / {f.model} / sigma {f.sigma:g} / n {f.horizon} "
                         f"(repeat {f.repeat}, seed {f.seed}): {f.error.splitlines()[0]}")
        lines.append("")
    return "\n".join(lines)


def emit_table(table: MetricTable, path, fmt: str = "csv") -> Path:
    """Write ``table`` as CSV (full precision) or grouped markdown."""
    if not table.rows and not table.failures:
        raise ValueError("table is empty")
    path = Path(path)
    if fmt == "csv":
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["dataset", "model", "sigma", "horizon", "mae_mean", "mae_std"])
            for r in table.rows:
                w.writerow([r.dataset, r.model, repr(r.sigma), r.horizon, repr(r.mae_mean), repr(r.mae_std)])
    elif fmt == "markdown":
        path.write_text(_markdown(table))
    else:
        raise ValueError(f"unknown table format {fmt!r}")
    return path


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def _ticks(lo, hi, count=5):
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * i / (count - 1) for i in range(count)]


def emit_plot(history, truth, predictions, path, title: str = "") -> Path:
    """SVG with the history, the true continuation and each model's forecast.

    The history occupies steps ``-m..-1`` and the horizon ``0..n-1``. Output
    is a pure function of the inputs.
    """
    history = np.asarray(history, dtype=float)
    truth = np.asarray(truth, dtype=float)
    predictions = {k: np.asarray(v, dtype=float) for k, v in (predictions or {}).items()}
    for name, p in predictions.items():
        if p.shape != truth.shape:
            raise ValueError(f"prediction {name!r} has length {len(p)}, truth has {len(truth)}")
    m, n = len(history), len(truth)
    series = [("history", np.arange(-m, 0), history), ("truth", np.arange(n), truth)]
    series += [(name, np.arange(n), predictions[name]) for name in sorted(predictions)]

    W, H, left, right, top, bottom = 800, 400, 60, 150, 30, 40
    all_y = np.concatenate([s[2] for s in series if len(s[2])] or [np.zeros(1)])
    finite = all_y[np.isfinite(all_y)]
    y_lo, y_hi = (float(finite.min()), float(finite.max())) if len(finite) else (0.0, 1.0)
    if y_hi - y_lo < 1e-12:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0
    x_lo, x_hi = -m, max(n - 1, 0)
    if x_hi == x_lo:
        x_hi = x_lo + 1

    def sx(x):
        return left + (x - x_lo) / (x_hi - x_lo) * (W - left - right)

    def sy(y):
        return top + (y_hi - y) / (y_hi - y_lo) * (H - top - bottom)

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{W / 2:.1f}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>')
    x0, x1, y0, y1 = sx(x_lo), sx(x_hi), sy(y_lo), sy(y_hi)
    out.append(f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y0:.2f}" stroke="black"/>')
    out.append(f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x0:.2f}" y2="{y1:.2f}" stroke="black"/>')
    for xt in _ticks(x_lo, x_hi):
        px = sx(xt)
        out.append(f'<line x1="{px:.2f}" y1="{y0:.2f}" x2="{px:.2f}" y2="{y0 + 5:.2f}" stroke="black"/>')
        out.append(f'<text x="{px:.2f}" y="{y0 + 18:.2f}" text-anchor="middle" font-size="11">{xt:.4g}</text>')
    for yt in _ticks(y_lo, y_hi):
        py = sy(yt)
        out.append(f'<line x1="{x0 - 5:.2f}" y1="{py:.2f}" x2="{x0:.2f}" y2="{py:.2f}" stroke="black"/>')
        out.append(f'<text x="{x0 - 8:.2f}" y="{py + 4:.2f}" text-anchor="end" font-size="11">{yt:.3g}</text>')
    for i, (name, xs, ys) in enumerate(series):
        color = "black" if name == "history" else ("#555555" if name == "truth" else _PALETTE[(i - 2) % len(_PALETTE)])
        dash = ' stroke-dasharray="4 3"' if name == "truth" else ""
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys) if np.isfinite(y))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{pts}"/>')
        ly = top + 16 * i + 10
        lx = W - right + 15
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{lx + 25}" y="{ly + 4}" font-size="11">{escape(name)}</text>')
    out.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(out) + "\n")
    return path
