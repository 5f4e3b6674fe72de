"""Evaluation harness: simulated domains, empirical chi-square, exact W2, density grids, imputation benchmark."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.optimize import linear_sum_assignment

from .copycat import copycat_train
from .data import NOMINAL, REAL, Dataset, FeatureSpec, Schema, mcar_corrupt, save_dataset
from .generate import impute_dataset, sample
from .losses import chi_square
from .trees import DecisionTree, GenerativeTree, route_matrix

logger = logging.getLogger(__name__)

W2_MAX_ROWS = 4096

# Constants for the simulated domains. Only sizes and the qualitative layout of
# each domain are prescribed; the spreads and radii below are our choices.
DOMAIN_DEFAULTS = {
    "ringGauss": {"components": 8, "per_component": 200, "radius": 2.0, "sigma": 0.1},
    "gridGauss": {"side": 5, "per_component": 100, "spacing": 1.0, "sigma": 0.1},
    "circGauss": {"center_size": 1000, "circle_size": 1200, "center_sigma": 0.3, "radius": 2.0, "thickness": 0.05},
    "randGauss": {
        "components": 16,
        "size": 3800,
        "distance": (1.0, 4.0),
        "scale": (0.05, 0.3),
        "dirichlet": 2.0,
    },
}
DOMAINS = tuple(DOMAIN_DEFAULTS)


class SimulatedDomain:
    """Points, component labels and component centers of a simulated dataset."""

    def __init__(self, name, points, labels, centers):
        self.name = name
        self.points = points
        self.labels = labels
        self.centers = centers

    def dataset(self) -> Dataset:
        x, y = self.points[:, 0], self.points[:, 1]
        schema = Schema((FeatureSpec.real("x", x.min(), x.max()), FeatureSpec.real("y", y.min(), y.max())))
        return Dataset(schema, self.points)


def _ring(rng, c):
    k = c["components"]
    ang = 2 * np.pi * np.arange(k) / k
    centers = c["radius"] * np.c_[np.cos(ang), np.sin(ang)]
    labels = np.repeat(np.arange(k), c["per_component"])
    pts = centers[labels] + c["sigma"] * rng.standard_normal((labels.size, 2))
    return pts, labels, centers


def _grid(rng, c):
    side = c["side"]
    coords = c["spacing"] * (np.arange(side) - (side - 1) / 2)
    centers = np.array([(a, b) for a in coords for b in coords])
    labels = np.repeat(np.arange(len(centers)), c["per_component"])
    pts = centers[labels] + c["sigma"] * rng.standard_normal((labels.size, 2))
    return pts, labels, centers


def _circ(rng, c):
    center = c["center_sigma"] * rng.standard_normal((c["center_size"], 2))
    theta = rng.uniform(0, 2 * np.pi, c["circle_size"])
    rad = c["radius"] + c["thickness"] * rng.standard_normal(c["circle_size"])
    ring = np.c_[rad * np.cos(theta), rad * np.sin(theta)]
    labels = np.r_[np.zeros(c["center_size"], int), np.ones(c["circle_size"], int)]
    # the circle has no single center; report the origin for both components
    return np.r_[center, ring], labels, np.zeros((2, 2))


def _rand(rng, c):
    k = c["components"]
    ang = 2 * np.pi * np.arange(k) / k
    dist = rng.uniform(*c["distance"], k)
    centers = dist[:, None] * np.c_[np.cos(ang), np.sin(ang)]
    weights = rng.dirichlet(np.full(k, c["dirichlet"]))
    sizes = 1 + rng.multinomial(c["size"] - k, weights)
    labels = np.repeat(np.arange(k), sizes)
    pts = np.empty((labels.size, 2))
    for i in range(k):
        rot = rng.uniform(0, np.pi)
        R = np.array([[np.cos(rot), -np.sin(rot)], [np.sin(rot), np.cos(rot)]])
        s = rng.uniform(*c["scale"], 2)
        A = R @ np.diag(s)
        sel = labels == i
        pts[sel] = centers[i] + rng.standard_normal((sel.sum(), 2)) @ A.T
    return pts, labels, centers


_BUILDERS = {"ringGauss": _ring, "gridGauss": _grid, "circGauss": _circ, "randGauss": _rand}


def simulate_domain(domain: str, seed, **overrides) -> SimulatedDomain:
    if domain not in _BUILDERS:
        raise ValueError(f"unknown domain {domain!r}; choose from {list(DOMAINS)}")
    config = {**DOMAIN_DEFAULTS[domain], **overrides}
    rng = np.random.default_rng(seed)
    pts, labels, centers = _BUILDERS[domain](rng, config)
    order = rng.permutation(len(pts))
    return SimulatedDomain(domain, pts[order], labels[order], centers)


def simulate(domain: str, seed) -> Dataset:
    """One of the 2D mixtures ringGauss, gridGauss, circGauss or randGauss."""
    return simulate_domain(domain, seed).dataset()


# ---------------------------------------------------------------- chi-square


def empirical_chi2(dt: DecisionTree, real: Dataset, fake: Dataset) -> float:
    """Chi-square of fake against real leaf frequencies, with additive smoothing."""
    eps = 1.0 / (2.0 * max(len(real), len(fake)))
    leaves = dt.tree.leaves()

    def freq(ds):
        f = route_matrix(dt.tree, ds.values)[leaves].sum(axis=1) / len(ds) + eps
        return f / f.sum()

    return chi_square(freq(real), freq(fake))


# ---------------------------------------------------------------- W2


def pairwise_cost(a: Dataset, b: Dataset) -> np.ndarray:
    """Per-pair transport cost; every feature contributes a value in [0, 1]."""
    schema = a.schema
    C = np.zeros((len(a), len(b)))
    for j, spec in enumerate(schema):
        x, y = a.values[:, j][:, None], b.values[:, j][None, :]
        if spec.kind == "nominal":
            C += x != y
        elif spec.hi > spec.lo:
            C += ((x - y) / (spec.hi - spec.lo)) ** 2
    return C


def w2_squared(a: Dataset, b: Dataset) -> float:
    """Exact optimal-transport cost between two equal-size complete samples."""
    if len(a) != len(b):
        raise ValueError("samples must have the same size")
    if a.schema != b.schema:
        raise ValueError("samples must share a schema")
    if len(a) > W2_MAX_ROWS:
        raise ValueError(f"refusing exact assignment on more than {W2_MAX_ROWS} rows")
    if a.missing.any() or b.missing.any():
        raise ValueError("samples must be complete")
    if len(a) == 0:
        return 0.0
    C = pairwise_cost(a, b)
    rows, cols = linear_sum_assignment(C)
    return float(C[rows, cols].mean())


# ---------------------------------------------------------------- density grids


def _axis_overlaps(lo, hi, edges):
    """(G, cells) share of each leaf interval falling in each grid cell."""
    inter = np.minimum(hi[:, None], edges[None, 1:]) - np.maximum(lo[:, None], edges[None, :-1])
    width = (hi - lo)[:, None]
    return np.clip(inter, 0.0, None) / width


def density_grid(gt: GenerativeTree, feature_x, feature_y, resolution):
    """Exact generator mass per cell of a regular grid over two real features.

    Returns ``(grid, x_edges, y_edges)``; ``grid`` has one row per y cell.
    """
    schema = gt.schema
    jx = feature_x if isinstance(feature_x, int) else schema.index(feature_x)
    jy = feature_y if isinstance(feature_y, int) else schema.index(feature_y)
    for j in (jx, jy):
        if schema.kinds[j] != REAL:
            raise ValueError(f"feature {schema[j].name!r} is not real")
    rx, ry = (resolution, resolution) if np.isscalar(resolution) else resolution
    if rx < 1 or ry < 1:
        raise ValueError("resolution must be positive")
    sx, sy = schema[jx], schema[jy]
    x_edges = np.linspace(sx.lo, sx.hi, rx + 1)
    y_edges = np.linspace(sy.lo, sy.hi, ry + 1)
    leaves, w = gt.leaf_weights()
    lo, hi, _ = gt.tree.box_arrays(leaves)
    ox = _axis_overlaps(lo[:, jx], hi[:, jx], x_edges)
    oy = _axis_overlaps(lo[:, jy], hi[:, jy], y_edges)
    grid = (w[:, None] * oy).T @ ox
    return grid, x_edges, y_edges


def write_density_grid(path, grid, x_edges, y_edges) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        x0, x1, y0, y1 = (float(v) for v in (x_edges[0], x_edges[-1], y_edges[0], y_edges[-1]))
        fh.write(f"# x:{x0!r}:{x1!r}:{len(x_edges) - 1} y:{y0!r}:{y1!r}:{len(y_edges) - 1}\n")
        writer = csv.writer(fh, lineterminator="\n")
        for row in grid:
            writer.writerow([repr(float(v)) for v in row])


def local_maxima(grid: np.ndarray, rtol: float = 1e-9) -> list[tuple[float, float]]:
    """Centroids (row, col) of strict local-maximum plateaus of the grid.

    Values closer than ``rtol`` times the grid maximum count as equal, so that
    rounding in cell widths does not break a flat region into spurious peaks.
    """
    scale = float(np.max(np.abs(grid))) if grid.size else 0.0
    if scale == 0.0:
        return []
    q = np.round(grid / (scale * rtol))
    peak = q == ndimage.maximum_filter(q, size=3, mode="constant", cval=-np.inf)
    labels, count = ndimage.label(peak, structure=np.ones((3, 3)))
    out = []
    for k in range(1, count + 1):
        comp = labels == k
        ring = ndimage.binary_dilation(comp, structure=np.ones((3, 3))) & ~comp
        # a plateau covering the whole grid, or touching an equal or higher cell, is no peak
        if not ring.any() or q[ring].max() >= q[comp].max():
            continue
        out.append(tuple(np.argwhere(comp).mean(axis=0)))
    return out


def recovered_modes(grid, x_edges, y_edges, centers, radius, min_mass=None) -> int:
    """Number of ``centers`` lying within ``radius`` of some local maximum of the grid.

    Only peaks whose cell mass exceeds ``min_mass`` count; by default that is the
    mean cell mass, i.e. peaks must be denser than the uniform distribution.
    """
    min_mass = float(np.mean(grid)) if min_mass is None else min_mass
    peaks = [(r, c) for r, c in local_maxima(grid) if grid[int(round(r)), int(round(c))] > min_mass]
    if not peaks:
        return 0
    dx, dy = x_edges[1] - x_edges[0], y_edges[1] - y_edges[0]
    pts = np.array([(x_edges[0] + (c + 0.5) * dx, y_edges[0] + (r + 0.5) * dy) for r, c in peaks])
    d = np.linalg.norm(np.asarray(centers)[:, None, :] - pts[None, :, :], axis=2)
    return int((d.min(axis=1) <= radius).sum())


# ---------------------------------------------------------------- imputation benchmark


def baseline_impute(train: Dataset, test: Dataset) -> Dataset:
    """Fill numeric cells with the training mean (rounded for integers), nominal ones with the mode."""
    fill = np.empty(len(train.schema))
    for j, spec in enumerate(train.schema):
        col = train.values[:, j]
        col = col[~np.isnan(col)]
        if col.size == 0:
            col = test.values[:, j][~np.isnan(test.values[:, j])]
        if spec.kind == "nominal":
            fill[j] = np.bincount(col.astype(np.int64), minlength=len(spec.modalities)).argmax() if col.size else 0
        elif col.size == 0:
            fill[j] = 0.5 * (spec.lo + spec.hi)
        else:
            fill[j] = round(col.mean()) if spec.kind == "integer" else col.mean()
    X = test.values.copy()
    miss = np.isnan(X)
    X[miss] = np.broadcast_to(fill, X.shape)[miss]
    return test.with_values(X)


def fold_indices(n: int, folds: int, seed) -> list[np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, folds)


def _bench_task(args):
    truth, corrupted, test_idx, config, seed = args
    train_mask = np.ones(len(truth), dtype=bool)
    train_mask[test_idx] = False
    train = corrupted.take(np.flatnonzero(train_mask))
    test = corrupted.take(test_idx)
    gold = truth.take(test_idx)
    result = copycat_train(train, config.get("loss", "matusita"), config.get("prior", 0.5), config.get("splits", 10000), seed)
    gt_imp = impute_dataset(result.gt, test, seed)
    base_imp = baseline_impute(train, test)
    return w2_squared(gt_imp, gold), w2_squared(base_imp, gold), len(result.trace)


def impute_benchmark(data, q_list=(0.2,), folds: int = 5, trainer_config=None, seed=0, jobs: int = 1) -> list[dict]:
    """Cross-validated MCAR imputation: generator imputer versus the mean/mode baseline.

    ``data`` is a Dataset or a simulated domain name. For every ``q`` the whole
    dataset is corrupted once, then each fold's test rows are imputed by a
    generator trained on the remaining (corrupted) rows. Rows that already have
    missing cells carry no ground truth and are left out.
    """
    truth = simulate(data, seed) if isinstance(data, str) else data
    incomplete = truth.missing.any(axis=1)
    if incomplete.all():
        raise ValueError("the benchmark needs complete rows as ground truth")
    if incomplete.any():
        logger.warning("leaving out %d rows with missing cells", int(incomplete.sum()))
        truth = truth.take(np.flatnonzero(~incomplete))
    config = dict(trainer_config or {})
    tasks, keys = [], []
    for qi, q in enumerate(q_list):
        corrupted = mcar_corrupt(truth, q, [seed, qi])
        for k, idx in enumerate(fold_indices(len(truth), folds, seed)):
            tasks.append((truth, corrupted, idx, config, [seed, qi, k]))
            keys.append(q)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_bench_task, tasks))
    else:
        results = [_bench_task(t) for t in tasks]
    report = []
    for q in q_list:
        rows = np.array([r for r, key in zip(results, keys) if key == q])
        for method, col in (("generative_tree", 0), ("mean_mode", 1)):
            report.append(
                {
                    "q": q,
                    "method": method,
                    "w2_mean": float(rows[:, col].mean()),
                    "w2_std": float(rows[:, col].std(ddof=1)) if len(rows) > 1 else 0.0,
                    "folds": len(rows),
                    "per_fold": [float(v) for v in rows[:, col]],
                }
            )
    return report


def write_report(report, path) -> None:
    fields = ["q", "method", "w2_mean", "w2_std", "folds"]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        writer.writerows(report)


def export_folds(dataset: Dataset, folds: int, splits: int, seed, out_dir) -> list[Path]:
    """Write train / test / generated CSVs per fold for external classifier pipelines."""
    out_dir = Path(out_dir)
    written = []
    for k, idx in enumerate(fold_indices(len(dataset), folds, seed)):
        mask = np.ones(len(dataset), dtype=bool)
        mask[idx] = False
        train, test = dataset.take(np.flatnonzero(mask)), dataset.take(idx)
        gt = copycat_train(train, max_splits=splits, seed=[seed, k]).gt
        fake = sample(gt, len(train), [seed, k])
        for name, ds in (("train", train), ("test", test), ("generated", fake)):
            path = out_dir / f"fold{k}_{name}.csv"
            save_dataset(ds, path)
            written.append(path)
    return written
