"""Dataset directories, synthetic block-model graphs and imbalanced splits.

Directory layout (UTF-8, LF line endings, no header rows)::

    edges.csv     src,dst       0-indexed integer pairs, one per line
    features.csv  N rows of D comma-separated decimals
    labels.csv    N integer rows
    split.json    optional {"train": [...], "val": [...], "test": [...]}
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InsufficientClassPopulation, LabelOutOfRange, MalformedRow, MissingFile
from .graph import SparseGraph
from .tensor import make_rng


@dataclass(frozen=True)
class Dataset:
    graph: SparseGraph
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "dataset"
    ingest_report: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.features.shape[0] != self.graph.num_nodes or len(self.labels) != self.graph.num_nodes:
            raise ValueError("features/labels must have one row per node")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise LabelOutOfRange(f"labels must lie in [0, {self.num_classes})")

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    def class_counts(self, index=None) -> np.ndarray:
        lab = self.labels if index is None else self.labels[np.asarray(index, dtype=np.int64)]
        return np.bincount(lab, minlength=self.num_classes)


@dataclass
class SplitSpec:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    imbalance_ratio: float = 1.0

    def audit(self, dataset: Dataset):
        sets = [set(self.train.tolist()), set(self.val.tolist()), set(self.test.tolist())]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise ValueError("train/val/test index sets overlap")
        for s in sets:
            if s and (min(s) < 0 or max(s) >= dataset.num_nodes):
                raise ValueError("split index outside the node range")
        missing = np.flatnonzero(dataset.class_counts(self.test) == 0)
        if len(missing):
            raise InsufficientClassPopulation(f"classes {missing.tolist()} absent from the test split")

    def to_json(self) -> dict:
        return {"train": self.train.tolist(), "val": self.val.tolist(), "test": self.test.tolist(),
                "imbalance_ratio": self.imbalance_ratio}

    @classmethod
    def from_json(cls, d: dict) -> "SplitSpec":
        return cls(*(np.asarray(d[k], dtype=np.int64) for k in ("train", "val", "test")),
                   imbalance_ratio=float(d.get("imbalance_ratio", 1.0)))


# -- directory format ----------------------------------------------------

def _read_rows(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if line:
                yield lineno, line


def load_dataset(directory, name: str | None = None) -> Dataset:
    d = Path(directory)
    paths = {k: d / f"{k}.csv" for k in ("edges", "features", "labels")}
    for p in paths.values():
        if not p.is_file():
            raise MissingFile(f"missing dataset file: {p}")

    labels = []
    for lineno, line in _read_rows(paths["labels"]):
        try:
            labels.append(int(line))
        except ValueError:
            raise MalformedRow(paths["labels"], lineno, f"expected an integer label, got {line!r}") from None
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)

    rows, width = [], None
    for lineno, line in _read_rows(paths["features"]):
        try:
            vals = [float(v) for v in line.split(",")]
        except ValueError:
            raise MalformedRow(paths["features"], lineno, "non-numeric feature value") from None
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise MalformedRow(paths["features"], lineno, f"expected {width} columns, got {len(vals)}")
        rows.append(vals)
    if len(rows) != n:
        raise MalformedRow(paths["features"], len(rows), f"{len(rows)} feature rows for {n} labels")
    features = np.asarray(rows, dtype=float).reshape(n, width or 0)

    edges = []
    for lineno, line in _read_rows(paths["edges"]):
        parts = line.split(",")
        if len(parts) != 2:
            raise MalformedRow(paths["edges"], lineno, "expected 'src,dst'")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise MalformedRow(paths["edges"], lineno, "non-integer node index") from None
        if not (0 <= u < n and 0 <= v < n):
            raise MalformedRow(paths["edges"], lineno, f"node index outside [0, {n})")
        edges.append((u, v))
    graph = SparseGraph.from_edges(n, edges)

    if n and labels.min() < 0:
        raise LabelOutOfRange(f"{paths['labels']}: negative label")
    num_classes = int(labels.max()) + 1 if n else 0
    report = {"raw_edge_rows": len(edges), "unique_edges": graph.num_edges,
              "dropped_duplicates": graph.dropped_duplicates, "dropped_self_loops": graph.dropped_self_loops}
    return Dataset(graph, features, labels, num_classes, name or d.name, report)


def load_split(directory) -> SplitSpec | None:
    p = Path(directory) / "split.json"
    if not p.is_file():
        return None
    return SplitSpec.from_json(json.loads(p.read_text()))


def write_dataset(dataset: Dataset, directory, split: SplitSpec | None = None):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "edges.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{u},{v}\n" for u, v in dataset.graph.edges)
    with open(d / "features.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(",".join(format(x, ".17g") for x in row) + "\n" for row in dataset.features)
    with open(d / "labels.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{int(y)}\n" for y in dataset.labels)
    if split is not None:
        (d / "split.json").write_text(json.dumps(split.to_json()))


# -- synthetic block model -----------------------------------------------

@dataclass
class SbmSpec:
    class_sizes: list = field(default_factory=lambda: [100, 100, 100])
    p_in: float = 0.08
    p_out: float = 0.01
    feature_dim: int = 32
    mean_separation: float = 1.0
    noise: float = 1.0
    seed: int = 0

    def validate(self):
        if not (0 <= self.p_in <= 1 and 0 <= self.p_out <= 1):
            raise ValueError("edge probabilities must lie in [0, 1]")
        if any(s < 1 for s in self.class_sizes):
            raise ValueError("class sizes must be >= 1")


def generate_sbm(spec: SbmSpec) -> Dataset:
    """Block-model graph with Gaussian class-conditional features.

    Class means are random directions scaled to ``mean_separation``; noise
    is isotropic with standard deviation ``noise``.
    """
    spec.validate()
    rng = make_rng(spec.seed)
    sizes = np.asarray(spec.class_sizes, dtype=np.int64)
    labels = np.repeat(np.arange(len(sizes)), sizes)
    n = int(sizes.sum())
    iu, ju = np.triu_indices(n, 1)
    same = labels[iu] == labels[ju]
    prob = np.where(same, spec.p_in, spec.p_out)
    keep = rng.random(len(iu)) < prob
    graph = SparseGraph.from_edges(n, np.stack([iu[keep], ju[keep]], axis=1))
    means = rng.standard_normal((len(sizes), spec.feature_dim))
    means *= spec.mean_separation / np.linalg.norm(means, axis=1, keepdims=True)
    features = means[labels] + spec.noise * rng.standard_normal((n, spec.feature_dim))
    return Dataset(graph, features, labels, len(sizes), f"sbm-{spec.seed}")


# -- imbalanced splits ---------------------------------------------------

def train_count_profile(n_major: int, num_classes: int, ratio: float, mode: str = "graded") -> np.ndarray:
    """Per-class training counts, class 0 largest, last class ``n_major / ratio``."""
    if ratio < 1:
        raise ValueError("imbalance ratio must be >= 1")
    if num_classes == 1:
        return np.array([n_major])
    if mode == "graded":
        expo = np.arange(num_classes) / (num_classes - 1)
        raw = n_major * ratio ** (-expo)
    elif mode == "step":
        raw = np.full(num_classes, float(n_major))
        raw[-1] = n_major / ratio
    else:
        raise ValueError(f"unknown imbalance mode {mode!r}")
    return np.maximum(1, np.round(raw)).astype(np.int64)


def make_imbalanced_split(dataset: Dataset, ratio: float, train_fraction: float = 0.4, seed: int = 0,
                          val_fraction: float = 0.5, mode: str = "graded") -> SplitSpec:
    """Imbalanced training set, stratified val/test from what remains.

    The majority training count is ``train_fraction`` of the smallest class
    population; the remaining nodes of each class are shuffled and divided
    between validation (``val_fraction``) and test.
    """
    rng = make_rng(seed)
    counts = dataset.class_counts()
    if counts.min() < 3:
        raise InsufficientClassPopulation(f"every class needs >= 3 nodes, got {counts.tolist()}")
    n_major = max(1, int(np.floor(train_fraction * counts.min())))
    profile = train_count_profile(n_major, dataset.num_classes, ratio, mode)
    train, val, test = [], [], []
    for c in range(dataset.num_classes):
        idx = rng.permutation(np.flatnonzero(dataset.labels == c))
        k = int(profile[c])
        rest = idx[k:]
        if len(rest) < 2:
            raise InsufficientClassPopulation(f"class {c} has too few nodes left for val/test")
        n_val = min(max(1, int(round(val_fraction * len(rest)))), len(rest) - 1)
        train.append(idx[:k])
        val.append(rest[:n_val])
        test.append(rest[n_val:])
    split = SplitSpec(*(np.sort(np.concatenate(s)) for s in (train, val, test)), imbalance_ratio=float(ratio))
    split.audit(dataset)
    return split
