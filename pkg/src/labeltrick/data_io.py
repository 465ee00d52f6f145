"""Dataset files, synthetic graphs, and metric output.

On-disk dataset layout (one directory)::

    edges.txt      u v [w]          whitespace separated, 0-based ids
    features.csv   node_id,c0,...   optional
    labels.csv     node_id,c0,...   one-hot rows, missing nodes unlabeled
    split.tsv      node_id<TAB>train|val|test

The provenance hash is the sha256 of those files' bytes, so it changes
exactly when one of them does.
"""
from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from ._rng import make_rng
from .graph import Graph
from .splits import LabelMatrix

METRIC_FIELDS = ("run_id", "method", "alpha", "seed", "split", "accuracy", "loss")
DATASET_FILES = ("edges.txt", "features.csv", "labels.csv", "split.tsv")
SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True, eq=False)
class Dataset:
    graph: Graph
    labels: LabelMatrix
    val_idx: np.ndarray
    test_idx: np.ndarray
    name: str = "dataset"
    provenance: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.graph.n
        if self.labels.n != n:
            raise ValueError("labels and graph disagree on the number of nodes")
        sets = [np.asarray(self.labels.train_idx, dtype=np.int64),
                np.sort(np.asarray(self.val_idx, dtype=np.int64)),
                np.sort(np.asarray(self.test_idx, dtype=np.int64))]
        allidx = np.concatenate(sets)
        if len(np.unique(allidx)) != len(allidx):
            raise ValueError("train/val/test index sets overlap")
        if len(allidx) and (allidx.min() < 0 or allidx.max() >= n):
            raise ValueError("index set entry out of range")
        y = self.labels.Y[allidx]
        if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=1) == 1)):
            raise ValueError("every train/val/test node needs a one-hot label")
        object.__setattr__(self, "val_idx", sets[1])
        object.__setattr__(self, "test_idx", sets[2])
        if not self.provenance:
            object.__setattr__(self, "provenance", _digest(serialize_dataset(self)))

    @property
    def train_idx(self) -> np.ndarray:
        return self.labels.train_idx

    @property
    def features(self) -> Optional[np.ndarray]:
        return self.graph.features


# parsing -------------------------------------------------------------------------

def _parse_edge_rows(text: str, path) -> tuple[list, list, bool]:
    edges, weights, weighted = [], [], False
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (2, 3):
            raise ValueError(f"{path}:{lineno}: expected 'u v [w]', got {len(parts)} fields")
        edges.append(parts[:2])
        if len(parts) == 3:
            try:
                weights.append(float(parts[2]))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: bad weight {parts[2]!r}") from None
            weighted = True
        else:
            weights.append(1.0)
    return edges, weights, weighted


def load_edge_list(path, n: Optional[int] = None, self_loops: bool = False) -> Graph:
    """Read ``u v [w]`` rows with 0-based integer ids.

    Pairs are undirected; repeats keep the first weight. Without ``n`` the
    node count is one more than the largest id.
    """
    text = Path(path).read_text(encoding="utf-8")
    rows, weights, _ = _parse_edge_rows(text, path)
    edges = np.zeros((len(rows), 2), dtype=np.int64)
    for i, (u, v) in enumerate(rows):
        try:
            edges[i] = int(u), int(v)
        except ValueError:
            raise ValueError(f"{path}: edge {i + 1} has a non-integer node id ({u!r}, {v!r})") from None
    if len(edges) and edges.min() < 0:
        raise ValueError(f"{path}: negative node id")
    size = int(edges.max()) + 1 if len(edges) else 0
    if n is None:
        n = size
    elif size > n:
        raise ValueError(f"{path}: node id {size - 1} out of range for n={n}")
    w = np.asarray(weights)
    if np.any(w <= 0):
        raise ValueError(f"{path}: edge weights must be positive")
    return Graph(n, edges, w, self_loops=self_loops)


def _read_csv_rows(path):
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        return None, []
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    return [h.strip() for h in header], list(enumerate(reader, 2))


def load_table(path, expected_rows: int) -> np.ndarray:
    """Read a ``node_id,c0,...`` CSV into an ``expected_rows x k`` matrix; absent nodes are zero."""
    header, rows = _read_csv_rows(path)
    if header is None:
        return np.zeros((expected_rows, 0))
    if not header or header[0] != "node_id":
        raise ValueError(f"{path}:1: header must start with node_id")
    cols = header[1:]
    out = np.zeros((expected_rows, len(cols)))
    seen = set()
    for lineno, row in rows:
        if not row:
            continue
        if len(row) != len(header):
            raise ValueError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
        try:
            node = int(row[0])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: cell node_id={row[0]!r} is not an integer") from None
        if node in seen:
            raise ValueError(f"{path}:{lineno}: duplicate node id {node}")
        if not 0 <= node < expected_rows:
            raise ValueError(f"{path}:{lineno}: node id {node} overflows the {expected_rows} expected rows")
        seen.add(node)
        for j, cell in enumerate(row[1:]):
            try:
                out[node, j] = float(cell)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: cell {cols[j]}={cell!r} is not numeric") from None
    return out


# serialization -----------------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def _table_text(m: np.ndarray) -> str:
    lines = ["node_id," + ",".join(f"c{j}" for j in range(m.shape[1]))]
    lines += [f"{i}," + ",".join(_fmt(v) for v in row) for i, row in enumerate(m)]
    return "\n".join(lines) + "\n"


def serialize_dataset(ds: Dataset) -> dict:
    g = ds.graph
    weighted = bool(np.any(g.weights != 1.0))
    edge_lines = [f"{u} {v} {_fmt(w)}" if weighted else f"{u} {v}"
                  for (u, v), w in zip(g.edges.tolist(), g.weights)]
    # a trailing isolated node would be lost from the edge list, so pin n in a comment
    files = {"edges.txt": f"# n={g.n}\n" + "".join(line + "\n" for line in edge_lines)}
    if g.features is not None:
        files["features.csv"] = _table_text(g.features)
    files["labels.csv"] = _table_text(ds.labels.Y)
    tag = np.full(g.n, "", dtype=object)
    for name, idx in zip(SPLIT_NAMES, (ds.train_idx, ds.val_idx, ds.test_idx)):
        tag[idx] = name
    files["split.tsv"] = "".join(f"{i}\t{t}\n" for i, t in enumerate(tag) if t)
    return {k: v.encode("utf-8") for k, v in files.items()}


def _digest(files: dict) -> str:
    h = hashlib.sha256()
    for name in DATASET_FILES:
        if name in files:
            h.update(name.encode())
            h.update(len(files[name]).to_bytes(8, "little"))
            h.update(files[name])
    return h.hexdigest()


def write_dataset(directory, ds: Dataset) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, blob in serialize_dataset(ds).items():
        (d / name).write_bytes(blob)
    return d


def load_dataset(directory, name: Optional[str] = None, self_loops: bool = False) -> Dataset:
    d = Path(directory)
    files = {f: (d / f).read_bytes() for f in DATASET_FILES if (d / f).exists()}
    for required in ("edges.txt", "labels.csv", "split.tsv"):
        if required not in files:
            raise FileNotFoundError(f"{d / required} is missing")
    first = files["edges.txt"].split(b"\n", 1)[0].decode()
    n = int(first.split("=", 1)[1]) if first.startswith("# n=") else None
    if n is None:
        header, rows = _read_csv_rows(d / "labels.csv")
        n = max((int(r[0]) for _, r in rows if r), default=-1) + 1
    g = load_edge_list(d / "edges.txt", n=n, self_loops=self_loops)
    y = load_table(d / "labels.csv", n)
    x = load_table(d / "features.csv", n) if "features.csv" in files else None
    idx = {k: [] for k in SPLIT_NAMES}
    for lineno, line in enumerate(files["split.tsv"].decode().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or parts[1] not in SPLIT_NAMES:
            raise ValueError(f"{d / 'split.tsv'}:{lineno}: expected 'node_id<TAB>train|val|test'")
        idx[parts[1]].append(int(parts[0]))
    graph = Graph(g.n, g.edges, g.weights, features=x, self_loops=self_loops)
    return Dataset(graph, LabelMatrix(y, idx["train"]), np.array(idx["val"], dtype=np.int64),
                   np.array(idx["test"], dtype=np.int64), name or d.name, _digest(files))


# raw ingestion -----------------------------------------------------------------------

def ingest_raw(edge_path, out_dir, labels_path, features_path=None, seed: int = 0,
               ratios=(0.6, 0.2, 0.2)) -> Dataset:
    """Remap arbitrary string ids to ``0..n-1`` and write a dataset directory.

    ``labels_path`` is a ``node_id,label`` CSV with free-form class names.
    The mapping is persisted as ``id_map.tsv`` (original id, index) and
    ``class_map.tsv`` (class name, column) next to the dataset files.
    """
    rows, weights, _ = _parse_edge_rows(Path(edge_path).read_text(encoding="utf-8"), edge_path)
    header, label_rows = _read_csv_rows(labels_path)
    if header is None or header[:2] != ["node_id", "label"]:
        raise ValueError(f"{labels_path}:1: header must be node_id,label")
    ids: dict = {}

    def index(token):
        return ids.setdefault(token, len(ids))

    edges = np.array([(index(u), index(v)) for u, v in rows], dtype=np.int64).reshape(-1, 2)
    raw_labels = {}
    for lineno, row in label_rows:
        if not row:
            continue
        if len(row) != 2:
            raise ValueError(f"{labels_path}:{lineno}: expected 2 cells")
        if row[0] in raw_labels:
            raise ValueError(f"{labels_path}:{lineno}: duplicate node id {row[0]!r}")
        raw_labels[row[0]] = row[1]
        index(row[0])
    feats = None
    if features_path is not None:
        fh, frows = _read_csv_rows(features_path)
        if fh is None or fh[0] != "node_id":
            raise ValueError(f"{features_path}:1: header must start with node_id")
        parsed = []
        for lineno, row in frows:
            if row:
                try:
                    parsed.append((index(row[0]), [float(v) for v in row[1:]]))
                except ValueError:
                    raise ValueError(f"{features_path}:{lineno}: non-numeric cell") from None
        feats = np.zeros((len(ids), len(fh) - 1))
        for i, vals in parsed:
            feats[i] = vals
    n = len(ids)
    classes = sorted(set(raw_labels.values()))
    col = {c: j for j, c in enumerate(classes)}
    y = np.zeros((n, len(classes)))
    labelled = np.array(sorted(ids[k] for k in raw_labels), dtype=np.int64)
    for k, c in raw_labels.items():
        y[ids[k], col[c]] = 1.0
    tr, va, te = ratio_split(labelled, seed, ratios)
    ds = Dataset(Graph(n, edges, np.asarray(weights), features=feats), LabelMatrix(y, tr), va, te,
                 Path(out_dir).name, meta={"seed": seed})
    out = write_dataset(out_dir, ds)
    (out / "id_map.tsv").write_text("".join(f"{k}\t{v}\n" for k, v in ids.items()), encoding="utf-8")
    (out / "class_map.tsv").write_text("".join(f"{c}\t{j}\n" for c, j in col.items()), encoding="utf-8")
    return ds


# synthetic data ----------------------------------------------------------------------

def ratio_split(nodes, seed: int, ratios=(0.6, 0.2, 0.2)):
    """Seeded shuffle of ``nodes`` cut into train/val/test by ``ratios``."""
    nodes = np.asarray(nodes, dtype=np.int64)
    r = np.asarray(ratios, dtype=np.float64)
    if r.shape != (3,) or np.any(r < 0) or not np.isclose(r.sum(), 1.0):
        raise ValueError("ratios must be three non-negative numbers summing to 1")
    perm = make_rng(seed, 7).permutation(nodes)
    n_tr = int(round(r[0] * len(nodes)))
    n_va = int(round(r[1] * len(nodes)))
    return np.sort(perm[:n_tr]), np.sort(perm[n_tr:n_tr + n_va]), np.sort(perm[n_tr + n_va:])


def _random_edges(probs: np.ndarray, rng) -> np.ndarray:
    n = probs.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < probs[iu, ju]
    return np.stack([iu[keep], ju[keep]], axis=1)


def make_erdos_renyi(n: int, p: float, seed: int) -> Graph:
    if not 0.0 <= p <= 1.0:
        raise ValueError("edge probability must lie in [0, 1]")
    return Graph(n, _random_edges(np.full((n, n), p), make_rng(seed, 0)))


def make_sbm(n_per_block: int = 100, p_in: float = 0.1, p_out: float = 0.01, seed: int = 0,
             n_features: int = 8, feature_signal: float = 0.5) -> Dataset:
    """Two-block stochastic block model; block id is the label.

    Features are Gaussian noise plus ``feature_signal`` on one coordinate
    per block, so they are informative but far from separable. Nodes are
    split 6:2:2 by a seeded shuffle.
    """
    if n_per_block < 1:
        raise ValueError("n_per_block must be positive")
    for p in (p_in, p_out):
        if not 0.0 <= p <= 1.0:
            raise ValueError("edge probabilities must lie in [0, 1]")
    n = 2 * n_per_block
    block = np.repeat([0, 1], n_per_block)
    probs = np.where(block[:, None] == block[None, :], p_in, p_out)
    edges = _random_edges(probs, make_rng(seed, 0))
    x = make_rng(seed, 1).standard_normal((n, n_features))
    if n_features:
        x[np.arange(n), block % n_features] += feature_signal
    y = np.eye(2)[block]
    tr, va, te = ratio_split(np.arange(n), seed)
    meta = {"n_per_block": n_per_block, "p_in": p_in, "p_out": p_out, "seed": seed}
    return Dataset(Graph(n, edges, features=x), LabelMatrix(y, tr), va, te, "sbm", meta=meta)


# metrics ---------------------------------------------------------------------------------

def _metric_cell(key, value) -> str:
    if value is None:
        return ""
    if key in ("alpha", "accuracy", "loss"):
        v = float(value)
        return "nan" if np.isnan(v) else f"{v:.6f}"
    return str(value)


def write_metrics_csv(path, rows: Iterable) -> None:
    """Write metric rows (dicts keyed by the header names) with LF endings and 6-decimal floats."""
    lines = [",".join(METRIC_FIELDS)]
    for row in rows:
        missing = set(METRIC_FIELDS) - set(row)
        if missing:
            raise ValueError(f"metric row missing {sorted(missing)}")
        lines.append(",".join(_metric_cell(k, row[k]) for k in METRIC_FIELDS))
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8"))


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
