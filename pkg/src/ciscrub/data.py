"""Dataset ingestion (CSV, IDX) and seeded synthetic generators."""

import csv
import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import seeding
from .errors import ConfigError, FormatError


@dataclass
class Dataset:
    """Row-aligned features and labels.

    ``y`` holds integer class labels for classification data and floats for
    regression-style responses (DAG samples).
    """

    X: np.ndarray
    y: np.ndarray
    columns: list = field(default_factory=list)
    label: str = "label"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2 or len(self.y) != self.X.shape[0]:
            raise FormatError(f"features {self.X.shape} and labels ({len(self.y)},) are not row-aligned")
        if not self.columns:
            self.columns = [f"x{j}" for j in range(self.X.shape[1])]

    def __len__(self):
        return self.X.shape[0]

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.y[idx], list(self.columns), self.label, dict(self.meta))


# --------------------------------------------------------------------------
# CSV / IDX

def _label_array(values):
    arr = np.asarray(values, dtype=float)
    if np.all(arr == np.round(arr)):
        return arr.astype(np.int64)
    return arr


def save_csv(dataset, path):
    """Write ``dataset`` as CSV with a header; floats use round-trip ``repr``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(dataset.columns) + [dataset.label])
        for row, lab in zip(dataset.X, dataset.y):
            w.writerow([repr(float(v)) for v in row] + [repr(lab.item())])


def read_csv(path, label_column=None):
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise FormatError(f"{path}: cannot open ({exc.strerror})") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        if label_column is None:
            label_idx = len(header) - 1
        elif label_column in header:
            label_idx = header.index(label_column)
        else:
            raise FormatError(f"{path}: label column {label_column!r} not in header")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise FormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            vals = []
            for col, cell in zip(header, rec):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise FormatError(f"{path}:{lineno}: column {col!r} is not numeric: {cell!r}") from None
            rows.append(vals)
    if not rows:
        raise FormatError(f"{path}: no data rows")
    arr = np.array(rows, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{path}: non-finite values")
    feat = [j for j in range(len(header)) if j != label_idx]
    return Dataset(arr[:, feat], _label_array(arr[:, label_idx]),
                   [header[j] for j in feat], header[label_idx])


IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _read_bytes(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot open ({exc.strerror})") from exc
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx(path, expected_magic=None):
    """Parse an unsigned-byte IDX file into an array of its declared shape."""
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    (magic,) = struct.unpack(">I", raw[:4])
    if expected_magic is not None and magic != expected_magic:
        raise FormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    if magic >> 8 != 0x08:
        raise FormatError(f"{path}: bad magic 0x{magic:08x} (only unsigned-byte IDX is supported)")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise FormatError(f"{path}: truncated dimension table at byte {len(raw)}")
    dims = struct.unpack(">" + "I" * ndim, raw[4:head])
    count = int(np.prod(dims)) if dims else 0
    if len(raw) - head != count:
        raise FormatError(f"{path}: expected {count} data bytes after byte {head}, found {len(raw) - head}")
    return np.frombuffer(raw, dtype=np.uint8, offset=head).reshape(dims)


def write_idx(array, path):
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x0800 | array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(">" + "I" * array.ndim, *array.shape))
        fh.write(array.tobytes())


def load_dataset(path, format=None, label_column=None, labels_path=None):
    """Load a CSV file, or an IDX image/label pair, as a :class:`Dataset`.

    IDX images are flattened per sample and scaled to ``[0, 1]``.
    """
    path = Path(path)
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "idx"
    if format == "csv":
        return read_csv(path, label_column)
    if format != "idx":
        raise FormatError(f"unknown dataset format {format!r}")
    if labels_path is None:
        raise FormatError(f"{path}: IDX images need a matching labels file")
    images = read_idx(path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if labels.shape[0] != images.shape[0]:
        raise FormatError(f"{labels_path}: {labels.shape[0]} labels for {images.shape[0]} images")
    X = images.reshape(images.shape[0], -1).astype(float) / 255.0
    return Dataset(X, labels.astype(np.int64), label="label")


# --------------------------------------------------------------------------
# DAG sampling

@dataclass
class DagSample:
    features: np.ndarray
    response: np.ndarray
    names: list
    blanket: list


_NODE_TYPES = ("gaussian", "bernoulli", "xor")


def _validate_graph(spec):
    if not isinstance(spec, dict) or "nodes" not in spec or "response" not in spec:
        raise ConfigError("graph spec needs 'nodes' and 'response'")
    names = []
    for node in spec["nodes"]:
        name = node.get("name")
        if not name or name in names:
            raise ConfigError(f"missing or duplicate node name {name!r}")
        kind = node.get("type", "gaussian")
        if kind not in _NODE_TYPES:
            raise ConfigError(f"node {name}: unknown type {kind!r}")
        parents = node.get("parents", [])
        for p in parents:
            if p not in names:
                raise ConfigError(f"node {name}: parent {p!r} must be declared earlier")
        if kind == "gaussian" and len(node.get("weights", [])) != len(parents):
            raise ConfigError(f"node {name}: weights and parents differ in length")
        if kind == "xor" and len(parents) < 2:
            raise ConfigError(f"node {name}: xor needs at least two parents")
        names.append(name)
    if spec["response"] not in names:
        raise ConfigError(f"response {spec['response']!r} is not a node")
    return names


def markov_blanket(spec, node):
    """Parents, children and co-parents of ``node`` in a graph spec."""
    parents = {n["name"]: list(n.get("parents", [])) for n in spec["nodes"]}
    blanket = set(parents[node])
    for child, ps in parents.items():
        if node in ps:
            blanket.add(child)
            blanket.update(p for p in ps if p != node)
    return blanket


def sample_dag(spec, n, seed=0):
    """Draw ``n`` rows from a linear-Gaussian / binary / XOR graph spec.

    Node types: ``gaussian`` (``sum(w * parent) + noise * N(0, 1)``),
    ``bernoulli`` (root with probability ``p``), and ``xor`` (parity of the
    parents thresholded at 0.5, optionally flipped with probability ``flip``).
    """
    names = _validate_graph(spec)
    rng = seeding.stream(seed, seeding.DATA)
    values = {}
    for node in spec["nodes"]:
        kind = node.get("type", "gaussian")
        parents = node.get("parents", [])
        if kind == "gaussian":
            v = float(node.get("noise", 1.0)) * rng.standard_normal(n)
            for p, w in zip(parents, node.get("weights", [])):
                v = v + float(w) * values[p]
        elif kind == "bernoulli":
            v = (rng.random(n) < float(node.get("p", 0.5))).astype(float)
        else:
            bits = np.zeros(n, dtype=np.int64)
            for p in parents:
                bits ^= (values[p] > 0.5).astype(np.int64)
            flip = rng.random(n) < float(node.get("flip", 0.0))
            v = (bits ^ flip).astype(float)
        values[node["name"]] = v
    response = spec["response"]
    feats = [nm for nm in names if nm != response]
    blanket = markov_blanket(spec, response)
    return DagSample(
        features=np.column_stack([values[f] for f in feats]),
        response=values[response],
        names=feats,
        blanket=[i for i, f in enumerate(feats) if f in blanket],
    )


def _g(name, parents=(), weights=(), noise=1.0):
    return {"name": name, "type": "gaussian", "parents": list(parents), "weights": list(weights), "noise": noise}


# X1 -> X2 -> ... -> X8 chain; Y = X4 - X6 + noise, so the blanket is {X4, X6}.
LINEAR_CHAIN_8 = {
    "response": "Y",
    "nodes": [_g("X1")]
    + [_g(f"X{k}", [f"X{k - 1}"], [0.8]) for k in range(2, 9)]
    + [_g("Y", ["X4", "X6"], [1.0, -1.0], 0.5)],
}

# Gaussian parents plus a parity node; the blanket of Y is {X1, X2, X5}.
XOR_MIXED_8 = {
    "response": "Y",
    "nodes": [
        _g("X1"),
        _g("X2"),
        {"name": "X3", "type": "bernoulli", "p": 0.5},
        {"name": "X4", "type": "bernoulli", "p": 0.5},
        {"name": "X5", "type": "xor", "parents": ["X3", "X4"]},
        _g("X6", ["X1"], [0.8], 0.6),
        _g("X7"),
        _g("X8", ["X2", "X6"], [0.5, 0.5]),
        _g("Y", ["X1", "X2", "X5"], [1.0, 1.0, 1.5], 0.5),
    ],
}


# --------------------------------------------------------------------------
# synthetic generators

GENERATORS = ("gaussian_blobs", "linear_gaussian_dag", "xor_blanket", "tie_heavy_discrete", "planted_outliers")


@dataclass(frozen=True)
class SyntheticSpec:
    generator: str
    params: dict = field(default_factory=dict)
    seed: int = 0


def _positive(params, key, default, kind=float):
    v = kind(params.get(key, default))
    if v <= 0:
        raise ConfigError(f"{key} must be positive, got {v}")
    return v


def _blobs(params, rng):
    k = _positive(params, "n_classes", 2, int)
    per = _positive(params, "n_per_class", 100, int)
    dim = _positive(params, "dim", 2, int)
    sep = float(params.get("separation", 5.0))
    sd = _positive(params, "noise", 1.0)
    if k == 2:
        u = rng.standard_normal(dim)
        centers = np.vstack([u, -u]) * (sep * sd / 2 / np.linalg.norm(u))
    else:
        c = rng.standard_normal((k, dim))
        centers = c / np.linalg.norm(c, axis=1, keepdims=True) * (sep * sd / np.sqrt(2))
    y = np.repeat(np.arange(k), per)
    X = centers[y] + sd * rng.standard_normal((k * per, dim))
    order = rng.permutation(k * per)
    return X[order], y[order], {"centers": centers.tolist()}


def generate_synthetic(spec):
    """Deterministic synthetic dataset for ``spec``; ground truth goes in ``meta``.

    ``gaussian_blobs`` -- isotropic class clusters, ``separation`` in noise
    standard deviations.  ``linear_gaussian_dag`` / ``xor_blanket`` -- DAG
    samples with ``meta["blanket"]``.  ``tie_heavy_discrete`` -- ``levels``-
    valued predictors.  ``planted_outliers`` -- two blobs with a fraction of
    labels flipped, listed in ``meta["outliers"]``.
    """
    if spec.generator not in GENERATORS:
        raise ConfigError(f"unknown generator {spec.generator!r}; choose from {GENERATORS}")
    p = dict(spec.params)
    rng = seeding.stream(spec.seed, seeding.DATA)
    if spec.generator == "gaussian_blobs":
        X, y, meta = _blobs(p, rng)
        return Dataset(X, y, meta=meta)
    if spec.generator == "planted_outliers":
        frac = float(p.pop("outlier_fraction", 0.05))
        if not 0 <= frac < 0.5:
            raise ConfigError("outlier_fraction must lie in [0, 0.5)")
        p.setdefault("n_classes", 2)
        X, y, meta = _blobs(p, rng)
        n_out = int(round(frac * len(y)))
        out = np.sort(rng.choice(len(y), size=n_out, replace=False))
        k = int(y.max()) + 1
        y = y.copy()
        y[out] = (y[out] + 1 + rng.integers(0, k - 1, size=n_out)) % k
        meta["outliers"] = out.tolist()
        return Dataset(X, y, meta=meta)
    n = _positive(p, "n", 1000, int)
    if spec.generator == "linear_gaussian_dag":
        graph = p.get("graph", LINEAR_CHAIN_8)
        s = sample_dag(graph, n, spec.seed)
        return Dataset(s.features, s.response, s.names, "Y", {"blanket": s.blanket})
    if spec.generator == "xor_blanket":
        extra = int(p.get("n_noise", 1))
        bits = rng.integers(0, 2, size=(n, 2))
        noise = rng.integers(0, 2, size=(n, extra))
        X = np.hstack([bits, noise]).astype(float)
        y = (bits[:, 0] ^ bits[:, 1]).astype(np.int64)
        return Dataset(X, y, [f"X{j + 1}" for j in range(X.shape[1])], "Y", {"blanket": [0, 1]})
    # tie_heavy_discrete
    levels = _positive(p, "levels", 5, int)
    dim = _positive(p, "dim", 1, int)
    X = rng.integers(0, levels, size=(n, dim)).astype(float)
    y = X.sum(axis=1) + float(p.get("noise", 1.0)) * rng.standard_normal(n)
    return Dataset(X, y, label="y", meta={"levels": levels})
