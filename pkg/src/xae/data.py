"""Dataset ingestion: MNIST IDX files, the XPD1 labeled-patch container,
per-label-set grouping and sliding-window patch extraction.

Flattening convention everywhere: channel-major, then row, then column.
"""

from __future__ import annotations

import csv
import gzip
import io
import struct
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator

import numpy as np

from . import netpbm
from .labels import PartitionSpec

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049
XPD_MAGIC = b"XPD1"
XPD_VERSION = 1


class DataError(ValueError):
    pass


class BadMagic(DataError):
    pass


class TruncatedFile(DataError):
    pass


class CountMismatch(DataError):
    pass


class GeometryError(DataError):
    pass


class OrphanLabel(DataError):
    pass


@dataclass
class PatchDataset:
    """Labeled fixed-geometry samples stored as an (n, C*H*W) float matrix."""

    geometry: tuple[int, int, int]
    labels: np.ndarray
    vectors: np.ndarray
    label_names: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        self.geometry = tuple(int(g) for g in self.geometry)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        dim = int(np.prod(self.geometry))
        self.vectors = np.asarray(self.vectors, dtype=np.float64).reshape(-1, dim)
        if len(self.labels) != len(self.vectors):
            raise GeometryError(f"{len(self.labels)} labels but {len(self.vectors)} vectors")
        if not self.label_names:
            self.label_names = {int(k): str(k) for k in np.unique(self.labels)}
        missing = set(np.unique(self.labels).tolist()) - set(self.label_names)
        if missing:
            raise DataError(f"label ids {sorted(missing)} missing from the label table")

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self) -> int:
        return int(np.prod(self.geometry))

    def matrix(self) -> np.ndarray:
        return self.vectors

    def subset(self, index) -> "PatchDataset":
        index = np.asarray(index)
        return PatchDataset(self.geometry, self.labels[index], self.vectors[index], dict(self.label_names))

    def name_to_id(self) -> dict[str, int]:
        return {v: k for k, v in self.label_names.items()}

    def filter_labels(self, ids) -> "PatchDataset":
        keep = np.isin(self.labels, list(ids))
        ds = self.subset(np.flatnonzero(keep))
        ds.label_names = {k: v for k, v in self.label_names.items() if k in set(ids)}
        return ds

    def limit_per_label(self, n: int, seed: int = 0) -> "PatchDataset":
        """Keep at most ``n`` records per label (seeded, original order preserved)."""
        rng = np.random.default_rng(seed)
        keep = []
        for lab in sorted(set(self.labels.tolist())):
            idx = np.flatnonzero(self.labels == lab)
            if len(idx) > n:
                idx = np.sort(rng.choice(idx, size=n, replace=False))
            keep.append(idx)
        return self.subset(np.sort(np.concatenate(keep)))


# -- IDX -------------------------------------------------------------------

def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    raw = path.read_bytes()
    return gzip.decompress(raw) if raw[:2] == b"\x1f\x8b" else raw


def _check_magic(path, data: bytes, expected: int, kind: str) -> None:
    if len(data) < 4:
        raise TruncatedFile(f"{path}: header truncated")
    magic = struct.unpack(">I", data[:4])[0]
    if magic != expected:
        raise BadMagic(f"{path}: {kind} magic {magic} != {expected}")


def read_idx_images(path) -> np.ndarray:
    data = _read_bytes(path)
    _check_magic(path, data, IDX_IMAGE_MAGIC, "image")
    if len(data) < 16:
        raise TruncatedFile(f"{path}: header truncated")
    _, count, rows, cols = struct.unpack(">IIII", data[:16])
    need = count * rows * cols
    if len(data) - 16 < need:
        raise TruncatedFile(f"{path}: expected {need} pixel bytes, found {len(data) - 16}")
    return np.frombuffer(data, dtype=np.uint8, count=need, offset=16).reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    data = _read_bytes(path)
    _check_magic(path, data, IDX_LABEL_MAGIC, "label")
    if len(data) < 8:
        raise TruncatedFile(f"{path}: header truncated")
    _, count = struct.unpack(">II", data[:8])
    if len(data) - 8 < count:
        raise TruncatedFile(f"{path}: expected {count} labels, found {len(data) - 8}")
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=8)


def load_idx(image_path, label_path) -> PatchDataset:
    images = read_idx_images(image_path)
    labels = read_idx_labels(label_path)
    if len(images) != len(labels):
        raise CountMismatch(f"{len(images)} images but {len(labels)} labels")
    _, rows, cols = images.shape
    vectors = images.reshape(len(images), -1).astype(np.float64) / 255.0
    names = {d: str(d) for d in range(10)}
    names.update({int(k): str(k) for k in np.unique(labels)})
    return PatchDataset((1, rows, cols), labels.astype(np.int64), vectors, names)


def write_idx(image_path, label_path, images: np.ndarray, labels: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(image_path).write_bytes(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, rows, cols) + images.tobytes())
    Path(label_path).write_bytes(struct.pack(">II", IDX_LABEL_MAGIC, len(labels)) + labels.tobytes())


def bundled_mnist012() -> PatchDataset:
    """The packaged MNIST subset of digits 0, 1 and 2 (3119 images)."""
    base = resources.files("xae") / "datasets"
    with resources.as_file(base / "mnist012-images-idx3-ubyte.gz") as img, \
            resources.as_file(base / "mnist012-labels-idx1-ubyte.gz") as lab:
        return load_idx(img, lab)


def bundled_mnist012_paths() -> tuple[Path, Path]:
    base = Path(str(resources.files("xae") / "datasets"))
    return base / "mnist012-images-idx3-ubyte.gz", base / "mnist012-labels-idx1-ubyte.gz"


# -- XPD1 patch container ----------------------------------------------------

def save_patches(ds: PatchDataset, path) -> None:
    c, h, w = ds.geometry
    buf = io.BytesIO()
    buf.write(XPD_MAGIC)
    buf.write(struct.pack("<6I", XPD_VERSION, len(ds), c, h, w, len(ds.label_names)))
    for lid, name in sorted(ds.label_names.items()):
        enc = name.encode("utf-8")
        buf.write(struct.pack("<IH", lid, len(enc)))
        buf.write(enc)
    rec = np.dtype([("label", "<u4"), ("x", "<f4", (c * h * w,))])
    arr = np.empty(len(ds), dtype=rec)
    arr["label"] = ds.labels
    arr["x"] = ds.vectors
    buf.write(arr.tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_patches(path) -> PatchDataset:
    data = Path(path).read_bytes()
    if data[:4] != XPD_MAGIC:
        raise BadMagic(f"{path}: not an XPD1 patch file")
    if len(data) < 28:
        raise TruncatedFile(f"{path}: header truncated")
    version, count, c, h, w, nlabels = struct.unpack("<6I", data[4:28])
    if version != XPD_VERSION:
        raise BadMagic(f"{path}: unsupported version {version}")
    if min(c, h, w) < 1:
        raise GeometryError(f"{path}: invalid geometry ({c}, {h}, {w})")
    pos = 28
    names = {}
    for _ in range(nlabels):
        if pos + 6 > len(data):
            raise TruncatedFile(f"{path}: label table truncated")
        lid, ln = struct.unpack("<IH", data[pos:pos + 6])
        pos += 6
        names[lid] = data[pos:pos + ln].decode("utf-8")
        pos += ln
    rec = np.dtype([("label", "<u4"), ("x", "<f4", (c * h * w,))])
    if len(data) - pos != count * rec.itemsize:
        raise GeometryError(
            f"{path}: record block is {len(data) - pos} bytes, expected {count * rec.itemsize}")
    arr = np.frombuffer(data, dtype=rec, count=count, offset=pos)
    return PatchDataset((c, h, w), arr["label"].astype(np.int64),
                        arr["x"].astype(np.float64).reshape(count, c * h * w), names)


def import_patches(manifest, base_dir=None) -> PatchDataset:
    """Build a dataset from a CSV manifest of (path, label) rows pointing at PGM/PPM files.

    Label ids are assigned in sorted order of label names.
    """
    manifest = Path(manifest)
    base = Path(base_dir) if base_dir else manifest.parent
    rows = []
    with open(manifest, newline="") as f:
        for row in csv.reader(f):
            if not row or row[0].strip().startswith("#"):
                continue
            if row[0].strip().lower() == "path" and len(rows) == 0:
                continue
            if len(row) < 2:
                raise DataError(f"{manifest}: malformed row {row}")
            rows.append((row[0].strip(), row[1].strip()))
    names = sorted({lab for _, lab in rows})
    ids = {n: i for i, n in enumerate(names)}
    vecs, labs, geometry = [], [], None
    for rel, lab in rows:
        p = Path(rel) if Path(rel).is_absolute() else base / rel
        if not p.exists():
            raise FileNotFoundError(str(p))
        chw = netpbm.to_chw(netpbm.read(p))
        if geometry is None:
            geometry = chw.shape
        elif chw.shape != geometry:
            raise GeometryError(f"{p}: geometry {chw.shape} differs from {geometry}")
        vecs.append(chw.reshape(-1))
        labs.append(ids[lab])
    if geometry is None:
        raise DataError(f"{manifest}: no images listed")
    return PatchDataset(geometry, labs, np.array(vecs), {i: n for n, i in ids.items()})


# -- grouping ---------------------------------------------------------------

@dataclass
class GroupedData:
    """Record indices of the source dataset per source group."""

    dataset: PatchDataset
    indices: dict[int, np.ndarray]

    def group(self, i: int) -> PatchDataset:
        return self.dataset.subset(self.indices[i])

    def arrays(self) -> dict[int, np.ndarray]:
        return {i: self.dataset.vectors[idx] for i, idx in self.indices.items()}

    def merged(self) -> np.ndarray:
        return np.concatenate([self.dataset.vectors[idx] for idx in self.indices.values()], axis=0)


def assemble_groups(ds: PatchDataset, spec: PartitionSpec, seed: int = 0) -> GroupedData:
    """Assign every record to exactly one source group whose label set holds its label.

    Records of a label shared by several groups are dealt out evenly over
    those groups after a seeded shuffle, so no record is duplicated.
    """
    rng = np.random.default_rng(seed)
    groups = spec.source_groups
    buckets: dict[int, list[np.ndarray]] = {i: [] for i in range(len(groups))}
    for lab in sorted(set(ds.labels.tolist())):
        owners = [i for i, s in enumerate(groups) if lab in s]
        if not owners:
            raise OrphanLabel(f"label {ds.label_names.get(lab, lab)!r} (id {lab}) belongs to no source group")
        idx = np.flatnonzero(ds.labels == lab)
        if len(owners) > 1:
            idx = idx[rng.permutation(len(idx))]
        for pos, owner in enumerate(owners):
            buckets[owner].append(idx[pos::len(owners)])
    indices = {i: np.sort(np.concatenate(b)) if b else np.zeros(0, dtype=np.int64)
               for i, b in buckets.items()}
    return GroupedData(ds, indices)


# -- sliding window -----------------------------------------------------------

def sliding_window(image: np.ndarray, patch: tuple[int, int, int], stride: int = 1
                   ) -> Iterator[tuple[int, int, np.ndarray]]:
    """Yield (row, col, flat patch) for each top-left position, row-major."""
    image = np.asarray(image, dtype=np.float64)
    c, h, w = patch
    if image.ndim != 3 or image.shape[0] != c:
        raise GeometryError(f"image shape {image.shape} does not have {c} channels")
    if stride < 1:
        raise GeometryError("stride must be >= 1")
    _, H, W = image.shape
    if H < h or W < w:
        raise GeometryError(f"image {H}x{W} is smaller than patch {h}x{w}")
    for r in range(0, H - h + 1, stride):
        for col in range(0, W - w + 1, stride):
            yield r, col, image[:, r:r + h, col:col + w].reshape(-1)


def map_shape(image_hw: tuple[int, int], patch_hw: tuple[int, int], stride: int) -> tuple[int, int]:
    (H, W), (h, w) = image_hw, patch_hw
    return -(-(H - h + 1) // stride), -(-(W - w + 1) // stride)


def probability_map(image, xae, clf, positive: int, stride: int = 1, chunk: int = 4096) -> np.ndarray:
    """Positive-class probability for every window position (row-major grid).

    Cell (r, c) holds the probability for the window whose top-left corner is
    at pixel (r * stride, c * stride).
    """
    from .classifier import extract_features, predict_proba

    col = clf.class_index(positive)
    image = np.asarray(image, dtype=np.float64)
    geometry = xae.geometry or (image.shape[0],) + tuple(_square(xae.input_dim // image.shape[0]))
    rows, cols = map_shape(image.shape[1:], geometry[1:], stride)
    out = np.zeros(rows * cols)
    pos, buf = 0, []

    def flush():
        nonlocal pos
        if buf:
            probs = predict_proba(clf, extract_features(xae, np.array(buf)))
            out[pos:pos + len(buf)] = probs[:, col]
            pos += len(buf)
            buf.clear()

    for _, _, vec in sliding_window(image, geometry, stride):
        buf.append(vec)
        if len(buf) >= chunk:
            flush()
    flush()
    return out.reshape(rows, cols)


def _square(n: int) -> tuple[int, int]:
    side = int(round(n ** 0.5))
    if side * side != n:
        raise GeometryError("model has no declared geometry and its input is not square")
    return side, side


def map_to_pgm(prob: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(255.0 * np.asarray(prob)), 0, 255).astype(np.uint8)


# -- synthetic textures -------------------------------------------------------

SYNTH_NAMES = {0: "background", 1: "disk", 2: "ring", 3: "stripes"}
SYNTH_GEOMETRY = (3, 27, 27)
_TISSUE = np.array([0.86, 0.72, 0.82])
_STAIN = np.array([0.36, 0.20, 0.52])


def _tissue(rng, h, w):
    base = _TISSUE + rng.uniform(-0.04, 0.04)
    return base[:, None, None] + rng.normal(0.0, 0.05, size=(3, h, w))


def _paint(img, mask):
    img[:, mask] = 0.3 * img[:, mask] + 0.7 * _STAIN[:, None]


def _synth_patch(rng, label: int) -> np.ndarray:
    _, h, w = SYNTH_GEOMETRY
    img = _tissue(rng, h, w)
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = (h - 1) / 2, (w - 1) / 2
    if label == 0 and rng.random() < 0.5:
        # hard negative: a disk well away from the centre
        ang = rng.uniform(0, 2 * np.pi)
        shift = rng.uniform(6, 10)
        cy, cx = cy + shift * np.sin(ang), cx + shift * np.cos(ang)
        _paint(img, (yy - cy) ** 2 + (xx - cx) ** 2 <= rng.uniform(4.5, 6.5) ** 2)
    elif label == 1:
        _paint(img, (yy - cy) ** 2 + (xx - cx) ** 2 <= rng.uniform(4.5, 6.5) ** 2)
    elif label == 2:
        r = np.hypot(yy - cy, xx - cx)
        outer = rng.uniform(9.0, 11.0)
        _paint(img, (r <= outer) & (r >= outer - 2.5))
    elif label == 3:
        _paint(img, ((yy + rng.integers(0, 6)) % 6) < 2)
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def synthetic_patches(n_per_class: int = 800, seed: int = 0) -> PatchDataset:
    """Four-class 27x27 RGB texture set: plain tissue, centred disk, ring, stripes.

    Half of the background patches carry an off-centre disk so that a
    detector keyed on the disk class peaks at the disk centre. Values are
    quantized to multiples of 1/255 so PPM round trips are exact.
    """
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(4), n_per_class)
    labels = labels[rng.permutation(len(labels))]
    vecs = np.stack([_synth_patch(rng, int(lab)).reshape(-1) for lab in labels])
    return PatchDataset(SYNTH_GEOMETRY, labels, vecs, dict(SYNTH_NAMES))


def planted_image(height: int = 96, width: int = 96, plant: tuple[int, int] | None = (37, 52),
                  seed: int = 0) -> np.ndarray:
    """Plain tissue (C, H, W) with one disk patch whose top-left corner is ``plant``."""
    rng = np.random.default_rng(seed)
    img = _tissue(rng, height, width)
    if plant is not None:
        _, h, w = SYNTH_GEOMETRY
        r, c = plant
        yy, xx = np.mgrid[0:height, 0:width]
        cy, cx = r + (h - 1) / 2, c + (w - 1) / 2
        _paint(img, (yy - cy) ** 2 + (xx - cx) ** 2 <= 5.5 ** 2)
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
