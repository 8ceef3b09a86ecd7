"""Image preprocessing, dataset layout loading, and synthetic generators.

The preprocessing chain is fixed in order: resize, histogram-equalize,
median-denoise, normalize. Raw images are (H, W, C) uint8 arrays; the chain
ends with float64 pixels in the declared range.

Two generators make the desk-scale experiments self-contained: a two-class
texture set whose classes differ in spatial frequency but not mean
intensity, and a stochastic block model graph with block-shifted Gaussian
node features.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .exceptions import DatasetError, ShapeError
from .graph import Graph

__all__ = [
    "ImageRecord",
    "DatasetManifest",
    "PreprocessConfig",
    "SbmSpec",
    "resize",
    "histogram_equalize",
    "median_denoise",
    "normalize",
    "preprocess_chain",
    "load_isic_layout",
    "load_image",
    "load_arrays",
    "read_img8",
    "write_img8",
    "synth_texture_dataset",
    "save_image_dataset",
    "synth_sbm_graph",
    "save_sbm_dataset",
]

IMG8_MAGIC = b"IMG8"
TEXTURE_CLASS_NAMES = ("coarse", "fine")


@dataclass
class ImageRecord:
    """One image: (H, W, C) pixels, class index, stable id.

    Raw pixels are uint8 in [0, 255]; processed pixels are float64 in the
    normalized range.
    """

    pixels: np.ndarray
    label: int
    id: str

    def __post_init__(self):
        if self.pixels.ndim != 3:
            raise ShapeError("pixels must be (H, W, C)", self.pixels.shape)


@dataclass(frozen=True)
class DatasetManifest:
    """(path, label-index) records plus the class-name table, sorted by id."""

    records: tuple
    class_names: tuple

    def __post_init__(self):
        paths = [p for p, _ in self.records]
        if len(set(paths)) != len(paths):
            raise DatasetError("duplicate paths in manifest")
        for p, label in self.records:
            if not 0 <= label < len(self.class_names):
                raise DatasetError(f"label {label} for {p} out of range")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def labels(self) -> np.ndarray:
        return np.array([label for _, label in self.records], dtype=np.int64)

    @property
    def ids(self) -> tuple:
        return tuple(Path(p).stem for p, _ in self.records)


@dataclass(frozen=True)
class PreprocessConfig:
    target_size: int = 32
    denoise_window: int = 3
    normalize_range: str = "unit"

    def __post_init__(self):
        if self.target_size < 1:
            raise ValueError("target_size must be positive")
        if self.denoise_window % 2 != 1:
            raise ValueError("denoise_window must be odd")
        if self.normalize_range not in ("unit", "symmetric"):
            raise ValueError("normalize_range must be 'unit' or 'symmetric'")


# ---------------------------------------------------------------------------
# Per-image transforms.
# ---------------------------------------------------------------------------


def _check_uint8(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3:
        raise ShapeError("image must be (H, W) or (H, W, C)", img.shape)
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got {img.dtype}")
    return img


def resize(img: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bilinear resize (align-corners mapping), rounded back to uint8."""
    img = _check_uint8(img)
    th, tw = target
    if th < 1 or tw < 1:
        raise ValueError("target dims must be positive")
    h, w, _ = img.shape
    if h == 0 or w == 0:
        raise ValueError("cannot resize an empty image")
    if (h, w) == (th, tw):
        return img.copy()

    def coords(src: int, dst: int) -> np.ndarray:
        if dst == 1:
            return np.array([(src - 1) / 2.0])
        return np.arange(dst) * (src - 1) / (dst - 1)

    ys, xs = coords(h, th), coords(w, tw)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    p = img.astype(np.float64)
    top = p[y0][:, x0] * (1 - fx) + p[y0][:, x1] * fx
    bot = p[y1][:, x0] * (1 - fx) + p[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def histogram_equalize(img: np.ndarray) -> np.ndarray:
    """Per-channel CDF remap; constant channels pass through unchanged."""
    img = _check_uint8(img)
    out = img.copy()
    n = img.shape[0] * img.shape[1]
    for ch in range(img.shape[2]):
        plane = img[:, :, ch]
        hist = np.bincount(plane.ravel(), minlength=256)
        cdf = np.cumsum(hist)
        cdf_min = int(cdf[np.nonzero(hist)[0][0]])
        if cdf_min == n:
            continue
        lut = np.rint(255.0 * (cdf - cdf_min) / (n - cdf_min)).clip(0, 255).astype(np.uint8)
        out[:, :, ch] = lut[plane]
    return out


def median_denoise(img: np.ndarray, window: int = 3) -> np.ndarray:
    """Median over a window x window neighborhood with replicated borders."""
    img = _check_uint8(img)
    if window % 2 != 1:
        raise ValueError("window must be odd")
    r = window // 2
    padded = np.pad(img, ((r, r), (r, r), (0, 0)), mode="edge")
    h, w, c = img.shape
    stack = np.stack([
        padded[dy:dy + h, dx:dx + w]
        for dy in range(window)
        for dx in range(window)
    ])
    return np.median(stack, axis=0).astype(np.uint8)


def normalize(img: np.ndarray, mode: str = "unit") -> np.ndarray:
    """Map uint8 pixels to [0,1] ('unit') or [-1,1] ('symmetric') float64."""
    img = _check_uint8(img)
    if mode == "unit":
        return img.astype(np.float64) / 255.0
    if mode == "symmetric":
        return img.astype(np.float64) / 127.5 - 1.0
    raise ValueError(f"unknown normalize mode {mode!r}")


def preprocess_chain(img: np.ndarray, config: PreprocessConfig) -> np.ndarray:
    """resize -> equalize -> denoise -> normalize, returning (C, H, W) float64."""
    out = resize(img, (config.target_size, config.target_size))
    out = histogram_equalize(out)
    out = median_denoise(out, config.denoise_window)
    out = normalize(out, config.normalize_range)
    return np.ascontiguousarray(out.transpose(2, 0, 1))


# ---------------------------------------------------------------------------
# Raw IMG8 container and PNG loading.
# ---------------------------------------------------------------------------


def write_img8(img: np.ndarray, path) -> None:
    """12-byte header (magic, h, w as little-endian u32) + planar uint8 payload."""
    img = _check_uint8(img)
    h, w, c = img.shape
    planes = img.transpose(2, 0, 1).tobytes()
    Path(path).write_bytes(IMG8_MAGIC + struct.pack("<II", h, w) + planes)


def read_img8(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[:4] != IMG8_MAGIC:
        raise DatasetError(f"{path}: not an IMG8 file")
    h, w = struct.unpack("<II", blob[4:12])
    payload = blob[12:]
    if h * w == 0 or len(payload) % (h * w) != 0:
        raise DatasetError(f"{path}: payload size {len(payload)} does not tile {h}x{w}")
    c = len(payload) // (h * w)
    planes = np.frombuffer(payload, dtype=np.uint8).reshape(c, h, w)
    return np.ascontiguousarray(planes.transpose(1, 2, 0))


def load_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".img8":
        return read_img8(path)
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im, dtype=np.uint8)
    return arr[:, :, None] if arr.ndim == 2 else arr


# ---------------------------------------------------------------------------
# Directory layout: images/ plus labels.csv with header "id,label".
# ---------------------------------------------------------------------------


def load_isic_layout(root) -> DatasetManifest:
    """Manifest for a directory holding images/ and labels.csv.

    Labels are class-name strings; class indices follow the sorted distinct
    names. Rows referencing missing image files are an error naming the path.
    """
    root = Path(root)
    csv_path = root / "labels.csv"
    if not csv_path.is_file():
        raise DatasetError(f"missing labels file {csv_path}")
    rows = []
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["id", "label"]:
            raise DatasetError(f"{csv_path}: expected header 'id,label', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2 or not row[0] or not row[1]:
                raise DatasetError(f"{csv_path}: malformed row {lineno}: {row}")
            rows.append((row[0], row[1]))
    class_names = tuple(sorted({label for _, label in rows}))
    name_to_idx = {name: i for i, name in enumerate(class_names)}
    records = []
    for image_id, label in sorted(rows):
        found = None
        for suffix in (".png", ".img8"):
            candidate = root / "images" / f"{image_id}{suffix}"
            if candidate.is_file():
                found = candidate
                break
        if found is None:
            raise DatasetError(
                f"{csv_path}: image for id {image_id!r} not found "
                f"(tried {root / 'images' / (image_id + '.png')} and .img8)"
            )
        records.append((str(found), name_to_idx[label]))
    return DatasetManifest(records=tuple(records), class_names=class_names)


def load_arrays(manifest: DatasetManifest, config: PreprocessConfig,
                ids: set | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Preprocess every (selected) manifest record into a (N, C, H, W) batch."""
    xs, ys = [], []
    for (path, label) in manifest.records:
        if ids is not None and Path(path).stem not in ids:
            continue
        xs.append(preprocess_chain(load_image(path), config))
        ys.append(label)
    if not xs:
        raise DatasetError("no records selected")
    return np.stack(xs), np.array(ys, dtype=np.int64)


# ---------------------------------------------------------------------------
# Synthetic two-class texture images.
# ---------------------------------------------------------------------------


def synth_texture_dataset(n_per_class: int, size: int, seed: int) -> list[ImageRecord]:
    """Coarse blobs (class 0) vs fine-grained noise (class 1).

    Both classes are binary images thresholded at their own median, so the
    mean intensity matches across classes; only the spatial frequency
    content separates them.
    """
    if size < 16:
        raise ValueError("size must be >= 16")
    rng = np.random.default_rng(seed)
    records = []
    for label, tag in ((0, "coarse"), (1, "fine")):
        for i in range(n_per_class):
            noise = rng.standard_normal((size, size))
            if label == 0:
                field_ = gaussian_filter(noise, sigma=size / 8.0, mode="wrap")
            else:
                field_ = noise
            img = np.where(field_ > np.median(field_), 255, 0).astype(np.uint8)
            records.append(ImageRecord(pixels=img[:, :, None], label=label,
                                       id=f"{tag}{i:04d}"))
    return records


def save_image_dataset(records, out_dir, class_names=TEXTURE_CLASS_NAMES) -> list[str]:
    """Write records as images/<id>.img8 plus labels.csv; returns written paths."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    written = []
    rows = []
    for rec in sorted(records, key=lambda r: r.id):
        path = out_dir / "images" / f"{rec.id}.img8"
        write_img8(rec.pixels, path)
        written.append(str(path))
        rows.append((rec.id, class_names[rec.label]))
    csv_path = out_dir / "labels.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "label"])
        writer.writerows(rows)
    written.append(str(csv_path))
    return written


# ---------------------------------------------------------------------------
# Stochastic block model.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SbmSpec:
    blocks: int = 2
    nodes_per_block: int = 50
    p_in: float = 0.3
    p_out: float = 0.02
    feature_dim: int = 4
    feature_shift: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.blocks < 1 or self.nodes_per_block < 1:
            raise ValueError("blocks and nodes_per_block must be positive")
        if not 0.0 <= self.p_out < self.p_in <= 1.0:
            raise ValueError("need 0 <= p_out < p_in <= 1")
        if self.feature_dim < self.blocks:
            raise ValueError("feature_dim must be >= blocks for one-hot shifts")


def synth_sbm_graph(spec: SbmSpec) -> tuple[Graph, np.ndarray]:
    """Planted-community graph plus block labels.

    Intra-block pairs are edged with probability p_in, inter-block pairs with
    p_out. Features are unit Gaussian noise with feature_shift added at the
    node's block coordinate.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.blocks * spec.nodes_per_block
    labels = np.repeat(np.arange(spec.blocks), spec.nodes_per_block)
    prob = np.where(labels[:, None] == labels[None, :], spec.p_in, spec.p_out)
    draws = rng.random((n, n))
    upper = np.triu(draws < prob, k=1)
    edges = [(int(u), int(v)) for u, v in zip(*np.nonzero(upper))]
    features = rng.standard_normal((n, spec.feature_dim))
    features[np.arange(n), labels] += spec.feature_shift
    graph = Graph.from_edges(n, edges, features=features)
    return graph, labels


def save_sbm_dataset(graph: Graph, labels: np.ndarray, out_dir) -> list[str]:
    """Write edges.txt (edge list), features.csv, and labels.csv."""
    from .graph import write_edge_list, write_features_csv

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    edge_path = out_dir / "edges.txt"
    write_edge_list(graph, edge_path)
    feat_path = out_dir / "features.csv"
    write_features_csv(graph.features, feat_path)
    label_path = out_dir / "labels.csv"
    with open(label_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["node", "label"])
        writer.writerows((i, int(lbl)) for i, lbl in enumerate(labels))
    return [str(edge_path), str(feat_path), str(label_path)]
