"""Image I/O, preprocessing, split handling, batching, and the synthetic
dataset used for desk-scale training.

Supported on-disk formats are binary PPM (P6, maxval 255) and a raw tensor
sidecar (.nct). The preprocessing chain is decode -> bilinear resize ->
per-channel normalize, with no augmentation anywhere.
"""

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DecodeError, FormatError, ItemError, ParseError
from .tensor import DEFAULT_DTYPE

NCT_MAGIC = b"NCT1"


@dataclass
class PipelineConfig:
    resolution: int = 224
    mean: tuple = (0.5, 0.5, 0.5)
    std: tuple = (0.5, 0.5, 0.5)

    def __post_init__(self):
        self.mean = tuple(float(v) for v in self.mean)
        self.std = tuple(float(v) for v in self.std)
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ValueError("mean and std must each have 3 channel values")
        if any(s <= 0 for s in self.std):
            raise ValueError(f"std must be positive per channel, got {self.std}")
        if self.resolution < 1:
            raise ValueError(f"resolution must be >= 1, got {self.resolution}")


@dataclass
class DatasetSplit:
    root: str
    entries: list  # ordered (relative path, int label)

    def __len__(self):
        return len(self.entries)

    @property
    def class_count(self):
        return max(label for _, label in self.entries) + 1 if self.entries else 0

    def labels(self):
        return [label for _, label in self.entries]


# ---- PPM codec ---------------------------------------------------------------

def _ppm_token(data, pos, fieldname):
    n = len(data)
    while pos < n:
        b = data[pos]
        if b in b" \t\r\n":
            pos += 1
        elif b == ord("#"):
            while pos < n and data[pos] not in b"\r\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and data[pos] not in b" \t\r\n":
        pos += 1
    if start == pos:
        raise DecodeError(f"missing {fieldname}")
    return data[start:pos], pos


def _ppm_int(data, pos, fieldname):
    tok, pos = _ppm_token(data, pos, fieldname)
    try:
        val = int(tok)
    except ValueError:
        raise DecodeError(f"non-numeric {fieldname}: {tok!r}") from None
    if val <= 0:
        raise DecodeError(f"non-positive {fieldname}: {val}")
    return val, pos


def decode_ppm(data):
    """Binary P6 bytes -> float tensor [1,3,H,W] with values in [0,255]."""
    magic, pos = _ppm_token(data, 0, "magic")
    if magic != b"P6":
        raise DecodeError(f"unsupported magic {magic!r}")
    width, pos = _ppm_int(data, pos, "width")
    height, pos = _ppm_int(data, pos, "height")
    maxval, pos = _ppm_int(data, pos, "maxval")
    if maxval != 255:
        raise DecodeError(f"unsupported maxval {maxval} (only 255)")
    if pos >= len(data) or data[pos] not in b" \t\r\n":
        raise DecodeError("missing whitespace after maxval")
    pos += 1
    need = width * height * 3
    payload = data[pos:pos + need]
    if len(payload) < need:
        raise DecodeError(f"truncated payload: need {need} bytes, have {len(payload)}")
    img = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return img.transpose(2, 0, 1)[None].astype(DEFAULT_DTYPE)


def encode_ppm(x):
    """Tensor [1,3,H,W] (or [3,H,W]) in [0,255] -> binary P6 bytes."""
    if x.ndim == 4:
        x = x[0]
    c, h, w = x.shape
    if c != 3:
        raise DecodeError(f"need 3 channels to encode, got {c}")
    pixels = np.clip(np.rint(x), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    return b"P6\n%d %d\n255\n" % (w, h) + pixels.tobytes()


# ---- raw tensor sidecar (.nct) -----------------------------------------------

def encode_nct(arr):
    arr = np.asarray(arr, dtype=np.float32)
    out = [NCT_MAGIC, struct.pack("<B", arr.ndim),
           struct.pack(f"<{arr.ndim}I", *arr.shape),
           arr.astype("<f4").tobytes(order="C")]
    return b"".join(out)


def decode_nct(data):
    if data[:4] != NCT_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}", 0)
    if len(data) < 5:
        raise FormatError("truncated before rank", 4)
    rank = data[4]
    head = 5 + 4 * rank
    if len(data) < head:
        raise FormatError("truncated in dims", 5)
    dims = struct.unpack(f"<{rank}I", data[5:head])
    need = int(np.prod(dims, dtype=np.int64)) * 4
    if len(data) < head + need:
        raise FormatError(f"truncated payload: need {need} bytes", head)
    return np.frombuffer(data[head:head + need], dtype="<f4").astype(np.float32).reshape(dims)


# ---- preprocessing -----------------------------------------------------------

def resize_bilinear(x, target):
    """Half-pixel-center bilinear resize of [N,C,H,W] to [N,C,target,target].

    Source coordinate for output index d is (d + 0.5) * (src / target) - 0.5,
    clamped to the valid range, so output values never leave [min(x), max(x)].
    """
    n, c, h, w = x.shape
    t = int(target)
    xin = x.astype(np.float64, copy=False)

    def axis_coords(src):
        s = (np.arange(t) + 0.5) * (src / t) - 0.5
        s = np.clip(s, 0.0, src - 1.0)
        lo = np.floor(s).astype(np.int64)
        hi = np.minimum(lo + 1, src - 1)
        return lo, hi, s - lo

    y0, y1, wy = axis_coords(h)
    x0, x1, wx = axis_coords(w)
    rows = xin[:, :, y0, :] * (1.0 - wy)[None, None, :, None] \
        + xin[:, :, y1, :] * wy[None, None, :, None]
    out = rows[:, :, :, x0] * (1.0 - wx) + rows[:, :, :, x1] * wx
    return out.astype(x.dtype, copy=False)


def normalize(x, cfg):
    """Per channel: (x/255 - mean_c) / std_c."""
    mean = np.asarray(cfg.mean, dtype=np.float64).reshape(1, 3, 1, 1)
    std = np.asarray(cfg.std, dtype=np.float64).reshape(1, 3, 1, 1)
    return ((x.astype(np.float64) / 255.0 - mean) / std).astype(DEFAULT_DTYPE)


def denormalize(x, cfg):
    mean = np.asarray(cfg.mean, dtype=np.float64).reshape(1, 3, 1, 1)
    std = np.asarray(cfg.std, dtype=np.float64).reshape(1, 3, 1, 1)
    return ((x.astype(np.float64) * std + mean) * 255.0).astype(DEFAULT_DTYPE)


# ---- split lists -------------------------------------------------------------

def load_split(root, list_file):
    """Parse a "relative/path<space>label" list into a DatasetSplit."""
    entries = []
    seen = set()
    with open(list_file, "r", encoding="utf-8") as fh:
        lineno = 0
        for raw in fh:
            lineno += 1
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split(" ")
            if len(parts) != 2 or not parts[0]:
                raise ParseError(f"expected 'path label', got {line!r}", lineno)
            path, label_text = parts
            try:
                label = int(label_text)
            except ValueError:
                raise ParseError(f"non-integer label {label_text!r}", lineno) from None
            if label < 0:
                raise ParseError(f"negative label {label}", lineno)
            if path in seen:
                raise ParseError(f"duplicate path {path!r}", lineno)
            seen.add(path)
            entries.append((path, label))
    return DatasetSplit(root=root, entries=entries)


def save_split_list(split, list_file):
    with open(list_file, "w", encoding="utf-8", newline="\n") as fh:
        for path, label in split.entries:
            fh.write(f"{path} {label}\n")


def load_image(path):
    """Read one .ppm or .nct file as [1,3,H,W]; failures become ItemError."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as e:
        raise ItemError(f"cannot read {path}: {e.strerror or e}") from e
    try:
        if path.endswith(".nct"):
            arr = decode_nct(data)
            if arr.ndim == 3:
                arr = arr[None]
            if arr.ndim != 4 or arr.shape[0] != 1 or arr.shape[1] != 3:
                raise DecodeError(f"tensor shape {arr.shape} is not an image")
            return arr.astype(DEFAULT_DTYPE)
        return decode_ppm(data)
    except (DecodeError, FormatError) as e:
        raise ItemError(f"cannot decode {path}: {e}") from e


# ---- synthetic dataset -------------------------------------------------------

_QUADRANTS = ((0, 0), (0, 1), (1, 0), (1, 1))


def _class_color(k, classes):
    """Distinct fully saturated hue per class, as float RGB in [0,1]."""
    hue = (k / max(classes, 1)) * 6.0
    sector = int(hue) % 6
    f = hue - int(hue)
    v, p, q, t = 1.0, 0.15, 1.0 - 0.85 * f, 0.15 + 0.85 * f
    rgb = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][sector]
    return np.array(rgb)


def _quadrant_center(k, resolution):
    qy, qx = _QUADRANTS[k % 4]
    return (2 * qy + 1) * resolution // 4, (2 * qx + 1) * resolution // 4


def motif_box(k, resolution):
    """(r0, r1, c0, c1) bounds (end-exclusive) guaranteed to contain the
    class-k motif wherever its jitter placed it."""
    cy, cx = _quadrant_center(k, resolution)
    half = resolution // 5 + 2 * max(resolution // 32, 1) + 1
    return (max(cy - half, 0), min(cy + half, resolution),
            max(cx - half, 0), min(cx + half, resolution))


def _render(k, classes, resolution, rng):
    res = resolution
    img = np.clip(96.0 + rng.normal(0.0, 6.0, (res, res, 3)), 0, 255)
    cy, cx = _quadrant_center(k, res)
    j = max(res // 32, 1)
    cy += int(rng.integers(-j, j + 1))
    cx += int(rng.integers(-j, j + 1))
    rj = max(res // 32, 1)
    radius = res // 5 + int(rng.integers(-rj, rj + 1))
    yy, xx = np.mgrid[0:res, 0:res]
    mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2
    color = _class_color(k, classes) * 255.0 * rng.uniform(0.92, 1.0)
    blob = color[None, None, :] + rng.normal(0.0, 4.0, (res, res, 3))
    img[mask] = np.clip(blob, 0, 255)[mask]
    return np.rint(img).astype(np.uint8).transpose(2, 0, 1)[None].astype(np.float64)


def synth_generate(classes, per_class, resolution, seed, out_dir):
    """Write a labeled synthetic PPM dataset under out_dir.

    Train gets `per_class` images per class, test one fifth of that
    (at least 1). Returns (train_split, test_split); also writes
    train.txt / test.txt list files. Deterministic for a fixed seed.
    """
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    if per_class < 1:
        raise ValueError(f"need at least 1 image per class, got {per_class}")
    rng = np.random.default_rng(seed)
    per_test = max(per_class // 5, 1)
    train_entries, test_entries = [], []
    for k in range(classes):
        cdir = os.path.join(out_dir, f"class_{k:03d}")
        os.makedirs(cdir, exist_ok=True)
        for split_name, count, entries in (("train", per_class, train_entries),
                                           ("test", per_test, test_entries)):
            for i in range(count):
                rel = f"class_{k:03d}/{split_name}_{i:04d}.ppm"
                img = _render(k, classes, resolution, rng)
                with open(os.path.join(out_dir, rel), "wb") as fh:
                    fh.write(encode_ppm(img))
                entries.append((rel, k))
    train = DatasetSplit(root=out_dir, entries=train_entries)
    test = DatasetSplit(root=out_dir, entries=test_entries)
    save_split_list(train, os.path.join(out_dir, "train.txt"))
    save_split_list(test, os.path.join(out_dir, "test.txt"))
    return train, test


# ---- batching ----------------------------------------------------------------

def _prepare(root, entry, cfg):
    rel, label = entry
    img = load_image(os.path.join(root, rel))
    if img.shape[2] != cfg.resolution or img.shape[3] != cfg.resolution:
        img = resize_bilinear(img, cfg.resolution)
    return normalize(img, cfg)[0], label


def batch_iter(split, batch_size, shuffle_seed, cfg, workers=0):
    """Yield (images [B,3,T,T], labels list) over one seeded-permutation
    epoch. The final partial batch is kept. Item preparation may run on a
    thread pool; emission order depends only on the permutation.
    """
    if batch_size < 1:
        raise ValueError(f"batch size must be >= 1, got {batch_size}")
    order = np.random.default_rng(shuffle_seed).permutation(len(split.entries))
    pool = ThreadPoolExecutor(max_workers=workers) if workers and workers > 1 else None
    try:
        for start in range(0, len(order), batch_size):
            chunk = [split.entries[i] for i in order[start:start + batch_size]]
            if pool is not None:
                prepared = list(pool.map(lambda e: _prepare(split.root, e, cfg), chunk))
            else:
                prepared = [_prepare(split.root, e, cfg) for e in chunk]
            images = np.stack([im for im, _ in prepared])
            labels = [lb for _, lb in prepared]
            yield images, labels
    finally:
        if pool is not None:
            pool.shutdown()


def compute_stats(split, resolution=224):
    """Per-channel mean and std of the dataset in [0,1] units, after resize."""
    total = np.zeros(3, dtype=np.float64)
    total_sq = np.zeros(3, dtype=np.float64)
    count = 0
    for rel, _ in split.entries:
        img = load_image(os.path.join(split.root, rel))
        if img.shape[2] != resolution or img.shape[3] != resolution:
            img = resize_bilinear(img, resolution)
        scaled = img.astype(np.float64) / 255.0
        total += scaled.sum(axis=(0, 2, 3))
        total_sq += (scaled ** 2).sum(axis=(0, 2, 3))
        count += scaled.shape[2] * scaled.shape[3]
    mean = total / count
    var = total_sq / count - mean ** 2
    return mean, np.sqrt(np.maximum(var, 0.0))
