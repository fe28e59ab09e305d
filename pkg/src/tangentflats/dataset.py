"""Sample sets: synthetic manifold generators, file loaders and image patches."""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "SampleSet",
    "DataFormatError",
    "IdxFormatError",
    "IdxMagicError",
    "IdxTruncatedError",
    "IdxCountMismatchError",
    "gen_swiss_roll",
    "gen_s_curve",
    "load_matrix",
    "save_matrix",
    "load_idx",
    "read_pgm",
    "extract_patches",
    "load_patch_corpus",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
RAW_HEADER = struct.Struct("<QQ")


class DataFormatError(ValueError):
    """Input file could not be parsed.

    ``row`` and ``column`` are zero-based and ``None`` when the problem is not
    tied to a particular cell.
    """

    def __init__(self, message: str, row: int | None = None, column: int | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column


class IdxFormatError(DataFormatError):
    pass


class IdxMagicError(IdxFormatError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


class IdxCountMismatchError(IdxFormatError):
    pass


@dataclass
class SampleSet:
    """``m`` samples in ``R^N`` stored row-wise, with optional integer labels."""

    data: np.ndarray
    labels: np.ndarray | None = None
    params: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2:
            raise ValueError(f"sample matrix must be 2-D, got shape {data.shape}")
        if data.shape[0] < 1:
            raise ValueError("no samples")
        if data.shape[1] < 1:
            raise ValueError("samples must have at least one coordinate")
        if not np.all(np.isfinite(data)):
            raise ValueError("sample matrix contains NaN or Inf")
        self.data = data
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (data.shape[0],):
                raise ValueError(
                    f"expected {data.shape[0]} labels, got shape {labels.shape}")
            self.labels = labels.astype(np.int64)

    @property
    def m(self) -> int:
        return self.data.shape[0]

    @property
    def N(self) -> int:
        return self.data.shape[1]

    def subset(self, index) -> "SampleSet":
        index = np.asarray(index)
        labels = None if self.labels is None else self.labels[index]
        return SampleSet(self.data[index], labels)


def _check_count(n):
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")


def gen_swiss_roll(n, noise_sigma=0.0, seed=0, return_params=False):
    """Sample the Swiss roll ``(t cos t, h, t sin t)``.

    ``t`` is uniform on ``[3*pi/2, 9*pi/2]`` and ``h`` uniform on ``[0, 21]``.
    Isotropic Gaussian noise of standard deviation ``noise_sigma`` is added to
    every coordinate.

    Parameters
    ----------
    n : int
        Number of points.
    noise_sigma : float
        Noise standard deviation, ``>= 0``.
    seed : int
        Seed for ``numpy.random.default_rng``.
    return_params : bool
        Also return the generating parameters ``(t, h)``.

    Returns
    -------
    samples : SampleSet
        ``n x 3`` samples. ``samples.params`` holds ``t`` and ``h`` as well.
    t, h : ndarray
        Only when ``return_params`` is true.
    """
    _check_count(n)
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    rng = np.random.default_rng(seed)
    t = rng.uniform(1.5 * np.pi, 4.5 * np.pi, size=n)
    h = rng.uniform(0.0, 21.0, size=n)
    noise = rng.normal(0.0, 1.0, size=(n, 3))
    data = np.column_stack([t * np.cos(t), h, t * np.sin(t)])
    if noise_sigma > 0:
        data = data + noise_sigma * noise
    samples = SampleSet(data, params={"kind": "swiss-roll", "t": t, "h": h})
    if return_params:
        return samples, t, h
    return samples


def gen_s_curve(n, noise_sigma=0.0, seed=0, return_params=False):
    """Sample the S-curve ``(sin t, h, sign(t) (cos t - 1))``.

    ``t`` is uniform on ``[-3*pi/2, 3*pi/2]`` and ``h`` uniform on ``[0, 2]``.
    """
    _check_count(n)
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    rng = np.random.default_rng(seed)
    t = rng.uniform(-1.5 * np.pi, 1.5 * np.pi, size=n)
    h = rng.uniform(0.0, 2.0, size=n)
    noise = rng.normal(0.0, 1.0, size=(n, 3))
    data = np.column_stack([np.sin(t), h, np.sign(t) * (np.cos(t) - 1.0)])
    if noise_sigma > 0:
        data = data + noise_sigma * noise
    samples = SampleSet(data, params={"kind": "s-curve", "t": t, "h": h})
    if return_params:
        return samples, t, h
    return samples


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        if fmt not in ("csv", "raw-f64"):
            raise ValueError(f"unknown matrix format {fmt!r}")
        return fmt
    return "csv" if path.suffix.lower() in (".csv", ".txt") else "raw-f64"


def load_matrix(path, format=None, label_column=False) -> SampleSet:
    """Read a sample matrix from ``csv`` or ``raw-f64``.

    With ``label_column=True`` the last CSV column is read as integer labels.
    The raw format is a little-endian ``(m, N)`` pair of ``u64`` followed by
    ``m*N`` row-major ``f64`` values.
    """
    path = Path(path)
    fmt = _infer_format(path, format)
    if fmt == "csv":
        return _load_csv(path, label_column)
    return _load_raw(path)


def _load_csv(path: Path, label_column: bool) -> SampleSet:
    rows = []
    labels = []
    width = None
    with open(path, newline="") as fh:
        for r, record in enumerate(csv.reader(fh)):
            if not record or all(not cell.strip() for cell in record):
                continue
            if width is None:
                width = len(record)
                if label_column and width < 2:
                    raise DataFormatError("label column needs at least two columns", row=r)
            elif len(record) != width:
                raise DataFormatError(
                    f"expected {width} columns, found {len(record)}", row=r)
            values = []
            for c, cell in enumerate(record):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DataFormatError(f"cannot parse {cell!r} as a number",
                                          row=r, column=c) from None
                if not np.isfinite(values[-1]):
                    raise DataFormatError("non-finite value", row=r, column=c)
            if label_column:
                label = values.pop()
                if label != int(label):
                    raise DataFormatError("label is not an integer", row=r, column=width - 1)
                labels.append(int(label))
            rows.append(values)
    if not rows:
        raise DataFormatError("no samples")
    return SampleSet(np.array(rows, dtype=np.float64),
                     np.array(labels, dtype=np.int64) if label_column else None)


def _load_raw(path: Path) -> SampleSet:
    blob = path.read_bytes()
    if len(blob) == 0:
        raise DataFormatError("no samples")
    if len(blob) < RAW_HEADER.size:
        raise DataFormatError("raw-f64 header truncated")
    m, n = RAW_HEADER.unpack_from(blob)
    if m == 0:
        raise DataFormatError("no samples")
    expected = RAW_HEADER.size + 8 * m * n
    if len(blob) != expected:
        raise DataFormatError(
            f"raw-f64 header declares {m}x{n} values ({expected} bytes) "
            f"but file has {len(blob)} bytes")
    data = np.frombuffer(blob, dtype="<f8", offset=RAW_HEADER.size).reshape(m, n)
    bad = np.argwhere(~np.isfinite(data))
    if len(bad):
        raise DataFormatError("non-finite value", row=int(bad[0, 0]), column=int(bad[0, 1]))
    return SampleSet(data.astype(np.float64))


def save_matrix(path, samples, format=None, label_column=False) -> None:
    """Write a matrix (or SampleSet) in ``csv`` or ``raw-f64``; inverse of :func:`load_matrix`."""
    path = Path(path)
    fmt = _infer_format(path, format)
    if isinstance(samples, SampleSet):
        data, labels = samples.data, samples.labels
    else:
        data, labels = np.atleast_2d(np.asarray(samples, dtype=np.float64)), None
    if fmt == "raw-f64":
        m, n = data.shape
        with open(path, "wb") as fh:
            fh.write(RAW_HEADER.pack(m, n))
            fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())
        return
    if label_column and labels is None:
        raise ValueError("label_column requested but samples carry no labels")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for i, row in enumerate(data):
            cells = [repr(float(v)) for v in row]
            if label_column:
                cells.append(str(int(labels[i])))
            writer.writerow(cells)


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _check_magic(blob, expected, kind):
    if len(blob) < 4:
        raise IdxTruncatedError(f"IDX {kind} file too short for a magic number")
    magic = struct.unpack(">I", blob[:4])[0]
    if magic != expected:
        raise IdxMagicError(f"bad IDX {kind} magic 0x{magic:08x}, expected 0x{expected:08x}")


def _parse_idx_images(blob: bytes) -> np.ndarray:
    _check_magic(blob, IDX_IMAGES_MAGIC, "image")
    if len(blob) < 16:
        raise IdxTruncatedError("IDX image header truncated")
    _, count, rows, cols = struct.unpack(">IIII", blob[:16])
    size = count * rows * cols
    if len(blob) - 16 < size:
        raise IdxTruncatedError(
            f"IDX image payload truncated: need {size} bytes, have {len(blob) - 16}")
    pixels = np.frombuffer(blob, dtype=np.uint8, count=size, offset=16)
    return pixels.reshape(count, rows * cols)


def _parse_idx_labels(blob: bytes) -> np.ndarray:
    _check_magic(blob, IDX_LABELS_MAGIC, "label")
    if len(blob) < 8:
        raise IdxTruncatedError("IDX label header truncated")
    _, count = struct.unpack(">II", blob[:8])
    if len(blob) - 8 < count:
        raise IdxTruncatedError(
            f"IDX label payload truncated: need {count} bytes, have {len(blob) - 8}")
    return np.frombuffer(blob, dtype=np.uint8, count=count, offset=8)


def load_idx(images_path, labels_path) -> SampleSet:
    """Load an IDX image/label pair (MNIST layout), pixels scaled to ``[0, 1]``.

    Files ending in ``.gz`` are decompressed transparently.
    """
    pixels = _parse_idx_images(_read_bytes(images_path))
    labels = _parse_idx_labels(_read_bytes(labels_path))
    if len(pixels) != len(labels):
        raise IdxCountMismatchError(
            f"{len(pixels)} images but {len(labels)} labels")
    if len(pixels) == 0:
        raise DataFormatError("no samples")
    return SampleSet(pixels.astype(np.float64) / 255.0, labels.astype(np.int64))


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) or ASCII (P2) PGM file as a float grayscale matrix."""
    blob = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(blob):
            raise DataFormatError("PGM header truncated")
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic == b"P5":
        pos += 1
        dtype = np.uint8 if maxval < 256 else ">u2"
        count = width * height
        itemsize = np.dtype(dtype).itemsize
        if len(blob) - pos < count * itemsize:
            raise DataFormatError("PGM payload truncated")
        pixels = np.frombuffer(blob, dtype=dtype, count=count, offset=pos)
    elif magic == b"P2":
        pixels = np.array(blob[pos:].split(), dtype=np.int64)
        if pixels.size < width * height:
            raise DataFormatError("PGM payload truncated")
        pixels = pixels[:width * height]
    else:
        raise DataFormatError(f"unsupported PGM magic {magic!r}")
    return pixels.reshape(height, width).astype(np.float64)


def extract_patches(image, patch_size, max_patches, seed=0) -> np.ndarray:
    """Sample square patches, normalized to zero mean and unit variance.

    Returns a ``(count, patch_size**2)`` array; ``count`` may be zero, so wrap
    in :class:`SampleSet` only after checking.

    ``image`` may be a single 2-D array or a sequence of them. Top-left
    corners are drawn without replacement within each image, visiting images
    round-robin until ``max_patches`` patches are collected or every corner is
    used. Variance is the population variance over the patch; constant patches
    are dropped.

    Raises
    ------
    ValueError
        If an image is smaller than the patch.
    """
    if isinstance(image, np.ndarray) and image.ndim == 2:
        images = [np.asarray(image, dtype=np.float64)]
    else:
        images = [np.asarray(im, dtype=np.float64) for im in image]
    p = int(patch_size)
    if p < 1:
        raise ValueError("patch_size must be positive")
    rng = np.random.default_rng(seed)
    orders = []
    for im in images:
        if im.ndim != 2:
            raise ValueError("images must be 2-D grayscale matrices")
        if im.shape[0] < p or im.shape[1] < p:
            raise ValueError(f"image of shape {im.shape} is smaller than patch size {p}")
        n_corners = (im.shape[0] - p + 1) * (im.shape[1] - p + 1)
        orders.append(rng.permutation(n_corners))

    patches = []
    cursors = [0] * len(images)
    while len(patches) < max_patches:
        progressed = False
        for k, im in enumerate(images):
            if len(patches) >= max_patches:
                break
            if cursors[k] >= len(orders[k]):
                continue
            progressed = True
            corner = orders[k][cursors[k]]
            cursors[k] += 1
            row, col = divmod(int(corner), im.shape[1] - p + 1)
            patch = im[row:row + p, col:col + p].ravel()
            centered = patch - patch.mean()
            var = np.mean(centered ** 2)
            if var <= 1e-12 * max(1.0, np.mean(patch ** 2)):
                continue
            patches.append(centered / np.sqrt(var))
        if not progressed:
            break
    if not patches:
        return np.empty((0, p * p))
    return np.array(patches)


def load_patch_corpus(directory, patch_size=8, max_patches=10000, seed=0,
                      pattern="*.pgm") -> SampleSet:
    """Collect normalized patches from every PGM image in ``directory``."""
    paths = sorted(Path(directory).glob(pattern))
    if not paths:
        raise DataFormatError(f"no images matching {pattern!r} in {directory}")
    patches = extract_patches([read_pgm(p) for p in paths], patch_size, max_patches, seed)
    if len(patches) == 0:
        raise DataFormatError("no samples: every patch was constant")
    return SampleSet(patches)
