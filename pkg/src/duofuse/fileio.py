"""File formats: PNG images, Middlebury .flo flows, PFM disparities, weights.

Weight container layout (version 1): the first line of the file is a compact
JSON manifest terminated by a newline; the rest is a flat data section of raw
little-endian C-order arrays. The manifest maps each parameter name to its
shape, dtype and byte offset into the data section, e.g.::

    {"format": "duofuse-weights-v1",
     "entries": {"fusion_lsr/enc0/weight": {"shape": [32, 15, 3, 3],
                                            "dtype": "float32",
                                            "offset": 0}}}

Every format round-trips losslessly at its native precision.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import cv2
import numpy as np

from .frame import DisparityMap, FlowField, Frame

FLO_MAGIC = 202021.25
FLO_SENTINEL = 1e9
WEIGHTS_FORMAT = "duofuse-weights-v1"


class FileFormatError(ValueError):
    """Malformed file: bad magic number, truncated payload, or policy violation."""


# ---------------------------------------------------------------------------
# PNG images


def save_image(path, frame: Frame, bit_depth: int = 8) -> None:
    """Write a [0,1] frame as an 8- or 16-bit PNG (1 or 3 channels)."""
    if bit_depth not in (8, 16):
        raise ValueError("bit_depth must be 8 or 16")
    if frame.channels not in (1, 3):
        raise ValueError("PNG payloads must have 1 or 3 channels")
    peak = (1 << bit_depth) - 1
    arr = np.rint(np.clip(frame.data, 0.0, 1.0) * peak)
    arr = arr.astype(np.uint8 if bit_depth == 8 else np.uint16)
    if frame.channels == 3:
        arr = arr[:, :, ::-1]  # cv2 stores BGR
    else:
        arr = arr[:, :, 0]
    if not cv2.imwrite(str(path), arr):
        raise IOError(f"failed to write image {path}")


def load_image(path) -> Frame:
    """Read a PNG into a [0,1] frame; bit depth inferred from the file."""
    arr = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise FileFormatError(f"cannot read image {path}")
    if arr.dtype == np.uint8:
        peak = 255.0
    elif arr.dtype == np.uint16:
        peak = 65535.0
    else:
        raise FileFormatError(f"unsupported image dtype {arr.dtype} in {path}")
    data = arr.astype(np.float64) / peak
    if data.ndim == 2:
        data = data[:, :, None]
    elif data.shape[2] == 3:
        data = data[:, :, ::-1]
    elif data.shape[2] == 4:
        data = data[:, :, 2::-1]  # drop alpha
    return Frame(data)


# ---------------------------------------------------------------------------
# Middlebury .flo optical flow


def save_flow(path, flow: FlowField) -> None:
    data = flow.data.astype("<f4")
    with open(path, "wb") as f:
        f.write(struct.pack("<f", FLO_MAGIC))
        f.write(struct.pack("<ii", flow.width, flow.height))
        f.write(np.ascontiguousarray(data).tobytes())


def load_flow(path) -> FlowField:
    with open(path, "rb") as f:
        head = f.read(12)
        if len(head) < 12:
            raise FileFormatError(f"truncated .flo header in {path}")
        magic, w, h = struct.unpack("<fii", head)
        if magic != np.float32(FLO_MAGIC):
            raise FileFormatError(
                f"bad .flo magic in {path}: {magic!r} (expected {FLO_MAGIC})")
        if w < 1 or h < 1:
            raise FileFormatError(f"bad .flo dimensions {w}x{h} in {path}")
        payload = np.frombuffer(f.read(), dtype="<f4")
    if payload.size != h * w * 2:
        raise FileFormatError(
            f"truncated .flo payload in {path}: {payload.size} floats, expected {h * w * 2}")
    data = payload.reshape(h, w, 2).astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise FileFormatError(f"non-finite flow values in {path}")
    if np.any(np.abs(data) > FLO_SENTINEL):
        raise FileFormatError(
            f"flow values beyond {FLO_SENTINEL:g} in {path}: unknown-flow sentinels "
            "are not accepted by this pipeline")
    return FlowField(data)


# ---------------------------------------------------------------------------
# PFM disparity maps


def save_pfm(path, disp: DisparityMap) -> None:
    """Write grayscale PFM, little-endian (negative scale), rows bottom-up."""
    data = disp.data[:, :, 0].astype("<f4")
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{disp.width} {disp.height}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(data[::-1]).tobytes())


def load_pfm(path) -> DisparityMap:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header == b"PF":
            raise FileFormatError(f"color PFM not supported ({path}); expected grayscale 'Pf'")
        if header != b"Pf":
            raise FileFormatError(f"bad PFM magic {header!r} in {path}")
        dims = f.readline().split()
        if len(dims) != 2:
            raise FileFormatError(f"bad PFM dimension line in {path}")
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        payload = np.frombuffer(f.read(), dtype=dtype)
    if payload.size != h * w:
        raise FileFormatError(
            f"truncated PFM payload in {path}: {payload.size} floats, expected {h * w}")
    data = payload.reshape(h, w)[::-1].astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise FileFormatError(f"non-finite disparity values in {path}")
    return DisparityMap(data[:, :, None])


# ---------------------------------------------------------------------------
# weight container


class WeightStore:
    """Named parameter container backed by a flat dict of arrays."""

    def __init__(self, arrays: dict[str, np.ndarray] | None = None):
        self._arrays: dict[str, np.ndarray] = {}
        for name, arr in (arrays or {}).items():
            self[name] = arr

    def __setitem__(self, name: str, arr) -> None:
        arr = np.asarray(arr)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"parameter {name!r} contains non-finite values")
        self._arrays[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        if name not in self._arrays:
            raise KeyError(f"missing parameter {name!r}")
        return self._arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __len__(self) -> int:
        return len(self._arrays)

    def names(self) -> list[str]:
        return sorted(self._arrays)

    def items(self):
        return ((n, self._arrays[n]) for n in self.names())

    def astype(self, dtype) -> "WeightStore":
        return WeightStore({n: a.astype(dtype) for n, a in self.items()})

    def save(self, path) -> None:
        entries = {}
        blobs = []
        offset = 0
        for name in self.names():
            arr = np.ascontiguousarray(self._arrays[name])
            dtype = np.dtype(arr.dtype).newbyteorder("<")
            blob = arr.astype(dtype, copy=False).tobytes()
            entries[name] = {"shape": list(arr.shape),
                             "dtype": str(np.dtype(arr.dtype).name),
                             "offset": offset}
            blobs.append(blob)
            offset += len(blob)
        manifest = json.dumps({"format": WEIGHTS_FORMAT, "entries": entries},
                              sort_keys=True, separators=(",", ":"))
        with open(path, "wb") as f:
            f.write(manifest.encode("utf-8"))
            f.write(b"\n")
            for blob in blobs:
                f.write(blob)

    @classmethod
    def load(cls, path) -> "WeightStore":
        with open(path, "rb") as f:
            line = f.readline()
            data = f.read()
        try:
            manifest = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FileFormatError(f"unreadable weight manifest in {path}: {exc}") from exc
        if manifest.get("format") != WEIGHTS_FORMAT:
            raise FileFormatError(
                f"bad weight container format {manifest.get('format')!r} in {path}")
        store = cls()
        for name, meta in manifest["entries"].items():
            dtype = np.dtype(meta["dtype"]).newbyteorder("<")
            count = int(np.prod(meta["shape"], dtype=np.int64)) if meta["shape"] else 1
            start = meta["offset"]
            end = start + count * dtype.itemsize
            if end > len(data):
                raise FileFormatError(f"truncated weight payload for {name!r} in {path}")
            arr = np.frombuffer(data[start:end], dtype=dtype).reshape(meta["shape"])
            store[name] = arr.astype(np.dtype(meta["dtype"]))
        return store


def load_weights(path) -> WeightStore:
    return WeightStore.load(path)


def save_weights(path, store: WeightStore) -> None:
    store.save(path)


# ---------------------------------------------------------------------------
# frame sequence directories


def frame_path(directory, index: int) -> Path:
    return Path(directory) / f"{index:06d}.png"


def save_frame_sequence(directory, frames, bit_depth: int = 8) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(frames):
        p = frame_path(directory, i)
        save_image(p, frame, bit_depth)
        paths.append(p)
    return paths


def load_frame_sequence(directory) -> list[Frame]:
    directory = Path(directory)
    paths = sorted(directory.glob("*.png"))
    if not paths:
        raise FileNotFoundError(f"no PNG frames in {directory}")
    return [load_image(p) for p in paths]
