"""Binary container and manifest plumbing shared by every stage.

One container format for everything that is not plain CSV/JSON: a short
magic, a little-endian uint32 header length, a canonical-JSON header, and
a raw payload. Payload dtype and axis order live in the header, so the
same reader handles volumes, en-face maps, masks, and embedding blocks.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"OCTB1\n"

# storage dtypes are fixed little-endian regardless of host
_DTYPES = {
    "float32": np.dtype("<f4"),
    "float64": np.dtype("<f8"),
    "uint8": np.dtype("u1"),
}


class ContainerError(ValueError):
    pass


def canonical_json(obj) -> bytes:
    """Serialize with sorted keys and no whitespace so equal dicts hash equal."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the same directory and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def write_blob(path, header: dict, payload: bytes) -> None:
    head = canonical_json(header)
    data = MAGIC + struct.pack("<I", len(head)) + head + payload
    atomic_write_bytes(path, data)


def read_blob(path) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise ContainerError(f"{path}: bad magic")
    n = struct.unpack_from("<I", raw, len(MAGIC))[0]
    off = len(MAGIC) + 4
    header = json.loads(raw[off : off + n].decode())
    return header, raw[off + n :]


def write_array(path, arr: np.ndarray, kind: str, extra: dict | None = None, dtype: str = "float32") -> None:
    """Store an array with shape/dtype metadata under a kind tag."""
    if dtype not in _DTYPES:
        raise ContainerError(f"unsupported storage dtype {dtype!r}")
    header = {
        "kind": kind,
        "shape": list(arr.shape),
        "dtype": dtype,
        "endianness": "little",
    }
    if extra:
        overlap = set(extra) & set(header)
        if overlap:
            raise ContainerError(f"extra header keys collide: {sorted(overlap)}")
        header.update(extra)
    payload = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
    write_blob(path, header, payload)


def read_array(path, kind: str | None = None) -> tuple[np.ndarray, dict]:
    header, payload = read_blob(path)
    if kind is not None and header.get("kind") != kind:
        raise ContainerError(f"{path}: expected kind {kind!r}, found {header.get('kind')!r}")
    dt = _DTYPES.get(header.get("dtype"))
    if dt is None:
        raise ContainerError(f"{path}: unknown dtype {header.get('dtype')!r}")
    shape = tuple(header["shape"])
    expected = int(np.prod(shape, dtype=np.int64)) * np.dtype(dt).itemsize
    if len(payload) != expected:
        raise ContainerError(
            f"{path}: payload is {len(payload)} bytes, header promises {expected}"
        )
    arr = np.frombuffer(payload, dtype=dt).reshape(shape)
    return arr, header


@dataclass
class OctVolume:
    """A repeated-B-scan intensity volume.

    data is indexed (y, x, repeat, z): y is the slow scan position, x the
    fast axis, z depth. pitch is (lateral, axial) in um/px; the lateral
    pitch applies to both y and x.
    """

    data: np.ndarray
    pitch: tuple[float, float]
    seed: int | None = None
    noise_floor: float = 0.0

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 4:
            raise ContainerError(f"volume must be 4-d (y,x,repeat,z), got shape {self.data.shape}")
        if len(self.pitch) != 2 or any(p <= 0 for p in self.pitch):
            raise ContainerError(f"pitch must be two positive um/px values, got {self.pitch}")

    @property
    def dims(self) -> tuple[int, int, int, int]:
        y, x, r, z = self.data.shape
        return y, x, z, r

    @property
    def n_repeats(self) -> int:
        return self.data.shape[2]

    def frames(self, y: int) -> list[np.ndarray]:
        """The repeated (x, z) frames at one scan position."""
        return [self.data[y, :, r, :] for r in range(self.n_repeats)]


def save_volume(path, vol: OctVolume) -> None:
    extra = {
        "pitch_um": [float(vol.pitch[0]), float(vol.pitch[1])],
        "noise_floor": float(vol.noise_floor),
    }
    if vol.seed is not None:
        extra["seed"] = int(vol.seed)
    write_array(path, vol.data, kind="volume", extra=extra, dtype="float32")


def load_volume(path) -> OctVolume:
    arr, header = read_array(path, kind="volume")
    return OctVolume(
        data=arr.astype(np.float64),
        pitch=tuple(header["pitch_um"]),
        seed=header.get("seed"),
        noise_floor=float(header.get("noise_floor", 0.0)),
    )


def save_mask(path, mask: np.ndarray, kind: str = "mask", extra: dict | None = None) -> None:
    write_array(path, mask.astype(np.uint8), kind=kind, extra=extra, dtype="uint8")


def load_mask(path, kind: str = "mask") -> tuple[np.ndarray, dict]:
    arr, header = read_array(path, kind=kind)
    return arr.astype(bool), header


def write_json(path, obj) -> None:
    atomic_write_bytes(path, canonical_json(obj) + b"\n")


def read_json(path):
    return json.loads(Path(path).read_text())
