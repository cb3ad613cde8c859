"""Thermal frame ingestion, radiometric calibration and fever screening.

Frames arrive as binary portable graymaps (P5, 8 or 16 bit), portable pixmaps
(P6, reduced to luminance), or headerless 16-bit dumps with a one-line text
sidecar ``width height endianness``.  Pixels are kept as raw counts; mapping
to degrees Celsius is linear, ``slope * count + offset``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .errors import ConfigError, DomainError, EmptyROIError, LengthError, ParseError

RAW16_SUFFIXES = (".raw", ".raw16")
PNM_SUFFIXES = (".pgm", ".ppm", ".pnm")
FRAME_SUFFIXES = PNM_SUFFIXES + RAW16_SUFFIXES
SIDECAR_SUFFIX = ".hdr"


@dataclass(frozen=True)
class TempCalibration:
    slope: float
    offset: float

    def __post_init__(self):
        if self.slope == 0 or not math.isfinite(self.slope) or not math.isfinite(self.offset):
            raise DomainError(f"calibration needs finite, non-zero slope: {self}")


@dataclass(frozen=True, eq=False)
class ThermalFrame:
    """Raw counts as a read-only (height, width) uint16 array."""

    id: str
    pixels: np.ndarray
    maxval: int = 255
    calibration: Optional[TempCalibration] = None

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.uint16)
        if px.ndim != 2:
            raise LengthError(f"frame pixels must be 2-D, got shape {px.shape}")
        if not 1 <= self.maxval <= 65535:
            raise DomainError(f"maxval must be in [1, 65535], got {self.maxval}")
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def with_calibration(self, cal: Optional[TempCalibration]) -> "ThermalFrame":
        return replace(self, calibration=cal)


@dataclass(frozen=True)
class PersonTemperature:
    box_index: int
    temperature_c: float
    fever: bool


@dataclass(frozen=True)
class FeverConfig:
    fever_threshold_c: float = 37.5
    statistic: str = "percentile"  # "max" or "percentile"
    percentile: float = 95.0

    def __post_init__(self):
        if not math.isfinite(self.fever_threshold_c):
            raise DomainError("fever threshold must be finite")
        if self.statistic not in ("max", "percentile"):
            raise DomainError(f"statistic must be 'max' or 'percentile', got {self.statistic!r}")
        if not 0 < self.percentile <= 100:
            raise DomainError(f"percentile must be in (0, 100], got {self.percentile}")


# --- portable anymap codec -------------------------------------------------

_WHITESPACE = b" \t\n\r\v\f"


class _HeaderReader:
    def __init__(self, data: bytes, pos: int):
        self.data = data
        self.pos = pos

    def token(self, what: str) -> Tuple[int, int]:
        data, pos = self.data, self.pos
        while pos < len(data):
            ch = data[pos:pos + 1]
            if ch in _WHITESPACE and ch:
                pos += 1
            elif ch == b"#":
                while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                break
        start = pos
        while pos < len(data) and data[pos:pos + 1] not in _WHITESPACE and data[pos:pos + 1] != b"#":
            pos += 1
        text = data[start:pos]
        if not text:
            raise ParseError(f"missing {what} in header", start)
        if not text.isdigit():
            raise ParseError(f"bad {what} {text[:16]!r} in header", start)
        self.pos = pos
        return int(text), start


def _parse_pnm(data: bytes):
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise ParseError(f"unsupported magic {magic!r}, expected P5 or P6", 0)
    reader = _HeaderReader(data, 2)
    width, off = reader.token("width")
    if width < 1:
        raise ParseError("width must be positive", off)
    height, off = reader.token("height")
    if height < 1:
        raise ParseError("height must be positive", off)
    maxval, off = reader.token("maxval")
    if not 1 <= maxval <= 65535:
        raise ParseError(f"maxval {maxval} outside [1, 65535]", off)
    if reader.pos >= len(data) or data[reader.pos:reader.pos + 1] not in _WHITESPACE:
        raise ParseError("header must end with a single whitespace byte", reader.pos)
    start = reader.pos + 1
    channels = 1 if magic == b"P5" else 3
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    expected = width * height * channels * dtype.itemsize
    payload = data[start:start + expected]
    if len(payload) < expected:
        raise LengthError(
            f"{width}x{height} image needs {expected} payload bytes, got {len(payload)}")
    arr = np.frombuffer(payload, dtype=dtype).astype(np.uint32)
    if arr.size and arr.max() > maxval:
        raise ParseError(f"sample value {int(arr.max())} exceeds maxval {maxval}", start)
    return arr.reshape(height, width, channels), maxval


def luminance(rgb: np.ndarray) -> np.ndarray:
    """Integer BT.601 luma of an (H, W, 3) array, rounded half up."""
    rgb = np.asarray(rgb, dtype=np.uint64)
    y = (299 * rgb[..., 0] + 587 * rgb[..., 1] + 114 * rgb[..., 2] + 500) // 1000
    return y.astype(np.uint16)


def load_frame(data: bytes, frame_id: str = "", calibration=None) -> ThermalFrame:
    """Decode a binary PGM or PPM image into a frame of raw counts."""
    arr, maxval = _parse_pnm(bytes(data))
    if arr.shape[2] == 3:
        pixels = luminance(arr)
    else:
        pixels = arr[:, :, 0].astype(np.uint16)
    return ThermalFrame(frame_id, pixels, maxval, calibration)


def parse_sidecar(text: str) -> Tuple[int, int, str]:
    parts = text.split()
    if len(parts) != 3:
        raise ParseError(f"raw16 sidecar must be 'width height endianness', got {text.strip()!r}")
    try:
        width, height = int(parts[0]), int(parts[1])
    except ValueError:
        raise ParseError(f"bad raw16 dimensions in sidecar: {text.strip()!r}") from None
    endian = parts[2].lower()
    if endian in ("little", "le", "<"):
        endian = "little"
    elif endian in ("big", "be", ">"):
        endian = "big"
    else:
        raise ParseError(f"unknown endianness {parts[2]!r} in raw16 sidecar")
    if width < 1 or height < 1:
        raise ParseError(f"raw16 dimensions must be positive, got {width}x{height}")
    return width, height, endian


def load_raw16(data: bytes, sidecar: str, frame_id: str = "", calibration=None) -> ThermalFrame:
    width, height, endian = parse_sidecar(sidecar)
    expected = width * height * 2
    if len(data) < expected:
        raise LengthError(f"{width}x{height} raw16 frame needs {expected} bytes, got {len(data)}")
    dtype = "<u2" if endian == "little" else ">u2"
    pixels = np.frombuffer(bytes(data[:expected]), dtype=dtype).reshape(height, width)
    return ThermalFrame(frame_id, pixels, 65535, calibration)


def write_frame(frame: ThermalFrame) -> bytes:
    """Encode a frame as a binary graymap at its own bit depth."""
    header = f"P5\n{frame.width} {frame.height}\n{frame.maxval}\n".encode("ascii")
    dtype = ">u2" if frame.maxval > 255 else "u1"
    return header + frame.pixels.astype(dtype).tobytes()


def write_raw16(frame: ThermalFrame, endianness: str = "little") -> Tuple[bytes, str]:
    """Encode as headerless 16-bit samples; returns (payload, sidecar text)."""
    dtype = "<u2" if endianness == "little" else ">u2"
    return frame.pixels.astype(dtype).tobytes(), f"{frame.width} {frame.height} {endianness}\n"


def write_ppm(rgb: np.ndarray) -> bytes:
    rgb = np.asarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise LengthError(f"pixmap must be (H, W, 3), got {rgb.shape}")
    h, w = rgb.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes()


def read_ppm(data: bytes) -> np.ndarray:
    arr, maxval = _parse_pnm(bytes(data))
    if arr.shape[2] != 3 or maxval > 255:
        raise ParseError("expected an 8-bit P6 pixmap", 0)
    return arr.astype(np.uint8)


def sidecar_path(path: Union[str, Path]) -> Path:
    return Path(path).with_suffix(SIDECAR_SUFFIX)


def read_frame(path: Union[str, Path], calibration=None) -> ThermalFrame:
    path = Path(path)
    data = path.read_bytes()
    if path.suffix.lower() in RAW16_SUFFIXES:
        side = sidecar_path(path)
        if not side.exists():
            raise ParseError(f"raw16 frame {path.name} has no sidecar {side.name}")
        return load_raw16(data, side.read_text(), path.stem, calibration)
    return load_frame(data, path.stem, calibration)


# --- temperature -----------------------------------------------------------

def to_celsius(raw, cal: Optional[TempCalibration]):
    """Linear count-to-Celsius map; works on scalars and arrays."""
    if cal is None:
        raise ConfigError("no temperature calibration configured", key="thermal.slope")
    if np.ndim(raw) == 0:
        return cal.slope * float(raw) + cal.offset
    return cal.slope * np.asarray(raw, dtype=np.float64) + cal.offset


def roi_bounds(frame: ThermalFrame, box) -> Tuple[int, int, int, int]:
    """Integer pixel bounds (x0, y0, x1, y1), half-open, of ``box`` clipped to the frame."""
    x, y, w, h = box.x, box.y, box.w, box.h
    x0 = max(0, math.floor(x))
    y0 = max(0, math.floor(y))
    x1 = min(frame.width, math.ceil(x + w))
    y1 = min(frame.height, math.ceil(y + h))
    return x0, y0, x1, y1


def nearest_rank(values: np.ndarray, p: float) -> float:
    ordered = np.sort(np.asarray(values, dtype=np.float64).ravel())
    rank = max(1, math.ceil(p / 100.0 * ordered.size))
    return float(ordered[rank - 1])


def person_temperature(frame: ThermalFrame, box, cfg: FeverConfig = FeverConfig(),
                       box_index: int = 0) -> PersonTemperature:
    x0, y0, x1, y1 = roi_bounds(frame, box)
    if x1 <= x0 or y1 <= y0:
        raise EmptyROIError(f"box {box} lies outside the {frame.width}x{frame.height} frame")
    temps = to_celsius(frame.pixels[y0:y1, x0:x1], frame.calibration)
    if cfg.statistic == "max":
        t = float(temps.max())
    else:
        t = nearest_rank(temps, cfg.percentile)
    return PersonTemperature(box_index, t, t >= cfg.fever_threshold_c)


# --- network input ---------------------------------------------------------

def frame_to_tensor(frame: ThermalFrame, size: int = 224) -> np.ndarray:
    """Nearest-neighbour resize to size x size, scale to [0, 1], replicate to 3 channels."""
    rows = np.minimum((np.arange(size) * 2 + 1) * frame.height // (2 * size), frame.height - 1)
    cols = np.minimum((np.arange(size) * 2 + 1) * frame.width // (2 * size), frame.width - 1)
    sampled = frame.pixels[rows[:, None], cols[None, :]].astype(np.float32) / np.float32(frame.maxval)
    out = np.ascontiguousarray(np.broadcast_to(sampled, (3, size, size)), dtype=np.float32)
    out.flags.writeable = False
    return out


def to_display(frame: ThermalFrame) -> np.ndarray:
    """8-bit (H, W) grayscale for rendering."""
    if frame.maxval == 255:
        return frame.pixels.astype(np.uint8)
    px = frame.pixels.astype(np.uint64)
    return ((px * 255 + frame.maxval // 2) // frame.maxval).astype(np.uint8)
