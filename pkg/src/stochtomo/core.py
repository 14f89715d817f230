"""Array containers, geometries, deterministic reductions, RNG, and file IO.

Everything downstream (projectors, objective functions, solvers) works on the
two containers defined here, ``Image`` and ``Sinogram``.  Both hold dense
float64 arrays in row-major order together with the geometry they live on.

Reductions (``inner``, ``norm2``) use numpy's pairwise summation on the
raveled C-contiguous array, so the accumulation order is a pure function of
the array length.  Results are bit-identical across runs.

Random numbers come from a counter-based generator (SplitMix64): the k-th
output is a pure function of ``(seed, k)``, so streams can be serialized,
restored, and reproduced on any platform.  Library RNGs are deliberately not
used anywhere in this package.

SplitMix64 test vectors (seed=42, positions 0..3), raw 64-bit outputs:

    0xbdd732262feb6e95, 0x28efe333b266f103, 0x47526757130f9f52, 0x581ce1ff0e4ae394

and as uniforms in [0, 1):

    0.7415648787718233, 0.1599103928769201, 0.27860113025513866, 0.34419071652363753
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

__all__ = [
    "ImageGeometry",
    "Image",
    "AcquisitionGeometry",
    "Sinogram",
    "RngState",
    "rng_next_uniform",
    "rng_uniforms",
    "derive_seed",
    "inner",
    "norm2",
    "project_nonneg",
    "save_array",
    "load_array",
]


# ---------------------------------------------------------------------------
# Geometries and containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ImageGeometry:
    """Pixel grid for reconstruction images, centered on the rotation axis."""

    rows: int
    cols: int
    pixel_size: float = 1.0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("rows and cols must be >= 1")
        if not self.pixel_size > 0:
            raise ValueError("pixel_size must be > 0")

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def num_pixels(self):
        return self.rows * self.cols


@dataclass(frozen=True)
class AcquisitionGeometry:
    """Parallel-beam sinogram layout: view angles and a 1D detector.

    Detector bins are symmetric around the rotation axis with the given
    spacing; angles must be strictly increasing in [0, pi).
    """

    num_views: int
    num_bins: int
    view_angles: tuple
    detector_spacing: float = 1.0

    def __post_init__(self):
        if self.num_views < 1 or self.num_bins < 1:
            raise ValueError("num_views and num_bins must be >= 1")
        if not self.detector_spacing > 0:
            raise ValueError("detector_spacing must be > 0")
        angles = np.asarray(self.view_angles, dtype=np.float64)
        if angles.shape != (self.num_views,):
            raise ValueError("view_angles length must equal num_views")
        if np.any(angles < 0.0) or np.any(angles >= math.pi):
            raise ValueError("view_angles must lie in [0, pi)")
        if self.num_views > 1 and np.any(np.diff(angles) <= 0.0):
            raise ValueError("view_angles must be strictly increasing")
        object.__setattr__(self, "view_angles", tuple(float(a) for a in angles))

    @classmethod
    def equispaced(cls, num_views, num_bins, detector_spacing=1.0):
        """Angles k*pi/num_views for k = 0..num_views-1."""
        angles = tuple(k * math.pi / num_views for k in range(num_views))
        return cls(num_views, num_bins, angles, detector_spacing)

    @property
    def shape(self):
        return (self.num_views, self.num_bins)

    def bin_offsets(self):
        """Signed detector-bin center offsets from the rotation axis."""
        b = np.arange(self.num_bins, dtype=np.float64)
        return (b - (self.num_bins - 1) / 2.0) * self.detector_spacing


def _as_float64(values, shape, what):
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.size != shape[0] * shape[1]:
        raise ValueError(f"{what}: expected {shape[0] * shape[1]} values, got {arr.size}")
    arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what}: values must be finite")
    return arr


@dataclass
class Image:
    """Dense image on an ``ImageGeometry``; values stored (rows, cols) row-major."""

    geometry: ImageGeometry
    values: np.ndarray

    def __post_init__(self):
        self.values = _as_float64(self.values, self.geometry.shape, "Image")

    @classmethod
    def zeros(cls, geometry):
        return cls(geometry, np.zeros(geometry.shape))

    @classmethod
    def full(cls, geometry, value):
        return cls(geometry, np.full(geometry.shape, float(value)))

    def copy(self):
        return Image(self.geometry, self.values.copy())

    @property
    def shape(self):
        return self.values.shape


@dataclass
class Sinogram:
    """Projection data for a subset of views; values stored (len(view_ids), num_bins)."""

    geometry: AcquisitionGeometry
    view_ids: tuple
    values: np.ndarray

    def __post_init__(self):
        ids = tuple(int(v) for v in self.view_ids)
        if len(set(ids)) != len(ids):
            raise ValueError("view_ids must be distinct")
        if any(v < 0 or v >= self.geometry.num_views for v in ids):
            raise ValueError("view_ids out of range")
        self.view_ids = ids
        self.values = _as_float64(
            self.values, (len(ids), self.geometry.num_bins), "Sinogram"
        )

    @classmethod
    def zeros(cls, geometry, view_ids=None):
        ids = tuple(range(geometry.num_views)) if view_ids is None else tuple(view_ids)
        return cls(geometry, ids, np.zeros((len(ids), geometry.num_bins)))

    def copy(self):
        return Sinogram(self.geometry, self.view_ids, self.values.copy())

    @property
    def shape(self):
        return self.values.shape


# ---------------------------------------------------------------------------
# Deterministic reductions
# ---------------------------------------------------------------------------

def _values_of(u):
    if isinstance(u, (Image, Sinogram)):
        return u.values
    return np.asarray(u, dtype=np.float64)


def inner(u, v):
    """Euclidean inner product with a fixed (pairwise) accumulation order.

    Raises on shape mismatch.  Accepts Image, Sinogram, or plain arrays.
    """
    a = _values_of(u)
    b = _values_of(v)
    if a.shape != b.shape:
        raise ValueError("incompatible shapes")
    prod = np.multiply(a, b).ravel()
    return float(np.add.reduce(prod))


def norm2(u):
    """Euclidean norm, ``sqrt(inner(u, u))``."""
    a = _values_of(u)
    return math.sqrt(inner(a, a))


def project_nonneg(u):
    """Entrywise projection onto the nonnegative orthant."""
    if isinstance(u, Image):
        return Image(u.geometry, np.maximum(u.values, 0.0))
    return np.maximum(_values_of(u), 0.0)


# ---------------------------------------------------------------------------
# Counter-based RNG (SplitMix64)
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_INV53 = 1.0 / (1 << 53)


def _mix64(z):
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass(frozen=True)
class RngState:
    """Immutable RNG state: output k is a pure function of (seed, position + k)."""

    seed: int
    position: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "position", int(self.position))

    def to_dict(self):
        return {"seed": self.seed, "position": self.position}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["seed"]), int(d["position"]))


def _raw_output(seed, position):
    return _mix64((seed + (position + 1) * _GOLDEN) & _MASK64)


def rng_next_uniform(state):
    """Draw one uniform in [0, 1); returns ``(value, advanced_state)``."""
    u = (_raw_output(state.seed, state.position) >> 11) * _INV53
    return u, replace(state, position=state.position + 1)


def rng_uniforms(state, m):
    """Draw ``m`` uniforms at once (vectorized); returns ``(array, advanced_state)``."""
    pos = np.arange(state.position + 1, state.position + m + 1, dtype=np.uint64)
    z = (np.uint64(state.seed) + pos * np.uint64(_GOLDEN))
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    u = (z >> np.uint64(11)).astype(np.float64) * _INV53
    return u, replace(state, position=state.position + m)


def derive_seed(seed, label):
    """Stable 64-bit sub-seed for a named stream (pure function of inputs)."""
    h = int(seed) & _MASK64
    for byte in str(label).encode("utf-8"):
        h = _mix64(h ^ (byte * _GOLDEN))
    return h


class RandomStream:
    """Single-owner mutable wrapper around an ``RngState``."""

    def __init__(self, seed, position=0):
        if isinstance(seed, RngState):
            self.state = seed
        else:
            self.state = RngState(seed, position)

    def uniform(self):
        u, self.state = rng_next_uniform(self.state)
        return u

    def uniforms(self, m):
        u, self.state = rng_uniforms(self.state, m)
        return u


# ---------------------------------------------------------------------------
# File IO: raw little-endian float64 blob + JSON sidecar
# ---------------------------------------------------------------------------

def _paths(path):
    p = Path(path)
    if p.suffix == ".raw":
        p = p.with_suffix("")
    return p.with_suffix(".raw"), p.with_suffix(".json")


def save_array(path, obj, provenance=None):
    """Write a two-file pair ``<stem>.raw`` (little-endian float64) + ``<stem>.json``.

    Round-trips bit-exactly.  ``provenance`` (a JSON-serializable dict) is
    stored under the ``"provenance"`` key of the sidecar.
    """
    raw_path, json_path = _paths(path)
    if isinstance(obj, Image):
        header = {
            "kind": "image",
            "rows": obj.geometry.rows,
            "cols": obj.geometry.cols,
            "pixel_size": obj.geometry.pixel_size,
        }
    elif isinstance(obj, Sinogram):
        header = {
            "kind": "sinogram",
            "num_views": obj.geometry.num_views,
            "num_bins": obj.geometry.num_bins,
            "view_angles": list(obj.geometry.view_angles),
            "detector_spacing": obj.geometry.detector_spacing,
            "view_ids": list(obj.view_ids),
        }
    else:
        raise TypeError("save_array expects an Image or Sinogram")
    if provenance is not None:
        header["provenance"] = provenance
    blob = obj.values.astype("<f8", copy=False).tobytes(order="C")
    raw_path.write_bytes(blob)
    json_path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return raw_path, json_path


def load_array(path):
    """Read back a pair written by :func:`save_array`; returns (object, provenance)."""
    raw_path, json_path = _paths(path)
    header = json.loads(json_path.read_text())
    values = np.frombuffer(raw_path.read_bytes(), dtype="<f8").astype(np.float64)
    provenance = header.get("provenance")
    if header["kind"] == "image":
        geom = ImageGeometry(header["rows"], header["cols"], header["pixel_size"])
        return Image(geom, values), provenance
    if header["kind"] == "sinogram":
        geom = AcquisitionGeometry(
            int(header["num_views"]),
            int(header["num_bins"]),
            tuple(header["view_angles"]),
            float(header["detector_spacing"]),
        )
        return Sinogram(geom, tuple(header["view_ids"]), values), provenance
    raise ValueError(f"unknown array kind {header['kind']!r}")
