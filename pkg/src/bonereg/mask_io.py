"""Binary mask stack IO: a JSON manifest plus 8-bit binary PGM slice files.

Any nonzero pixel counts as bone. Slices are listed in the manifest in
ascending z order and are never reordered on load.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MODALITIES = ("CT", "MR")


@dataclass(frozen=True)
class StackManifest:
    modality: str
    pixel_spacing_mm: float
    slice_spacing_mm: float
    slice_files: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "slice_files", tuple(self.slice_files))
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        if not (self.pixel_spacing_mm > 0 and self.slice_spacing_mm > 0):
            raise ValueError("pixel and slice spacing must be positive")
        if len(self.slice_files) == 0:
            raise ValueError("manifest lists no slices")
        if len(set(self.slice_files)) != len(self.slice_files):
            raise ValueError("manifest lists duplicate slice files")


@dataclass(frozen=True, eq=False)
class SliceMask:
    """One binary slice: bits[row, col] with 1 = bone."""

    bits: np.ndarray
    z_index: int

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise ValueError("mask bits must be 2D")
        if not np.isin(bits, (0, 1)).all():
            raise ValueError("mask bits must contain only 0/1 values")
        object.__setattr__(self, "bits", bits.astype(np.uint8))
        if self.z_index < 0:
            raise ValueError("z_index must be non-negative")

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def __eq__(self, other):
        if not isinstance(other, SliceMask):
            return NotImplemented
        return self.z_index == other.z_index and np.array_equal(self.bits, other.bits)


@dataclass(frozen=True, eq=False)
class SliceStack:
    manifest: StackManifest
    slices: tuple[SliceMask, ...]

    def __post_init__(self):
        object.__setattr__(self, "slices", tuple(self.slices))
        if len(self.slices) != len(self.manifest.slice_files):
            raise ValueError("slice count does not match manifest")
        shape = self.slices[0].bits.shape
        for sl in self.slices:
            if sl.bits.shape != shape:
                raise ValueError("all slices must share the same dimensions")
        zs = [sl.z_index for sl in self.slices]
        if any(b <= a for a, b in zip(zs, zs[1:])):
            raise ValueError("slices must be ordered by strictly increasing z_index")

    def __len__(self) -> int:
        return len(self.slices)

    def __eq__(self, other):
        if not isinstance(other, SliceStack):
            return NotImplemented
        return self.manifest == other.manifest and self.slices == other.slices

    def as_array(self) -> np.ndarray:
        """(nz, height, width) uint8 view of all slice bits."""
        return np.stack([sl.bits for sl in self.slices])


def _read_pgm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if raw[:2] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    pos = 2
    header = []
    while len(header) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        header.append(int(raw[start:pos]))
    pos += 1  # single whitespace byte terminating the header
    width, height, maxval = header
    if not 0 < maxval < 256:
        raise ValueError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    need = width * height
    data = raw[pos:pos + need]
    if len(data) != need:
        raise ValueError(f"{path}: pixel data truncated")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width)


def _write_pgm(path: Path, gray: np.ndarray) -> None:
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.astype(np.uint8).tobytes())


def load_stack(manifest_path) -> SliceStack:
    """Load and validate a mask stack from its manifest file.

    Pixel values above zero map to 1. Slice order follows the manifest.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    doc = json.loads(manifest_path.read_text())
    try:
        manifest = StackManifest(
            modality=doc["modality"],
            pixel_spacing_mm=float(doc["pixel_spacing_mm"]),
            slice_spacing_mm=float(doc["slice_spacing_mm"]),
            slice_files=tuple(doc["slices"]),
        )
    except KeyError as exc:
        raise ValueError(f"{manifest_path}: manifest is missing key {exc}") from None
    base = manifest_path.parent
    slices = []
    shape = None
    for z, name in enumerate(manifest.slice_files):
        p = base / name
        if not p.is_file():
            raise FileNotFoundError(f"slice file not found: {p}")
        gray = _read_pgm(p)
        if shape is None:
            shape = gray.shape
        elif gray.shape != shape:
            raise ValueError(
                f"{p}: slice is {gray.shape[1]}x{gray.shape[0]}, "
                f"expected {shape[1]}x{shape[0]}")
        slices.append(SliceMask(bits=(gray > 0).astype(np.uint8), z_index=z))
    return SliceStack(manifest, tuple(slices))


def write_stack(stack: SliceStack, out_dir) -> Path:
    """Write manifest.json plus one PGM per slice; returns the manifest path.

    Loading the returned path reproduces the stack bit-exactly.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, sl in zip(stack.manifest.slice_files, stack.slices):
        _write_pgm(out_dir / name, sl.bits * 255)
    doc = {
        "modality": stack.manifest.modality,
        "pixel_spacing_mm": stack.manifest.pixel_spacing_mm,
        "slice_spacing_mm": stack.manifest.slice_spacing_mm,
        "slices": list(stack.manifest.slice_files),
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(doc, indent=2) + "\n")
    return manifest_path
