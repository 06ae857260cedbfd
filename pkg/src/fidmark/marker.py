"""Marker ID codebook, Manchester ring codec, and bitmap rendering.

The marker is a white inner disc, a ring of Manchester-encoded "teeth"
(one data bit = two adjacent arc cells of opposite color), and an outer
black ring on a white background. IDs are rotation-invariant: an ID is
the lexicographically minimal cyclic rotation of its bit string.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class MarkerError(ValueError):
    pass


# April Tag family statistics, recorded for reports only (no detection).
@dataclass(frozen=True)
class AprilFamilyStats:
    name: str
    defined_squares: int
    data_bits: int
    codebook_size: int
    memory_class: str


APRIL_TAG_FAMILIES = (
    AprilFamilyStats("tagCustom48h12", defined_squares=96, data_bits=48,
                     codebook_size=42211, memory_class=">1 GB hash table"),
    AprilFamilyStats("tagCustom24h10", defined_squares=48, data_bits=24,
                     codebook_size=18, memory_class="small hash table"),
)


@dataclass(frozen=True)
class MarkerSpec:
    """Geometry and identity of one circular marker.

    Radius fractions are relative to the outer (black) radius: the white
    disc ends at ``inner_frac``, the teeth band spans
    [``inner_frac``, ``teeth_frac``], black ring fills the rest.
    """

    id: int
    id_bits: int = 8
    diameter: float = 0.3          # outer diameter, meters
    inner_frac: float = 0.42
    teeth_frac: float = 0.75

    def __post_init__(self):
        if not 1 <= self.id_bits <= 32:
            raise MarkerError("id_bits must be in [1, 32]")
        canon, _ = canonicalize_necklace(self.id, self.id_bits)
        if canon != self.id:
            raise MarkerError(
                f"id {self.id} is not canonical; use {canon} instead")
        if not 0 < self.inner_frac < self.teeth_frac < 1.0:
            raise MarkerError("require 0 < inner_frac < teeth_frac < 1")

    @property
    def radius(self) -> float:
        return self.diameter / 2.0

    @property
    def mid_teeth_frac(self) -> float:
        return (self.inner_frac + self.teeth_frac) / 2.0

    def white_area_fraction(self) -> float:
        """Fraction of the marker disc that floods white from the center.

        The white inner segment is the disc plus the white half of the
        teeth band (Manchester guarantees exactly half the cells are white).
        """
        return self.inner_frac**2 + 0.5 * (self.teeth_frac**2
                                           - self.inner_frac**2)


@dataclass(frozen=True)
class ToothPattern:
    """2*id_bits boolean arc cells (True = black) tiling [0, 2pi)."""

    cells: tuple
    id_bits: int

    def __post_init__(self):
        if len(self.cells) != 2 * self.id_bits:
            raise MarkerError("pattern must have 2*id_bits cells")
        for i in range(self.id_bits):
            if self.cells[2 * i] == self.cells[2 * i + 1]:
                raise MarkerError("Manchester violation in pattern")

    @property
    def cell_width(self) -> float:
        return 2 * math.pi / len(self.cells)

    def cell_angles(self) -> list:
        """(start, end) angle of each cell in radians."""
        w = self.cell_width
        return [(i * w, (i + 1) * w) for i in range(len(self.cells))]

    def color_at(self, angle: float) -> bool:
        """True (black) or False (white) at marker-frame angle."""
        idx = int((angle % (2 * math.pi)) / self.cell_width) % len(self.cells)
        return self.cells[idx]

    def cells_array(self) -> np.ndarray:
        return np.array(self.cells, dtype=bool)


def _rotations(bits: int, n: int):
    mask = (1 << n) - 1
    for k in range(n):
        yield ((bits << k) | (bits >> (n - k))) & mask


def canonicalize_necklace(bits, id_bits: int | None = None) -> tuple[int, int]:
    """Canonical (minimal-rotation) id and the left-rotation count applied.

    ``bits`` may be an int (then ``id_bits`` is required) or a '0'/'1'
    string whose length sets the bit count.
    """
    if isinstance(bits, str):
        id_bits = len(bits)
        value = int(bits, 2) if bits else 0
    else:
        if id_bits is None:
            raise MarkerError("id_bits required for integer input")
        value = int(bits)
    if not 0 <= value < (1 << id_bits):
        raise MarkerError(f"id {value} does not fit in {id_bits} bits")
    best, offset = value, 0
    for k, rot in enumerate(_rotations(value, id_bits)):
        if rot < best:
            best, offset = rot, k
    return best, offset


def enumerate_necklaces(id_bits: int) -> list[int]:
    """All canonical ids for the given bit count, by exhaustive rotation."""
    if id_bits > 20:
        raise MarkerError("exhaustive enumeration limited to id_bits <= 20")
    seen = set()
    out = []
    for v in range(1 << id_bits):
        canon, _ = canonicalize_necklace(v, id_bits)
        if canon not in seen:
            seen.add(canon)
            out.append(canon)
    return sorted(out)


def _id_to_bits(id_: int, id_bits: int) -> list:
    return [(id_ >> (id_bits - 1 - i)) & 1 for i in range(id_bits)]


def _bits_to_id(bits) -> int:
    v = 0
    for b in bits:
        v = (v << 1) | int(b)
    return v


def encode_id(id_: int, id_bits: int) -> ToothPattern:
    """Encode a canonical id into its Manchester tooth pattern.

    Bit b becomes the cell pair (b, not b), True meaning black, so bit 1
    is black-then-white and bit 0 white-then-black going counterclockwise
    from the pattern phase origin.
    """
    canon, _ = canonicalize_necklace(id_, id_bits)
    if canon != id_:
        raise MarkerError(f"id {id_} is not canonical; use {canon} instead")
    cells = []
    for b in _id_to_bits(id_, id_bits):
        cells.extend([bool(b), not bool(b)])
    return ToothPattern(cells=tuple(cells), id_bits=id_bits)


def decode_ring(samples, id_bits: int) -> tuple[int, float] | None:
    """Decode a ring of boolean samples (True = black) to a canonical id.

    Recovers cell boundaries by run-length analysis, reads one color per
    cell, checks the Manchester pairing, and canonicalizes. Returns
    (canonical id, phase) where phase is the angular offset of the start
    of bit 0 of the canonical form, or None when the ring is not a valid
    Manchester codeword.

    An all-alternating ring is a degenerate codeword shared by the
    all-zeros and all-ones ids (their rings are rotations of each other);
    it decodes to the lexicographically smaller canonical id.
    """
    s = np.asarray(samples, dtype=bool)
    n_samples = s.size
    n_cells = 2 * id_bits
    if n_samples < 2 * n_cells:
        return None
    # Cyclic majority filter to suppress isolated sample flips.
    win = 7
    if n_samples > 4 * win:
        padded = np.concatenate([s[-(win // 2):], s, s[:win // 2]]).astype(int)
        s = np.convolve(padded, np.ones(win, dtype=int), mode="valid") > win // 2
    trans = np.nonzero(s != np.roll(s, -1))[0]  # transition after index i
    if trans.size == 0 or trans.size > n_cells:
        return None
    w = n_samples / n_cells
    # Every transition should sit near a cell boundary: estimate the common
    # phase of boundaries as a circular mean of transition offsets mod w.
    frac = ((trans + 1) % w) / w * 2 * math.pi
    mean = math.atan2(float(np.sin(frac).sum()), float(np.cos(frac).sum()))
    phase_samples = (mean / (2 * math.pi)) * w % w
    # Read one color per cell at cell centers.
    centers = (phase_samples + (np.arange(n_cells) + 0.5) * w) % n_samples
    cells = s[np.round(centers).astype(int) % n_samples]
    # Reject rings whose runs are not multiples of a cell: re-check that
    # every transition is close to a predicted boundary.
    bounds = (phase_samples + np.arange(n_cells) * w) % n_samples
    d = np.abs(((trans + 1)[:, None] - bounds[None, :] + n_samples / 2)
               % n_samples - n_samples / 2)
    if np.any(d.min(axis=1) > 0.35 * w):
        return None
    candidates = []
    for offset in (0, 1):
        rolled = np.roll(cells, -offset)
        pairs = rolled.reshape(id_bits, 2)
        if np.any(pairs[:, 0] == pairs[:, 1]):
            continue
        bits = pairs[:, 0].astype(int)
        canon, rot = canonicalize_necklace(_bits_to_id(bits), id_bits)
        # Angular position of bit 0 of the canonical form.
        start_cell = (offset + 2 * rot) % n_cells
        phase = ((phase_samples + start_cell * w) % n_samples) \
            / n_samples * 2 * math.pi
        candidates.append((canon, phase))
    if not candidates:
        return None
    return min(candidates, key=lambda c: c[0])


def render_marker_bitmap(spec: MarkerSpec, size: int,
                         supersample: int = 4) -> np.ndarray:
    """Antialiased grayscale bitmap of the marker, uint8, white background.

    The marker fills 90% of the image; deterministic for fixed inputs.
    """
    if size < 64:
        raise MarkerError("bitmap size must be >= 64 px")
    pattern = encode_id(spec.id, spec.id_bits)
    n = size * supersample
    c = (n - 1) / 2.0
    radius = 0.45 * n
    yy, xx = np.mgrid[0:n, 0:n]
    dx = (xx - c)
    dy = (yy - c)
    r = np.hypot(dx, dy) / radius
    # Image rows grow downward; negate dy so the drawn ring matches the
    # marker-plane convention (y up) seen by a camera facing the print.
    ang = np.arctan2(-dy, dx) % (2 * math.pi)
    cells = pattern.cells_array()
    idx = (ang / pattern.cell_width).astype(int) % cells.size
    tooth_black = cells[idx]
    img = np.full((n, n), 255, dtype=np.uint8)
    black = (r <= 1.0) & ((r >= spec.teeth_frac)
                          | ((r >= spec.inner_frac) & tooth_black))
    img[black] = 0
    if supersample > 1:
        img = img.reshape(size, supersample, size, supersample) \
                 .mean(axis=(1, 3))
    return np.round(img).astype(np.uint8)


def marker_colors(points: np.ndarray, spec: MarkerSpec,
                  pattern: ToothPattern | None = None) -> np.ndarray:
    """Color (0..1, 1 = white) of marker-plane points, shape (n, 2) meters.

    Points outside the marker disc are background white.
    """
    if pattern is None:
        pattern = encode_id(spec.id, spec.id_bits)
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    r = np.hypot(pts[:, 0], pts[:, 1]) / spec.radius
    ang = np.arctan2(pts[:, 1], pts[:, 0]) % (2 * math.pi)
    cells = pattern.cells_array()
    idx = (ang / pattern.cell_width).astype(int) % cells.size
    black = (r <= 1.0) & ((r >= spec.teeth_frac)
                          | ((r >= spec.inner_frac) & cells[idx]))
    return np.where(black, 0.0, 1.0)
