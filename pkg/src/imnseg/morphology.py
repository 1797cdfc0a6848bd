"""Binary morphology: Zhang-Suen thinning, disc dilation, component labelling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

__all__ = [
    "ComponentLabeling",
    "zhang_suen_thin",
    "disc_offsets",
    "dilate_disc",
    "connected_components",
    "count_components",
]

# neighbour offsets P2..P9: N, NE, E, SE, S, SW, W, NW
_NBR = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


def _neighbours(p: np.ndarray) -> list[np.ndarray]:
    """P2..P9 planes for the interior of a zero-framed array."""
    h, w = p.shape[0] - 2, p.shape[1] - 2
    return [p[1 + dy:1 + dy + h, 1 + dx:1 + dx + w] for dy, dx in _NBR]


def _candidates(p: np.ndarray, first: bool) -> np.ndarray:
    n = _neighbours(p)
    nb = [v.astype(np.uint8) for v in n]
    b = sum(nb)
    a = sum(((nb[i] == 0) & (nb[(i + 1) % 8] == 1)).astype(np.uint8) for i in range(8))
    p2, _, p4, _, p6, _, p8, _ = n
    if first:
        c3 = ~(p2 & p4 & p6)
        c4 = ~(p4 & p6 & p8)
    else:
        c3 = ~(p2 & p4 & p8)
        c4 = ~(p2 & p6 & p8)
    core = p[1:-1, 1:-1]
    return core & (b >= 2) & (b <= 6) & (a == 1) & c3 & c4


_EIGHT = ndimage.generate_binary_structure(2, 2)


def _removable(p: np.ndarray, y: int, x: int) -> bool:
    """Thinning deletability test (2 <= B <= 6, A == 1) on framed coords."""
    vals = [bool(p[y + dy, x + dx]) for dy, dx in _NBR]
    b = sum(vals)
    if b < 2 or b > 6:
        return False
    return sum(1 for i in range(8) if not vals[i] and vals[(i + 1) % 8]) == 1


def _simple(p: np.ndarray, y: int, x: int) -> bool:
    """Yokoi 8-connectivity number equals 1 (deleting keeps topology)."""
    # x1..x8 counter-clockwise from east: E, NE, N, NW, W, SW, S, SE
    ring = [p[y, x + 1], p[y - 1, x + 1], p[y - 1, x], p[y - 1, x - 1],
            p[y, x - 1], p[y + 1, x - 1], p[y + 1, x], p[y + 1, x + 1]]
    inv = [0 if v else 1 for v in ring]
    return sum(inv[k] - inv[k] * inv[(k + 1) % 8] * inv[(k + 2) % 8] for k in (0, 2, 4, 6)) == 1


def _subiteration(p: np.ndarray, first: bool) -> bool:
    cand = _candidates(p, first)
    if not cand.any():
        return False
    core = p[1:-1, 1:-1]
    before, _ = ndimage.label(core, structure=_EIGHT)
    after_mask = core & ~cand
    after, n_after = ndimage.label(after_mask, structure=_EIGHT)
    # how many surviving components each original component turns into
    if n_after:
        reps = ndimage.labeled_comprehension(before, after, np.arange(1, n_after + 1), lambda v: v[0], np.int64, 0)
        pieces = np.bincount(reps, minlength=before.max() + 1)
    else:
        pieces = np.zeros(before.max() + 1, dtype=np.int64)
    broken = np.flatnonzero(pieces != 1)
    broken = broken[broken > 0]
    if broken.size == 0:
        core[cand] = False
        return True
    risky = cand & np.isin(before, broken)
    core[cand & ~risky] = False
    changed = bool((cand & ~risky).any())
    for y, x in zip(*np.nonzero(risky)):
        if _removable(p, y + 1, x + 1):
            p[y + 1, x + 1] = False
            changed = True
    return changed


def _block_members(core: np.ndarray) -> np.ndarray:
    block = core[:-1, :-1] & core[1:, :-1] & core[:-1, 1:] & core[1:, 1:]
    members = np.zeros_like(core)
    for dy in (0, 1):
        for dx in (0, 1):
            members[dy:dy + block.shape[0], dx:dx + block.shape[1]] |= block
    return members


def _in_block(p: np.ndarray, y: int, x: int) -> bool:
    return any(p[y + a, x + b] and p[y + a, x] and p[y, x + b] for a in (-1, 1) for b in (-1, 1))


def _keeps_components(p: np.ndarray, y: int, x: int) -> bool:
    """Deleting (y, x) leaves its 8-connected component in one piece."""
    labels, _ = ndimage.label(p, structure=_EIGHT)
    comp = labels == labels[y, x]
    comp[y, x] = False
    return ndimage.label(comp, structure=_EIGHT)[1] == 1


def _break_blocks(p: np.ndarray) -> bool:
    """Remove pixels from remaining 2x2 all-set blocks.

    Topologically simple pixels go first; when none is left, a block pixel
    whose removal keeps its component connected (it only opens or closes a
    hole) is removed.
    """
    changed = False
    while True:
        members = _block_members(p[1:-1, 1:-1])
        if not members.any():
            return changed
        removed = False
        for y, x in zip(*np.nonzero(members)):
            if _in_block(p, y + 1, x + 1) and _simple(p, y + 1, x + 1):
                p[y + 1, x + 1] = False
                removed = changed = True
        if removed:
            continue
        for y, x in zip(*np.nonzero(members)):
            if _keeps_components(p, y + 1, x + 1):
                p[y + 1, x + 1] = False
                removed = changed = True
                break
        if not removed:
            return changed


def zhang_suen_thin(mask) -> np.ndarray:
    """Thin a binary mask to a 1-pixel skeleton (Zhang-Suen).

    A pixel is removed in subiteration 1 when it has 2..6 set neighbours,
    exactly one 0->1 transition around its 8-neighbourhood, and
    ``P2*P4*P6 == 0`` and ``P4*P6*P8 == 0``; subiteration 2 uses
    ``P2*P4*P8 == 0`` and ``P2*P6*P8 == 0``. Passes repeat until nothing is
    removed. Pixels outside the image count as background.

    Two guards keep the result topologically faithful and 1 pixel thin:

    * if removing all candidates at once would erase or split an
      8-connected component (2x2 squares, 2-pixel-thick diagonals), that
      component's candidates are removed one at a time in raster order,
      each only while still removable;
    * 2x2 blocks left at junctions are broken by removing a pixel whose
      deletion keeps its component connected (topologically simple pixels
      first), after which thinning resumes. A block whose four pixels are
      all cut points (e.g. four diagonal branches meeting) is kept, since
      removing any of them would disconnect a branch.

    Wherever neither guard fires the output is exactly the classic result.
    """
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2:
        raise ValueError("mask must be 2-D")
    p = np.pad(m, 1)
    while True:
        while True:
            changed = _subiteration(p, first=True)
            changed |= _subiteration(p, first=False)
            if not changed:
                break
        if not _break_blocks(p):
            break
    return p[1:-1, 1:-1].copy()


def disc_offsets(radius: float) -> list[tuple[int, int]]:
    """Lattice offsets (dy, dx) with dy**2 + dx**2 <= radius**2."""
    r = int(np.floor(radius))
    r2 = radius * radius
    return [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if dy * dy + dx * dx <= r2]


def dilate_disc(mask, radius: float) -> np.ndarray:
    """Dilate by the Euclidean disc of the given radius (lattice points)."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    m = np.asarray(mask, dtype=bool)
    r = int(np.floor(radius))
    if r == 0 or not m.any():
        return m.copy()
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    footprint = yy * yy + xx * xx <= radius * radius
    return ndimage.binary_dilation(m, structure=footprint)


@dataclass(frozen=True)
class ComponentLabeling:
    labels: np.ndarray
    count: int
    connectivity: int


def connected_components(mask, connectivity: int = 8) -> ComponentLabeling:
    """Label components; labels are numbered by first pixel in row-major order."""
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    m = np.asarray(mask, dtype=bool)
    structure = ndimage.generate_binary_structure(2, 1 if connectivity == 4 else 2)
    labels, count = ndimage.label(m, structure=structure)
    return ComponentLabeling(labels.astype(np.int64), int(count), connectivity)


def count_components(mask, connectivity: int = 8) -> int:
    return connected_components(mask, connectivity).count
