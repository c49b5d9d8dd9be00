"""Uniform masked grids, scalar fields on them, ball families and quadrature.

Every object in the package lives on a :class:`Grid`: a tensor lattice of
cells over a bounding box together with a boolean mask selecting the
domain.  Values are attached to cell centers; outside the mask they are
zero by convention, which is also how functions are extended off the
domain.  Integrals are midpoint sums and balls are discretized as the set
of cells whose centers lie inside them.
"""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import fft as sfft
from scipy import ndimage, signal
from scipy.spatial import ConvexHull, QhullError


class EmptyRegionWarning(UserWarning):
    """An integration region contained no masked cell."""


# --------------------------------------------------------------------------
# shapes: used both as domain masks and as compact sets


@dataclass(frozen=True)
class Box:
    """Axis-aligned box. ``lo``/``hi`` of ``None`` means the whole bounding box."""

    lo: tuple[float, ...] | None = None
    hi: tuple[float, ...] | None = None

    tag = "box"

    @property
    def id(self) -> str:
        if self.lo is None:
            return "box"
        return f"box(lo={_fmt(self.lo)};hi={_fmt(self.hi)})"

    def contains(self, pts: np.ndarray) -> np.ndarray:
        if self.lo is None:
            return np.ones(pts.shape[:-1], dtype=bool)
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        return np.all((pts >= lo) & (pts <= hi), axis=-1)


@dataclass(frozen=True)
class Ball:
    """Ball of given center and radius.

    ``closed`` selects ``|x - c| <= r`` instead of the open inequality.
    """

    center: tuple[float, ...]
    radius: float
    closed: bool = True

    tag = "ball"

    @property
    def id(self) -> str:
        return f"ball(center={_fmt(self.center)};radius={self.radius!r};closed={int(self.closed)})"

    def contains(self, pts: np.ndarray) -> np.ndarray:
        d = np.linalg.norm(pts - np.asarray(self.center, dtype=float), axis=-1)
        return d <= self.radius if self.closed else d < self.radius


@dataclass(frozen=True)
class Annulus:
    center: tuple[float, ...]
    inner: float
    outer: float

    tag = "annulus"

    @property
    def id(self) -> str:
        return f"annulus(center={_fmt(self.center)};inner={self.inner!r};outer={self.outer!r})"

    def contains(self, pts: np.ndarray) -> np.ndarray:
        d = np.linalg.norm(pts - np.asarray(self.center, dtype=float), axis=-1)
        return (d >= self.inner) & (d <= self.outer)


@dataclass(frozen=True)
class Union:
    """Union of shapes (the ``two-balls`` geometry is a union of two balls)."""

    parts: tuple

    @property
    def tag(self) -> str:
        if len(self.parts) == 2 and all(isinstance(s, Ball) for s in self.parts):
            return "two-balls"
        return "union"

    @property
    def id(self) -> str:
        return "union(" + "|".join(s.id for s in self.parts) + ")"

    def contains(self, pts: np.ndarray) -> np.ndarray:
        out = np.zeros(pts.shape[:-1], dtype=bool)
        for s in self.parts:
            out |= s.contains(pts)
        return out


@dataclass(frozen=True, eq=False)
class Bitmap:
    """Explicit cell bitmap; must match the grid shape it is applied to."""

    cells: np.ndarray
    name: str = "bitmap"

    tag = "bitmap"

    @property
    def id(self) -> str:
        return f"bitmap({self.name})"

    def contains(self, pts: np.ndarray) -> np.ndarray:
        if pts.shape[:-1] != self.cells.shape:
            raise ValueError(
                f"bitmap shape {self.cells.shape} does not match grid shape {pts.shape[:-1]}"
            )
        return np.asarray(self.cells, dtype=bool)


def _fmt(v) -> str:
    return ",".join(repr(float(x)) for x in v)


_SHAPE_RE = re.compile(r"^(\w+)\((.*)\)$")


def shape_from_id(text: str):
    """Inverse of ``shape.id`` for the analytic shapes."""
    if text == "box":
        return Box()
    m = _SHAPE_RE.match(text)
    if not m:
        raise ValueError(f"unrecognized shape id {text!r}")
    kind, body = m.groups()
    if kind == "union":
        return Union(tuple(shape_from_id(s) for s in _split_union(body)))
    if kind == "bitmap":
        raise ValueError("bitmap masks cannot be rebuilt from their id; pass the grid explicitly")
    kw = dict(item.split("=", 1) for item in body.split(";"))
    vec = lambda s: tuple(float(x) for x in s.split(","))
    if kind == "box":
        return Box(vec(kw["lo"]), vec(kw["hi"]))
    if kind == "ball":
        return Ball(vec(kw["center"]), float(kw["radius"]), bool(int(kw.get("closed", "1"))))
    if kind == "annulus":
        return Annulus(vec(kw["center"]), float(kw["inner"]), float(kw["outer"]))
    raise ValueError(f"unrecognized shape id {text!r}")


def _split_union(body: str) -> list[str]:
    parts, depth, cur = [], 0, ""
    for ch in body:
        if ch == "|" and depth == 0:
            parts.append(cur)
            cur = ""
            continue
        depth += ch == "("
        depth -= ch == ")"
        cur += ch
    parts.append(cur)
    return parts


# --------------------------------------------------------------------------
# grid


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform cell-centered lattice with a domain mask.

    Cell ``i`` along axis ``k`` has center ``lo[k] + (i + 1/2) * spacing[k]``.
    Instances are immutable and hash by identity, so per-grid caches
    (kernels, stencils) can key on them.
    """

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    shape: tuple[int, ...]
    mask: np.ndarray
    mask_id: str = "box"

    def __post_init__(self):
        n = len(self.shape)
        if n not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {n}")
        if any(s < 4 for s in self.shape):
            raise ValueError(f"every axis needs at least 4 cells, got {self.shape}")
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError("bounding box must have hi > lo on every axis")
        mask = np.array(self.mask, dtype=bool)
        if mask.shape != tuple(self.shape):
            raise ValueError(f"mask shape {mask.shape} != grid shape {self.shape}")
        if not mask.any():
            raise ValueError("empty mask: the domain contains no cell")
        labels, count = ndimage.label(mask)
        if count > 1:
            sizes = np.bincount(labels.ravel())[1:]
            raise ValueError(
                f"disconnected mask: {count} components with cell counts {sorted(sizes.tolist(), reverse=True)}"
            )
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @property
    def n(self) -> int:
        return len(self.shape)

    @cached_property
    def spacing(self) -> np.ndarray:
        return (np.asarray(self.hi) - np.asarray(self.lo)) / np.asarray(self.shape)

    @property
    def h(self) -> float:
        """Largest cell spacing."""
        return float(self.spacing.max())

    @cached_property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def axes(self) -> list[np.ndarray]:
        return [
            self.lo[k] + (np.arange(self.shape[k]) + 0.5) * self.spacing[k] for k in range(self.n)
        ]

    @cached_property
    def centers(self) -> np.ndarray:
        """Cell centers, shape ``(*shape, n)``."""
        return lattice_centers(self.lo, self.hi, self.shape)

    @cached_property
    def points(self) -> np.ndarray:
        """Centers of masked cells, shape ``(m, n)`` in C order."""
        return self.centers[self.mask]

    @cached_property
    def cell_diagonal(self) -> float:
        return float(np.linalg.norm(self.spacing))

    @cached_property
    def bbox_diagonal(self) -> float:
        return float(np.linalg.norm(np.asarray(self.hi) - np.asarray(self.lo)))

    @cached_property
    def diameter(self) -> float:
        """diam(Omega): farthest masked centers plus one cell diagonal, capped at the box diagonal."""
        pts = self.points
        try:
            pts = pts[ConvexHull(pts).vertices]
        except (QhullError, ValueError):
            pass
        if len(pts) > 4000:
            pts = pts[np.linspace(0, len(pts) - 1, 4000).astype(int)]
        d = 0.0
        for chunk in np.array_split(pts, max(1, len(pts) // 512)):
            d = max(d, float(np.max(np.linalg.norm(chunk[:, None, :] - pts[None], axis=-1))))
        return min(d + self.cell_diagonal, self.bbox_diagonal)

    @cached_property
    def measure(self) -> float:
        return float(self.mask.sum()) * self.cell_volume

    def index_of(self, point) -> tuple[int, ...]:
        """Index of the cell whose (half-open) box contains ``point``."""
        x = np.asarray(point, dtype=float)
        idx = np.floor((x - np.asarray(self.lo)) / self.spacing).astype(int)
        if np.any(idx < 0) or np.any(idx >= np.asarray(self.shape)):
            raise ValueError(f"point {x.tolist()} lies outside the bounding box")
        return tuple(int(i) for i in idx)

    def nearest_masked(self, point) -> tuple[int, ...]:
        """Index of the masked cell whose center is closest to ``point``."""
        d = np.linalg.norm(self.points - np.asarray(point, dtype=float), axis=-1)
        flat = np.flatnonzero(self.mask.ravel())[int(np.argmin(d))]
        return tuple(int(i) for i in np.unravel_index(flat, self.shape))

    def boundary_distance(self) -> np.ndarray:
        """Distance from each masked center to the nearest unmasked cell face."""
        padded = np.pad(self.mask, 1, constant_values=False)
        d = ndimage.distance_transform_edt(padded, sampling=self.spacing)
        d = d[(slice(1, -1),) * self.n]
        # edt measures center-to-center; the boundary face sits half a cell closer
        return np.where(self.mask, np.maximum(d - 0.5 * self.spacing.min(), 0.0), 0.0)

    def describe(self) -> dict:
        return {
            "dimension": self.n,
            "shape": list(self.shape),
            "bbox": [[float(l), float(h)] for l, h in zip(self.lo, self.hi)],
            "mask_id": self.mask_id,
            "cells_in_domain": int(self.mask.sum()),
        }


def make_grid(bbox: Sequence[Sequence[float]], resolution, mask_spec="box") -> Grid:
    """Build and validate a masked grid.

    Parameters
    ----------
    bbox : sequence of ``(lo, hi)`` pairs, one per axis.
    resolution : int or sequence of int
        Cells per axis (at least 4).
    mask_spec : ``"box"``, a shape (:class:`Box`, :class:`Ball`,
        :class:`Annulus`, :class:`Union`, :class:`Bitmap`), a boolean array,
        or a path to a binary PGM file.
    """
    lo = tuple(float(a) for a, _ in bbox)
    hi = tuple(float(b) for _, b in bbox)
    n = len(lo)
    shape = (int(resolution),) * n if np.isscalar(resolution) else tuple(int(r) for r in resolution)
    if len(shape) != n:
        raise ValueError("resolution must give one count per axis")
    if any(s < 4 for s in shape):
        raise ValueError(f"every axis needs at least 4 cells, got {shape}")

    if isinstance(mask_spec, str) and mask_spec != "box":
        if mask_spec.lower().endswith(".pgm"):
            mask_spec = Bitmap(read_pgm(mask_spec), name=Path(mask_spec).name)
        else:
            mask_spec = shape_from_id(mask_spec)
    elif isinstance(mask_spec, np.ndarray):
        mask_spec = Bitmap(mask_spec.astype(bool))
    if mask_spec == "box":
        mask_spec = Box()

    mask = mask_spec.contains(lattice_centers(lo, hi, shape))
    return Grid(lo, hi, shape, mask, mask_spec.id)


def lattice_centers(lo, hi, shape) -> np.ndarray:
    axes = [
        lo[k] + (np.arange(shape[k]) + 0.5) * (hi[k] - lo[k]) / shape[k] for k in range(len(shape))
    ]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


# --------------------------------------------------------------------------
# fields


@dataclass(frozen=True, eq=False)
class ScalarField:
    """One real value per cell; cells outside the mask hold exactly zero."""

    grid: Grid
    values: np.ndarray
    zero_outside: bool = field(default=True, repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"value array shape {v.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            bad = np.argwhere(~np.isfinite(v))[0]
            raise ValueError(f"non-finite value at cell {tuple(int(i) for i in bad)}")
        v[~self.grid.mask] = 0.0
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.grid, values)

    def __add__(self, other):
        if isinstance(other, ScalarField):
            _same_grid(self, other)
            return ScalarField(self.grid, self.values + other.values)
        return ScalarField(self.grid, self.values + other)

    def __sub__(self, other):
        if isinstance(other, ScalarField):
            _same_grid(self, other)
            return ScalarField(self.grid, self.values - other.values)
        return ScalarField(self.grid, self.values - other)

    def __mul__(self, c):
        if isinstance(c, ScalarField):
            _same_grid(self, c)
            return ScalarField(self.grid, self.values * c.values)
        return ScalarField(self.grid, self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)

    def abs(self) -> "ScalarField":
        return ScalarField(self.grid, np.abs(self.values))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    @property
    def masked(self) -> np.ndarray:
        return self.values[self.grid.mask]


def _same_grid(a: ScalarField, b: ScalarField):
    if a.grid is not b.grid:
        raise ValueError("fields live on different grids")


def zeros(grid: Grid) -> ScalarField:
    return ScalarField(grid, np.zeros(grid.shape))


def sample(expr: Callable[[np.ndarray], np.ndarray], grid: Grid) -> ScalarField:
    """Evaluate ``expr`` at masked cell centers.

    ``expr`` receives an array of points of shape ``(m, n)`` and returns
    ``m`` values.  Grids laid out symmetrically about a singular point with
    an even cell count never put a center on it; a non-finite value is
    reported with the offending cell index.
    """
    pts = grid.points
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.asarray(expr(pts), dtype=float)
    if vals.shape == ():
        vals = np.full(len(pts), float(vals))
    if vals.shape != (len(pts),):
        raise ValueError(f"expression returned shape {vals.shape}, expected ({len(pts)},)")
    bad = ~np.isfinite(vals)
    if bad.any():
        flat = np.flatnonzero(grid.mask.ravel())[int(np.argmax(bad))]
        idx = tuple(int(i) for i in np.unravel_index(flat, grid.shape))
        center = grid.centers[idx].tolist()
        raise ValueError(f"non-finite value at cell {idx} (center {center})")
    out = np.zeros(grid.shape)
    out[grid.mask] = vals
    return ScalarField(grid, out)


def integrate(f: ScalarField, region=None) -> float:
    """Midpoint sum over masked cells whose centers lie in ``region``.

    ``region`` is ``None`` (the whole domain) or any shape with a
    ``contains`` method, typically an open :class:`Ball`.  An empty
    intersection returns 0 and emits :class:`EmptyRegionWarning`.
    """
    grid = f.grid
    if region is None:
        sel = grid.mask
    else:
        sel = grid.mask & region.contains(grid.centers)
    if not sel.any():
        warnings.warn("integration region does not meet the domain", EmptyRegionWarning, stacklevel=2)
        return 0.0
    return float(f.values[sel].sum() * grid.cell_volume)


# --------------------------------------------------------------------------
# balls


@dataclass(frozen=True, eq=False)
class BallFamily:
    """A finite set of balls B(x, r): every center paired with every radius."""

    grid: Grid
    center_index: np.ndarray
    radii: np.ndarray
    stride: int

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        if r.ndim != 1 or len(r) == 0:
            raise ValueError("radius ladder must be a nonempty 1-D sequence")
        if np.any(r <= 0) or np.any(r > self.grid.diameter * (1 + 1e-12)):
            raise ValueError("every radius must lie in (0, diam]")
        if np.any(np.diff(r) <= 0):
            raise ValueError("radii must be strictly increasing")
        idx = np.asarray(self.center_index, dtype=int).reshape(-1, self.grid.n)
        if len(idx) == 0:
            raise ValueError("family has no centers")
        if not np.all(self.grid.mask[tuple(idx.T)]):
            raise ValueError("every center must be a masked cell")
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "center_index", idx)

    @property
    def dense(self) -> bool:
        return len(self.center_index) == int(self.grid.mask.sum())

    @cached_property
    def centers(self) -> np.ndarray:
        return self.grid.centers[tuple(self.center_index.T)]

    def __len__(self) -> int:
        return len(self.center_index) * len(self.radii)

    def describe(self) -> dict:
        return {
            "stride": int(self.stride),
            "centers": int(len(self.center_index)),
            "radii": [float(r) for r in self.radii],
        }

    @cached_property
    def bank(self) -> "BallSumBank | None":
        return BallSumBank.build(self.grid, self.radii)

    def witness(self, i_center: int, i_radius: int) -> dict:
        return {
            "center": [float(c) for c in self.centers[i_center]],
            "center_index": [int(c) for c in self.center_index[i_center]],
            "radius": float(self.radii[i_radius]),
        }


def radius_ladder(grid: Grid, count: int) -> np.ndarray:
    """Geometric ladder from two cell spacings up to diam(Omega)."""
    return np.geomspace(2 * grid.h, grid.diameter, count)


def ball_family(
    grid: Grid, center_stride: int = 4, radius_count: int = 12, radii=None, anchors=()
) -> BallFamily:
    """Centers on a stride-subsampled lattice of masked cells, radii on a geometric ladder.

    With ``center_stride=1`` the family is dense (every masked cell is a
    center).  ``radii`` overrides the default ladder.  Each point in
    ``anchors`` adds its nearest masked cell as an extra center, which is
    how a known singularity is kept on the center lattice.
    """
    if center_stride < 1:
        raise ValueError("center_stride must be >= 1")
    if radii is None:
        if radius_count < 2:
            raise ValueError("radius_count must be >= 2")
        radii = radius_ladder(grid, radius_count)
    sel = grid.mask.copy()
    if center_stride > 1:
        for k in range(grid.n):
            keep = (np.arange(grid.shape[k]) % center_stride) == center_stride // 2
            sl = [np.newaxis] * grid.n
            sl[k] = slice(None)
            sel &= keep[tuple(sl)]
    for a in anchors:
        sel[grid.nearest_masked(a)] = True
    idx = np.argwhere(sel)
    if len(idx) == 0:
        raise ValueError(f"center_stride {center_stride} leaves no center inside the domain")
    return BallFamily(grid, idx, np.asarray(radii, dtype=float), center_stride)


def ball_stencil(grid: Grid, r: float) -> np.ndarray:
    """Boolean stencil of integer offsets d with |d * spacing| < r, cropped to the grid extent."""
    m = [min(int(math.ceil(r / grid.spacing[k])), grid.shape[k] - 1) for k in range(grid.n)]
    offs = np.meshgrid(*[np.arange(-mk, mk + 1) * grid.spacing[k] for k, mk in enumerate(m)], indexing="ij")
    d2 = sum(o * o for o in offs)
    return d2 < r * r


def ball_sums(values: np.ndarray, grid: Grid, r: float) -> np.ndarray:
    """For every cell x, the sum of ``values`` over cells with centers in B(x, r)."""
    st = ball_stencil(grid, r).astype(float)
    if st.size <= 121:
        return ndimage.correlate(values, st, mode="constant", cval=0.0)
    return signal.fftconvolve(values, st, mode="same")


def family_integrals(values: np.ndarray, family: BallFamily) -> np.ndarray:
    """Integrals of a cell array over every ball of the family, shape ``(centers, radii)``.

    ``values`` must already be zero outside the mask, so the sums are over
    B(x, r) intersected with the domain.
    """
    grid = family.grid
    sel = tuple(family.center_index.T)
    if family.bank is not None:
        return family.bank.sums(values)[(slice(None),) + sel].T * grid.cell_volume
    out = np.empty((len(family.center_index), len(family.radii)))
    for j, r in enumerate(family.radii):
        out[:, j] = ball_sums(values, grid, r)[sel]
    return out * grid.cell_volume


class BallSumBank:
    """Ball sums for a fixed list of radii through shared, precomputed stencil spectra.

    All stencils are embedded in one (2M+1)^n window, M the largest
    half-width, so a single forward transform serves every radius and
    weighted sums over radii need a single inverse transform.
    """

    MAX_BYTES = 256 * 2**20

    def __init__(self, grid: Grid, radii: np.ndarray):
        self.grid = grid
        self.radii = np.asarray(radii, dtype=float)
        stencils = [ball_stencil(grid, r) for r in self.radii]
        self.M = np.max([(np.asarray(st.shape) - 1) // 2 for st in stencils], axis=0)
        self.fshape = tuple(sfft.next_fast_len(int(grid.shape[k] + 2 * self.M[k]), real=True) for k in range(grid.n))
        spec = []
        for st in stencils:
            m = (np.asarray(st.shape) - 1) // 2
            big = np.zeros(tuple(2 * self.M + 1))
            big[tuple(slice(self.M[k] - m[k], self.M[k] + m[k] + 1) for k in range(grid.n))] = st
            spec.append(sfft.rfftn(big, self.fshape))
        self.spectra = np.stack(spec)
        self.crop = tuple(slice(int(self.M[k]), int(self.M[k]) + grid.shape[k]) for k in range(grid.n))

    @classmethod
    def build(cls, grid: Grid, radii) -> "BallSumBank | None":
        """A bank, or None when the spectra would not fit the memory budget."""
        half = [min(int(math.ceil(max(radii) / grid.spacing[k])), grid.shape[k] - 1) for k in range(grid.n)]
        fs = [grid.shape[k] + 2 * half[k] for k in range(grid.n)]
        nbytes = 16 * len(radii) * np.prod(fs[:-1]) * (fs[-1] // 2 + 1)
        return cls(grid, radii) if nbytes <= cls.MAX_BYTES else None

    def sums(self, values: np.ndarray) -> np.ndarray:
        """Array of shape (radii, *grid.shape): ball sums of ``values`` for every radius."""
        V = sfft.rfftn(values, self.fshape)
        out = sfft.irfftn(V[None] * self.spectra, self.fshape, axes=tuple(range(1, self.grid.n + 1)))
        return out[(slice(None),) + self.crop]

    def weighted_spread(self, layers: np.ndarray) -> np.ndarray:
        """sum_j ball_sums(layers[j], r_j), the adjoint of :meth:`sums`."""
        axes = tuple(range(1, self.grid.n + 1))
        L = sfft.rfftn(layers, self.fshape, axes=axes)
        return sfft.irfftn(np.sum(L * self.spectra, axis=0), self.fshape)[self.crop]


# --------------------------------------------------------------------------
# snapshots


FLD_MAGIC = "MORREYKIT-FLD 1"


def write_field(f: ScalarField, path) -> Path:
    """Write a ``.fld`` snapshot: text header, then little-endian float64 payload (C order).

    Bitmap masks are written next to the snapshot as a PGM file so the
    snapshot can be reloaded without the original grid.
    """
    path = Path(path)
    g = f.grid
    mask_id = g.mask_id
    if mask_id.startswith("bitmap"):
        if g.n != 2:
            raise ValueError("bitmap masks can only be stored for 2-D grids")
        mpath = path.with_suffix(".mask.pgm")
        write_pgm(g.mask, mpath)
        mask_id = f"pgm:{mpath.name}"
    header = [
        FLD_MAGIC,
        f"dimension {g.n}",
        "shape " + " ".join(str(s) for s in g.shape),
        "bbox " + " ".join(f"{l!r} {h!r}" for l, h in zip(g.lo, g.hi)),
        f"mask {mask_id}",
        "end",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())
    return path


def read_field(path, grid: Grid | None = None) -> ScalarField:
    path = Path(path)
    with open(path, "rb") as fh:
        data = fh.read()
    head_end = data.index(b"\nend\n") + len(b"\nend\n")
    lines = data[:head_end].decode("ascii").splitlines()
    if lines[0] != FLD_MAGIC:
        raise ValueError(f"{path} is not a field snapshot")
    meta = {ln.split(" ", 1)[0]: ln.split(" ", 1)[1] for ln in lines[1:-1]}
    shape = tuple(int(s) for s in meta["shape"].split())
    b = [float(s) for s in meta["bbox"].split()]
    bbox = list(zip(b[0::2], b[1::2]))
    if grid is None:
        mask_id = meta["mask"]
        if mask_id.startswith("pgm:"):
            bitmap = Bitmap(read_pgm(path.parent / mask_id[4:]), name=mask_id[4:])
            grid = make_grid(bbox, shape, bitmap)
        else:
            grid = make_grid(bbox, shape, mask_id)
    elif grid.shape != shape:
        raise ValueError(f"snapshot shape {shape} does not match grid shape {grid.shape}")
    vals = np.frombuffer(data[head_end:], dtype="<f8")
    if vals.size != int(np.prod(shape)):
        raise ValueError(f"payload holds {vals.size} values, expected {int(np.prod(shape))}")
    return ScalarField(grid, vals.reshape(shape).astype(float))


def read_pgm(path) -> np.ndarray:
    """Binary (P5) PGM as a boolean mask; nonzero pixels are in the domain.

    Rows of the image map to the first array axis.
    """
    from PIL import Image

    with Image.open(path) as im:
        if im.format != "PPM" or im.mode not in ("L", "1", "I", "I;16", "I;16B"):
            raise ValueError(f"{path} is not a grayscale PGM")
        return np.asarray(im) > 0


def write_pgm(mask: np.ndarray, path) -> Path:
    from PIL import Image

    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path, format="PPM")
    return Path(path)
