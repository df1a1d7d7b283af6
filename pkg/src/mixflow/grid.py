"""Cell-centered uniform grids on boxes in 1D/2D with face-based calculus.

Scalar and per-species fields live at cell centers; velocities and fluxes
live as normal components on cell faces (a MAC-style layout).  The discrete
gradient (cells -> faces) and divergence (faces -> cells) are adjoint up to
boundary terms, which is what makes flux-form updates exactly conservative:
summing ``divergence(F)`` over all cells telescopes to the boundary fluxes.

Boundary faces carry a tag per side of the box:

* ``NO_PENETRATION``: zero normal flux; gradients and velocities vanish on
  the face, and point sampling uses even reflection (constant in the
  boundary half-cell, so interpolation stays a convex combination).
* ``DIRICHLET_PRESSURE``: an open boundary with a prescribed face value;
  gradients use a one-sided difference against that value and sampling
  extrapolates linearly through the wall.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ._kernels import backend as _kern

SIDES_1D = ("left", "right")
SIDES_2D = ("left", "right", "bottom", "top")


class BoundaryTag(Enum):
    NO_PENETRATION = "no_penetration"
    DIRICHLET_PRESSURE = "dirichlet_pressure"


@dataclass(frozen=True)
class StructuredGrid:
    """Uniform cell-centered grid on a 1D interval or 2D rectangle."""

    shape: tuple[int, ...]
    lengths: tuple[float, ...]
    origin: tuple[float, ...] = None  # type: ignore[assignment]
    tags: dict[str, BoundaryTag] = field(default_factory=dict)

    def __post_init__(self):
        dim = len(self.shape)
        if dim not in (1, 2):
            raise ValueError(f"grid dimension must be 1 or 2, got {dim}")
        if len(self.lengths) != dim:
            raise ValueError("lengths must match grid dimension")
        if any(n < 2 for n in self.shape):
            raise ValueError(f"need at least 2 cells per axis, got {self.shape}")
        if any(L <= 0 for L in self.lengths):
            raise ValueError(f"axis lengths must be positive, got {self.lengths}")
        if self.origin is None:
            object.__setattr__(self, "origin", (0.0,) * dim)
        sides = SIDES_1D if dim == 1 else SIDES_2D
        full = {s: BoundaryTag.NO_PENETRATION for s in sides}
        for key, tag in self.tags.items():
            if key not in sides:
                raise ValueError(f"unknown boundary side {key!r} for {dim}D grid")
            full[key] = BoundaryTag(tag)
        object.__setattr__(self, "tags", full)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.shape))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        v = 1.0
        for h in self.spacing:
            v *= h
        return v

    def cell_centers(self) -> np.ndarray:
        """Coordinates of all cell centers, shape (n_cells, dim), C order."""
        axes = [
            self.origin[d] + (np.arange(self.shape[d]) + 0.5) * self.spacing[d]
            for d in range(self.dim)
        ]
        if self.dim == 1:
            return axes[0][:, None]
        X, Y = np.meshgrid(axes[0], axes[1], indexing="ij")
        return np.stack([X.ravel(), Y.ravel()], axis=1)

    def sides(self) -> tuple[str, ...]:
        return SIDES_1D if self.dim == 1 else SIDES_2D

    def tag(self, side: str) -> BoundaryTag:
        return self.tags[side]

    def ghost_modes(self) -> np.ndarray:
        """Per-side sampling mode: 0 = reflect (no-penetration), 1 = extrapolate."""
        order = self.sides()
        return np.array(
            [0 if self.tags[s] is BoundaryTag.NO_PENETRATION else 1 for s in order],
            dtype=np.int32,
        )


@dataclass
class ScalarField:
    grid: StructuredGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"scalar field shape {self.values.shape} != grid {self.grid.shape}"
            )

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())

    def integral(self) -> float:
        return float(np.sum(self.values)) * self.grid.cell_volume


@dataclass
class SpeciesField:
    """N values per cell, stored species-first: shape (N, nx[, ny])."""

    grid: StructuredGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != self.grid.dim + 1 or self.values.shape[1:] != self.grid.shape:
            raise ValueError(
                f"species field shape {self.values.shape} incompatible with grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("species field contains non-finite values")

    @property
    def n_species(self) -> int:
        return self.values.shape[0]

    def copy(self) -> "SpeciesField":
        return SpeciesField(self.grid, self.values.copy())

    def integrals(self) -> np.ndarray:
        """Per-species integral over the domain."""
        axes = tuple(range(1, self.values.ndim))
        return np.sum(self.values, axis=axes) * self.grid.cell_volume


class FaceVectorField:
    """Normal components on faces, one array per axis.

    Axis 0 component has shape (nx+1,) in 1D or (nx+1, ny) in 2D; axis 1
    component has shape (nx, ny+1).  Construction zeroes the normal
    component on every no-penetration boundary face and keeps it that way
    as an invariant of the type.
    """

    def __init__(self, grid: StructuredGrid, components=None):
        self.grid = grid
        if components is None:
            components = [np.zeros(self._face_shape(d)) for d in range(grid.dim)]
        self.components = [
            np.ascontiguousarray(c, dtype=np.float64) for c in components
        ]
        for d, c in enumerate(self.components):
            if c.shape != self._face_shape(d):
                raise ValueError(f"axis {d} face array has shape {c.shape}")
        self.enforce_no_penetration()

    def _face_shape(self, axis: int) -> tuple[int, ...]:
        s = list(self.grid.shape)
        s[axis] += 1
        return tuple(s)

    def enforce_no_penetration(self) -> None:
        g = self.grid
        tags = g.tags
        if tags["left"] is BoundaryTag.NO_PENETRATION:
            self.components[0][0] = 0.0
        if tags["right"] is BoundaryTag.NO_PENETRATION:
            self.components[0][-1] = 0.0
        if g.dim == 2:
            if tags["bottom"] is BoundaryTag.NO_PENETRATION:
                self.components[1][:, 0] = 0.0
            if tags["top"] is BoundaryTag.NO_PENETRATION:
                self.components[1][:, -1] = 0.0

    def copy(self) -> "FaceVectorField":
        return FaceVectorField(self.grid, [c.copy() for c in self.components])

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(c))) if c.size else 0.0 for c in self.components)


def face_gradient(f: ScalarField, dirichlet_values: dict[str, float] | None = None) -> FaceVectorField:
    """Two-point gradient of a cell field, living on faces.

    Interior faces use the centered difference (f_right - f_left)/h.  On
    no-penetration boundary faces the gradient is 0 (homogeneous Neumann);
    on Dirichlet faces it is the one-sided difference against the
    prescribed face value over the half-cell distance h/2.
    """
    g = f.grid
    dirichlet_values = dirichlet_values or {}
    out = FaceVectorField(g)
    v = f.values
    for d in range(g.dim):
        h = g.spacing[d]
        comp = out.components[d]
        if g.dim == 1:
            comp[1:-1] = (v[1:] - v[:-1]) / h
        elif d == 0:
            comp[1:-1, :] = (v[1:, :] - v[:-1, :]) / h
        else:
            comp[:, 1:-1] = (v[:, 1:] - v[:, :-1]) / h
        lo_side, hi_side = (("left", "right") if d == 0 else ("bottom", "top"))
        # stored component is always the +axis directional derivative
        if g.tag(lo_side) is BoundaryTag.DIRICHLET_PRESSURE:
            fb = _require_value(dirichlet_values, lo_side)
            _set_boundary_faces(comp, d, 0, (_boundary_cells(v, d, 0) - fb) / (h / 2.0))
        if g.tag(hi_side) is BoundaryTag.DIRICHLET_PRESSURE:
            fb = _require_value(dirichlet_values, hi_side)
            _set_boundary_faces(comp, d, -1, (fb - _boundary_cells(v, d, -1)) / (h / 2.0))
    out.enforce_no_penetration()
    return out


def _require_value(values: dict[str, float], side: str) -> float:
    if side not in values:
        raise ValueError(f"missing Dirichlet value for side {side!r}")
    return values[side]


def _boundary_cells(v: np.ndarray, axis: int, idx: int) -> np.ndarray:
    if v.ndim == 1:
        return v[idx]
    return v[idx, :] if axis == 0 else v[:, idx]


def _set_boundary_faces(comp: np.ndarray, axis: int, idx: int, values) -> None:
    if comp.ndim == 1:
        comp[idx] = values
    elif axis == 0:
        comp[idx, :] = values
    else:
        comp[:, idx] = values


def divergence(F: FaceVectorField) -> ScalarField:
    """Per-cell net outflow of face fluxes divided by cell size.

    Adjoint to ``face_gradient`` under the discrete inner products: for any
    cell field g and any F vanishing on boundary faces,
    sum_cells div(F) g h^dim = -sum_faces F . grad(g) h^dim exactly.
    """
    g = F.grid
    out = np.zeros(g.shape)
    for d in range(g.dim):
        h = g.spacing[d]
        c = F.components[d]
        if g.dim == 1:
            out += (c[1:] - c[:-1]) / h
        elif d == 0:
            out += (c[1:, :] - c[:-1, :]) / h
        else:
            out += (c[:, 1:] - c[:, :-1]) / h
    return ScalarField(g, out)


def sample(f: ScalarField | SpeciesField, points: np.ndarray,
           modes: np.ndarray | None = None) -> np.ndarray:
    """Multilinear interpolation of cell-centered values at arbitrary points.

    Points are clamped to the closed domain first; the behavior in the
    boundary half-cell band follows the face tag (reflection keeps the
    result a convex combination of cell values, extrapolation reproduces
    affine fields exactly through open boundaries).  ``modes`` overrides
    the tag-derived per-side behavior (0 reflect, 1 extrapolate).  Returns
    shape (m,) for scalar fields and (N, m) for species fields.
    """
    g = f.grid
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.shape[1] != g.dim:
        raise ValueError(f"points must have {g.dim} coordinates")
    vals = f.values if isinstance(f, SpeciesField) else f.values[None, ...]
    if modes is None:
        modes = g.ghost_modes()
    if g.dim == 1:
        out = _kern.sample_1d(
            np.ascontiguousarray(vals.reshape(vals.shape[0], -1)),
            np.ascontiguousarray(pts[:, 0]),
            g.origin[0], g.spacing[0], g.shape[0], int(modes[0]), int(modes[1]),
        )
    else:
        out = _kern.sample_2d(
            np.ascontiguousarray(vals),
            np.ascontiguousarray(pts[:, 0]), np.ascontiguousarray(pts[:, 1]),
            g.origin[0], g.spacing[0], g.shape[0],
            g.origin[1], g.spacing[1], g.shape[1],
            modes,
        )
    if isinstance(f, SpeciesField):
        return out
    return out[0]
