"""Uniform truncated grids and the discrete fractional operator.

The computational domain is a box Omega surrounded by a finite exterior
collar, both discretized with cell-centered nodes at spacing h. The
fractional operator is realized as the s-th spectral power of the standard
discrete negative Laplacian on the truncated box with homogeneous Dirichlet
condition beyond it, scaled by the cell mass m = h^dim. The resulting
matrix is dense: interior and exterior nodes are coupled, which is what
makes exterior data carry information about the interior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _normalize_box(omega_box, dim: int) -> np.ndarray:
    box = np.asarray(omega_box, dtype=float)
    if box.ndim == 1:
        box = box[None, :]
    if box.shape != (dim, 2):
        raise ValueError(f"omega_box must provide (lo, hi) per axis, got shape {box.shape}")
    if np.any(box[:, 1] <= box[:, 0]):
        raise ValueError("omega_box must have hi > lo on every axis")
    return box


@dataclass
class GridSpec:
    """Cell-centered grid on a box with an exterior collar.

    Parameters
    ----------
    dim : 1 or 2
    omega_box : (lo, hi) per axis, physical coordinates of Omega
    collar_width : physical width of the truncated exterior on each side
    h : grid spacing

    Nodes are cell centers of the truncated box; a node is interior when
    its coordinates lie in the closed box Omega (ties resolved toward the
    region, for determinism).
    """

    dim: int
    omega_box: np.ndarray
    collar_width: float
    h: float
    nodes: np.ndarray = field(init=False, repr=False)
    interior_idx: np.ndarray = field(init=False, repr=False)
    exterior_idx: np.ndarray = field(init=False, repr=False)
    cells_per_axis: tuple = field(init=False)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if self.h <= 0:
            raise ValueError("h must be positive")
        if self.collar_width < 2 * self.h:
            raise ValueError("collar_width must be at least 2h")
        self.omega_box = _normalize_box(self.omega_box, self.dim)

        counts = []
        axes = []
        for ax in range(self.dim):
            lo = self.omega_box[ax, 0] - self.collar_width
            hi = self.omega_box[ax, 1] + self.collar_width
            n_ax = int(round((hi - lo) / self.h))
            counts.append(n_ax)
            axes.append(lo + (np.arange(n_ax) + 0.5) * self.h)
        self.cells_per_axis = tuple(counts)

        if self.dim == 1:
            nodes = axes[0][:, None]
        else:
            x, y = np.meshgrid(axes[0], axes[1], indexing="ij")
            nodes = np.column_stack([x.ravel(), y.ravel()])
        self.nodes = nodes

        eps = 1e-9 * self.h
        inside = np.ones(len(nodes), dtype=bool)
        for ax in range(self.dim):
            inside &= nodes[:, ax] >= self.omega_box[ax, 0] - eps
            inside &= nodes[:, ax] <= self.omega_box[ax, 1] + eps
        self.interior_idx = np.flatnonzero(inside)
        self.exterior_idx = np.flatnonzero(~inside)
        if self.n_I == 0:
            raise ValueError("grid too small: no interior nodes")
        if self.n_E == 0:
            raise ValueError("grid too small: no exterior nodes")

    @property
    def n_I(self) -> int:
        return len(self.interior_idx)

    @property
    def n_E(self) -> int:
        return len(self.exterior_idx)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def m(self) -> float:
        """Uniform mass weight per node, h^dim."""
        return self.h ** self.dim

    @property
    def interior_nodes(self) -> np.ndarray:
        return self.nodes[self.interior_idx]

    @property
    def exterior_nodes(self) -> np.ndarray:
        return self.nodes[self.exterior_idx]


def _dirichlet_laplacian(grid: GridSpec) -> np.ndarray:
    """Standard (2*dim+1)-point negative Laplacian on the truncated box,
    homogeneous Dirichlet beyond it, scaled by 1/h^2. Node ordering matches
    GridSpec.nodes."""
    h2 = grid.h ** 2

    def lap1d(n):
        a = np.zeros((n, n))
        np.fill_diagonal(a, 2.0)
        idx = np.arange(n - 1)
        a[idx, idx + 1] = -1.0
        a[idx + 1, idx] = -1.0
        return a / h2

    if grid.dim == 1:
        return lap1d(grid.cells_per_axis[0])
    nx, ny = grid.cells_per_axis
    ax = lap1d(nx)
    ay = lap1d(ny)
    return np.kron(ax, np.eye(ny)) + np.kron(np.eye(nx), ay)


@dataclass
class NonlocalOperator:
    """Discretized fractional operator with its interior/exterior partition."""

    grid: GridSpec
    s: float
    L: np.ndarray
    scheme: str

    @property
    def m(self) -> float:
        return self.grid.m

    @property
    def I(self) -> np.ndarray:
        return self.grid.interior_idx

    @property
    def E(self) -> np.ndarray:
        return self.grid.exterior_idx

    @property
    def L_II(self) -> np.ndarray:
        return self.L[np.ix_(self.I, self.I)]

    @property
    def L_IE(self) -> np.ndarray:
        return self.L[np.ix_(self.I, self.E)]

    @property
    def L_EI(self) -> np.ndarray:
        return self.L[np.ix_(self.E, self.I)]

    @property
    def L_EE(self) -> np.ndarray:
        return self.L[np.ix_(self.E, self.E)]


def _assemble_spectral_power(grid: GridSpec, s: float) -> np.ndarray:
    a = _dirichlet_laplacian(grid)
    w, q = np.linalg.eigh(a)
    w = np.clip(w, 0.0, None)
    l = grid.m * ((q * w ** s) @ q.T)
    return 0.5 * (l + l.T)


SCHEMES = {
    "spectral-power": _assemble_spectral_power,
}


def assemble_operator(grid: GridSpec, s: float, scheme: str = "spectral-power") -> NonlocalOperator:
    """Build the discrete fractional operator L = m * A^s for the grid.

    A is the discrete Dirichlet Laplacian of the truncated box; the power is
    taken through a dense eigendecomposition, so L is symmetric positive
    semidefinite by construction.
    """
    if not 0.0 < s < 1.0:
        raise ValueError(f"fractional order s must lie in (0, 1), got {s}")
    builder = SCHEMES.get(scheme)
    if builder is None:
        raise ValueError(f"unknown scheme {scheme!r}; available: {sorted(SCHEMES)}")
    l = builder(grid, s)
    op = NonlocalOperator(grid=grid, s=s, L=l, scheme=scheme)
    if not np.any(np.abs(op.L_IE) > 0):
        raise ValueError("degenerate grid: no interior-exterior coupling")
    return op


def potential_values(q) -> np.ndarray:
    """Accept either a Potential-like object or a raw array of interior values."""
    return np.asarray(getattr(q, "values", q), dtype=float)


def bilinear_form(op: NonlocalOperator, q, u: np.ndarray, w: np.ndarray) -> float:
    """Energy pairing u' L w + sum_I m q u w."""
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    if u.shape != (op.grid.n_nodes,) or w.shape != (op.grid.n_nodes,):
        raise ValueError("u and w must be defined on all grid nodes")
    qv = potential_values(q)
    if qv.shape != (op.grid.n_I,):
        raise ValueError("potential must be defined on interior nodes")
    return float(u @ op.L @ w + op.m * np.sum(qv * u[op.I] * w[op.I]))


@dataclass
class RegionMask:
    """Boolean selection of interior nodes with its measure m * count."""

    flags: np.ndarray
    measure: float
    label: str = ""

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.flags))

    def complement(self, grid: GridSpec, label: str = "") -> "RegionMask":
        flags = ~self.flags
        return RegionMask(flags=flags, measure=grid.m * np.count_nonzero(flags), label=label)


def mask_from_flags(grid: GridSpec, flags: np.ndarray, label: str = "") -> RegionMask:
    flags = np.asarray(flags, dtype=bool)
    if flags.shape != (grid.n_I,):
        raise ValueError("flags must cover the interior nodes")
    return RegionMask(flags=flags, measure=grid.m * np.count_nonzero(flags), label=label)


def mask_from_region(grid: GridSpec, region: dict, label: str = "") -> RegionMask:
    """Mask of interior nodes inside a closed box or ball (physical coords).

    region is {"box": [(lo, hi), ...]} or {"ball": {"center": [...], "radius": r}}.
    Raises ValueError when no interior node falls inside (the region must
    have positive discrete measure).
    """
    pts = grid.interior_nodes
    eps = 1e-9 * grid.h
    if "box" in region:
        box = _normalize_box(region["box"], grid.dim)
        flags = np.ones(grid.n_I, dtype=bool)
        for ax in range(grid.dim):
            flags &= pts[:, ax] >= box[ax, 0] - eps
            flags &= pts[:, ax] <= box[ax, 1] + eps
    elif "ball" in region:
        ball = region["ball"]
        center = np.asarray(ball["center"], dtype=float).reshape(grid.dim)
        radius = float(ball["radius"])
        dist = np.sqrt(np.sum((pts - center) ** 2, axis=1))
        flags = dist <= radius + eps
    else:
        raise ValueError("region must contain a 'box' or 'ball' descriptor")
    if not np.any(flags):
        raise ValueError("region does not intersect the interior grid (zero measure)")
    return mask_from_flags(grid, flags, label=label)


def mask_union(grid: GridSpec, masks, label: str = "") -> RegionMask:
    flags = np.zeros(grid.n_I, dtype=bool)
    for mk in masks:
        flags |= mk.flags
    return RegionMask(flags=flags, measure=grid.m * np.count_nonzero(flags), label=label)


@dataclass
class Partition:
    """Disjoint cell masks covering all interior nodes."""

    grid: GridSpec
    masks: list

    @property
    def n_cells(self) -> int:
        return len(self.masks)

    def values_to_nodes(self, cell_values) -> np.ndarray:
        cell_values = np.asarray(cell_values, dtype=float)
        if cell_values.shape != (self.n_cells,):
            raise ValueError(f"expected {self.n_cells} cell values")
        out = np.zeros(self.grid.n_I)
        for val, mk in zip(cell_values, self.masks):
            out[mk.flags] = val
        return out

    def cell_centers(self) -> np.ndarray:
        return np.array([self.grid.interior_nodes[mk.flags].mean(axis=0) for mk in self.masks])


def uniform_partition(grid: GridSpec, cells_per_axis) -> Partition:
    """Split Omega into an axis-aligned uniform grid of cells.

    Every interior node is assigned to exactly one cell by integer binning,
    so the masks are disjoint and cover the interior.
    """
    if np.isscalar(cells_per_axis):
        cells_per_axis = (int(cells_per_axis),) * grid.dim
    cells_per_axis = tuple(int(k) for k in cells_per_axis)
    if len(cells_per_axis) != grid.dim or any(k < 1 for k in cells_per_axis):
        raise ValueError("cells_per_axis must give a positive count per axis")

    pts = grid.interior_nodes
    idx = np.zeros(grid.n_I, dtype=int)
    for ax in range(grid.dim):
        lo, hi = grid.omega_box[ax]
        w = (hi - lo) / cells_per_axis[ax]
        bins = np.clip(((pts[:, ax] - lo) / w).astype(int), 0, cells_per_axis[ax] - 1)
        idx = idx * cells_per_axis[ax] + bins

    n_cells = int(np.prod(cells_per_axis))
    masks = []
    for k in range(n_cells):
        flags = idx == k
        if not np.any(flags):
            raise ValueError(f"partition cell {k} contains no interior node; coarsen the partition")
        masks.append(mask_from_flags(grid, flags, label=f"cell:{k}"))
    return Partition(grid=grid, masks=masks)
