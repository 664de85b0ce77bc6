"""Structured simplicial grids and per-element differential quantities.

The unit square/cube is triangulated into right triangles (each cell split
along its (i,j)->(i+1,j+1) diagonal) or into six tetrahedra per cube sharing
the main diagonal. All maps are piecewise linear over that mesh, so Beltrami
coefficients, Jacobians and metric tensors are per-element constants obtained
from the affine fit on each element.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class SimplicialGrid:
    """Vertices + simplices of a structured unit-domain grid.

    Attributes:
        dim: 2 or 3.
        res: vertex count per axis.
        vertices: [#V, dim] coordinates in [0,1]^dim.
        elements: [#E, dim+1] vertex indices, positively oriented.
        ref_measures: [#E] element areas/volumes in the reference grid.
    """

    dim: int
    res: tuple[int, ...]
    vertices: np.ndarray
    elements: np.ndarray
    ref_measures: np.ndarray

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def spacing(self) -> float:
        return 1.0 / (self.res[0] - 1)

    def boundary_mask(self) -> np.ndarray:
        """Boolean [#V] mask of vertices on the domain boundary."""
        on = np.zeros(self.n_vertices, dtype=bool)
        for j in range(self.dim):
            on |= (self.vertices[:, j] == 0.0) | (self.vertices[:, j] == 1.0)
        return on


@dataclass
class MapField:
    """Per-vertex mapped positions over a grid."""

    grid: SimplicialGrid
    positions: np.ndarray  # [#V, dim]
    boundary_kind: str = "square"  # square | free
    provenance: str = "analytic"  # analytic | surrogate | lbs | dem_oracle
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.shape != (self.grid.n_vertices, self.grid.dim):
            raise GridError(
                f"positions shape {self.positions.shape} does not match grid "
                f"({self.grid.n_vertices}, {self.grid.dim})"
            )
        if not np.all(np.isfinite(self.positions)):
            raise GridError("positions contain non-finite values")

    def displacement(self) -> np.ndarray:
        return self.positions - self.grid.vertices


@dataclass
class BeltramiField:
    """Per-element complex Beltrami coefficient with derived distortion data."""

    mu: np.ndarray  # complex [#E]
    modulus: np.ndarray = None
    dilatation: np.ndarray = None  # K = (1+|mu|)/(1-|mu|), inf where |mu|>=1
    energy: float = None
    degenerate: np.ndarray = None  # True where f_z ~ 0 and mu was forced to 0

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.complex128)
        if self.modulus is None:
            self.modulus = np.abs(self.mu)
        if self.dilatation is None:
            with np.errstate(divide="ignore"):
                self.dilatation = np.where(
                    self.modulus < 1.0, (1 + self.modulus) / (1 - self.modulus), np.inf
                )
        if self.degenerate is None:
            self.degenerate = np.zeros(self.mu.shape, dtype=bool)

    @property
    def has_infinite_dilatation(self) -> bool:
        return bool(np.any(self.modulus >= 1.0))


def _grid_vertices(res: int, dim: int) -> np.ndarray:
    axes = [np.linspace(0.0, 1.0, res)] * dim
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _triangles(res: int) -> np.ndarray:
    idx = np.arange(res * res).reshape(res, res)
    v00 = idx[:-1, :-1].ravel()
    v10 = idx[1:, :-1].ravel()
    v01 = idx[:-1, 1:].ravel()
    v11 = idx[1:, 1:].ravel()
    lower = np.stack([v00, v10, v11], axis=1)
    upper = np.stack([v00, v11, v01], axis=1)
    return np.concatenate([lower, upper]).astype(np.int64)


# six tets around the main diagonal c000 -> c111; each is (c000, a, b, c111)
# with (a, b) walking one face path, ordered for positive orientation
_TET_PATHS = (
    ("100", "110"),
    ("110", "010"),
    ("010", "011"),
    ("011", "001"),
    ("001", "101"),
    ("101", "100"),
)


def _tetrahedra(res: int) -> np.ndarray:
    idx = np.arange(res**3).reshape(res, res, res)
    s0, s1 = slice(None, -1), slice(1, None)

    def corner(code: str) -> np.ndarray:
        sl = tuple(s1 if c == "1" else s0 for c in code)
        return idx[sl].ravel()

    c000, c111 = corner("000"), corner("111")
    tets = [np.stack([c000, corner(a), corner(b), c111], axis=1) for a, b in _TET_PATHS]
    return np.concatenate(tets).astype(np.int64)


@lru_cache(maxsize=32)
def build_grid(res: int, dim: int) -> SimplicialGrid:
    """Unit-domain structured simplicial grid with ``res`` vertices per axis."""
    if res < 2:
        raise GridError(f"grid needs res >= 2, got {res}")
    if dim not in (2, 3):
        raise GridError(f"dim must be 2 or 3, got {dim}")
    vertices = _grid_vertices(res, dim)
    elements = _triangles(res) if dim == 2 else _tetrahedra(res)
    measures = _kernels.signed_measures(vertices, elements)
    if np.any(measures <= 0):
        raise GridError("grid construction produced non-positive elements")
    grid = SimplicialGrid(dim, (res,) * dim, vertices, elements, measures)
    return grid


def identity_map(grid: SimplicialGrid, boundary_kind: str = "square") -> MapField:
    return MapField(grid, grid.vertices.copy(), boundary_kind, "analytic")


def signed_mapped_measures(mapped: MapField) -> np.ndarray:
    return _kernels.signed_measures(mapped.positions, mapped.grid.elements)


def jacobian_det(mapped: MapField) -> np.ndarray:
    """Per-element determinant of the affine map's linear part (sign kept)."""
    return signed_mapped_measures(mapped) / mapped.grid.ref_measures


def affine_jacobians(mapped: MapField) -> np.ndarray:
    """Per-element linear part J with J[k,j] = d u_k / d x_j, shape [#E,d,d]."""
    return _kernels.affine_jacobians(
        mapped.grid.vertices, mapped.positions, mapped.grid.elements
    )


def wirtinger_derivatives(mapped: MapField) -> tuple[np.ndarray, np.ndarray]:
    """Per-element complex derivatives (f_z, f_zbar) of a planar map."""
    if mapped.grid.dim != 2:
        raise GridError("Wirtinger derivatives are defined for planar maps only")
    J = affine_jacobians(mapped)
    ux, uy = J[:, 0, 0], J[:, 0, 1]
    vx, vy = J[:, 1, 0], J[:, 1, 1]
    f_z = 0.5 * ((ux + vy) + 1j * (vx - uy))
    f_zbar = 0.5 * ((ux - vy) + 1j * (vx + uy))
    return f_z, f_zbar


def beltrami_per_element(mapped: MapField) -> BeltramiField:
    """mu = f_zbar / f_z per triangle; 0 where the map is locally constant."""
    f_z, f_zbar = wirtinger_derivatives(mapped)
    degenerate = np.abs(f_z) == 0.0
    mu = np.zeros_like(f_z)
    ok = ~degenerate
    mu[ok] = f_zbar[ok] / f_z[ok]
    # locally constant map: both derivatives vanish -> mu := 0 (already is);
    # f_z = 0 with f_zbar != 0 is a pure reflection, report |mu| = inf-like 1
    bad = degenerate & (np.abs(f_zbar) > 0)
    if np.any(bad):
        mu[bad] = f_zbar[bad] / np.abs(f_zbar[bad])  # unit modulus marker
    bf = BeltramiField(mu, degenerate=degenerate)
    bf.energy = beltrami_energy(bf, mapped.grid)
    return bf


def maximal_dilatation(mu: BeltramiField) -> np.ndarray:
    """K = (1+|mu|)/(1-|mu|) per element; inf flags |mu| >= 1."""
    return mu.dilatation


def beltrami_energy(mu: BeltramiField, grid: SimplicialGrid) -> float:
    """Piecewise-constant quadrature of the squared-modulus integral."""
    return float(np.sum(mu.modulus**2 * grid.ref_measures))


def compose_beltrami(
    mu_f: BeltramiField, mu_g: BeltramiField, map_g: MapField
) -> BeltramiField:
    """Coefficient of f o g^{-1} evaluated on g's source elements.

    Uses (mu_f - mu_g) / (1 - conj(mu_f) mu_g) * g_z / conj(g_z) with g_z
    taken from the same per-element affine derivatives as everything else.
    """
    if map_g.grid.dim != 2:
        raise GridError("composition rule is planar")
    if np.any(mu_g.modulus >= 1.0):
        raise GridError("composition requires |mu_g| < 1 on every element")
    g_z, _ = wirtinger_derivatives(map_g)
    denom = 1.0 - np.conj(mu_f.mu) * mu_g.mu
    if np.any(np.abs(denom) < 1e-12):
        raise FloatingPointError("composition denominator vanished")
    if np.any(np.abs(g_z) == 0.0):
        raise FloatingPointError("g_z vanished on an element")
    mu = (mu_f.mu - mu_g.mu) / denom * (g_z / np.conj(g_z))
    out = BeltramiField(mu)
    out.energy = beltrami_energy(out, map_g.grid)
    return out


def metric_tensor(mapped: MapField) -> tuple[np.ndarray, np.ndarray]:
    """First fundamental form g = J^T J per element and sqrt(det g)."""
    J = affine_jacobians(mapped)
    g = np.einsum("eki,ekj->eij", J, J)
    det = np.linalg.det(g)
    return g, np.sqrt(np.maximum(det, 0.0))


def element_population(vertex_values: np.ndarray, grid: SimplicialGrid) -> np.ndarray:
    """Population per element: vertex-mean of the density times ref measure.

    ``vertex_values`` is the density sampled at grid vertices (flat [#V] or
    grid-shaped). The population stays attached to elements as the map deforms.
    """
    vals = np.asarray(vertex_values, dtype=np.float64).reshape(-1)
    if vals.shape[0] != grid.n_vertices:
        raise GridError("vertex value count does not match grid")
    return vals[grid.elements].mean(axis=1) * grid.ref_measures


def element_density(
    mapped: MapField, population: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-element density rho = population / mapped measure and rho~ = rho/mean.

    Returns (rho, rho_tilde, fold_mask); fold_mask flags non-positive mapped
    measures, whose density is computed against a tiny clamped measure.
    """
    measures = signed_mapped_measures(mapped)
    fold = measures <= 0.0
    safe = np.where(fold, 1e-10, measures)
    rho = np.asarray(population, dtype=np.float64) / safe
    rho_tilde = rho / rho.mean()
    return rho, rho_tilde, fold


def density_std(mapped: MapField, population: np.ndarray) -> float:
    """Unweighted standard deviation of the normalized per-element density."""
    _, rho_tilde, _ = element_density(mapped, population)
    return float(rho_tilde.std())
