"""Differentiable geometry-aware training objectives.

All losses operate on per-vertex position tensors over a simplicial mesh and
are differentiable with respect to the positions (and hence through the
surrogate's parameters). Degenerate elements are handled by clamping measures,
never by rejection, so gradients stay finite through transient fold states.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .geometry import MapField, SimplicialGrid

MU_EPS = 1e-8
MEASURE_CLAMP = 1e-10


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    task: str  # bc2d | deq2d | dem3d
    lambda_hr: float = 0.0

    def __post_init__(self):
        if self.task not in ("bc2d", "deq2d", "dem3d"):
            raise LossError(f"unknown task {self.task!r}")
        if self.lambda_hr < 0:
            raise LossError("lambda_hr must be >= 0")


class MeshTensors:
    """Torch-side mesh constants for a fixed source configuration."""

    def __init__(self, grid: SimplicialGrid, dtype=torch.float64):
        self.dim = grid.dim
        self.vertices = torch.from_numpy(grid.vertices).to(dtype)
        self.elements = torch.from_numpy(grid.elements)
        self.ref_measures = torch.from_numpy(grid.ref_measures).to(dtype)

    @classmethod
    def from_tensors(cls, vertices: torch.Tensor, elements: torch.Tensor) -> "MeshTensors":
        self = cls.__new__(cls)
        self.dim = vertices.shape[1]
        self.vertices = vertices
        self.elements = elements
        self.ref_measures = None
        return self


def smooth_l1(residual: torch.Tensor) -> torch.Tensor:
    """Mean of the elementwise huber penalty: 0.5 r^2 below 1, |r|-0.5 above."""
    a = residual.abs()
    return torch.where(a < 1.0, 0.5 * residual**2, a - 0.5).mean()


def signed_measures_t(positions: torch.Tensor, elements: torch.Tensor) -> torch.Tensor:
    """Signed areas/volumes per simplex, differentiable in the positions."""
    p0 = positions[elements[:, 0]]
    if elements.shape[1] == 3:
        e1 = positions[elements[:, 1]] - p0
        e2 = positions[elements[:, 2]] - p0
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    e1 = positions[elements[:, 1]] - p0
    e2 = positions[elements[:, 2]] - p0
    e3 = positions[elements[:, 3]] - p0
    det = (
        e1[:, 0] * (e2[:, 1] * e3[:, 2] - e2[:, 2] * e3[:, 1])
        - e1[:, 1] * (e2[:, 0] * e3[:, 2] - e2[:, 2] * e3[:, 0])
        + e1[:, 2] * (e2[:, 0] * e3[:, 1] - e2[:, 1] * e3[:, 0])
    )
    return det / 6.0


def beltrami_t(
    src: torch.Tensor, positions: torch.Tensor, tris: torch.Tensor, eps: float = MU_EPS
) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-triangle (Re mu, Im mu) of the piecewise-affine map src -> positions.

    Real-arithmetic Wirtinger quotient with an eps-guarded denominator so a
    collapsing element yields a bounded value instead of NaN.
    """
    s0 = src[tris[:, 0]]
    e1 = src[tris[:, 1]] - s0
    e2 = src[tris[:, 2]] - s0
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    inv = 1.0 / det
    d0 = positions[tris[:, 0]]
    f1 = positions[tris[:, 1]] - d0
    f2 = positions[tris[:, 2]] - d0
    ux = (f1[:, 0] * e2[:, 1] - f2[:, 0] * e1[:, 1]) * inv
    uy = (f2[:, 0] * e1[:, 0] - f1[:, 0] * e2[:, 0]) * inv
    vx = (f1[:, 1] * e2[:, 1] - f2[:, 1] * e1[:, 1]) * inv
    vy = (f2[:, 1] * e1[:, 0] - f1[:, 1] * e2[:, 0]) * inv
    fz_re, fz_im = 0.5 * (ux + vy), 0.5 * (vx - uy)
    fzb_re, fzb_im = 0.5 * (ux - vy), 0.5 * (vx + uy)
    denom = fz_re**2 + fz_im**2 + eps
    mu_re = (fzb_re * fz_re + fzb_im * fz_im) / denom
    mu_im = (fzb_im * fz_re - fzb_re * fz_im) / denom
    return mu_re, mu_im


def loss_beltrami_recon(
    positions: torch.Tensor,
    mesh: MeshTensors,
    mu_truth: torch.Tensor,
    src: torch.Tensor | None = None,
) -> torch.Tensor:
    """Mean squared complex deviation of the predicted per-element coefficient
    from the target coefficient (target sampled at element centroids)."""
    src = mesh.vertices if src is None else src
    mu_re, mu_im = beltrami_t(src, positions, mesh.elements)
    t_re = mu_truth.real.to(mu_re.dtype)
    t_im = mu_truth.imag.to(mu_im.dtype)
    return ((mu_re - t_re) ** 2 + (mu_im - t_im) ** 2).mean()


def _density_residual(
    positions: torch.Tensor, mesh: MeshTensors, populations: torch.Tensor
) -> torch.Tensor:
    measures = signed_measures_t(positions, mesh.elements)
    clamped = torch.clamp_min(measures, MEASURE_CLAMP)
    rho = populations / clamped
    rho_bar = populations.sum() / clamped.sum()
    return rho - rho_bar


def loss_deq2d(
    positions: torch.Tensor,
    mesh: MeshTensors,
    populations: torch.Tensor,
    lambda_hr: float = 0.1,
    src: torch.Tensor | None = None,
) -> torch.Tensor:
    """Density-equalization residual plus the quasi-conformal penalty."""
    loss = smooth_l1(_density_residual(positions, mesh, populations))
    if lambda_hr > 0:
        src = mesh.vertices if src is None else src
        mu_re, mu_im = beltrami_t(src, positions, mesh.elements)
        loss = loss + lambda_hr * (mu_re**2 + mu_im**2).mean()
    return loss


def loss_dem3d(
    positions: torch.Tensor, mesh: MeshTensors, populations: torch.Tensor
) -> torch.Tensor:
    """Volumetric density-equalization residual over tetrahedra."""
    return smooth_l1(_density_residual(positions, mesh, populations))


# ---------------------------------------------------------------------------
# numpy-facing wrappers (used by evaluation, refinement objectives, tests)


def _to_tensor(a: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(a, dtype=np.float64))


def loss_beltrami_recon_np(map_pred: MapField, mu_truth: np.ndarray) -> float:
    mesh = MeshTensors(map_pred.grid)
    with torch.no_grad():
        val = loss_beltrami_recon(
            _to_tensor(map_pred.positions), mesh, torch.from_numpy(np.asarray(mu_truth))
        )
    return float(val)


def loss_deq2d_np(map_pred: MapField, populations: np.ndarray, lambda_hr: float = 0.1) -> float:
    mesh = MeshTensors(map_pred.grid)
    with torch.no_grad():
        val = loss_deq2d(_to_tensor(map_pred.positions), mesh, _to_tensor(populations), lambda_hr)
    return float(val)


def loss_dem3d_np(map_pred: MapField, populations: np.ndarray) -> float:
    mesh = MeshTensors(map_pred.grid)
    with torch.no_grad():
        val = loss_dem3d(_to_tensor(map_pred.positions), mesh, _to_tensor(populations))
    return float(val)
