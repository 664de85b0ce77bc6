"""Resolution-free displacement surrogate.

A multi-resolution enhanced U-Net: the input field is projected at full, half
and quarter resolution by pointwise (1x1) convolutions, fused back at full
resolution, then passed through an encoder-decoder with edge-aware
convolutions and spatial attention. All resampling is align-corners linear
interpolation, so one weight set works on any grid of at least 8 nodes per
axis and the output displacement always matches the input spatial shape.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .geometry import MapField, SimplicialGrid


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SurrogateConfig:
    dim: int
    in_channels: int
    base_width: int = 32
    proj_width: int = 16
    depth: int = 0  # 0 -> 3 for 2D, 2 for 3D
    attention_kernel: int = 7
    activation: str = "gelu"
    norm: str = "group"
    seed: int = 0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ConfigError(f"dim must be 2 or 3, got {self.dim}")
        if self.in_channels <= self.dim:
            raise ConfigError("in_channels must exceed dim (coords + >=1 parameter)")
        if self.base_width < 8:
            raise ConfigError("base_width must be >= 8")
        if self.depth and self.depth < 2:
            raise ConfigError("depth must be >= 2")

    @property
    def stages(self) -> int:
        return self.depth or (3 if self.dim == 2 else 2)


def _conv(dim: int):
    return nn.Conv2d if dim == 2 else nn.Conv3d


def _convT(dim: int):
    return nn.ConvTranspose2d if dim == 2 else nn.ConvTranspose3d


def _interp_mode(dim: int) -> str:
    return "bilinear" if dim == 2 else "trilinear"


def _resize(x: torch.Tensor, size) -> torch.Tensor:
    if tuple(x.shape[2:]) == tuple(size):
        return x
    return F.interpolate(x, size=size, mode=_interp_mode(x.dim() - 2), align_corners=True)


def _group_norm(channels: int) -> nn.GroupNorm:
    for g in (8, 4, 2, 1):
        if channels % g == 0:
            return nn.GroupNorm(g, channels)
    return nn.GroupNorm(1, channels)


def _laplacian_stencil(dim: int) -> torch.Tensor:
    k = torch.zeros((3,) * dim, dtype=torch.float64)
    center = (1,) * dim
    k[center] = -2.0 * dim
    for j in range(dim):
        for off in (0, 2):
            idx = list(center)
            idx[j] = off
            k[tuple(idx)] = 1.0
    return k


class EdgeAwareConv(nn.Module):
    """Gated blend of a local 3-stencil conv and a dilated wide-stencil conv.

    The gate ``w = sigmoid(edge_detector(f))`` is a single spatial channel,
    broadcast over feature channels: output = w*wide + (1-w)*local. The edge
    detector starts as a channel-averaged Laplacian and trains freely.
    ``gate_override`` forces the gate (test hook for the w=0 / w=1 endpoints).
    """

    def __init__(self, dim: int, in_channels: int, out_channels: int):
        super().__init__()
        Conv = _conv(dim)
        self.local = Conv(in_channels, out_channels, 3, padding=1)
        self.wide = Conv(in_channels, out_channels, 3, padding=2, dilation=2)
        self.edge = Conv(in_channels, 1, 3, padding=1)
        with torch.no_grad():
            lap = _laplacian_stencil(dim).to(self.edge.weight.dtype)
            self.edge.weight.copy_(lap.expand(1, in_channels, *lap.shape) / in_channels)
            self.edge.bias.zero_()
        self.gate_override: float | None = None

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        if self.gate_override is None:
            w = torch.sigmoid(self.edge(f))
        else:
            w = torch.full_like(f[:, :1], float(self.gate_override))
        return w * self.wide(f) + (1.0 - w) * self.local(f)


class SpatialAttention(nn.Module):
    """Per-location sigmoid gate from channel-mean and channel-max maps."""

    def __init__(self, dim: int, kernel: int = 7):
        super().__init__()
        self.conv = _conv(dim)(2, 1, kernel, padding=kernel // 2)
        with torch.no_grad():
            self.conv.bias.fill_(2.0)  # start with open gates (~0.88)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        stats = torch.cat([f.mean(dim=1, keepdim=True), f.amax(dim=1, keepdim=True)], dim=1)
        return f * torch.sigmoid(self.conv(stats))


class EnhancedBlock(nn.Module):
    """[edge-aware conv -> norm -> activation] x2 followed by attention."""

    def __init__(self, dim: int, in_channels: int, out_channels: int, attention_kernel: int = 7):
        super().__init__()
        self.eac1 = EdgeAwareConv(dim, in_channels, out_channels)
        self.n1 = _group_norm(out_channels)
        self.eac2 = EdgeAwareConv(dim, out_channels, out_channels)
        self.n2 = _group_norm(out_channels)
        self.attn = SpatialAttention(dim, attention_kernel)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        f = F.gelu(self.n1(self.eac1(f)))
        f = F.gelu(self.n2(self.eac2(f)))
        return self.attn(f)


class MultiResEncoder(nn.Module):
    """Pointwise projections of the input at scales 1, 1/2 and 1/4, fused at
    full resolution by a pointwise linear mix. Constant fields stay constant
    and the output spatial size always equals the input size."""

    def __init__(self, dim: int, in_channels: int, widths: tuple[int, int, int]):
        super().__init__()
        Conv = _conv(dim)
        self.proj_full = Conv(in_channels, widths[0], 1)
        self.proj_half = Conv(in_channels, widths[1], 1)
        self.proj_quarter = Conv(in_channels, widths[2], 1)
        self.total = sum(widths)
        self.fuse = Conv(self.total, self.total, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        size = x.shape[2:]
        half = [max(s // 2, 1) for s in size]
        quarter = [max(s // 4, 1) for s in size]
        phi1 = self.proj_full(x)
        phi2 = _resize(self.proj_half(_resize(x, half)), size)
        phi4 = _resize(self.proj_quarter(_resize(x, quarter)), size)
        return self.fuse(torch.cat([phi1, phi2, phi4], dim=1))


class DisplacementNet(nn.Module):
    """Full surrogate: multi-res fusion, encoder/decoder with skips, and a
    pointwise head emitting one displacement channel per spatial dimension."""

    def __init__(self, config: SurrogateConfig):
        super().__init__()
        torch.manual_seed(config.seed)
        self.config = config
        dim, width = config.dim, config.base_width
        self.multires = MultiResEncoder(
            dim, config.in_channels, (width, config.proj_width, config.proj_width)
        )
        stages = config.stages
        widths = [width * 2**i for i in range(stages)]

        self.enc = nn.ModuleList()
        prev = self.multires.total
        for w in widths:
            self.enc.append(EnhancedBlock(dim, prev, w, config.attention_kernel))
            prev = w
        self.bottleneck = EnhancedBlock(dim, prev, prev * 2, config.attention_kernel)

        ConvT = _convT(dim)
        self.ups = nn.ModuleList()
        self.dec = nn.ModuleList()
        ch = prev * 2
        for w in reversed(widths):
            self.ups.append(ConvT(ch, w, 2, stride=2))
            self.dec.append(EnhancedBlock(dim, 2 * w, w, config.attention_kernel))
            ch = w
        self.head = _conv(dim)(width, dim, 1)
        # start near the identity map: tiny displacements, sane loss landscape
        with torch.no_grad():
            self.head.weight.mul_(1e-2)
            self.head.bias.zero_()
        self.pool = F.avg_pool2d if dim == 2 else F.avg_pool3d

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.dim() == self.config.dim + 1
        if squeeze:
            x = x.unsqueeze(0)
        if x.shape[1] != self.config.in_channels:
            raise ConfigError(
                f"expected {self.config.in_channels} input channels, got {x.shape[1]}"
            )
        if min(x.shape[2:]) < 8:
            raise ConfigError(f"spatial size must be >= 8 per axis, got {tuple(x.shape[2:])}")
        f = self.multires(x)
        skips = []
        for block in self.enc:
            f = block(f)
            skips.append(f)
            f = self.pool(f, 2)
        f = self.bottleneck(f)
        for up, block, skip in zip(self.ups, self.dec, reversed(skips)):
            f = _resize(up(f), skip.shape[2:])
            f = block(torch.cat([f, skip], dim=1))
        psi = self.head(f)
        return psi.squeeze(0) if squeeze else psi


@dataclass(frozen=True)
class BoundaryMask:
    """Spatial weight multiplying the displacement so boundary conditions hold
    exactly: the square mask prod_j alpha*x_j*(1-x_j) vanishes on the whole
    domain boundary and peaks at 1 at the center; the free mask is 1."""

    kind: str = "square"  # square | free
    alpha: float = 4.0

    def values(self, coords):
        """coords: [..., dim] (numpy or torch); returns [...]-shaped weights."""
        if self.kind == "free":
            if isinstance(coords, torch.Tensor):
                return torch.ones_like(coords[..., 0])
            return np.ones(coords.shape[:-1])
        if self.kind != "square":
            raise ConfigError(f"unknown boundary kind {self.kind!r}")
        out = None
        for j in range(coords.shape[-1]):
            term = self.alpha * coords[..., j] * (1.0 - coords[..., j])
            out = term if out is None else out * term
        return out


def apply_boundary(grid: SimplicialGrid, psi: np.ndarray, mask: BoundaryMask) -> MapField:
    """u = x + B(x) * psi at the grid vertices; psi is channel-first [d, *res]."""
    d = grid.dim
    disp = np.asarray(psi, dtype=np.float64).reshape(d, -1).T
    b = mask.values(grid.vertices)
    positions = grid.vertices + b[:, None] * disp
    return MapField(grid, positions, mask.kind, "surrogate")


def config_hash(config: SurrogateConfig) -> str:
    blob = json.dumps(asdict(config), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(
    directory, model: DisplacementNet, manifest: dict | None = None
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cfg = model.config
    payload = {
        "surrogate": asdict(cfg),
        "config_hash": config_hash(cfg),
        "manifest": manifest or {},
    }
    (directory / "config.json").write_text(json.dumps(payload, indent=2))
    torch.save(model.state_dict(), directory / "weights.pt")
    return directory


def load_checkpoint(directory, dtype=torch.float32) -> tuple[DisplacementNet, dict]:
    directory = Path(directory)
    payload = json.loads((directory / "config.json").read_text())
    cfg = SurrogateConfig(**payload["surrogate"])
    if config_hash(cfg) != payload["config_hash"]:
        raise ConfigError(f"{directory}: config hash mismatch, checkpoint corrupted")
    model = DisplacementNet(cfg).to(dtype)
    state = torch.load(directory / "weights.pt", map_location="cpu", weights_only=True)
    model.load_state_dict(state)
    model.eval()
    return model, payload.get("manifest", {})


def infer_map(
    model: DisplacementNet,
    field_values: np.ndarray,
    grid: SimplicialGrid,
    mask: BoundaryMask,
    dtype=torch.float32,
) -> MapField:
    """Run the surrogate on an encoded input [d+m, *res] and return the map."""
    with torch.no_grad():
        x = torch.as_tensor(field_values, dtype=dtype)
        psi = model(x).double().numpy()
    out = apply_boundary(grid, psi, mask)
    return out
