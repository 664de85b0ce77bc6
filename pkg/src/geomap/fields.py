"""Synthesis and closed-form evaluation of parameter fields.

Covers the randomized sinusoidal training fields (Beltrami coefficients and
positive densities), the fixed analytic test maps T1-T4, the named test
densities, Sobol-based gradient-adaptive jitter, and the coordinate-augmented
input encoding.

Conventions baked in here and relied on everywhere else:

* densities are evaluated at grid vertices, shifted so the sampled minimum is
  exactly 0.1, then normalized to unit mass with cell measure (1/N)^dim;
* every synthesized field freezes its constants (mode table, shift, scale,
  normalizer) at synthesis time, so its ``closed_form`` can be evaluated
  pointwise at any location or resolution without resampling.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field as dfield
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .geometry import GridError, MapField, SimplicialGrid, build_grid

TWO_PI = 2.0 * math.pi


class FieldConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NonsmoothSpec:
    """Optional sparse non-smooth perturbations: noise/step patches on a few
    axis-aligned boxes, each covering at most ``max_cover`` of the domain."""

    patch_count: int = 3
    max_cover: float = 0.10
    step_amp: float = 0.5
    noise_amp: float = 0.25


@dataclass(frozen=True)
class SynthSpec:
    seed: int
    n_modes: tuple[int, int] = (1, 50)
    amp: tuple[float, float] = (-1.0, 1.0)
    freq: tuple[float, float] = (0.1, 8.0)  # log-uniform range
    phase: tuple[float, float] = (0.0, TWO_PI)
    k_max: float = 0.9
    real_mu: bool = False
    nonsmooth: NonsmoothSpec | None = None

    def __post_init__(self):
        if not self.k_max < 1.0:
            raise FieldConfigError(f"k_max must be < 1, got {self.k_max}")
        if self.freq[0] <= 0 or self.freq[1] <= 0:
            raise FieldConfigError("frequency range must be positive")
        if self.n_modes[0] < 1 or self.n_modes[1] < self.n_modes[0]:
            raise FieldConfigError(f"bad mode-count range {self.n_modes}")


def default_spec(kind: str, seed: int) -> SynthSpec:
    """Paper-matched synthesis ranges per task."""
    if kind in ("beltrami2d", "density2d"):
        return SynthSpec(seed=seed)
    if kind == "density3d":
        return SynthSpec(seed=seed, n_modes=(4, 40), freq=(0.1, 5.0))
    raise FieldConfigError(f"unknown field kind {kind!r}")


@dataclass
class ParamField:
    """Sampled parameter field on a structured grid.

    values are channel-first [m, *res]; coords are [dim, *res] in [0,1].
    ``closed_form`` (when present) maps points [P, dim] -> values [m, P] and
    reproduces the grid samples exactly at the grid vertices.
    """

    dim: int
    res: tuple[int, ...]
    channels: int
    values: np.ndarray
    coords: np.ndarray
    kind: str  # beltrami2d | density2d | density3d
    seed: int | None = None
    meta: dict = dfield(default_factory=dict)
    closed_form: Callable[[np.ndarray], np.ndarray] | None = None

    @property
    def spacing(self) -> float:
        return 1.0 / (self.res[0] - 1)

    def cell_measure(self) -> float:
        """Cell measure used for unit-mass normalization: (1/N)^dim."""
        m = 1.0
        for n in self.res:
            m *= 1.0 / n
        return m

    def mass(self) -> float:
        return float(self.values.sum() * self.cell_measure())

    def grid(self) -> SimplicialGrid:
        if len(set(self.res)) != 1:
            raise GridError("only square/cubic grids are triangulated")
        return build_grid(self.res[0], self.dim)


def grid_coords(res: int, dim: int) -> np.ndarray:
    axes = [np.linspace(0.0, 1.0, res)] * dim
    return np.stack(np.meshgrid(*axes, indexing="ij"))


def _flat_points(coords: np.ndarray) -> np.ndarray:
    d = coords.shape[0]
    return coords.reshape(d, -1).T


def _draw_modes(rng: np.random.Generator, spec: SynthSpec, dim: int):
    n = int(rng.integers(spec.n_modes[0], spec.n_modes[1] + 1))
    amps = rng.uniform(spec.amp[0], spec.amp[1], size=n)
    freqs = np.exp(rng.uniform(math.log(spec.freq[0]), math.log(spec.freq[1]), size=(n, dim)))
    phases = rng.uniform(spec.phase[0], spec.phase[1], size=(n, dim))
    return amps, freqs, phases


def _mode_sum(points: np.ndarray, amps, freqs, phases) -> np.ndarray:
    """Superposition of separable sinusoidal modes; axis 0 uses sin, axis 1
    cos, axis 2 sin again, matching the training-field construction."""
    out = np.zeros(points.shape[0])
    dim = points.shape[1]
    for a, f, p in zip(amps, freqs, phases):
        term = np.full(points.shape[0], a)
        for j in range(dim):
            arg = TWO_PI * f[j] * points[:, j] + p[j]
            term = term * (np.sin(arg) if j % 2 == 0 else np.cos(arg))
        out += term
    return out


def _draw_patches(rng: np.random.Generator, spec: NonsmoothSpec, dim: int):
    patches = []
    count = int(rng.integers(1, spec.patch_count + 1))
    side_max = spec.max_cover ** (1.0 / dim)
    for _ in range(count):
        side = rng.uniform(0.3 * side_max, side_max, size=dim)
        lo = rng.uniform(0.0, 1.0 - side)
        kind = "step" if rng.uniform() < 0.5 else "noise"
        level = rng.uniform(-1.0, 1.0)
        noise_seed = int(rng.integers(0, 2**31))
        patches.append((lo, lo + side, kind, level, noise_seed))
    return patches


def _patch_eval(points: np.ndarray, patches, spec: NonsmoothSpec) -> np.ndarray:
    out = np.zeros(points.shape[0])
    for lo, hi, kind, level, noise_seed in patches:
        inside = np.all((points >= lo) & (points <= hi), axis=1)
        if kind == "step":
            out[inside] += spec.step_amp * level
        else:
            # hash-based noise so the closed form stays a pure function
            h = np.zeros(points.shape[0])
            for j in range(points.shape[1]):
                h += np.sin((noise_seed % 997 + 13 * j + 1) * 211.0 * points[:, j])
            out[inside] += spec.noise_amp * np.sin(h[inside] * 957.0)
    return out


def _boundary_row_mask(coords: np.ndarray) -> np.ndarray:
    """True at grid samples lying on the domain boundary."""
    on = np.zeros(coords.shape[1:], dtype=bool)
    for j in range(coords.shape[0]):
        on |= (coords[j] == 0.0) | (coords[j] == 1.0)
    return on


def synth_beltrami_2d(spec: SynthSpec, res: int) -> ParamField:
    """Random complex Beltrami coefficient field on [0,1]^2.

    Re and Im are independent draws of the sinusoidal superposition; the
    complex modulus is rescaled to at most ``spec.k_max`` and all boundary
    samples are zeroed.
    """
    if res < 8:
        raise FieldConfigError(f"res must be >= 8, got {res}")
    rng = np.random.default_rng(spec.seed)
    re_modes = _draw_modes(rng, spec, 2)
    im_modes = _draw_modes(rng, spec, 2)
    patches = _draw_patches(rng, spec.nonsmooth, 2) if spec.nonsmooth else None

    coords = grid_coords(res, 2)
    pts = _flat_points(coords)

    def raw(points: np.ndarray) -> np.ndarray:
        re = _mode_sum(points, *re_modes)
        if patches:
            re = re + _patch_eval(points, patches, spec.nonsmooth)
        if spec.real_mu:
            im = np.zeros_like(re)
        else:
            im = _mode_sum(points, *im_modes)
        return np.stack([re, im])

    sample = raw(pts)
    boundary = _boundary_row_mask(coords).ravel()
    interior_mod = np.hypot(sample[0], sample[1])[~boundary]
    peak = interior_mod.max() if interior_mod.size else 0.0
    scale = spec.k_max / peak if peak > spec.k_max else 1.0

    def closed_form(points: np.ndarray) -> np.ndarray:
        vals = raw(points) * scale
        on = np.zeros(points.shape[0], dtype=bool)
        for j in range(points.shape[1]):
            on |= (points[:, j] == 0.0) | (points[:, j] == 1.0)
        vals[:, on] = 0.0
        return vals

    values = (sample * scale).reshape(2, res, res)
    values[:, _boundary_row_mask(coords)] = 0.0
    return ParamField(
        dim=2,
        res=(res, res),
        channels=2,
        values=values,
        coords=coords,
        kind="beltrami2d",
        seed=spec.seed,
        meta={"k_max": spec.k_max, "scale": scale, "real_mu": spec.real_mu},
        closed_form=closed_form,
    )


DENSITY_FLOOR = 0.1  # sampled minimum after the positivity shift


def _density_field_from(
    raw_fn: Callable[[np.ndarray], np.ndarray],
    res: int,
    dim: int,
    kind: str,
    seed: int | None,
    meta: dict,
) -> ParamField:
    coords = grid_coords(res, dim)
    pts = _flat_points(coords)
    raw = raw_fn(pts)
    shift = DENSITY_FLOOR - raw.min()
    cell = (1.0 / res) ** dim
    norm = (raw + shift).sum() * cell

    def closed_form(points: np.ndarray) -> np.ndarray:
        return ((raw_fn(points) + shift) / norm)[None, :]

    values = ((raw + shift) / norm).reshape(1, *([res] * dim))
    meta = dict(meta, shift=shift, norm=norm)
    return ParamField(dim, (res,) * dim, 1, values, coords, kind, seed, meta, closed_form)


def synth_density(spec: SynthSpec, res: int, dim: int) -> ParamField:
    """Random strictly positive density of unit mass on [0,1]^dim."""
    if res < 8:
        raise FieldConfigError(f"res must be >= 8, got {res}")
    if dim not in (2, 3):
        raise FieldConfigError(f"dim must be 2 or 3, got {dim}")
    rng = np.random.default_rng(spec.seed)
    modes = _draw_modes(rng, spec, dim)
    patches = _draw_patches(rng, spec.nonsmooth, dim) if spec.nonsmooth else None

    def raw(points: np.ndarray) -> np.ndarray:
        out = _mode_sum(points, *modes)
        if patches:
            out = out + _patch_eval(points, patches, spec.nonsmooth)
        return out

    kind = "density2d" if dim == 2 else "density3d"
    return _density_field_from(raw, res, dim, kind, spec.seed, {"spec_seed": spec.seed})


# ---------------------------------------------------------------------------
# analytic test maps


_T3_GAUSS_WIDTH = 0.045


def _t3_terms(x, y):
    s = np.sin(np.pi * x) * np.sin(np.pi * y)
    r2 = (x - 0.5) ** 2 + (y - 0.5) ** 2
    g = np.exp(-r2 / _T3_GAUSS_WIDTH)
    return s, g


def _map_T1(x, y, a=0.08, b=0.08):
    u = x + a * np.sin(np.pi * x) * np.sin(2 * np.pi * y)
    v = y + b * np.sin(2 * np.pi * x) * np.sin(np.pi * y)
    return u, v


def _map_T2(x, y, a=0.03, b=0.02):
    u = x + a * np.sin(2 * np.pi * y) * np.sin(np.pi * x) + b * np.sin(4 * np.pi * y) * np.sin(2 * np.pi * x)
    v = y + a * np.sin(2 * np.pi * x) * np.sin(np.pi * y) + b * np.sin(4 * np.pi * x) * np.sin(2 * np.pi * y)
    return u, v


def _map_T3(x, y):
    s, g = _t3_terms(x, y)
    u = x + s * (-0.60 * (y - 0.5) * g + 0.70 * (y - 0.5) * g + 0.06 * np.sin(2 * np.pi * y))
    v = y + s * (0.60 * (x - 0.5) * g - 0.70 * (x - 0.5) * g - 0.06 * np.sin(2 * np.pi * x))
    return u, v


def _map_T4(x, y, a=0.55, sigma=0.10):
    s = np.sin(np.pi * x) * np.sin(np.pi * y)
    r2 = (x - 0.5) ** 2 + (y - 0.5) ** 2
    w = a * s * np.exp(-r2 / sigma)
    return x + w * (x - 0.5), y + w * (y - 0.5)


TEST_MAPS: dict[str, Callable] = {
    "T1": _map_T1,
    "T2": _map_T2,
    "T3": _map_T3,
    "T4": _map_T4,
    "T1res": lambda x, y: _map_T1(x, y, a=0.06, b=0.04),
}


def test_map(map_id: str, res: int) -> MapField:
    """Analytic test deformation sampled at grid vertices."""
    if map_id not in TEST_MAPS:
        raise FieldConfigError(f"unknown test map {map_id!r}")
    if res < 8:
        raise FieldConfigError(f"res must be >= 8, got {res}")
    grid = build_grid(res, 2)
    u, v = TEST_MAPS[map_id](grid.vertices[:, 0], grid.vertices[:, 1])
    return MapField(grid, np.stack([u, v], axis=1), "square", "analytic", {"map_id": map_id})


# ---------------------------------------------------------------------------
# named test densities (raw closed forms, before shift/normalization)


def _rect_box(points: np.ndarray, lo, hi) -> np.ndarray:
    return np.all((points >= np.asarray(lo)) & (points <= np.asarray(hi)), axis=1)


def _density2d_a(p):
    return 2 + np.sin(TWO_PI * p[:, 0]) * np.cos(TWO_PI * p[:, 1])


def _density2d_b(p):
    return 2 + np.sin(TWO_PI * np.exp(p[:, 0])) * np.cos(np.pi * np.log(2 * p[:, 1] + 0.1))


def _density2d_c(p):
    # unit-height rectangular peak on the sinusoidal background
    return _density2d_a(p) + 1.0 * _rect_box(p, (0.6, 0.1), (0.9, 0.4))


def _density2d_d(p):
    r = np.sqrt((p[:, 0] - 0.5) ** 2 + (p[:, 1] - 0.5) ** 2)
    return np.exp(-((r - 1.0) ** 2) / (2 * 0.5**2))


def _density2d_mf(p):
    return 2 + np.sin(4 * np.pi * p[:, 0]) * np.cos(4 * np.pi * p[:, 1]) + 0.3 * np.sin(6 * np.pi * p[:, 0])


def _density3d_a(p):
    return 2 + np.sin(TWO_PI * p[:, 0]) * np.cos(TWO_PI * p[:, 1]) * np.sin(TWO_PI * p[:, 2])


def _density3d_b(p):
    r = np.sqrt(((p - 0.5) ** 2).sum(axis=1))
    g = np.exp(-((r - 1.0) ** 2) / (2 * 0.5**2))
    # inverted shell: distance-to-shell Gaussian subtracted from its own peak
    r_corner = math.sqrt(3) / 2
    peak = math.exp(-((r_corner - 1.0) ** 2) / (2 * 0.5**2))
    return peak - g


def _density3d_c(p):
    s = 1.0 / (1.0 + np.exp(-(p - 0.5) / 0.1))
    sx, sy, sz = s[:, 0], s[:, 1], s[:, 2]
    return (
        1 * (1 - sx) * (1 - sy) * (1 - sz)
        + 2 * sx * (1 - sy) * (1 - sz)
        + 3 * (1 - sx) * sy * (1 - sz)
        + 4 * sx * sy * (1 - sz)
        + 5 * (1 - sx) * (1 - sy) * sz
        + 6 * sx * (1 - sy) * sz
        + 7 * (1 - sx) * sy * sz
        + 8 * sx * sy * sz
    )


def _density3d_d(p):
    base = 2 + np.sin(4 * np.pi * p[:, 0]) * np.cos(TWO_PI * p[:, 1]) * np.cos(TWO_PI * p[:, 2])
    return base + 1.0 * _rect_box(p, (0.6, 0.0, 0.4), (1.0, 0.4, 0.8))


def _density3d_mf(p):
    return 2 + np.sin(4 * np.pi * p[:, 0]) * np.cos(TWO_PI * p[:, 1]) * np.cos(TWO_PI * p[:, 2])


TEST_DENSITIES: dict[tuple[str, int], Callable] = {
    ("a", 2): _density2d_a,
    ("b", 2): _density2d_b,
    ("c", 2): _density2d_c,
    ("d", 2): _density2d_d,
    ("mf", 2): _density2d_mf,
    ("a", 3): _density3d_a,
    ("b", 3): _density3d_b,
    ("c", 3): _density3d_c,
    ("d", 3): _density3d_d,
    ("mf", 3): _density3d_mf,
}


def test_density_raw(density_id: str, dim: int) -> Callable[[np.ndarray], np.ndarray]:
    """Raw closed form of a named test density (before shift/normalization)."""
    try:
        return TEST_DENSITIES[(density_id, dim)]
    except KeyError:
        raise FieldConfigError(f"unknown test density ({density_id!r}, dim={dim})") from None


def test_density(density_id: str, res: int, dim: int) -> ParamField:
    """Named test density sampled at ``res`` vertices per axis, shifted to the
    0.1 floor and normalized to unit mass."""
    raw = test_density_raw(density_id, dim)
    if res < 8:
        raise FieldConfigError(f"res must be >= 8, got {res}")
    kind = "density2d" if dim == 2 else "density3d"
    return _density_field_from(raw, res, dim, kind, None, {"test_id": density_id})


# ---------------------------------------------------------------------------
# Sobol jitter and encoding


def gradient_magnitude(field: ParamField) -> np.ndarray:
    """Euclidean norm over channels and axes of the grid-sampled gradient."""
    h = field.spacing
    total = np.zeros(field.res)
    for c in range(field.channels):
        grads = np.gradient(field.values[c], h, edge_order=2)
        for g in grads:
            total += g**2
    return np.sqrt(total)


def sobol_jitter(
    res: int, field: ParamField, scale: float, seed: int | None = None
) -> np.ndarray:
    """Perturbed vertex coordinates [#V, dim], denser wobble where the field
    gradient is large. Boundary vertices stay put; output stays in [0,1]^dim."""
    if scale < 0:
        raise FieldConfigError(f"jitter scale must be >= 0, got {scale}")
    dim = field.dim
    coords = grid_coords(res, dim)
    pts = _flat_points(coords).copy()
    if scale == 0.0:
        return pts

    grad = gradient_magnitude(field)
    if field.res != (res,) * dim:
        # resample the gradient weight onto the requested grid
        from . import _kernels

        weight = _kernels.interp_multilinear(grad[None], pts)[0]
    else:
        weight = grad.ravel()
    gmax = weight.max()
    if gmax == 0.0:
        return pts
    weight = weight / gmax

    if seed is None:
        seed = field.seed if field.seed is not None else 0
    sampler = qmc.Sobol(d=dim, scramble=True, seed=seed)
    m = max(1, math.ceil(math.log2(pts.shape[0])))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        unit = sampler.random(2**m)[: pts.shape[0]]
    offsets = (2.0 * unit - 1.0) * (scale / (res - 1)) * weight[:, None]

    boundary = np.zeros(pts.shape[0], dtype=bool)
    for j in range(dim):
        boundary |= (pts[:, j] == 0.0) | (pts[:, j] == 1.0)
    offsets[boundary] = 0.0
    return np.clip(pts + offsets, 0.0, 1.0)


def encode_input(field: ParamField) -> np.ndarray:
    """Stacked input tensor [dim + m, *res]: coordinates first, then values."""
    return np.concatenate([field.coords, field.values], axis=0)


def sample_closed_form(field: ParamField, points: np.ndarray) -> np.ndarray:
    """Evaluate the field's frozen closed form at arbitrary points [P, dim]."""
    if field.closed_form is None:
        from . import _kernels

        return _kernels.interp_multilinear(field.values, points)
    return field.closed_form(points)
