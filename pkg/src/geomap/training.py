"""Data-free training loops.

Each step synthesizes a fresh random parameter field at a fresh random
resolution, runs the surrogate, deforms the (optionally Sobol-jittered)
sample coordinates, evaluates the task loss on that mesh, clips the gradient
and updates. Per-step randomness is derived statelessly from (seed, epoch),
so a resumed run reproduces the interrupted run's loss curve exactly.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import fields, losses
from .geometry import build_grid
from .surrogate import BoundaryMask, DisplacementNet, SurrogateConfig, save_checkpoint

TASKS = ("bc2d", "deq2d", "dem3d")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    task: str
    epochs: int
    lr: float
    betas: tuple[float, float]
    weight_decay: float
    schedule: dict  # {"kind":"step","factor":f,"period":T} or
    #                 {"kind":"cosine_restarts","t0":T0,"t_mult":m,"lr_min":eta}
    res_range: tuple[int, int]
    grad_clip: float = 1.0
    lambda_hr: float = 0.0
    seed: int = 0
    desk_scale: bool = False
    boundary: str = "square"
    jitter: float = 0.35
    dtype: str = "float32"
    base_width: int = 32
    proj_width: int = 16
    checkpoint_every: int = 2000
    log_every: int = 50
    field_params: dict | None = None  # SynthSpec overrides (desk runs narrow these)

    def __post_init__(self):
        if self.task not in TASKS:
            raise TrainingError(f"unknown task {self.task!r}")
        if self.grad_clip <= 0:
            raise TrainingError("grad_clip must be > 0")
        if self.res_range[0] < 8 or self.res_range[1] < self.res_range[0]:
            raise TrainingError(f"bad res_range {self.res_range}")

    @property
    def dim(self) -> int:
        return 3 if self.task == "dem3d" else 2

    @property
    def in_channels(self) -> int:
        return self.dim + (2 if self.task == "bc2d" else 1)

    def surrogate_config(self) -> SurrogateConfig:
        return SurrogateConfig(
            dim=self.dim,
            in_channels=self.in_channels,
            base_width=self.base_width,
            proj_width=self.proj_width,
            seed=self.seed,
        )

    def torch_dtype(self):
        return torch.float64 if self.dtype == "float64" else torch.float32


def preset(task: str, desk_scale: bool = False) -> TrainConfig:
    """Published per-task configuration; desk_scale swaps in the short-budget
    variant (fewer epochs, smaller grids, faster learning-rate program)."""
    if task == "bc2d":
        cfg = TrainConfig(
            task="bc2d",
            epochs=250_000,
            lr=1e-4,  # the source experiment leaves lr/decay unstated
            betas=(0.9, 0.999),
            weight_decay=1e-5,
            schedule={"kind": "step", "factor": 0.5, "period": 10_000},
            res_range=(64, 96),
        )
        if desk_scale:
            cfg = replace(
                cfg,
                epochs=20_000,
                res_range=(48, 64),
                lr=1e-3,
                schedule={"kind": "step", "factor": 0.5, "period": 5_000},
                desk_scale=True,
            )
        return cfg
    if task == "deq2d":
        cfg = TrainConfig(
            task="deq2d",
            epochs=12_000,
            lr=1e-5,
            betas=(0.9, 0.999),
            weight_decay=1e-5,
            schedule={"kind": "step", "factor": 0.5, "period": 200},
            res_range=(64, 96),
            lambda_hr=0.1,
        )
        if desk_scale:
            # the published lr program cannot move a fresh network far enough
            # in 2000 steps; the desk preset uses a faster program (see README)
            cfg = replace(
                cfg,
                epochs=2_000,
                res_range=(48, 64),
                lr=2e-3,
                schedule={"kind": "step", "factor": 0.5, "period": 400},
                desk_scale=True,
            )
        return cfg
    if task == "dem3d":
        cfg = TrainConfig(
            task="dem3d",
            epochs=4_000,
            lr=2e-4,
            betas=(0.9, 0.995),
            weight_decay=5e-5,
            schedule={"kind": "cosine_restarts", "t0": 600, "t_mult": 2, "lr_min": 2e-6},
            res_range=(32, 48),
        )
        if desk_scale:
            cfg = replace(
                cfg,
                epochs=800,
                res_range=(24, 32),
                lr=1e-3,
                schedule={"kind": "cosine_restarts", "t0": 200, "t_mult": 2, "lr_min": 2e-6},
                desk_scale=True,
            )
        return cfg
    raise TrainingError(f"unknown task {task!r}")


def lr_at(schedule: dict, lr0: float, epoch: int) -> float:
    """Learning rate at a given epoch; pure function so resume is stateless.

    step: lr0 * factor^floor(epoch/period), exactly.
    cosine_restarts: cosine decay to lr_min within each restart window; the
    window lengths grow by t_mult and the rate returns to lr0 at each restart.
    """
    kind = schedule["kind"]
    if kind == "step":
        return lr0 * schedule["factor"] ** (epoch // schedule["period"])
    if kind == "cosine_restarts":
        t0, m, lr_min = schedule["t0"], schedule["t_mult"], schedule["lr_min"]
        t, span = epoch, t0
        while t >= span:
            t -= span
            span *= m
        return lr_min + 0.5 * (lr0 - lr_min) * (1 + math.cos(math.pi * t / span))
    raise TrainingError(f"unknown schedule kind {kind!r}")


def _step_seeds(seed: int, epoch: int) -> tuple[int, int, int]:
    ss = np.random.SeedSequence([int(seed), int(epoch)])
    a, b, c = (int(x) for x in ss.generate_state(3))
    return a, b, c


def synth_for_task(cfg: TrainConfig, epoch: int) -> fields.ParamField:
    """Fresh random field + fresh random resolution for one training step."""
    s_field, _, s_res = _step_seeds(cfg.seed, epoch)
    lo, hi = cfg.res_range
    res = int(np.random.default_rng(s_res).integers(lo, hi + 1))
    kind = {"bc2d": "beltrami2d", "deq2d": "density2d", "dem3d": "density3d"}[cfg.task]
    spec = fields.default_spec(kind, s_field)
    if cfg.field_params:
        spec = replace(spec, **{k: tuple(v) if isinstance(v, list) else v
                                for k, v in cfg.field_params.items()})
    if cfg.task == "bc2d":
        return fields.synth_beltrami_2d(spec, res)
    return fields.synth_density(spec, res, cfg.dim)


@dataclass
class TrainState:
    config: TrainConfig
    model: DisplacementNet
    optimizer: torch.optim.AdamW
    mask: BoundaryMask
    epoch: int = 0
    bad_streak: int = 0
    history: list = field(default_factory=list)  # (epoch, loss, lr, res) rows


def init_state(cfg: TrainConfig) -> TrainState:
    model = DisplacementNet(cfg.surrogate_config()).to(cfg.torch_dtype())
    model.train()
    opt = torch.optim.AdamW(
        model.parameters(),
        lr=cfg.lr,
        betas=cfg.betas,
        weight_decay=cfg.weight_decay,
        foreach=True,
    )
    return TrainState(cfg, model, opt, BoundaryMask(cfg.boundary))


def _grid_sample_at(psi: torch.Tensor, pts: torch.Tensor) -> torch.Tensor:
    """Differentiable multilinear read of channel-first grid psi at pts [V,d]
    in [0,1]^d; returns [V, d-channels]. Sample axes are reversed because
    torch's sampler indexes (W, H[, D]) fastest-last."""
    d = pts.shape[1]
    gsize = (1, pts.shape[0]) + (1,) * (d - 1) + (d,)
    grid = (2.0 * pts.flip(1) - 1.0).reshape(gsize)
    out = torch.nn.functional.grid_sample(
        psi.unsqueeze(0), grid, mode="bilinear", align_corners=True
    )
    return out.reshape(psi.shape[0], pts.shape[0]).T


def step_loss(state: TrainState, fld: fields.ParamField) -> torch.Tensor:
    """Forward + loss for one synthesized field (the differentiable core)."""
    cfg = state.config
    dtype = cfg.torch_dtype()
    res = fld.res[0]
    grid = build_grid(res, cfg.dim)
    x = torch.from_numpy(fields.encode_input(fld)).to(dtype)
    psi = state.model(x)

    _, s_jitter, _ = _step_seeds(cfg.seed, state.epoch)
    if cfg.jitter > 0:
        pts_np = fields.sobol_jitter(res, fld, cfg.jitter, seed=s_jitter)
        pts = torch.from_numpy(pts_np).to(dtype)
        disp = _grid_sample_at(psi, pts)
    else:
        pts_np = grid.vertices
        pts = torch.from_numpy(pts_np).to(dtype)
        disp = psi.reshape(cfg.dim, -1).T
    b = state.mask.values(pts)
    u = pts + b.unsqueeze(1) * disp

    elements = torch.from_numpy(grid.elements)
    mesh = losses.MeshTensors.from_tensors(pts, elements)

    if cfg.task == "bc2d":
        centroids = pts_np[grid.elements].mean(axis=1)
        mu = fields.sample_closed_form(fld, centroids)
        mu_truth = torch.from_numpy(mu[0] + 1j * mu[1])
        return losses.loss_beltrami_recon(u, mesh, mu_truth, src=pts)

    dens = fields.sample_closed_form(fld, pts_np)[0]
    ref = losses.signed_measures_t(pts, elements).detach()
    pops = torch.from_numpy(dens).to(dtype)[elements].mean(dim=1) * ref
    if cfg.task == "deq2d":
        return losses.loss_deq2d(u, mesh, pops, cfg.lambda_hr, src=pts)
    return losses.loss_dem3d(u, mesh, pops)


def train_step(state: TrainState, fld: fields.ParamField) -> float:
    """One synthesize->forward->loss->clip->update cycle. Returns the loss.

    Non-finite losses skip the update; three consecutive skips abort.
    """
    cfg = state.config
    lr = lr_at(cfg.schedule, cfg.lr, state.epoch)
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    loss = step_loss(state, fld)
    value = float(loss.detach())
    if not math.isfinite(value):
        state.bad_streak += 1
        state.optimizer.zero_grad(set_to_none=True)
        if state.bad_streak >= 3:
            raise TrainingError(
                f"aborting: {state.bad_streak} consecutive non-finite losses at epoch {state.epoch}"
            )
        return value
    state.bad_streak = 0
    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    torch.nn.utils.clip_grad_norm_(state.model.parameters(), cfg.grad_clip)
    state.optimizer.step()
    return value


def _write_history(path: Path, rows, fresh: bool) -> None:
    mode = "w" if fresh else "a"
    with open(path, mode, newline="") as fh:
        w = csv.writer(fh)
        if fresh:
            w.writerow(["epoch", "loss", "lr", "res"])
        w.writerows(rows)


def train(cfg: TrainConfig, out_dir, resume: bool = False, quiet: bool = False) -> Path:
    """Run the full loop; writes checkpoints, manifest and loss.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = init_state(cfg)
    start_epoch = 0
    opt_path = out / "optimizer.pt"
    if resume and opt_path.exists():
        snap = torch.load(opt_path, map_location="cpu", weights_only=False)
        state.model.load_state_dict(snap["model"])
        state.optimizer.load_state_dict(snap["optimizer"])
        start_epoch = snap["epoch"]

    t_start = time.time()
    pending = []
    fresh_log = start_epoch == 0
    for epoch in range(start_epoch, cfg.epochs):
        state.epoch = epoch
        fld = synth_for_task(cfg, epoch)
        value = train_step(state, fld)
        row = (epoch, value, lr_at(cfg.schedule, cfg.lr, epoch), fld.res[0])
        state.history.append(row)
        pending.append(row)
        if len(pending) >= cfg.log_every or epoch == cfg.epochs - 1:
            _write_history(out / "loss.csv", pending, fresh=fresh_log)
            fresh_log = False
            pending = []
            if not quiet:
                print(f"[{cfg.task}] epoch {epoch + 1}/{cfg.epochs} loss {value:.6f}", flush=True)
        if (epoch + 1) % cfg.checkpoint_every == 0 or epoch == cfg.epochs - 1:
            _snapshot(out, state, epoch + 1)

    manifest = {
        "train_config": asdict(cfg),
        "seed": cfg.seed,
        "epochs_run": cfg.epochs,
        "wall_seconds": time.time() - t_start,
        "loss_curve": "loss.csv",
        "mask_alpha": 4.0,
        "density_floor": fields.DENSITY_FLOOR,
        "mesh": "cell diagonal (i,j)->(i+1,j+1); cubes split into 6 tets on the main diagonal",
    }
    save_checkpoint(out, state.model, manifest)
    return out


def _snapshot(out: Path, state: TrainState, epoch: int) -> None:
    torch.save(
        {
            "model": state.model.state_dict(),
            "optimizer": state.optimizer.state_dict(),
            "epoch": epoch,
        },
        out / "optimizer.pt",
    )


def load_train_config(path) -> TrainConfig:
    raw = json.loads(Path(path).read_text())
    raw["betas"] = tuple(raw["betas"])
    raw["res_range"] = tuple(raw["res_range"])
    return TrainConfig(**raw)
