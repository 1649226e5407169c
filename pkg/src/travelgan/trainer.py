"""Alternating three-network training for one domain pair.

Each step, per direction: the discriminator is updated on a real batch and a
generated batch (two separate forward passes, so their batch statistics never
mix); then the generator on adversarial + TraVeL loss; then the siamese
network on margin + TraVeL loss, seeing the freshly updated generator.
"""

from __future__ import annotations

import json
import logging
import time
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import losses as L
from .data import BatchSchedule
from .diffcore.optim import AdamState, adam_step
from .diffcore.tensor import Tensor, backward
from .networks import ArchitectureSpec, ConfigError, NetworkParams, build_network, forward

log = logging.getLogger(__name__)

DIRECTIONS = ("xy_only", "both")
SHARING = ("per_direction", "shared")
HISTORY = 1000


class TrainingDiverged(RuntimeError):
    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class TrainingConfig:
    arch: ArchitectureSpec = field(default_factory=ArchitectureSpec)
    loss: L.LossConfig = field(default_factory=L.LossConfig)
    batch_size: int = 16
    steps: int = 1000
    seed: int = 0
    directions: str = "both"
    siamese_sharing: str = "per_direction"
    checkpoint_every: int = 0
    log_every: int = 1
    lr: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.9

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2 (pair losses need pairs), got {self.batch_size}")
        if self.steps < 0:
            raise ConfigError(f"steps must be non-negative, got {self.steps}")
        if self.directions not in DIRECTIONS:
            raise ConfigError(f"directions must be one of {DIRECTIONS}, got {self.directions!r}")
        if self.siamese_sharing not in SHARING:
            raise ConfigError(f"siamese_sharing must be one of {SHARING}, got {self.siamese_sharing!r}")

    def to_dict(self):
        return {
            "arch": self.arch.to_dict(),
            "loss": self.loss.to_dict(),
            "batch_size": self.batch_size,
            "steps": self.steps,
            "seed": self.seed,
            "directions": self.directions,
            "siamese_sharing": self.siamese_sharing,
            "checkpoint_every": self.checkpoint_every,
            "log_every": self.log_every,
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["arch"] = ArchitectureSpec(**d["arch"])
        d["loss"] = L.LossConfig(**d["loss"])
        return cls(**d)


def direction_names(config: TrainingConfig):
    """Per direction: (generator, discriminator, siamese) network names."""
    shared = config.siamese_sharing == "shared"
    names = {"xy": ("G_XY", "D_Y", "S" if shared else "S_XY")}
    if config.directions == "both":
        names["yx"] = ("G_YX", "D_X", "S" if shared else "S_YX")
    return names


@dataclass
class TrainState:
    config: TrainingConfig
    nets: dict
    adam: dict
    step: int = 0
    history: deque = field(default_factory=lambda: deque(maxlen=HISTORY))

    def generator(self, direction="xy") -> NetworkParams:
        return self.nets[direction_names(self.config)[direction][0]]

    def discriminator(self, direction="xy") -> NetworkParams:
        return self.nets[direction_names(self.config)[direction][1]]

    def siamese(self, direction="xy") -> NetworkParams:
        return self.nets[direction_names(self.config)[direction][2]]


_ROLE = {"G": "generator", "D": "discriminator", "S": "siamese"}


def network_seed(seed, name):
    """Stable per-network seed derived from the run seed and the network name."""
    tag = int.from_bytes(name.encode(), "little")
    return int(np.random.SeedSequence([seed & (2 ** 64 - 1), tag]).generate_state(1)[0])


def init_state(config: TrainingConfig) -> TrainState:
    nets, adam = {}, {}
    for triple in direction_names(config).values():
        for name in triple:
            if name in nets:
                continue
            nets[name] = build_network(config.arch, _ROLE[name[0]], network_seed(config.seed, name))
            adam[name] = AdamState.for_params(nets[name].params, lr=config.lr,
                                              beta1=config.beta1, beta2=config.beta2)
    return TrainState(config, nets, adam)


def _grad_norms(grads):
    return {k: float(np.sqrt(np.sum(np.asarray(g, dtype=np.float64) ** 2))) for k, g in grads.items()}


def _update(state, name, loss, tag, parts):
    net = state.nets[name]
    grads = backward(loss, net.tensors)
    if not np.isfinite(float(loss.data)) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        diag = {"step": state.step, "network": name, "phase": tag,
                "loss_parts": {k: float(v) for k, v in parts.items()},
                "grad_norms": _grad_norms(grads)}
        raise TrainingDiverged(f"non-finite {tag} loss/gradient for {name} at step {state.step}", diag)
    adam_step(net.params, grads, state.adam[name])
    return grads


def train_step(state: TrainState, batch_x, batch_y):
    """One alternating update of every network. Returns (state, {direction: LossBreakdown})."""
    cfg = state.config.loss
    names = direction_names(state.config)
    batches = {"xy": (batch_x, batch_y), "yx": (batch_y, batch_x)}
    pending_s = {}
    out = {}
    for direction, (g_name, d_name, s_name) in names.items():
        src, tgt = batches[direction]
        G, D, S = state.nets[g_name], state.nets[d_name], state.nets[s_name]

        # discriminator: real and generated batches pass separately
        fake = forward(G, src, "train", trainable=True)
        d_real = forward(D, tgt, "train", trainable=True)
        d_fake = forward(D, Tensor(fake.data), "train", trainable=True)
        l_d = L.adversarial_d_loss(d_real, d_fake)
        _update(state, d_name, l_d, "discriminator", {"l_d": l_d.data})

        # generator: gradients flow through fixed D and S into G only
        d_fake_g = forward(D, fake, "train", update_stats=False)
        l_adv = L.adversarial_g_loss(d_fake_g)
        s_real = forward(S, src, "train", trainable=True)
        s_gen_g = forward(S, fake, "train", update_stats=False)
        l_travel_g = L.travel_loss(L.transformation_vectors(Tensor(s_real.data)),
                                   L.transformation_vectors(s_gen_g), cfg)
        l_g = L.generator_objective(l_adv, l_travel_g, cfg)
        _update(state, g_name, l_g, "generator",
                {"l_d": l_d.data, "l_adv_g": l_adv.data, "l_travel": l_travel_g.data})

        # siamese: both the real and generated branches are live
        fake2 = forward(G, src, "train", update_stats=False).data
        s_gen = forward(S, fake2, "train", trainable=True)
        nu_real = L.transformation_vectors(s_real)
        l_sc = L.margin_loss(nu_real, cfg)
        l_travel_s = L.travel_loss(nu_real, L.transformation_vectors(s_gen), cfg)
        l_s = L.siamese_objective(l_sc, l_travel_s, cfg)
        pending_s.setdefault(s_name, []).append((l_s, {"l_sc": l_sc.data, "l_travel": l_travel_s.data}))
        if state.config.siamese_sharing == "per_direction":
            _update(state, s_name, l_s, "siamese", pending_s.pop(s_name)[0][1])

        out[direction] = L.compose_losses(
            {"l_adv_g": l_adv, "l_travel": l_travel_g, "l_sc": l_sc, "l_d": l_d}, cfg)

    for s_name, items in pending_s.items():
        total = items[0][0]
        for extra, _ in items[1:]:
            total = total + extra
        _update(state, s_name, total, "siamese", items[0][1])

    for direction, br in out.items():
        if not br.is_finite():
            raise TrainingDiverged(f"non-finite loss at step {state.step}",
                                   {"step": state.step, "direction": direction, "loss_parts": br.as_dict()})
    state.step += 1
    state.history.append({k: v.as_dict() for k, v in out.items()})
    return state, out


def log_row(step, breakdowns, wall_ms):
    """Metrics-log record: direction-mean losses plus the per-direction values."""
    keys = ("l_d", "l_adv_g", "l_travel", "l_sc")
    row = {"step": step}
    for k in keys:
        row[k] = float(np.mean([getattr(b, k) for b in breakdowns.values()]))
    row["wall_ms"] = wall_ms
    row["per_direction"] = {d: {k: getattr(b, k) for k in keys} for d, b in breakdowns.items()}
    return row


class MemorySink:
    """Collects log rows and checkpoint snapshots in memory."""

    def __init__(self):
        self.rows = []
        self.checkpoints = []

    def log(self, row):
        self.rows.append(row)

    def checkpoint(self, state, final=False):
        self.checkpoints.append(state.step)


class DirectorySink:
    """Writes ``metrics.jsonl`` and ``checkpoints/step_XXXXXXX.trvl`` under ``root``."""

    def __init__(self, root):
        self.root = Path(root)
        (self.root / "checkpoints").mkdir(parents=True, exist_ok=True)
        self.metrics_path = self.root / "metrics.jsonl"
        self._fh = open(self.metrics_path, "a", encoding="utf-8")
        self.last_checkpoint = None

    def log(self, row):
        self._fh.write(json.dumps(row, sort_keys=True) + "\n")
        self._fh.flush()

    def checkpoint(self, state, final=False):
        from .checkpoint import save_checkpoint

        path = self.root / "checkpoints" / f"step_{state.step:07d}.trvl"
        save_checkpoint(state, path)
        if final:
            save_checkpoint(state, self.root / "final.trvl")
        self.last_checkpoint = path

    def close(self):
        self._fh.close()


def _as_batch_array(dataset):
    arr = np.asarray(dataset, dtype=np.float32)
    if arr.ndim != 4:
        raise ConfigError(f"dataset must be (N, C, d, d), got {arr.shape}")
    return arr


def train(config: TrainingConfig, dataset_x, dataset_y, sink=None, state: TrainState | None = None):
    """Run the training loop up to ``config.steps`` total steps.

    Passing a ``state`` loaded from a checkpoint resumes it; batch order is a
    pure function of (seed, step), so a resumed run replays exactly what an
    unbroken run would have done.
    """
    dx, dy = _as_batch_array(dataset_x), _as_batch_array(dataset_y)
    for label, ds in (("X", dx), ("Y", dy)):
        if len(ds) == 0:
            raise ConfigError(f"dataset {label} is empty")
        if len(ds) < config.batch_size:
            raise ConfigError(f"dataset {label} has {len(ds)} images, fewer than batch_size {config.batch_size}")
    if state is None:
        state = init_state(config)
    elif state.config.arch != config.arch:
        raise ConfigError(f"checkpoint architecture {state.config.arch} does not match run {config.arch}")
    else:
        state.config = replace(config)
    sched_x = BatchSchedule(len(dx), config.batch_size, config.seed, stream=0)
    sched_y = BatchSchedule(len(dy), config.batch_size, config.seed, stream=1)
    sink = sink if sink is not None else MemorySink()

    while state.step < config.steps:
        t0 = time.perf_counter()
        step = state.step
        bx, by = dx[sched_x.indices_at(step)], dy[sched_y.indices_at(step)]
        _, parts = train_step(state, bx, by)
        wall_ms = (time.perf_counter() - t0) * 1e3
        if config.log_every and (step % config.log_every == 0 or state.step == config.steps):
            sink.log(log_row(step, parts, wall_ms))
        if config.checkpoint_every and state.step % config.checkpoint_every == 0 and state.step < config.steps:
            sink.checkpoint(state)
        if step % 100 == 0:
            log.info("step %d %s", step, {d: round(b.l_g_total, 4) for d, b in parts.items()})
    sink.checkpoint(state, final=True)
    return state
