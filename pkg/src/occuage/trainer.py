"""Alternating optimization of the discriminator and the generator/decoder.

Each step runs two phases: first the discriminator minimizes its
least-squares loss with the generated images held constant, then the
generator and decoder minimize the weighted full objective with the updated
discriminator's weights held constant. All three networks use ADAM. Every
source of randomness is derived from (seed, epoch, step), so a run is a pure
function of its config and resuming from a checkpoint is bit-exact.
"""

from __future__ import annotations

import json
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import losses as L
from .autodiff import Tensor
from .checkpoint import load_arrays, save_arrays
from .config import Config, from_flat, loss_weights, network_shape, to_flat
from .data import BatchStream, DatasetPools, default_profiles, manifest_pools, load_manifest, synth_pools
from .errors import CheckpointError, TrainingError
from .networks import ModelSet, init_models
from .losses import StepBatch

ADAM_EPS = 1e-8


def single_thread_blas():
    """Limit BLAS pools to one thread for the enclosed block.

    The network's matrices are small enough that thread fan-out costs more
    than it saves, and a fixed thread count keeps runs bit-reproducible.
    """
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=1, user_api="blas")
    except ImportError:  # pragma: no cover - threadpoolctl is a declared dep
        return nullcontext()

METRIC_FIELDS = (
    "step",
    "epoch",
    "personalized",
    "adversarial_g",
    "adversarial_d",
    "triplet",
    "aging_l1",
    "g_f_total",
    "d_total",
)


def adam_update(param, grad, m, v, t, lr, beta1, beta2, eps=ADAM_EPS):
    """One in-place bias-corrected ADAM update on float32 arrays."""
    if param.shape != grad.shape or param.shape != m.shape:
        raise TrainingError(
            f"adam shape mismatch: param {param.shape}, grad {grad.shape}, moment {m.shape}"
        )
    b1, b2 = np.float32(beta1), np.float32(beta2)
    m *= b1
    m += (np.float32(1.0) - b1) * grad
    v *= b2
    v += (np.float32(1.0) - b2) * (grad * grad)
    m_hat = m / np.float32(1.0 - beta1**t)
    v_hat = v / np.float32(1.0 - beta2**t)
    param -= np.float32(lr) * m_hat / (np.sqrt(v_hat) + np.float32(eps))


class Adam:
    """ADAM over a fixed list of named parameter tensors."""

    def __init__(self, named: list[tuple[str, Tensor]], lr: float, beta1: float, beta2: float):
        self.named = list(named)
        self.lr, self.beta1, self.beta2 = lr, beta1, beta2
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in self.named}
        self.v = {name: np.zeros_like(t.data) for name, t in self.named}

    def step(self, grads: dict[Tensor, np.ndarray]) -> None:
        self.t += 1
        for name, tensor in self.named:
            grad = grads.get(tensor)
            if grad is None:
                grad = np.zeros_like(tensor.data)
            adam_update(
                tensor.data, grad, self.m[name], self.v[name],
                self.t, self.lr, self.beta1, self.beta2,
            )


@dataclass
class TrainState:
    models: ModelSet
    opt_gen: Adam
    opt_dec: Adam
    opt_disc: Adam
    config: Config
    step: int = 0
    history: list[np.ndarray] = field(default_factory=list)

    def history_array(self) -> np.ndarray:
        if not self.history:
            return np.zeros((0, len(METRIC_FIELDS)), dtype=np.float32)
        return np.stack(self.history).astype(np.float32)


def init_state(config: Config) -> TrainState:
    models = init_models(network_shape(config), config.trainer.seed)
    t = config.trainer

    def make_opt(params):
        return Adam(list(params.named_tensors()), t.lr, t.beta1, t.beta2)

    return TrainState(
        models=models,
        opt_gen=make_opt(models.generator),
        opt_dec=make_opt(models.decoder),
        opt_disc=make_opt(models.discriminator),
        config=config,
    )


def _check_finite(parts: dict[str, float], step: int) -> None:
    for name, value in parts.items():
        if not np.isfinite(value):
            raise TrainingError(f"non-finite loss term '{name}' at step {step}")


def train_step(state: TrainState, batch: StepBatch, wrong_for=None) -> dict[str, float]:
    """One D update followed by one G/F update; returns step metrics."""
    if wrong_for is None:
        wrong_for = {p: L.first_wrong(batch, p) for p in batch.occupations}
    models = state.models
    weights = loss_weights(state.config)

    d_loss, d_parts = L.discriminator_objective(
        models.discriminator, models.generator, batch, wrong_for,
        adversarial_weight=weights.adversarial,
    )
    _check_finite(d_parts, state.step + 1)
    d_grads = ad.backward(d_loss)
    state.opt_disc.step(d_grads)

    g_loss, g_parts = L.generator_objective(
        models.generator, models.decoder, models.discriminator, batch, weights, wrong_for
    )
    _check_finite(g_parts, state.step + 1)
    g_grads = ad.backward(g_loss)
    state.opt_gen.step(g_grads)
    state.opt_dec.step(g_grads)

    state.step += 1
    metrics = {
        "step": float(state.step),
        "epoch": 0.0,  # filled by the loop
        **{k: g_parts[k] for k in ("personalized", "adversarial_g", "triplet", "aging_l1", "g_f_total")},
        "adversarial_d": d_parts["adversarial_d"],
        "d_total": d_parts["d_total"],
    }
    return metrics


def metrics_line(metrics: dict[str, float]) -> str:
    record = {key: metrics[key] for key in METRIC_FIELDS}
    record["step"] = int(record["step"])
    record["epoch"] = int(record["epoch"])
    return json.dumps(record)


def build_pools(config: Config) -> DatasetPools:
    d = config.data
    if d.source == "synth":
        profiles = default_profiles(config.model.conditions, amplitude=d.amplitude)
        return synth_pools(
            profiles,
            young_count=d.young_count,
            aged_per_occupation=d.aged_per_occupation,
            eval_count=d.eval_count,
            size=config.model.image_size,
            seed=config.trainer.seed,
            age_group=d.age_group,
            clutter=d.clutter,
        )
    manifest = load_manifest(d.manifest)
    root = d.root or str(Path(d.manifest).parent)
    return manifest_pools(manifest, root, d.age_group)


def _wrong_map(stream: BatchStream, config: Config, epoch: int, index: int):
    occupations = stream.pools.occupations
    if config.trainer.wrong_mode == "sum-all":
        return {p: [q for q in occupations if q != p] for p in occupations}
    return stream.wrong_occupation_for(epoch, index)


def train_loop(
    config: Config,
    pools: DatasetPools | None = None,
    out_dir: Path | str | None = None,
    state: TrainState | None = None,
    progress=None,
) -> TrainState:
    """Run (or resume) training to ``epochs * steps_per_epoch`` total steps.

    Writes ``metrics.ndjson`` (one JSON record per step) and periodic
    checkpoints under ``out_dir`` when given. ``progress`` is an optional
    callable receiving each step's metrics dict.
    """
    config.validate()
    if pools is None:
        pools = build_pools(config)
    stream = BatchStream(pools, config.trainer.batch_size, config.trainer.seed)
    resuming = state is not None
    if state is None:
        state = init_state(config)
    total_steps = config.trainer.epochs * stream.steps_per_epoch

    out_dir = Path(out_dir) if out_dir is not None else None
    metrics_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        mode = "a" if resuming else "w"
        metrics_file = open(out_dir / "metrics.ndjson", mode, encoding="utf-8")

    try:
        with single_thread_blas():
            while state.step < total_steps:
                epoch = state.step // stream.steps_per_epoch
                index = state.step % stream.steps_per_epoch
                batch = stream.batch_at(epoch, index)
                wrong_for = _wrong_map(stream, config, epoch, index)
                metrics = train_step(state, batch, wrong_for)
                metrics["epoch"] = float(epoch)
                state.history.append(
                    np.array([metrics[k] for k in METRIC_FIELDS], dtype=np.float32)
                )
                if metrics_file is not None:
                    metrics_file.write(metrics_line(metrics) + "\n")
                if progress is not None:
                    progress(metrics)
                cadence = config.trainer.checkpoint_every
                if out_dir is not None and cadence > 0 and state.step % cadence == 0:
                    save_checkpoint(state, out_dir / f"step_{state.step:06d}.ckpt")
            if out_dir is not None:
                save_checkpoint(state, out_dir / "final.ckpt")
    finally:
        if metrics_file is not None:
            metrics_file.close()
    return state


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------


def save_checkpoint(state: TrainState, path: Path | str) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, tensor in state.models.named_tensors():
        arrays[f"param.{name}"] = tensor.data
    for opt_name, opt in (
        ("gen", state.opt_gen), ("dec", state.opt_dec), ("disc", state.opt_disc)
    ):
        for name, _ in opt.named:
            arrays[f"adam.{opt_name}.m.{name}"] = opt.m[name]
            arrays[f"adam.{opt_name}.v.{name}"] = opt.v[name]
    arrays["history"] = state.history_array()
    meta = {
        "kind": "train-state",
        "step": state.step,
        "adam_t": {"gen": state.opt_gen.t, "dec": state.opt_dec.t, "disc": state.opt_disc.t},
        "config": to_flat(state.config),
        "metric_fields": list(METRIC_FIELDS),
        "networks": ["gen", "dec", "disc"],
    }
    save_arrays(path, arrays, meta)


def load_checkpoint(path: Path | str) -> TrainState:
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "train-state":
        raise CheckpointError(f"{path}: container is not a training checkpoint")
    config = from_flat(meta["config"])
    state = init_state(config)
    for name, tensor in state.models.named_tensors():
        key = f"param.{name}"
        if key not in arrays:
            raise CheckpointError(f"{path}: missing parameter entry '{key}'")
        if tuple(arrays[key].shape) != tensor.data.shape:
            raise CheckpointError(
                f"{path}: entry '{key}' has shape {arrays[key].shape}, "
                f"expected {tensor.data.shape}"
            )
        tensor.data = np.ascontiguousarray(arrays[key])
    for opt_name, opt in (("gen", state.opt_gen), ("dec", state.opt_dec), ("disc", state.opt_disc)):
        opt.t = int(meta["adam_t"][opt_name])
        for name, _ in opt.named:
            opt.m[name] = np.ascontiguousarray(arrays[f"adam.{opt_name}.m.{name}"])
            opt.v[name] = np.ascontiguousarray(arrays[f"adam.{opt_name}.v.{name}"])
    state.step = int(meta["step"])
    history = arrays.get("history")
    state.history = [row.copy() for row in history] if history is not None and history.size else []
    return state


def epoch_mean(history: np.ndarray, field_name: str, epoch: int) -> float:
    """Mean of one metric over the records of one epoch."""
    step_col = METRIC_FIELDS.index("epoch")
    col = METRIC_FIELDS.index(field_name)
    rows = history[history[:, step_col] == epoch]
    if rows.size == 0:
        raise TrainingError(f"no metric records for epoch {epoch}")
    return float(rows[:, col].mean())
