"""Two-phase training: full-precision-gradient QAT, then quantized finetuning.

Phase 1 ("pretrain") trains the binary network with exact gradients on a
source task. Phase 2 ("finetune") switches the binary layers to the
configured gradient mode and continues on the target task. With
``pretrain_epochs: 0`` phase 2 starts from a fresh model.

Metrics go to one CSV (columns of :class:`MetricsRow`). Wall-clock times are
kept apart in :class:`TimingRow` so the metrics file is byte-identical
across reruns.
"""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ..agp import agp_quantizer
from ..layers import GradMode
from ..optim import make_optimizer
from ..quant import GroupAxis, counters, empirical_variance, quantizer
from ..rng import make_rng
from .config import RunConfig
from .datasets import Split, make_dataset
from .model import Model, build_conv, build_mlp, softmax_xent

# stream keys under the master seed
_INIT, _PRETRAIN, _FINETUNE, _PROBE = 0, 1, 2, 3


@dataclass
class MetricsRow:
    phase: str  # pretrain | finetune
    epoch: int
    step: int  # optimizer steps so far, counted across both phases
    split: str  # train | test | grad
    loss: float | None = None
    accuracy: float | None = None
    layer: str = ""  # grad rows: binary layer, "/sample" or "/channel" branch
    quant_variance: float | None = None
    sum_p: float | None = None
    kept: int | None = None
    groups: int | None = None


@dataclass
class TimingRow:
    phase: str
    epoch: int
    wall_seconds: float


class Divergence(RuntimeError):
    """Training produced a non-finite loss or parameter."""

    def __init__(self, phase: str, epoch: int, step: int, what: str):
        super().__init__(f"divergence in {phase} epoch {epoch} at step {step}: {what}")
        self.phase, self.epoch, self.step, self.what = phase, epoch, step, what


@dataclass
class TrainResult:
    model: Model
    rows: list[MetricsRow]
    timing: list[TimingRow]
    checkpoint: list[np.ndarray] | None
    # counter increments observed inside the backward passes of phase 2
    pipeline_counters: Counter = field(default_factory=Counter)
    diverged: Divergence | None = None

    @property
    def final_test_accuracy(self) -> float:
        tests = [r for r in self.rows if r.split == "test"]
        return tests[-1].accuracy if tests else float("nan")


def build_model(cfg: RunConfig, in_shape, classes: int) -> Model:
    rng = make_rng(cfg.seed, _INIT)
    if cfg.conv:
        return build_conv(in_shape[0], cfg.channels, classes, rng)
    return build_mlp(in_shape[0], cfg.hidden, classes, rng)


def datasets(cfg: RunConfig) -> tuple[tuple[Split, Split], tuple[Split, Split]]:
    """(source, target) train/test splits."""
    target = make_dataset(cfg.dataset, cfg.n_samples, cfg.noise, cfg.dataset_seed, cfg.test_fraction)
    source = make_dataset(
        cfg.dataset, cfg.n_samples, cfg.noise, cfg.pretrain_seed, cfg.test_fraction,
        rotate=cfg.pretrain_rotate,
    )
    return source, target


def evaluate(model: Model, data: Split) -> tuple[float, float]:
    logits = model.forward(data.x)
    loss, _ = softmax_xent(logits, data.y)
    return loss, float(np.mean(logits.argmax(axis=1) == data.y))


def _estimator(mode: GradMode, bits: int, axis: GroupAxis):
    if mode is GradMode.AGP_SCQ:
        return agp_quantizer(axis, bits)
    return quantizer(GroupAxis.PER_SAMPLE, 1 if mode is GradMode.PSQ1 else 8)


def grad_diagnostics(model: Model, mode: GradMode, bits: int, trials: int, rng) -> list[dict]:
    """Per binary layer: quantizer variance on the last gradient snapshot,
    plus keep statistics of the prune masks in AGP mode."""
    out = []
    for i, layer in enumerate(model.binary_layers, 1):
        info = layer.last_info
        if info is None:
            continue
        g = info["grad"]
        n, d = g.shape
        if mode is GradMode.FULL:
            out.append(dict(layer=f"bin{i}", quant_variance=0.0, sum_p=float(n), kept=n, groups=n))
        elif mode is GradMode.AGP_SCQ:
            for tag, axis, mask in zip(("sample", "channel"), (GroupAxis.PER_SAMPLE, GroupAxis.PER_CHANNEL), info["masks"]):
                var = empirical_variance(g, _estimator(mode, bits, axis), trials, rng)
                out.append(dict(
                    layer=f"bin{i}/{tag}", quant_variance=var, sum_p=float(mask.probs.sum()),
                    kept=int(mask.draws.sum()), groups=mask.n_groups,
                ))
        else:
            var = empirical_variance(g, _estimator(mode, bits, GroupAxis.PER_SAMPLE), trials, rng)
            out.append(dict(layer=f"bin{i}", quant_variance=var, sum_p=float(n), kept=n, groups=n))
    return out


class _Runner:
    def __init__(self, cfg: RunConfig, model: Model):
        self.cfg = cfg
        self.model = model
        self.rows: list[MetricsRow] = []
        self.timing: list[TimingRow] = []
        self.step = 0
        self.pipeline = Counter()

    def eval_rows(self, phase, epoch, train: Split, test: Split):
        for split, data in (("train", train), ("test", test)):
            loss, acc = evaluate(self.model, data)
            self.rows.append(MetricsRow(phase, epoch, self.step, split, loss, acc))

    def phase(self, phase, data, opt, mode, bits, epochs, rng, probe_rng=None):
        # overflow is expected on the way to a divergence, which is reported
        with np.errstate(over="ignore", invalid="ignore"):
            self._phase(phase, data, opt, mode, bits, epochs, rng, probe_rng)

    def _phase(self, phase, data, opt, mode, bits, epochs, rng, probe_rng):
        cfg, model = self.cfg, self.model
        train, test = data
        model.set_mode(mode, bits)
        self.eval_rows(phase, 0, train, test)
        for epoch in range(1, epochs + 1):
            t0 = time.perf_counter()
            perm = rng.permutation(len(train))
            for start in range(0, len(train), cfg.batch_size):
                idx = perm[start : start + cfg.batch_size]
                loss, dlogits = softmax_xent(model.forward(train.x[idx]), train.y[idx])
                if not np.isfinite(loss):
                    raise Divergence(phase, epoch, self.step, f"loss is {loss}")
                before = counters.copy()
                try:
                    grads = model.backward(dlogits, rng)
                except FloatingPointError as exc:
                    raise Divergence(phase, epoch, self.step, str(exc)) from None
                if phase == "finetune":
                    self.pipeline.update(counters - before)
                opt.update(model.params(), grads)
                self.step += 1
                if not all(np.isfinite(p).all() for p in model.params()):
                    raise Divergence(phase, epoch, self.step, "non-finite parameters")
            self.timing.append(TimingRow(phase, epoch, time.perf_counter() - t0))
            self.eval_rows(phase, epoch, train, test)
            if probe_rng is not None:
                for d in grad_diagnostics(model, mode, bits, cfg.probe_trials, probe_rng):
                    self.rows.append(MetricsRow(phase, epoch, self.step, "grad", **d))


def pretrain(cfg: RunConfig) -> TrainResult:
    """Phase 1 only: exact-gradient QAT on the source task with Adam."""
    (source, _) = datasets(cfg)
    model = build_model(cfg, source[0].x.shape[1:], 2)
    run = _Runner(cfg, model)
    opt = make_optimizer("adam", cfg.pretrain_lr)
    run.phase("pretrain", source, opt, GradMode.FULL, cfg.bits, cfg.pretrain_epochs,
              make_rng(cfg.seed, _PRETRAIN))
    return TrainResult(model, run.rows, run.timing, model.state())


def train(cfg: RunConfig, checkpoint: list[np.ndarray] | None = None) -> TrainResult:
    """Full two-phase run. A given ``checkpoint`` (model state after phase 1)
    replaces running phase 1 again.

    Divergence does not raise: the partial result comes back with
    ``diverged`` set so the caller can still write the rows logged so far.
    """
    (source, target) = datasets(cfg)
    model = build_model(cfg, target[0].x.shape[1:], 2)
    run = _Runner(cfg, model)
    try:
        if checkpoint is not None:
            model.load(checkpoint)
        elif cfg.pretrain_epochs > 0:
            run.phase("pretrain", source, make_optimizer("adam", cfg.pretrain_lr), GradMode.FULL,
                      cfg.bits, cfg.pretrain_epochs, make_rng(cfg.seed, _PRETRAIN))
        ckpt = model.state()
        kw = {"schedule": cfg.schedule}
        opt = make_optimizer(cfg.optimizer, cfg.lr, **kw)
        run.phase("finetune", target, opt, cfg.grad_mode, cfg.bits, cfg.epochs,
                  make_rng(cfg.seed, _FINETUNE), make_rng(cfg.seed, _PROBE))
    except Divergence as exc:
        return TrainResult(model, run.rows, run.timing, None, run.pipeline, exc)
    return TrainResult(model, run.rows, run.timing, ckpt, run.pipeline)
