"""Bi-level distillation loop.

Each outer step samples a real mini-batch and ``J`` starting weights, takes
one differentiable SGD step of the learner on the distilled data, scores
the updated learner on the real batch, and moves the distilled data (and
optionally labels and the inner learning rate) down the gradient of the
summed real-data losses.
"""
from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .classifier import ArchSpec, InitSpec, TextCnnParams, init, loss
from .corpus import Corpus, sample_indices
from .encoder import Encoder
from .errors import ArgumentError, NumericalError
from .rng import make_rng
from .strategies import (ETA_FLOOR, DistilledData, StrategyKind, init_distilled, materialize,
                         sample_gumbel)


@dataclass
class DistillConfig:
    strategy: str = "vanilla"
    samples_per_class: int = 10
    steps: int = 2000            # T
    batch_size: int = 64         # n
    outer_lr: float = 0.3        # alpha
    inits_per_step: int = 4      # J
    init_mode: str = "fixed"
    eta0: float = 0.1
    learn_labels: bool = False
    learn_eta: bool = True
    optimizer: str = "sgd"       # or "adam"
    tau: float = 0.5
    tau_final: float | None = None
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        self.strategy = StrategyKind(self.strategy).value
        if self.steps < 1:
            raise ArgumentError("steps (T) must be >= 1")
        if self.inits_per_step < 1:
            raise ArgumentError("inits_per_step (J) must be >= 1")
        if self.outer_lr < 0:
            raise ArgumentError("outer_lr must be >= 0")
        if self.batch_size < 1 or self.samples_per_class < 1:
            raise ArgumentError("batch_size and samples_per_class must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ArgumentError(f"unknown optimizer {self.optimizer!r}")
        if self.tau <= 0 or (self.tau_final is not None and self.tau_final <= 0):
            raise ArgumentError("temperatures must be positive")
        if self.threads < 1:
            raise ArgumentError("threads must be >= 1")
        InitSpec(self.init_mode, self.seed)

    @property
    def init_spec(self) -> InitSpec:
        return InitSpec(self.init_mode, self.seed)

    def tau_at(self, step: int) -> float:
        if self.tau_final is None or self.steps == 1:
            return self.tau
        frac = step / (self.steps - 1)
        return self.tau + frac * (self.tau_final - self.tau)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DistillRunRecord:
    meta_losses: list = field(default_factory=list)
    etas: list = field(default_factory=list)
    wall_clock: float = 0.0
    config: dict = field(default_factory=dict)
    distilled: DistilledData | None = None

    def to_dict(self, include_timing: bool = False) -> dict:
        out = {"config": self.config, "meta_losses": self.meta_losses, "etas": self.etas}
        if include_timing:
            out["wall_clock"] = self.wall_clock
        return out

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True) + "\n"


@dataclass
class MetaGradients:
    x: np.ndarray
    y: np.ndarray
    eta: float


def _one_init(theta0: TextCnnParams, X: Tensor, y_t: Tensor, eta: Tensor,
              real_x: Tensor, real_y: np.ndarray, wrt: list):
    params = theta0.leaves()
    outer, grads = ad.grad_through_step(
        lambda p: loss(params.with_values(p), X, y_t),
        lambda p: loss(params.with_values(p), real_x, real_y),
        params.values(), eta, wrt)
    return outer.item(), [g.data for g in grads]


def meta_step(dd: DistilledData, real_x: np.ndarray, real_y: np.ndarray, inits: list,
              encoder: Encoder, noise=None, learn_labels: bool = True,
              executor: ThreadPoolExecutor | None = None):
    """Gradients of ``sum_j L_j`` with respect to ``(x, y, eta)`` and that sum.

    ``L_j`` is the real-batch loss after one SGD step from ``inits[j]`` on
    the materialized distilled batch. Per-``j`` results are summed in list
    order, so a thread pool gives the same bits as sequential execution.
    When ``learn_labels`` is off the label gradient is returned as zeros.
    """
    if not inits:
        raise ArgumentError("meta_step needs at least one initialization")
    x_t = Tensor(dd.x, requires_grad=True)
    y_t = Tensor(dd.y, requires_grad=learn_labels)
    eta = Tensor(dd.eta, requires_grad=True)
    X = materialize(dd, encoder, x=x_t, noise=noise)
    real = Tensor(real_x)
    wrt = [X, y_t, eta] if learn_labels else [X, eta]

    def run(theta0):
        return _one_init(theta0, X, y_t, eta, real, real_y, wrt)

    results = list(executor.map(run, inits)) if executor else [run(t) for t in inits]

    total = 0.0
    sums = None
    for value, grads in results:
        total += value
        sums = [g.copy() for g in grads] if sums is None else [a + b for a, b in zip(sums, grads)]
    gX = sums[0]
    g_eta = float(sums[-1])
    g_y = sums[1] if learn_labels else np.zeros_like(dd.y)
    if X is x_t:
        g_x = gX
    else:
        (g_x_t,) = ad.grad(X, [x_t], grad_output=gX)
        g_x = g_x_t.data
    return MetaGradients(g_x, g_y, g_eta), total


def project_simplex(rows: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row onto the probability simplex."""
    rows = np.atleast_2d(rows)
    n = rows.shape[1]
    u = -np.sort(-rows, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    k = np.arange(1, n + 1)
    cond = u - css / k > 0
    rho = n - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(len(rows)), rho] / (rho + 1)
    return np.maximum(rows - theta[:, None], 0.0)


class _Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, 0

    def tick(self):
        self.t += 1

    def delta(self, key, g):
        m = self.b1 * self.m.get(key, 0.0) + (1 - self.b1) * g
        v = self.b2 * self.v.get(key, 0.0) + (1 - self.b2) * g * g
        self.m[key], self.v[key] = m, v
        mhat = m / (1 - self.b1 ** self.t)
        vhat = v / (1 - self.b2 ** self.t)
        return self.lr * mhat / (np.sqrt(vhat) + self.eps)


def distill(config: DistillConfig, corpus: Corpus, encoder: Encoder,
            arch: ArchSpec | None = None,
            callback: Callable[[int, float, float], None] | None = None):
    """Run the full outer loop; returns ``(DistilledData, DistillRunRecord)``."""
    C = corpus.num_classes
    if not corpus.train:
        raise ArgumentError("training split is empty")
    arch = arch or ArchSpec(classes=C, embed_dim=encoder.dim)
    if arch.classes != C or arch.embed_dim != encoder.dim:
        raise ArgumentError("architecture does not match corpus classes / embedding width")
    if encoder.seq_len < arch.min_length:
        raise ArgumentError(f"sentence length {encoder.seq_len} < largest filter {arch.min_length}")

    kind = StrategyKind(config.strategy)
    dd = init_distilled(kind, config.samples_per_class, C, encoder, config.eta0,
                        config.seed, config.tau)
    real_x_all = encoder.encode_texts(corpus.texts("train"))
    real_y_all = np.eye(C)[corpus.labels("train")]
    batch_rng = make_rng(config.seed, "distill", "batch")
    gumbel_rng = make_rng(config.seed, "distill", "gumbel")
    spec = config.init_spec
    fixed = init(arch, spec) if spec.mode == "fixed" else None
    J = config.inits_per_step
    adam = _Adam(config.outer_lr) if config.optimizer == "adam" else None

    record = DistillRunRecord(config={**config.to_dict(), "seq_len": encoder.seq_len,
                                      "embed_dim": encoder.dim, "vocab_size": encoder.vocab_size,
                                      "arch": arch.to_dict()})
    start = time.perf_counter()
    executor = ThreadPoolExecutor(config.threads) if config.threads > 1 else None
    try:
        for step in range(config.steps):
            idx = sample_indices(len(real_x_all), config.batch_size, batch_rng)
            if fixed is not None:
                inits = [fixed] * J
            else:
                inits = [init(arch, spec, step * J + j) for j in range(J)]
            noise = None
            if kind is StrategyKind.VOCAB_GUMBEL:
                dd.tau = config.tau_at(step)
                noise = sample_gumbel(dd.x.shape, gumbel_rng)
            try:
                grads, meta = meta_step(dd, real_x_all[idx], real_y_all[idx], inits, encoder,
                                        noise=noise, learn_labels=config.learn_labels,
                                        executor=executor)
            except NumericalError as exc:
                raise NumericalError(f"step {step}: {exc}; config={config.to_dict()}") from exc
            if not np.isfinite(meta):
                raise NumericalError(f"step {step}: non-finite meta-loss; config={config.to_dict()}")

            if adam is not None:
                adam.tick()
                dd.x = dd.x - adam.delta("x", grads.x)
                if config.learn_labels:
                    dd.y = project_simplex(dd.y - adam.delta("y", grads.y))
                if config.learn_eta:
                    dd.eta = max(dd.eta - float(adam.delta("eta", grads.eta)), ETA_FLOOR)
            else:
                a = config.outer_lr
                dd.x = dd.x - a * grads.x
                if config.learn_labels:
                    dd.y = project_simplex(dd.y - a * grads.y)
                if config.learn_eta:
                    dd.eta = max(dd.eta - a * grads.eta, ETA_FLOOR)

            record.meta_losses.append(meta)
            record.etas.append(dd.eta)
            if callback is not None:
                callback(step, meta, dd.eta)
    finally:
        if executor is not None:
            executor.shutdown()
    record.wall_clock = time.perf_counter() - start
    record.distilled = dd
    return dd, record
