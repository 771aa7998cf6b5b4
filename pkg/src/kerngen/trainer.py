"""Training loops for the kernel-distance generator.

Three interchangeable step rules over a cycling dataset:

  * preliminary: two fresh latents per iteration, raw gradient update;
  * final: the delayed-sample rule, where the previous iteration's latent,
    outputs, and backprop vectors stand in for the second sample and the
    update is normalized per entry by a running gradient-power estimate;
  * batched: the final rule applied to column blocks, pairing column j of
    the current block with column j of the previous one.

All randomness flows from config.seed through named substreams, so the
parameter trajectory is a pure function of (config, data).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from .dataio import Dataset, latent_batch
from .generator import (
    GeneratorParams,
    GradPower,
    NetShape,
    backprop_pair,
    forward,
    init_params,
    outer_grad,
)
from .kernels import KernelSpec, SampleSet, mmd_score

ALGORITHMS = ("preliminary", "final", "batched")


class TrainingDiverged(RuntimeError):
    """Non-finite gradient or parameter values; carries the iteration index."""

    def __init__(self, iteration: int, detail: str):
        super().__init__(f"training diverged at iteration {iteration}: {detail}")
        self.iteration = iteration


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a training run besides the dataset.

    lam is the gradient-power smoothing factor (attribute named lam because
    `lambda` is reserved; serialized as "lambda"). mu and rounds admit 0 so
    that no-op runs are expressible. zero_power_init forces the power
    estimates to start from zero instead of the first gradient's square.
    """

    shape: NetShape
    kernel: KernelSpec
    mu: float = 1e-3
    lam: float = 0.999
    epsilon: float = 1e-8
    batch_K: int = 1
    rounds: int = 1
    seed: int = 0
    algorithm: str = "final"
    zero_power_init: bool = False
    shuffle: bool = False
    trace_every: int = 1000
    eval_count: int = 1000

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise ValueError(f"lambda must lie in (0,1), got {self.lam}")
        if self.mu < 0.0:
            raise ValueError(f"mu must be >= 0, got {self.mu}")
        if self.epsilon <= 0.0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.batch_K < 1:
            raise ValueError(f"batch_K must be >= 1, got {self.batch_K}")
        if self.rounds < 0:
            raise ValueError(f"rounds must be >= 0, got {self.rounds}")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.trace_every < 1 or self.eval_count < 1:
            raise ValueError("trace_every and eval_count must be >= 1")

    def to_dict(self) -> dict:
        return {
            "n": self.shape.n,
            "m": self.shape.m,
            "k": self.shape.k,
            "bandwidth_h": self.kernel.bandwidth_h,
            "mu": self.mu,
            "lambda": self.lam,
            "epsilon": self.epsilon,
            "batch_K": self.batch_K,
            "rounds": self.rounds,
            "seed": self.seed,
            "algorithm": self.algorithm,
            "zero_power_init": self.zero_power_init,
            "shuffle": self.shuffle,
            "trace_every": self.trace_every,
            "eval_count": self.eval_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(
            shape=NetShape(n=int(d["n"]), m=int(d["m"]), k=int(d["k"])),
            kernel=KernelSpec(bandwidth_h=float(d["bandwidth_h"])),
            mu=float(d.get("mu", 1e-3)),
            lam=float(d.get("lambda", 0.999)),
            epsilon=float(d.get("epsilon", 1e-8)),
            batch_K=int(d.get("batch_K", 1)),
            rounds=int(d.get("rounds", 1)),
            seed=int(d.get("seed", 0)),
            algorithm=str(d.get("algorithm", "final")),
            zero_power_init=bool(d.get("zero_power_init", False)),
            shuffle=bool(d.get("shuffle", False)),
            trace_every=int(d.get("trace_every", 1000)),
            eval_count=int(d.get("eval_count", 1000)),
        )


@dataclass
class DelayedSample:
    """The previous iteration's (Z, S, Y, V, U), reused as the second sample.

    Vectors for the online rules, (dim, K) blocks for the batched rule;
    initialized to zero, which is also what the first iteration pairs
    against.
    """

    Z: np.ndarray
    S: np.ndarray
    Y: np.ndarray
    V: np.ndarray
    U: np.ndarray

    @classmethod
    def zeros(cls, shape: NetShape, batch_K: int | None = None) -> "DelayedSample":
        def block(dim):
            return np.zeros(dim) if batch_K is None else np.zeros((dim, batch_K))

        return cls(Z=block(shape.n), S=block(shape.m), Y=block(shape.k),
                   V=block(shape.k), U=block(shape.m))


@dataclass
class TracePoint:
    iteration: int
    empirical_loss: float
    mmd_score: float
    wall_ms: float


@dataclass
class TrainerState:
    """Mutable loop state; step functions update it in place and return it."""

    params: GeneratorParams
    power: GradPower
    prev: DelayedSample
    iteration: int
    rng: np.random.Generator
    config: TrainConfig


def _stream(seed: int, key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))


def init_state(config: TrainConfig) -> TrainerState:
    batch = config.batch_K if config.algorithm == "batched" else None
    return TrainerState(
        params=init_params(config.shape, config.seed),
        power=GradPower.zeros(config.shape),
        prev=DelayedSample.zeros(config.shape, batch),
        iteration=0,
        rng=_stream(config.seed, 0),
        config=config,
    )


def _residual(y: np.ndarray, x: np.ndarray, y_other: np.ndarray, h: float) -> np.ndarray:
    """(y-x) e^{-|y-x|^2/h} - (y-y_other) e^{-|y-y_other|^2/h}.

    This is h/2 times the output-space gradient of the triple kernel loss;
    the residual convention keeps that factor out of the update, so mu is
    an effective learning rate of mu*h/2 in gradient units.
    """
    dx = y - x
    dp = y - y_other
    return dx * np.exp(-np.sum(dx * dx) / h) - dp * np.exp(-np.sum(dp * dp) / h)


def _residual_block(Y: np.ndarray, X: np.ndarray, Y_prev: np.ndarray, h: float) -> np.ndarray:
    DX = Y - X
    DP = Y - Y_prev
    kern_x = np.exp(-np.sum(DX * DX, axis=0) / h)
    kern_p = np.exp(-np.sum(DP * DP, axis=0) / h)
    return DX * kern_x - DP * kern_p


def _check_finite(state: TrainerState, G: np.ndarray, D: np.ndarray) -> None:
    if not (np.all(np.isfinite(G)) and np.all(np.isfinite(D))):
        raise TrainingDiverged(state.iteration, "non-finite gradient entries")


def _apply_plain(state: TrainerState, G: np.ndarray, D: np.ndarray) -> None:
    mu = state.config.mu
    p = state.params
    m, n = p.A.shape
    p.B -= mu * G[:, :m]
    p.b -= mu * G[:, m]
    p.A -= mu * D[:, :n]
    p.a -= mu * D[:, n]


def _apply_normalized(state: TrainerState, G: np.ndarray, D: np.ndarray) -> None:
    cfg = state.config
    pw = state.power
    if state.iteration == 0 and not cfg.zero_power_init:
        # First-ever step seeds the power estimate from the gradient itself,
        # which keeps the initial normalized step near mu instead of
        # mu/sqrt(1-lambda).
        pw.M = G * G
        pw.N = D * D
    else:
        pw.M = cfg.lam * pw.M + (1.0 - cfg.lam) * (G * G)
        pw.N = cfg.lam * pw.N + (1.0 - cfg.lam) * (D * D)
    mu, eps = cfg.mu, cfg.epsilon
    p = state.params
    m, n = p.A.shape
    stepB = mu * G / np.sqrt(pw.M + eps)
    stepA = mu * D / np.sqrt(pw.N + eps)
    p.B -= stepB[:, :m]
    p.b -= stepB[:, m]
    p.A -= stepA[:, :n]
    p.a -= stepA[:, n]


def step_preliminary(state: TrainerState, x: np.ndarray, *, normalize: bool = False) -> TrainerState:
    """One update from two fresh independent latents.

    The raw-gradient update is the definitional rule; normalize=True swaps
    in the same power-normalized update the delayed rule uses, which makes
    the two directly comparable at equal gradient budgets.
    """
    cfg = state.config
    h = cfg.kernel.bandwidth_h
    n = cfg.shape.n
    z1 = latent_batch(state.rng, n, 1)[:, 0]
    z2 = latent_batch(state.rng, n, 1)[:, 0]
    c1 = forward(state.params, z1)
    c2 = forward(state.params, z2)
    r1 = _residual(c1.Y, x, c2.Y, h)
    r2 = _residual(c2.Y, x, c1.Y, h)
    p1 = backprop_pair(state.params, c1, r1)
    p2 = backprop_pair(state.params, c2, r2)
    G = outer_grad(p1.V, c1.S) + outer_grad(p2.V, c2.S)
    D = outer_grad(p1.U, z1) + outer_grad(p2.U, z2)
    _check_finite(state, G, D)
    if normalize:
        _apply_normalized(state, G, D)
    else:
        _apply_plain(state, G, D)
    state.iteration += 1
    return state


def step_final(state: TrainerState, x: np.ndarray) -> TrainerState:
    """One delayed-sample update: one fresh latent, previous iterate reused."""
    cfg = state.config
    h = cfg.kernel.bandwidth_h
    prev = state.prev
    z = latent_batch(state.rng, cfg.shape.n, 1)[:, 0]
    cache = forward(state.params, z)
    r = _residual(cache.Y, x, prev.Y, h)
    pair = backprop_pair(state.params, cache, r)
    G = outer_grad(pair.V, cache.S) + outer_grad(prev.V, prev.S)
    D = outer_grad(pair.U, z) + outer_grad(prev.U, prev.Z)
    _check_finite(state, G, D)
    _apply_normalized(state, G, D)
    state.prev = DelayedSample(Z=z, S=cache.S, Y=cache.Y, V=pair.V, U=pair.U)
    state.iteration += 1
    return state


def step_batched(state: TrainerState, x_block: np.ndarray) -> TrainerState:
    """One delayed-sample update over a block of batch_K columns.

    Column j of the current block pairs with column j of the previous one;
    gradients sum over both blocks. With batch_K=1 this consumes the same
    latent stream as step_final and reproduces its trajectory exactly.
    """
    cfg = state.config
    h = cfg.kernel.bandwidth_h
    K = cfg.batch_K
    if x_block.ndim != 2 or x_block.shape != (cfg.shape.k, K):
        raise ValueError(
            f"batched step needs a ({cfg.shape.k}, {K}) block, got {x_block.shape}"
        )
    prev = state.prev
    Z = latent_batch(state.rng, cfg.shape.n, K)
    cache = forward(state.params, Z)
    R = _residual_block(cache.Y, x_block, prev.Y, h)
    pair = backprop_pair(state.params, cache, R)
    G = outer_grad(pair.V, cache.S) + outer_grad(prev.V, prev.S)
    D = outer_grad(pair.U, Z) + outer_grad(prev.U, prev.Z)
    _check_finite(state, G, D)
    _apply_normalized(state, G, D)
    state.prev = DelayedSample(Z=Z, S=cache.S, Y=cache.Y, V=pair.V, U=pair.U)
    state.iteration += 1
    return state


class _Evaluator:
    """Fixed evaluation kit: frozen latent pairs and a fixed data slice.

    The latents and the slice never change during a run, so successive
    trace points measure the parameters and nothing else.
    """

    def __init__(self, config: TrainConfig, data: Dataset):
        E = min(config.eval_count, data.count)
        rng = _stream(config.seed, 1)
        self.Z1 = latent_batch(rng, config.shape.n, E)
        self.Z2 = latent_batch(rng, config.shape.n, E)
        self.X = data.columns[:, data.count - E:]
        self.kernel = config.kernel
        self.h = config.kernel.bandwidth_h

    def measure(self, params: GeneratorParams) -> tuple[float, float]:
        Y1 = forward(params, self.Z1).Y
        Y2 = forward(params, self.Z2).Y

        def diag_kern(P, Q):
            d = P - Q
            return np.exp(-np.sum(d * d, axis=0) / self.h)

        loss = float(np.mean(
            diag_kern(Y1, Y2) - diag_kern(Y1, self.X) - diag_kern(Y2, self.X)
        ))
        score = mmd_score(SampleSet(Y1), SampleSet(self.X), self.kernel)
        return loss, score


def train(config: TrainConfig, data: Dataset) -> tuple[GeneratorParams, list[TracePoint]]:
    """Run config.rounds full sweeps of the dataset; return params and trace.

    The dataset is consumed in stored order each sweep unless config.shuffle
    is set, in which case a seeded permutation is drawn per round. The
    batched rule drops a trailing partial block. A trace point is emitted at
    iteration 0, every trace_every steps, and at the end.
    """
    state, points = train_state(config, data)
    return state.params, points


def train_state(config: TrainConfig, data: Dataset) -> tuple[TrainerState, list[TracePoint]]:
    """Same loop as train, returning the full final state for checkpointing."""
    if data.dim != config.shape.k:
        raise ValueError(f"dataset dim {data.dim} != network output dim {config.shape.k}")
    state = init_state(config)
    evaluator = _Evaluator(config, data)
    t0 = time.perf_counter()

    points: list[TracePoint] = []

    def emit():
        loss, score = evaluator.measure(state.params)
        points.append(TracePoint(
            iteration=state.iteration,
            empirical_loss=loss,
            mmd_score=score,
            wall_ms=(time.perf_counter() - t0) * 1e3,
        ))

    emit()
    shuffle_rng = _stream(config.seed, 2) if config.shuffle else None
    steps = {"preliminary": step_preliminary, "final": step_final}.get(config.algorithm)
    K = config.batch_K
    for _ in range(config.rounds):
        order = (shuffle_rng.permutation(data.count) if shuffle_rng is not None
                 else np.arange(data.count))
        if config.algorithm == "batched":
            for start in range(0, data.count - K + 1, K):
                step_batched(state, data.columns[:, order[start:start + K]])
                if state.iteration % config.trace_every == 0:
                    emit()
        else:
            for j in order:
                steps(state, data.columns[:, j])
                if state.iteration % config.trace_every == 0:
                    emit()
    if points[-1].iteration != state.iteration:
        emit()
    return state, points


def generate(params: GeneratorParams, count: int, seed: int) -> SampleSet:
    """Push count fresh standard-Normal latents through the network."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    Z = latent_batch(rng, params.shape.n, count)
    return SampleSet(forward(params, Z).Y)


def write_trace_csv(points: list[TracePoint], path: str, config: TrainConfig | None = None) -> None:
    """Write the loss trace; the effective config is echoed in a comment."""
    with open(path, "w") as fh:
        if config is not None:
            fh.write("# config: " + json.dumps(config.to_dict(), sort_keys=True) + "\n")
        fh.write("iteration,empirical_loss,mmd_score,wall_ms\n")
        for p in points:
            fh.write(f"{p.iteration},{p.empirical_loss!r},{p.mmd_score!r},{p.wall_ms:.3f}\n")


def read_trace_csv(path: str) -> tuple[list[TracePoint], dict | None]:
    config = None
    points = []
    with open(path, "r") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("# config:"):
                config = json.loads(line[len("# config:"):])
                continue
            if line.startswith("#") or line.startswith("iteration"):
                continue
            it, loss, score, wall = line.split(",")
            points.append(TracePoint(int(it), float(loss), float(score), float(wall)))
    return points, config
