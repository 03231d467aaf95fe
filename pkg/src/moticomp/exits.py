"""Early-exit machinery: policy networks, straight-through sampling, exit
balance statistics, and analytic multiply-accumulate accounting.

MAC counts cover matrix products only (one multiply plus one accumulate per
inner-loop step); element-wise work and activations are excluded. The same
convention is what a tape records, so analytic counts can be cross-checked
against an instrumented forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Tape, Tensor
from .errors import ConfigError, ShapeError
from .layers import bind, linear
from .predictor import Branch, PredictorConfig, PredictorParams

SOFT_VAR_EPS = 1e-9  # keeps the tape-side coefficient of variation differentiable at balance


@dataclass
class PolicyNetParams:
    """Small MLP from pooled branch features to one logit per exit."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @property
    def n_exits(self) -> int:
        return self.w2.shape[1]

    def named_parameters(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def init_policy(rng: np.random.Generator, feature_width: int, hidden: int,
                n_exits: int) -> PolicyNetParams:
    # zero logit head: untrained policies sample exits uniformly
    bound = 1.0 / np.sqrt(feature_width)
    return PolicyNetParams(
        w1=rng.uniform(-bound, bound, size=(feature_width, hidden)),
        b1=np.zeros((1, hidden)),
        w2=np.zeros((hidden, n_exits)),
        b2=np.zeros((1, n_exits)),
    )


def _policy_forward(tape: Tape, tensors: dict[str, Tensor], prefix: str,
                    h: Tensor) -> Tensor:
    """Logits (1, D) from encoded branch features (nodes, F): mean-pool then MLP."""
    n = h.shape[0]
    pooled = tape.matmul(tape.constant(np.full((1, n), 1.0 / n)), h)
    hidden = tape.tanh(linear(tape, pooled, tensors[f"{prefix}.w1"],
                              tensors[f"{prefix}.b1"]))
    return linear(tape, hidden, tensors[f"{prefix}.w2"], tensors[f"{prefix}.b2"])


def policy_forward(params: PolicyNetParams, x: np.ndarray) -> np.ndarray:
    """Exit logits for one branch input of encoded features, shape (D,)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.w1.shape[0]:
        raise ShapeError(f"features {x.shape} do not match policy input "
                         f"width {params.w1.shape[0]}")
    tape = Tape()
    tensors = bind(tape, {f"p.{k}": v for k, v in params.named_parameters().items()},
                   trainable=False)
    return _policy_forward(tape, tensors, "p", tape.constant(x)).values.reshape(-1).copy()


@dataclass(frozen=True)
class ExitDecision:
    """One-hot exit choice plus the soft probabilities that produced it."""

    b: np.ndarray
    soft: np.ndarray
    temperature: float

    def __post_init__(self):
        b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        soft = np.asarray(self.soft, dtype=np.float64).reshape(-1)
        if b.size != soft.size:
            raise ShapeError("b and soft lengths differ")
        if not (np.all((b == 0.0) | (b == 1.0)) and b.sum() == 1.0):
            raise ValueError("b must be exactly one-hot")
        if b[int(np.argmax(soft))] != 1.0:
            raise ValueError("b does not select the argmax of soft")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "soft", soft)

    @property
    def exit_index(self) -> int:
        """1-based exit index, matching branch_forward_to_exit."""
        return int(np.argmax(self.b)) + 1


def _gumbel_softmax_st(tape: Tape, logits: Tensor, temperature: float,
                       noise: np.ndarray) -> tuple[Tensor, Tensor]:
    """Tape-level straight-through draw; returns (hard one-hot, soft) tensors."""
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    noise = np.asarray(noise, dtype=np.float64).reshape(logits.shape)
    perturbed = tape.add(logits, tape.constant(noise))
    soft = tape.softmax_lastdim(tape.scale(perturbed, 1.0 / temperature))
    return tape.straight_through(soft), soft


def gumbel_softmax_st(logits: np.ndarray, temperature: float,
                      gumbel_noise: np.ndarray) -> ExitDecision:
    """One straight-through draw over exits from explicit Gumbel noise.

    Eval mode passes zeros as noise (deterministic argmax of the logits);
    ties break toward the lowest index.
    """
    logits = np.asarray(logits, dtype=np.float64).reshape(1, -1)
    tape = Tape()
    b, soft = _gumbel_softmax_st(tape, tape.constant(logits), temperature, gumbel_noise)
    return ExitDecision(b=b.values, soft=soft.values, temperature=float(temperature))


@dataclass
class TendencyStats:
    """Per-exit selection tallies across a batch and all branches."""

    counts: np.ndarray
    w_tendency: float = 1.0
    soft_counts: np.ndarray | None = None

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64).reshape(-1)
        if self.counts.size < 1 or np.any(self.counts < 0):
            raise ValueError("counts must be non-negative with at least one exit")


def tendency_counts(decisions: list[ExitDecision], w_tendency: float = 1.0) -> TendencyStats:
    """Tally how many decisions picked each exit; includes soft expected tallies."""
    if not decisions:
        raise ValueError("cannot tally an empty batch of decisions")
    n_exits = decisions[0].b.size
    counts = np.zeros(n_exits, dtype=np.int64)
    soft = np.zeros(n_exits)
    for d in decisions:
        if d.b.size != n_exits:
            raise ShapeError("decisions have differing exit counts")
        counts[d.exit_index - 1] += 1
        soft += d.soft
    return TendencyStats(counts=counts, w_tendency=w_tendency, soft_counts=soft)


def tendency_loss(stats: TendencyStats) -> float:
    """Scaled coefficient of variation (population) of the exit tallies."""
    counts = stats.counts.astype(np.float64)
    if counts.sum() <= 0:
        raise ValueError("tendency loss needs at least one counted decision")
    mean = counts.mean()
    return stats.w_tendency * float(counts.std() / mean)


def _tendency_loss_soft(tape: Tape, soft_sum: Tensor, w_tendency: float) -> Tensor:
    """Differentiable coefficient of variation of soft expected tallies (1, D)."""
    m1 = tape.mean(soft_sum)
    m2 = tape.mean(tape.hadamard(soft_sum, soft_sum))
    var = tape.add(m2, tape.scale(tape.hadamard(m1, m1), -1.0))
    std = tape.sqrt(tape.add(var, tape.constant(np.asarray(SOFT_VAR_EPS))))
    return tape.scale(tape.div(std, m1), w_tendency)


# ----------------------------------------------------------------------
# cost accounting

@dataclass(frozen=True)
class FlopsReport:
    """Cumulative MAC counts per branch and exit, plus an exit distribution.

    counts[branch][d-1] is the cost of running that branch to exit d
    (input encoder, blocks 1..d with their attention modules, output
    decoder, and the policy network). The distribution weights, one row per
    branch summing to 1, define the batch-weighted average.
    """

    branch_names: tuple[str, ...]
    counts: dict[str, tuple[int, ...]]
    exit_distribution: dict[str, tuple[float, ...]]

    def __post_init__(self):
        for name in self.branch_names:
            row = self.counts[name]
            if any(b <= a for a, b in zip(row, row[1:])):
                raise ValueError(f"MAC counts of branch {name} are not strictly increasing")
            dist = self.exit_distribution[name]
            if len(dist) != len(row) or any(w < 0 for w in dist):
                raise ValueError(f"bad exit distribution for branch {name}")
            if abs(sum(dist) - 1.0) > 1e-9:
                raise ValueError(f"exit distribution of branch {name} does not sum to 1")

    def branch_average(self, name: str) -> float:
        return float(np.dot(self.counts[name], self.exit_distribution[name]))

    def weighted_average_total(self) -> float:
        return sum(self.branch_average(name) for name in self.branch_names)

    def full_depth_total(self) -> int:
        return sum(self.counts[name][-1] for name in self.branch_names)

    def percent_saved(self) -> float:
        full = self.full_depth_total()
        return 100.0 * (1.0 - self.weighted_average_total() / full)

    def with_distribution(self, distribution: dict[str, tuple[float, ...]]) -> "FlopsReport":
        return replace(self, exit_distribution=dict(distribution))

    def to_csv(self) -> str:
        n_exits = len(next(iter(self.counts.values())))
        header = "branch," + ",".join(f"exit_{d}" for d in range(1, n_exits + 1))
        lines = [header]
        for name in self.branch_names:
            lines.append(name + "," + ",".join(str(c) for c in self.counts[name]))
        lines.append(f"weighted_average,{self.weighted_average_total():.1f},"
                     f"percent_saved_vs_exit_{n_exits},{self.percent_saved():.4f}")
        return "\n".join(lines) + "\n"


def gc_layer_macs(node_count: int, f_in: int, f_out: int) -> int:
    """A @ H costs n*n*f_in; (A @ H) @ W costs n*f_in*f_out."""
    return node_count * node_count * f_in + node_count * f_in * f_out


def attention_macs(node_count: int, width: int) -> int:
    """Q/K/V/output projections plus per-head score and context products."""
    proj = 4 * node_count * width * width
    scores_and_context = 2 * node_count * node_count * width
    return proj + scores_and_context


def policy_macs(node_count: int, width: int, hidden: int, n_exits: int) -> int:
    return node_count * width + width * hidden + hidden * n_exits


def branch_exit_macs(branch: Branch, config: PredictorConfig) -> tuple[int, ...]:
    """Cumulative MACs of one branch at each exit depth."""
    n = branch.node_count
    f = config.feature_width
    n_coeffs = config.resolved_n_coeffs
    fixed = (n * n_coeffs * f            # input encoder
             + n * f * n_coeffs          # output decoder
             + policy_macs(n, f, config.policy_hidden, config.n_blocks))
    per_block = (config.layers_per_block * gc_layer_macs(n, f, f)
                 + len(config.attention_positions) * attention_macs(n, f))
    return tuple(fixed + (d + 1) * per_block for d in range(config.n_blocks))


def count_flops(params: PredictorParams, exit_indices: tuple[int, int, int]) -> FlopsReport:
    """Analytic MAC table for every (branch, exit), routed at the given exits."""
    config = params.config
    names = tuple(b.kind for b in params.branches)
    counts = {}
    distribution = {}
    for branch, chosen in zip(params.branches, exit_indices):
        if not 1 <= chosen <= config.n_blocks:
            raise ValueError(f"exit index {chosen} outside 1..{config.n_blocks}")
        counts[branch.kind] = branch_exit_macs(branch, config)
        one_hot = [0.0] * config.n_blocks
        one_hot[chosen - 1] = 1.0
        distribution[branch.kind] = tuple(one_hot)
    return FlopsReport(branch_names=names, counts=counts,
                       exit_distribution=distribution)
