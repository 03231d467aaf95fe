"""Loss assembly, the Adam optimizer, the predictor training loop, and
horizon-wise evaluation against the zero-velocity baseline.

Two error conventions coexist deliberately: the training loss averages
squared per-joint norms over all N+T frames, while reported numbers use the
plain Euclidean per-joint distance at individual future frames.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor
from .errors import ConfigError, NumericError, ShapeError
from .exits import (PolicyNetParams, _gumbel_softmax_st, _policy_forward,
                    _tendency_loss_soft, count_flops, init_policy,
                    FlopsReport, TendencyStats, tendency_loss)
from .layers import bind
from .motion import MotionSequence, PartLayout
from .predictor import (PredictorConfig, PredictorParams, _assemble_prediction,
                        _branch_encode, _branch_tail, _prepare_branch_inputs,
                        init_predictor, pad_last_frame)

DEFAULT_W_TENDENCY = 1000.0  # hand-tuned so exit balance competes with the mm^2 loss


# ----------------------------------------------------------------------
# losses and metrics

def mpjpe_loss(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean squared per-joint position error over all joints and frames."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] % 3 != 0:
        raise ShapeError(f"incompatible shapes {pred.shape} vs {gt.shape}")
    frames, width = pred.shape
    joints = width // 3
    return float(np.sum((pred - gt) ** 2) / (joints * frames))


def _mpjpe_loss_t(tape: Tape, pred: Tensor, gt: np.ndarray) -> Tensor:
    frames, width = gt.shape
    diff = tape.add(pred, tape.constant(-gt))
    return tape.scale(tape.sum_sq(diff), 3.0 / (width * frames))


def mpjpe_metric(pred: np.ndarray, gt: np.ndarray, frame_index: int) -> float:
    """Mean per-joint Euclidean distance at one frame, in millimeters.

    Both inputs hold the future frames only; frame_index is 0-based.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2:
        raise ShapeError(f"incompatible shapes {pred.shape} vs {gt.shape}")
    if not 0 <= frame_index < pred.shape[0]:
        raise ValueError(f"frame index {frame_index} outside 0..{pred.shape[0] - 1}")
    diff = (pred[frame_index] - gt[frame_index]).reshape(-1, 3)
    return float(np.linalg.norm(diff, axis=1).mean())


def total_loss(pred: np.ndarray, gt: np.ndarray, stats: TendencyStats,
               in_constraint_phase: bool) -> float:
    """Training objective: squared-error term plus the balance term when active."""
    base = mpjpe_loss(pred, gt)
    return base + (tendency_loss(stats) if in_constraint_phase else 0.0)


# ----------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(v) for k, v in params.items()},
                   v={k: np.zeros_like(v) for k, v in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected update, in place. Returns (params, state)."""
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if g is None or g.shape != p.shape:
            raise ShapeError(f"gradient of {name} missing or mis-shaped")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - beta1) * (g - m)
        v += (1.0 - beta2) * (g * g - v)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state


# ----------------------------------------------------------------------
# the model bundle and its training loop

@dataclass
class PredictorModel:
    """Predictor parameters plus one exit policy network per branch."""

    params: PredictorParams
    policies: list[PolicyNetParams]

    def __post_init__(self):
        if len(self.policies) != len(self.params.branches):
            raise ConfigError("one policy network required per branch")

    def named_parameters(self) -> dict[str, np.ndarray]:
        out = self.params.named_parameters()
        for branch, policy in zip(self.params.branches, self.policies):
            for key, arr in policy.named_parameters().items():
                out[f"policy.{branch.kind}.{key}"] = arr
        return out


def init_predictor_model(rng: np.random.Generator, layout: PartLayout,
                         config: PredictorConfig) -> PredictorModel:
    params = init_predictor(rng, layout, config)
    policies = [init_policy(rng, config.feature_width, config.policy_hidden,
                            config.n_blocks)
                for _ in params.branches]
    return PredictorModel(params=params, policies=policies)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.0005
    lr_decay_per_epoch: float = 0.96
    batch_size: int = 32
    epochs: int = 50
    constrain_epochs: int = 20
    w_tendency: float = DEFAULT_W_TENDENCY
    input_frames: int = 20
    output_frames: int = 10
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or not 0 < self.lr_decay_per_epoch <= 1:
            raise ConfigError("lr must be positive and decay in (0, 1]")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size >= 1 and epochs >= 0 required")
        if not 0 <= self.constrain_epochs <= self.epochs:
            raise ConfigError("constrain_epochs must lie within 0..epochs")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")


@dataclass
class EpochRecord:
    loss: float
    lr: float
    exit_counts: tuple[int, ...]
    tendency: float
    val_error: float | None


@dataclass
class TrainResult:
    model: PredictorModel
    best: PredictorModel
    history: list[EpochRecord]

    def loss_history(self) -> list[float]:
        return [rec.loss for rec in self.history]

    def history_csv(self) -> str:
        n_exits = len(self.history[0].exit_counts) if self.history else 0
        cols = ["epoch", "loss", "lr", "tendency", "val_error"]
        cols += [f"exit_{d}" for d in range(1, n_exits + 1)]
        lines = [",".join(cols)]
        for i, rec in enumerate(self.history):
            val = "" if rec.val_error is None else repr(rec.val_error)
            row = [str(i), repr(rec.loss), repr(rec.lr), repr(rec.tendency), val]
            row += [str(c) for c in rec.exit_counts]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


def _check_dataset(dataset: list[MotionSequence], config: TrainConfig,
                   params: PredictorParams, name: str) -> None:
    total = config.input_frames + config.output_frames
    for seq in dataset:
        if seq.data.shape != (total, params.layout.size):
            raise ShapeError(
                f"{name} sequence {seq.label!r} has shape {seq.data.shape}, "
                f"expected ({total}, {params.layout.size})"
            )


def _sampled_forward(tape: Tape, model: PredictorModel, tensors: dict[str, Tensor],
                     history: np.ndarray, rng: np.random.Generator,
                     temperature: float) -> tuple[Tensor, list[int], list[Tensor]]:
    """Training-time forward: each branch runs to a sampled exit.

    The branch correction is multiplied by the selected entry of the hard
    one-hot, which is 1 in the forward pass and routes straight-through
    gradients to the policy logits in the backward pass.
    """
    params = model.params
    inputs = _prepare_branch_inputs(tape, params, tensors, history)
    n_exits = params.config.n_blocks
    outputs = {}
    chosen: list[int] = []
    softs: list[Tensor] = []
    for branch in params.branches:
        encoded = _branch_encode(tape, tensors, branch.kind, inputs[branch.kind])
        logits = _policy_forward(tape, tensors, f"policy.{branch.kind}", encoded)
        noise = rng.gumbel(size=(1, n_exits))
        hard, soft = _gumbel_softmax_st(tape, logits, temperature, noise)
        d = int(np.argmax(hard.values)) + 1
        y = _branch_tail(tape, branch, tensors, encoded, d)
        gate = tape.slice_lastdim(hard, d - 1, d)
        outputs[branch.kind] = tape.scalar_mul(y, gate)
        chosen.append(d)
        softs.append(soft)
    pred = _assemble_prediction(tape, params, tensors, outputs, history)
    return pred, chosen, softs


def _routed_forward(tape: Tape, model: PredictorModel, tensors: dict[str, Tensor],
                    history: np.ndarray) -> tuple[Tensor, tuple[int, ...]]:
    """Deterministic forward: each branch exits at the argmax of its logits."""
    params = model.params
    inputs = _prepare_branch_inputs(tape, params, tensors, history)
    outputs = {}
    chosen = []
    for branch in params.branches:
        encoded = _branch_encode(tape, tensors, branch.kind, inputs[branch.kind])
        logits = _policy_forward(tape, tensors, f"policy.{branch.kind}", encoded)
        d = int(np.argmax(logits.values)) + 1
        outputs[branch.kind] = _branch_tail(tape, branch, tensors, encoded, d)
        chosen.append(d)
    return _assemble_prediction(tape, params, tensors, outputs, history), tuple(chosen)


def routed_prediction(model: PredictorModel,
                      history: MotionSequence) -> tuple[MotionSequence, tuple[int, ...]]:
    """Policy-routed deterministic prediction and the exits it used."""
    tape = Tape()
    tensors = bind(tape, model.named_parameters(), trainable=False)
    pred, exits = _routed_forward(tape, model, tensors, history.data)
    seq = MotionSequence(data=pred.values, fps=history.fps, label=history.label)
    return seq, exits


def _mean_future_error(model: PredictorModel, dataset: list[MotionSequence],
                       n_input: int) -> float:
    total = 0.0
    count = 0
    for seq in dataset:
        hist = MotionSequence(data=seq.data[:n_input], fps=seq.fps, label=seq.label)
        pred, _ = routed_prediction(model, hist)
        gt_tail = seq.data[n_input:]
        pred_tail = pred.data[n_input:]
        for f in range(gt_tail.shape[0]):
            total += mpjpe_metric(pred_tail, gt_tail, f)
            count += 1
    return total / count


def train_predictor(model: PredictorModel, train_set: list[MotionSequence],
                    val_set: list[MotionSequence], config: TrainConfig) -> TrainResult:
    """Train with per-sample exit sampling and the balance constraint phase.

    The exit-usage constraint is active for the first constrain_epochs epochs;
    the learning rate is multiplied by lr_decay_per_epoch after every epoch.
    Validation (deterministic exits) runs each epoch; the best-by-validation
    snapshot is returned alongside the final model.
    """
    if not train_set:
        raise ValueError("training set is empty")
    params = model.params
    if (config.input_frames, config.output_frames) != (
            params.config.input_frames, params.config.output_frames):
        raise ConfigError("train config frame counts do not match the model")
    _check_dataset(train_set, config, params, "train")
    _check_dataset(val_set, config, params, "val")

    n_input = config.input_frames
    rng = np.random.default_rng(config.seed)
    named = model.named_parameters()
    state = AdamState.for_params(named)
    lr = config.lr
    n_exits = params.config.n_blocks
    history: list[EpochRecord] = []
    best = copy.deepcopy(model)
    best_val = np.inf

    for epoch in range(config.epochs):
        in_constraint = epoch < config.constrain_epochs
        order = rng.permutation(len(train_set))
        epoch_loss = 0.0
        epoch_tendency = 0.0
        exit_counts = np.zeros(n_exits, dtype=np.int64)
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            tape = Tape()
            tensors = bind(tape, named, trainable=True)
            total = None
            batch_softs: list[Tensor] = []
            for idx in batch:
                seq = train_set[idx]
                pred, chosen, softs = _sampled_forward(
                    tape, model, tensors, seq.data[:n_input], rng, config.temperature)
                for d in chosen:
                    exit_counts[d - 1] += 1
                batch_softs.extend(softs)
                loss = _mpjpe_loss_t(tape, pred, seq.data)
                total = loss if total is None else tape.add(total, loss)
            batch_loss = tape.scale(total, 1.0 / len(batch))
            objective = batch_loss
            batch_tendency = 0.0
            if in_constraint and config.w_tendency != 0.0:
                soft_sum = batch_softs[0]
                for s in batch_softs[1:]:
                    soft_sum = tape.add(soft_sum, s)
                t_loss = _tendency_loss_soft(tape, soft_sum, config.w_tendency)
                batch_tendency = t_loss.item()
                objective = tape.add(batch_loss, t_loss)
            tape.backward(objective)
            grads = {name: tensors[name].grad for name in named}
            adam_step(named, grads, state, lr)
            epoch_loss += batch_loss.item() * len(batch)
            epoch_tendency += batch_tendency
            n_batches += 1
        lr *= config.lr_decay_per_epoch
        val_error = _mean_future_error(model, val_set, n_input) if val_set else None
        if val_error is not None and val_error < best_val:
            best_val = val_error
            best = copy.deepcopy(model)
        history.append(EpochRecord(
            loss=epoch_loss / len(train_set),
            lr=lr,
            exit_counts=tuple(int(c) for c in exit_counts),
            tendency=epoch_tendency / max(n_batches, 1),
            val_error=val_error,
        ))
    if not val_set or not history:
        best = copy.deepcopy(model)
    return TrainResult(model=model, best=best, history=history)


# ----------------------------------------------------------------------
# baseline and evaluation

def zero_velocity_baseline(history: MotionSequence, out_frames: int) -> MotionSequence:
    """Repeat the last observed pose; the canonical sanity baseline."""
    if out_frames < 1:
        raise ValueError(f"out_frames must be >= 1, got {out_frames}")
    return history.with_data(pad_last_frame(history.data, out_frames))


@dataclass(frozen=True)
class EvalReport:
    """Per-action and overall errors at each horizon, with baseline deltas."""

    horizon_frames: tuple[int, ...]
    ms_per_frame: float
    per_action: dict[str, tuple[float, ...]]
    overall: tuple[float, ...]
    baseline_per_action: dict[str, tuple[float, ...]]
    baseline_overall: tuple[float, ...]
    sequence_count: int
    flops: FlopsReport | None = None

    def __post_init__(self):
        if list(self.horizon_frames) != sorted(set(self.horizon_frames)):
            raise ValueError("horizons must be strictly increasing")
        for errs in (self.overall, self.baseline_overall, *self.per_action.values()):
            if any(e < 0 for e in errs):
                raise ValueError("errors must be non-negative")

    def deltas(self) -> tuple[float, ...]:
        """overall minus baseline; negative means the model beats the baseline."""
        return tuple(o - b for o, b in zip(self.overall, self.baseline_overall))

    def _columns(self) -> list[str]:
        return [f"frame_{h}({h * self.ms_per_frame:.0f}ms)" for h in self.horizon_frames]

    def to_csv(self) -> str:
        lines = ["action," + ",".join(self._columns())]
        for action in sorted(self.per_action):
            row = ",".join(repr(e) for e in self.per_action[action])
            lines.append(f"{action},{row}")
        lines.append("overall," + ",".join(repr(e) for e in self.overall))
        lines.append("baseline," + ",".join(repr(e) for e in self.baseline_overall))
        lines.append("delta," + ",".join(repr(d) for d in self.deltas()))
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        lines = [f"{self.sequence_count} sequences, horizons "
                 f"{list(self.horizon_frames)} (frames ahead)"]
        for col, err, base in zip(self._columns(), self.overall, self.baseline_overall):
            verdict = "beats" if err < base else "trails"
            lines.append(f"  {col}: {err:.3f} mm vs baseline {base:.3f} mm ({verdict})")
        if self.flops is not None:
            lines.append(f"  routed MACs/sample: {self.flops.weighted_average_total():.0f} "
                         f"({self.flops.percent_saved():.2f}% below full depth)")
        return "\n".join(lines) + "\n"


def evaluate(model: PredictorModel, test_set: list[MotionSequence],
             horizon_frames: tuple[int, ...]) -> EvalReport:
    """Deterministic evaluation: policy-routed exits, per-action metrics.

    horizon_frames are 1-based future-frame numbers; each must lie within the
    model's prediction span.
    """
    if not test_set:
        raise ValueError("test set is empty")
    cfg = model.params.config
    n_input, n_output = cfg.input_frames, cfg.output_frames
    horizon_frames = tuple(int(h) for h in horizon_frames)
    for h in horizon_frames:
        if not 1 <= h <= n_output:
            raise ValueError(f"horizon frame {h} outside 1..{n_output}")

    by_action: dict[str, list[np.ndarray]] = {}
    base_by_action: dict[str, list[np.ndarray]] = {}
    all_rows: list[np.ndarray] = []
    base_rows: list[np.ndarray] = []
    exit_tallies = {b.kind: np.zeros(cfg.n_blocks) for b in model.params.branches}
    for seq in test_set:
        hist = MotionSequence(data=seq.data[:n_input], fps=seq.fps, label=seq.label)
        gt_tail = seq.data[n_input:]
        pred, exits = routed_prediction(model, hist)
        pred_tail = pred.data[n_input:]
        base_tail = zero_velocity_baseline(hist, n_output).data[n_input:]
        row = np.array([mpjpe_metric(pred_tail, gt_tail, h - 1) for h in horizon_frames])
        base_row = np.array([mpjpe_metric(base_tail, gt_tail, h - 1)
                             for h in horizon_frames])
        by_action.setdefault(seq.label, []).append(row)
        base_by_action.setdefault(seq.label, []).append(base_row)
        all_rows.append(row)
        base_rows.append(base_row)
        for branch, d in zip(model.params.branches, exits):
            exit_tallies[branch.kind][d - 1] += 1

    def _mean(rows: list[np.ndarray]) -> tuple[float, ...]:
        return tuple(float(x) for x in np.mean(rows, axis=0))

    distribution = {kind: tuple(float(x) for x in t / t.sum())
                    for kind, t in exit_tallies.items()}
    flops = count_flops(model.params, (1,) * 3).with_distribution(distribution)
    return EvalReport(
        horizon_frames=horizon_frames,
        ms_per_frame=1000.0 / test_set[0].fps,
        per_action={a: _mean(rows) for a, rows in by_action.items()},
        overall=_mean(all_rows),
        baseline_per_action={a: _mean(rows) for a, rows in base_by_action.items()},
        baseline_overall=_mean(base_rows),
        sequence_count=len(test_set),
        flops=flops,
    )
