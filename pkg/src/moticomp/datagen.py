"""Synthetic skeletal-motion generation with exact composite ground truth,
plus every file format: motion text files, JSON manifests, and checkpoints.

The generator replaces an external mocap corpus: parametric sinusoid-plus-
drift trajectories with a known closed form, so composite sequences built by
time-domain masking are exact ground truth for scoring synthesis. Everything
is a pure function of (manifest, seed).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError, ManifestError, ParseError, ShapeError
from .motion import LOWER, UPPER, MotionSequence, PartLayout, Skeleton
from .predictor import PredictorConfig
from .training import PredictorModel, init_predictor_model
from .vae import BodyMask, VaeParams, init_vae

MOTION_MAGIC = "champlite v1"
MANIFEST_FORMAT = "moticomp-manifest"
CHECKPOINT_FORMAT = "moticomp-checkpoint"
MANIFEST_VERSION = 1
CHECKPOINT_VERSION = 1

STILL = "still"
ACTION_PARTS = (UPPER, LOWER, STILL)


# ----------------------------------------------------------------------
# skeleton and trajectory generation

def default_skeleton() -> Skeleton:
    """8 joints: pelvis (root), two legs below; spine, chest, head, two arms above."""
    #                pelvis l_leg r_leg spine chest head l_arm r_arm
    parents = (0, 0, 0, 0, 3, 4, 4, 4)
    parts = (LOWER, LOWER, LOWER, UPPER, UPPER, UPPER, UPPER, UPPER)
    return Skeleton(parent=parents, part_of=parts)


def rest_pose(skeleton: Skeleton) -> np.ndarray:
    """Deterministic root-centered rest coordinates, one bone per joint.

    Child joints sit 200 mm from their parent, fanned out by a golden-angle
    rule so distinct joints land at distinct offsets; upper joints point up,
    lower joints down.
    """
    pos = np.zeros((skeleton.joint_count, 3))
    for j in range(1, skeleton.joint_count):
        angle = 2.399963229728653 * j
        dy = 120.0 if skeleton.part_of[j] == UPPER else -120.0
        offset = np.array([160.0 * math.cos(angle), dy, 160.0 * math.sin(angle)])
        pos[j] = pos[skeleton.parent[j]] + offset
    return pos.reshape(-1)


@dataclass(frozen=True)
class ActionSpec:
    """Per-joint sinusoid-plus-drift parameters for one atomic action.

    Joints of `part` oscillate; all other joints (and always the root) hold
    the rest pose. Still specs move nothing.
    """

    name: str
    part: str
    amplitude: tuple[float, ...]
    frequency: tuple[float, ...]
    phase: tuple[float, ...]
    drift: tuple[float, ...]
    noise_std: float = 0.0

    def __post_init__(self):
        if self.part not in ACTION_PARTS:
            raise ConfigError(f"unknown action part {self.part!r}")
        sizes = {len(self.amplitude), len(self.frequency), len(self.phase),
                 len(self.drift)}
        if len(sizes) != 1:
            raise ConfigError(f"per-joint parameter arrays of {self.name!r} differ in length")
        if any(a < 0 for a in self.amplitude) or any(f < 0 for f in self.frequency):
            raise ConfigError(f"amplitudes and frequencies of {self.name!r} must be >= 0")
        if self.noise_std < 0:
            raise ConfigError(f"noise_std of {self.name!r} must be >= 0")
        if self.part == STILL and (any(a != 0 for a in self.amplitude)
                                   or any(d != 0 for d in self.drift)):
            raise ConfigError(f"still spec {self.name!r} must have zero amplitude and drift")

    @property
    def joint_count(self) -> int:
        return len(self.amplitude)


def generate_atomic(spec: ActionSpec, skeleton: Skeleton, length: int, fps: float,
                    seed: int) -> MotionSequence:
    """One atomic sequence; root-centered by construction, seeded determinism.

    Moving coordinate value at frame f:
        rest + amplitude * sin(2*pi*frequency*(f/fps) + phase) + drift*f + noise
    """
    if spec.joint_count != skeleton.joint_count:
        raise ConfigError(
            f"spec {spec.name!r} has {spec.joint_count} joints, skeleton "
            f"{skeleton.joint_count}"
        )
    if length < 2:
        raise ConfigError(f"sequence length must be >= 2, got {length}")
    rng = np.random.default_rng(seed)
    data = np.tile(rest_pose(skeleton), (length, 1))
    frames = np.arange(length, dtype=np.float64)
    t = frames / fps
    for j in range(skeleton.joint_count):
        if j == 0 or skeleton.part_of[j] != spec.part:
            continue
        track = (spec.amplitude[j] * np.sin(2.0 * np.pi * spec.frequency[j] * t
                                            + spec.phase[j])
                 + spec.drift[j] * frames)
        cols = slice(3 * j, 3 * j + 3)
        data[:, cols] += track[:, None]
        if spec.noise_std > 0:
            data[:, cols] += rng.normal(0.0, spec.noise_std, size=(length, 3))
    return MotionSequence(data=data, fps=fps, label=spec.name)


def compose_oracle(seq_upper_action: MotionSequence, seq_lower_action: MotionSequence,
                   mask: BodyMask) -> MotionSequence:
    """Exact time-domain composite: mask picks coordinates from the first input."""
    if seq_upper_action.data.shape != seq_lower_action.data.shape:
        raise ShapeError(
            f"sequence shapes differ: {seq_upper_action.data.shape} vs "
            f"{seq_lower_action.data.shape}"
        )
    if mask.m.size != seq_upper_action.data.shape[1]:
        raise ShapeError("mask width does not match the sequences")
    if seq_upper_action.fps != seq_lower_action.fps:
        raise ValueError("fps differ between the two sequences")
    data = mask.m * seq_upper_action.data + mask.complement * seq_lower_action.data
    label = f"{seq_upper_action.label}+{seq_lower_action.label}"
    return MotionSequence(data=data, fps=seq_upper_action.fps, label=label)


# ----------------------------------------------------------------------
# manifest

@dataclass(frozen=True)
class DatasetManifest:
    """Everything needed to regenerate the train/val/test splits bit-exactly.

    The training split holds atomic actions only. Validation and test hold
    held-out atomic sequences plus exact composites of every (upper, lower)
    action pair. Each split draws per-sequence seeds from a contiguous range
    starting at its base seed; ranges must not overlap.
    """

    skeleton: Skeleton
    actions: tuple[ActionSpec, ...]
    fps: float
    sequence_length: int
    train_per_action: int
    val_per_atomic: int
    test_per_atomic: int
    val_per_composite: int
    test_per_composite: int
    train_seed: int
    val_seed: int
    test_seed: int

    def __post_init__(self):
        names = [a.name for a in self.actions]
        if len(set(names)) != len(names):
            raise ManifestError("action names must be unique")
        if "+" in "".join(names):
            raise ManifestError("atomic action names must not contain '+'")
        for a in self.actions:
            if a.joint_count != self.skeleton.joint_count:
                raise ManifestError(f"action {a.name!r} joint count mismatch")
        if self.sequence_length < 2:
            raise ManifestError("sequence_length must be >= 2")
        counts = (self.train_per_action, self.val_per_atomic, self.test_per_atomic,
                  self.val_per_composite, self.test_per_composite)
        if any(c < 0 for c in counts):
            raise ManifestError("per-split counts must be >= 0")
        ranges = sorted([
            (self.train_seed, self.train_seed + self._seeds_needed("train")),
            (self.val_seed, self.val_seed + self._seeds_needed("val")),
            (self.test_seed, self.test_seed + self._seeds_needed("test")),
        ])
        for (_, end), (start, _) in zip(ranges, ranges[1:]):
            if start < end:
                raise ManifestError("split seed ranges overlap")

    @property
    def upper_actions(self) -> tuple[ActionSpec, ...]:
        return tuple(a for a in self.actions if a.part == UPPER)

    @property
    def lower_actions(self) -> tuple[ActionSpec, ...]:
        return tuple(a for a in self.actions if a.part == LOWER)

    @property
    def composite_pairs(self) -> tuple[tuple[ActionSpec, ActionSpec], ...]:
        return tuple((u, l) for u in self.upper_actions for l in self.lower_actions)

    def _seeds_needed(self, split: str) -> int:
        if split == "train":
            return self.train_per_action * len(self.actions)
        atomic = self.val_per_atomic if split == "val" else self.test_per_atomic
        comp = self.val_per_composite if split == "val" else self.test_per_composite
        # composites consume two seeds each: one per constituent atomic
        return atomic * len(self.actions) + 2 * comp * len(self.composite_pairs)


@dataclass
class DatasetSplits:
    train: list[MotionSequence]
    val: list[MotionSequence]
    test: list[MotionSequence]


def build_dataset(manifest: DatasetManifest) -> DatasetSplits:
    """Generate all three splits; a pure function of the manifest."""
    m = manifest
    layout = PartLayout.from_skeleton(m.skeleton)
    mask = BodyMask.from_layout(layout)

    def atomic(spec: ActionSpec, seed: int) -> MotionSequence:
        return generate_atomic(spec, m.skeleton, m.sequence_length, m.fps, seed)

    train = [atomic(spec, m.train_seed + i * m.train_per_action + k)
             for i, spec in enumerate(m.actions)
             for k in range(m.train_per_action)]

    def held_out(base_seed: int, per_atomic: int, per_composite: int) -> list[MotionSequence]:
        out = []
        counter = base_seed
        for spec in m.actions:
            for _ in range(per_atomic):
                out.append(atomic(spec, counter))
                counter += 1
        for upper_spec, lower_spec in m.composite_pairs:
            for _ in range(per_composite):
                seq_u = atomic(upper_spec, counter)
                seq_l = atomic(lower_spec, counter + 1)
                counter += 2
                out.append(compose_oracle(seq_u, seq_l, mask))
        return out

    val = held_out(m.val_seed, m.val_per_atomic, m.val_per_composite)
    test = held_out(m.test_seed, m.test_per_atomic, m.test_per_composite)
    return DatasetSplits(train=train, val=val, test=test)


def _moving_spec(name: str, part: str, skeleton: Skeleton, amp: float, freq: float,
                 phase: float, drift: float = 0.0, noise_std: float = 0.75) -> ActionSpec:
    j = skeleton.joint_count
    amplitude = [0.0] * j
    frequency = [0.0] * j
    phases = [0.0] * j
    drifts = [0.0] * j
    for idx in range(1, j):
        if skeleton.part_of[idx] != part:
            continue
        amplitude[idx] = amp * (0.6 + 0.1 * (idx % 4))
        frequency[idx] = freq
        phases[idx] = phase + 0.8 * idx
        drifts[idx] = drift
    return ActionSpec(name=name, part=part, amplitude=tuple(amplitude),
                      frequency=tuple(frequency), phase=tuple(phases),
                      drift=tuple(drifts), noise_std=noise_std)


def default_manifest() -> DatasetManifest:
    """Desk-scale defaults: 9 moving atomic actions plus a still class, J=8.

    Train: 20 sequences per class (200 total, atomic only). Val and test mix
    held-out atomics with the 18 exact composites of the 6 upper x 3 lower
    moving actions.
    """
    sk = default_skeleton()
    zeros = (0.0,) * sk.joint_count
    actions = (
        _moving_spec("wave", UPPER, sk, amp=60.0, freq=0.50, phase=0.0),
        _moving_spec("nod", UPPER, sk, amp=25.0, freq=0.80, phase=1.1),
        _moving_spec("raise", UPPER, sk, amp=50.0, freq=0.30, phase=2.3),
        _moving_spec("swing", UPPER, sk, amp=40.0, freq=0.45, phase=3.0),
        _moving_spec("stretch", UPPER, sk, amp=35.0, freq=0.25, phase=0.7, drift=1.5),
        _moving_spec("circle", UPPER, sk, amp=45.0, freq=0.55, phase=1.9),
        _moving_spec("squat", LOWER, sk, amp=55.0, freq=0.35, phase=0.4),
        _moving_spec("step", LOWER, sk, amp=45.0, freq=0.50, phase=1.6),
        _moving_spec("sway", LOWER, sk, amp=30.0, freq=0.40, phase=2.8, drift=1.0),
        ActionSpec(name="still", part=STILL, amplitude=zeros, frequency=zeros,
                   phase=zeros, drift=zeros, noise_std=0.0),
    )
    return DatasetManifest(
        skeleton=sk, actions=actions, fps=10.0, sequence_length=30,
        train_per_action=20, val_per_atomic=1, test_per_atomic=2,
        val_per_composite=1, test_per_composite=2,
        train_seed=1000, val_seed=20000, test_seed=30000,
    )


# ----------------------------------------------------------------------
# manifest JSON

_MANIFEST_KEYS = {
    "format", "version", "joint_parents", "joint_parts", "actions", "fps",
    "sequence_length", "train_per_action", "val_per_atomic", "test_per_atomic",
    "val_per_composite", "test_per_composite", "train_seed", "val_seed",
    "test_seed",
}
_ACTION_KEYS = {"name", "part", "amplitude", "frequency", "phase", "drift",
                "noise_std"}


def manifest_to_json(manifest: DatasetManifest) -> str:
    doc = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "joint_parents": list(manifest.skeleton.parent),
        "joint_parts": list(manifest.skeleton.part_of),
        "actions": [
            {"name": a.name, "part": a.part, "amplitude": list(a.amplitude),
             "frequency": list(a.frequency), "phase": list(a.phase),
             "drift": list(a.drift), "noise_std": a.noise_std}
            for a in manifest.actions
        ],
        "fps": manifest.fps,
        "sequence_length": manifest.sequence_length,
        "train_per_action": manifest.train_per_action,
        "val_per_atomic": manifest.val_per_atomic,
        "test_per_atomic": manifest.test_per_atomic,
        "val_per_composite": manifest.val_per_composite,
        "test_per_composite": manifest.test_per_composite,
        "train_seed": manifest.train_seed,
        "val_seed": manifest.val_seed,
        "test_seed": manifest.test_seed,
    }
    return json.dumps(doc, indent=2) + "\n"


def manifest_from_json(text: str) -> DatasetManifest:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ManifestError("manifest must be a JSON object")
    unknown = set(doc) - _MANIFEST_KEYS
    if unknown:
        raise ManifestError(f"unknown manifest keys: {sorted(unknown)}")
    missing = _MANIFEST_KEYS - set(doc)
    if missing:
        raise ManifestError(f"missing manifest keys: {sorted(missing)}")
    if doc["format"] != MANIFEST_FORMAT or doc["version"] != MANIFEST_VERSION:
        raise ManifestError(
            f"unsupported manifest format {doc['format']!r} v{doc['version']!r}"
        )
    skeleton = Skeleton(parent=tuple(doc["joint_parents"]),
                        part_of=tuple(doc["joint_parts"]))
    actions = []
    for entry in doc["actions"]:
        unknown = set(entry) - _ACTION_KEYS
        if unknown:
            raise ManifestError(f"unknown action keys: {sorted(unknown)}")
        actions.append(ActionSpec(
            name=entry["name"], part=entry["part"],
            amplitude=tuple(entry["amplitude"]), frequency=tuple(entry["frequency"]),
            phase=tuple(entry["phase"]), drift=tuple(entry["drift"]),
            noise_std=entry.get("noise_std", 0.0),
        ))
    return DatasetManifest(
        skeleton=skeleton, actions=tuple(actions), fps=doc["fps"],
        sequence_length=doc["sequence_length"],
        train_per_action=doc["train_per_action"],
        val_per_atomic=doc["val_per_atomic"],
        test_per_atomic=doc["test_per_atomic"],
        val_per_composite=doc["val_per_composite"],
        test_per_composite=doc["test_per_composite"],
        train_seed=doc["train_seed"], val_seed=doc["val_seed"],
        test_seed=doc["test_seed"],
    )


# ----------------------------------------------------------------------
# motion text format

_HEADER_RE = re.compile(
    r"^champlite v1 J=(\d+) fps=(\S+) frames=(\d+) label=(.*)$"
)


def save_motion(path, seq: MotionSequence) -> None:
    """Text format: one header line, then one line of 3J values per frame.

    Values are written with 17 significant digits, which round-trips IEEE
    doubles exactly.
    """
    lines = [f"{MOTION_MAGIC} J={seq.joint_count} fps={seq.fps!r} "
             f"frames={seq.frames} label={seq.label}"]
    for row in seq.data:
        lines.append(" ".join(f"{x:.17g}" for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_motion(path) -> MotionSequence:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines:
        raise ParseError(f"{path}: empty motion file")
    match = _HEADER_RE.match(lines[0])
    if match is None:
        raise ParseError(f"{path}: line 1: bad header {lines[0]!r}")
    joints = int(match.group(1))
    try:
        fps = float(match.group(2))
    except ValueError as exc:
        raise ParseError(f"{path}: line 1: bad fps {match.group(2)!r}") from exc
    frames = int(match.group(3))
    label = match.group(4)
    body = [line for line in lines[1:] if line.strip()]
    if len(body) != frames:
        raise ParseError(f"{path}: header promises {frames} frames, found {len(body)}")
    data = np.empty((frames, 3 * joints))
    for i, line in enumerate(body):
        fields = line.split()
        if len(fields) != 3 * joints:
            raise ParseError(
                f"{path}: line {i + 2}: expected {3 * joints} values, got {len(fields)}"
            )
        try:
            data[i] = [float(f) for f in fields]
        except ValueError as exc:
            raise ParseError(f"{path}: line {i + 2}: non-numeric value") from exc
    return MotionSequence(data=data, fps=fps, label=label)


def save_split(directory, sequences: list[MotionSequence]) -> list[Path]:
    """Write one numbered motion file per sequence into a directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, seq in enumerate(sequences):
        path = directory / f"{i:04d}_{seq.label}.txt"
        save_motion(path, seq)
        paths.append(path)
    return paths


def load_split(directory) -> list[MotionSequence]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"no such split directory: {directory}")
    return [load_motion(p) for p in sorted(directory.glob("*.txt"))]


# ----------------------------------------------------------------------
# checkpoints

def _tensor_entries(named: dict[str, np.ndarray]) -> list[dict]:
    return [{"name": name, "shape": list(arr.shape),
             "values": [float(x) for x in np.asarray(arr, dtype=np.float64).reshape(-1)]}
            for name, arr in named.items()]


def _read_tensors(entries) -> dict[str, np.ndarray]:
    out = {}
    for entry in entries:
        arr = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        out[entry["name"]] = arr
    return out


def save_checkpoint(path, model: VaeParams | PredictorModel) -> None:
    """Self-describing JSON container; round-trips float64 values bit-exactly."""
    if isinstance(model, VaeParams):
        doc = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "kind": "cag_vae",
            "config": {
                "latent_dim": model.latent_dim,
                "hidden_dims": [lp.fan_out for lp in model.encoder[:-1]],
                "coeff_rows": model.coeff_rows,
                "coeff_cols": model.coeff_cols,
                "original_length": model.original_length,
            },
            "tensors": _tensor_entries(
                {**model.named_parameters(), "norm.offset": model.input_offset,
                 "norm.scale": model.input_scale}
            ),
        }
    elif isinstance(model, PredictorModel):
        cfg = model.params.config
        doc = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "kind": "predictor",
            "config": {
                "input_frames": cfg.input_frames,
                "output_frames": cfg.output_frames,
                "n_coeffs": cfg.n_coeffs,
                "feature_width": cfg.feature_width,
                "heads": cfg.heads,
                "n_blocks": cfg.n_blocks,
                "layers_per_block": cfg.layers_per_block,
                "attention_every": cfg.attention_every,
                "policy_hidden": cfg.policy_hidden,
                "query_dim": cfg.query_dim,
                "coeff_scale": cfg.coeff_scale,
                "adjacency_noise": cfg.adjacency_noise,
                "zero_output_decoders": cfg.zero_output_decoders,
                "upper_dims": list(model.params.layout.upper_dims),
                "lower_dims": list(model.params.layout.lower_dims),
            },
            "tensors": _tensor_entries(model.named_parameters()),
        }
    else:
        raise CheckpointError(f"cannot checkpoint object of type {type(model).__name__}")
    Path(path).write_text(json.dumps(doc) + "\n")


def load_checkpoint(path) -> VaeParams | PredictorModel:
    try:
        doc = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable or truncated checkpoint: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {doc.get('version')!r} is not "
            f"supported (expected {CHECKPOINT_VERSION})"
        )
    try:
        kind = doc["kind"]
        config = doc["config"]
        tensors = _read_tensors(doc["tensors"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint: {exc}") from exc

    if kind == "cag_vae":
        params = init_vae(np.random.default_rng(0),
                          coeff_rows=config["coeff_rows"],
                          coeff_cols=config["coeff_cols"],
                          original_length=config["original_length"],
                          latent_dim=config["latent_dim"],
                          hidden_dims=tuple(config["hidden_dims"]))
        params.input_offset = tensors.pop("norm.offset")
        params.input_scale = tensors.pop("norm.scale").reshape(1, -1)
        _fill_parameters(path, params.named_parameters(), tensors)
        return params
    if kind == "predictor":
        layout = PartLayout(upper_dims=tuple(config["upper_dims"]),
                            lower_dims=tuple(config["lower_dims"]))
        pc = PredictorConfig(
            input_frames=config["input_frames"],
            output_frames=config["output_frames"],
            n_coeffs=config["n_coeffs"],
            feature_width=config["feature_width"],
            heads=config["heads"],
            n_blocks=config["n_blocks"],
            layers_per_block=config["layers_per_block"],
            attention_every=config["attention_every"],
            policy_hidden=config["policy_hidden"],
            query_dim=config["query_dim"],
            coeff_scale=config["coeff_scale"],
            adjacency_noise=config["adjacency_noise"],
            zero_output_decoders=config["zero_output_decoders"],
        )
        model = init_predictor_model(np.random.default_rng(0), layout, pc)
        _fill_parameters(path, model.named_parameters(), tensors)
        return model
    raise CheckpointError(f"{path}: unknown checkpoint kind {kind!r}")


def _fill_parameters(path, named: dict[str, np.ndarray],
                     tensors: dict[str, np.ndarray]) -> None:
    if set(named) != set(tensors):
        raise CheckpointError(
            f"{path}: tensor names do not match the model "
            f"(missing {sorted(set(named) - set(tensors))[:3]}, "
            f"unexpected {sorted(set(tensors) - set(named))[:3]})"
        )
    for name, arr in named.items():
        loaded = tensors[name]
        if loaded.shape != arr.shape:
            raise CheckpointError(
                f"{path}: tensor {name} has shape {loaded.shape}, expected {arr.shape}"
            )
        arr[...] = loaded
