"""Composite-action synthesis: a VAE over DCT-coded motions plus masked fusion.

Training reconstructs atomic actions from their frequency-domain coefficients.
Synthesis fuses two atomic actions with a per-coordinate body mask in the
coefficient domain, pushes the fused coefficients through the trained
encoder/decoder, and restores a time-domain sequence with the inverse DCT.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor
from .dct import DctCoeffs, dct_encode, idct_decode
from .errors import ConfigError, ShapeError
from .layers import LinearParams, bind, init_linear, linear
from .motion import MotionSequence, PartLayout


@dataclass
class VaeParams:
    """Encoder/decoder MLP weights plus the fixed input normalization.

    The encoder maps a flattened F x (3J) coefficient matrix to mean and
    log-variance heads of width latent_dim each; the decoder maps a latent
    vector back to the flattened coefficient matrix. Inputs are shifted by
    input_offset and divided element-wise by input_scale before the first
    layer, and the decoder output is mapped back through the same affine
    transform. Both normalization arrays are fitted constants, not trained.
    """

    encoder: list[LinearParams]
    decoder: list[LinearParams]
    latent_dim: int
    coeff_rows: int
    coeff_cols: int
    original_length: int
    input_offset: np.ndarray | None = None
    input_scale: np.ndarray | float = 1.0

    def __post_init__(self):
        d_in = self.coeff_rows * self.coeff_cols
        if self.encoder[0].fan_in != d_in:
            raise ShapeError("encoder input width does not match coefficient size")
        if self.encoder[-1].fan_out != 2 * self.latent_dim:
            raise ShapeError("encoder must end in mean and log-variance heads")
        if self.decoder[0].fan_in != self.latent_dim:
            raise ShapeError("decoder input width does not match latent_dim")
        if self.decoder[-1].fan_out != d_in:
            raise ShapeError("decoder output width does not match coefficient size")
        if self.input_offset is None:
            self.input_offset = np.zeros((1, d_in))
        self.input_offset = np.asarray(self.input_offset, dtype=np.float64).reshape(1, d_in)
        scale = np.asarray(self.input_scale, dtype=np.float64)
        if scale.size == 1:
            scale = np.full((1, d_in), float(scale.reshape(())))
        self.input_scale = scale.reshape(1, d_in)
        if not np.all(self.input_scale > 0):
            raise ConfigError("input_scale entries must be positive")

    @property
    def input_dim(self) -> int:
        return self.coeff_rows * self.coeff_cols

    def named_parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for i, lp in enumerate(self.encoder):
            out[f"enc{i}.w"] = lp.w
            out[f"enc{i}.b"] = lp.b
        for i, lp in enumerate(self.decoder):
            out[f"dec{i}.w"] = lp.w
            out[f"dec{i}.b"] = lp.b
        return out


def init_vae(rng: np.random.Generator, coeff_rows: int, coeff_cols: int,
             original_length: int, latent_dim: int = 16,
             hidden_dims: tuple[int, ...] = (256, 256)) -> VaeParams:
    d_in = coeff_rows * coeff_cols
    enc_dims = (d_in, *hidden_dims, 2 * latent_dim)
    dec_dims = (latent_dim, *hidden_dims, d_in)
    encoder = [init_linear(rng, a, b) for a, b in zip(enc_dims, enc_dims[1:])]
    decoder = [init_linear(rng, a, b) for a, b in zip(dec_dims, dec_dims[1:])]
    return VaeParams(encoder=encoder, decoder=decoder, latent_dim=latent_dim,
                     coeff_rows=coeff_rows, coeff_cols=coeff_cols,
                     original_length=original_length)


@dataclass(frozen=True)
class LatentSample:
    """One reparameterized draw: z = mu + exp(log_var / 2) * noise."""

    mu: np.ndarray
    log_var: np.ndarray
    z: np.ndarray
    noise: np.ndarray

    def __post_init__(self):
        expected = self.mu + np.exp(self.log_var / 2.0) * self.noise
        if not np.array_equal(expected, self.z):
            raise ValueError("latent sample violates the reparameterization identity")


@dataclass(frozen=True)
class BodyMask:
    """Per-coordinate 0/1 selector; 1 takes from the first action of a fusion."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64).reshape(-1)
        if m.size % 3 != 0 or m.size == 0:
            raise ShapeError(f"mask length {m.size} is not a positive multiple of 3")
        if not np.all((m == 0.0) | (m == 1.0)):
            raise ValueError("mask entries must be 0 or 1")
        triples = m.reshape(-1, 3)
        if not np.all(triples == triples[:, :1]):
            raise ValueError("the three coordinates of a joint must share one mask value")
        m.flags.writeable = False
        object.__setattr__(self, "m", m)

    @classmethod
    def from_layout(cls, layout: PartLayout) -> "BodyMask":
        m = np.zeros(layout.size)
        m[list(layout.upper_dims)] = 1.0
        return cls(m=m)

    @property
    def complement(self) -> np.ndarray:
        return 1.0 - self.m


# ----------------------------------------------------------------------
# tape-level forward passes (shared by the public ops and training)

def _normalize(tape: Tape, params: VaeParams, x: Tensor) -> Tensor:
    shifted = tape.add(x, tape.constant(-params.input_offset))
    return tape.hadamard(shifted, tape.constant(1.0 / params.input_scale))


def _denormalize(tape: Tape, params: VaeParams, x: Tensor) -> Tensor:
    return tape.add(tape.hadamard(x, tape.constant(params.input_scale)),
                    tape.constant(params.input_offset))


def _encode(tape: Tape, params: VaeParams, tensors: dict[str, Tensor],
            x: Tensor) -> tuple[Tensor, Tensor]:
    h = _normalize(tape, params, x)
    last = len(params.encoder) - 1
    for i in range(len(params.encoder)):
        h = linear(tape, h, tensors[f"enc{i}.w"], tensors[f"enc{i}.b"])
        if i < last:
            h = tape.tanh(h)
    ld = params.latent_dim
    return tape.slice_lastdim(h, 0, ld), tape.slice_lastdim(h, ld, 2 * ld)


def _decode(tape: Tape, params: VaeParams, tensors: dict[str, Tensor],
            z: Tensor) -> Tensor:
    h = z
    last = len(params.decoder) - 1
    for i in range(len(params.decoder)):
        h = linear(tape, h, tensors[f"dec{i}.w"], tensors[f"dec{i}.b"])
        if i < last:
            h = tape.tanh(h)
    return _denormalize(tape, params, h)


def _reparameterize(tape: Tape, mu: Tensor, log_var: Tensor, noise: np.ndarray) -> Tensor:
    sigma = tape.exp(tape.scale(log_var, 0.5))
    return tape.add(mu, tape.hadamard(sigma, tape.constant(noise.reshape(mu.shape))))


def _elbo(tape: Tape, target_flat: Tensor, recon_flat: Tensor, mu: Tensor,
          log_var: Tensor, kl_weight: float) -> Tensor:
    diff = tape.add(recon_flat, tape.scale(target_flat, -1.0))
    recon = tape.scale(tape.sum_sq(diff), 1.0 / diff.size)
    ones = tape.constant(np.ones(mu.shape))
    inside = tape.add(tape.add(ones, log_var),
                      tape.scale(tape.add(tape.hadamard(mu, mu), tape.exp(log_var)), -1.0))
    kl = tape.scale(tape.mean(inside), -0.5 * inside.size)
    return tape.add(recon, tape.scale(kl, kl_weight))


# ----------------------------------------------------------------------
# public operations

def _check_coeffs(params: VaeParams, a: DctCoeffs) -> None:
    if a.coeffs.shape != (params.coeff_rows, params.coeff_cols):
        raise ShapeError(
            f"coefficients {a.coeffs.shape} do not match model "
            f"({params.coeff_rows}, {params.coeff_cols})"
        )


def vae_encode(params: VaeParams, a: DctCoeffs) -> tuple[np.ndarray, np.ndarray]:
    """Mean and log-variance of the latent posterior for one coefficient matrix."""
    _check_coeffs(params, a)
    tape = Tape()
    tensors = bind(tape, params.named_parameters(), trainable=False)
    x = tape.constant(a.flat().reshape(1, -1))
    mu, log_var = _encode(tape, params, tensors, x)
    return mu.values.reshape(-1).copy(), log_var.values.reshape(-1).copy()


def vae_decode(params: VaeParams, z: np.ndarray) -> DctCoeffs:
    """Reconstruct an F x (3J) coefficient matrix from a latent vector."""
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if z.size != params.latent_dim:
        raise ShapeError(f"latent size {z.size} != latent_dim {params.latent_dim}")
    tape = Tape()
    tensors = bind(tape, params.named_parameters(), trainable=False)
    out = _decode(tape, params, tensors, tape.constant(z.reshape(1, -1)))
    coeffs = out.values.reshape(params.coeff_rows, params.coeff_cols)
    return DctCoeffs(coeffs=coeffs, original_length=params.original_length)


def reparameterize(mu: np.ndarray, log_var: np.ndarray, noise: np.ndarray) -> LatentSample:
    """Draw z = mu + exp(log_var / 2) * noise from an explicit noise vector."""
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    log_var = np.asarray(log_var, dtype=np.float64).reshape(-1)
    noise = np.asarray(noise, dtype=np.float64).reshape(-1)
    if not mu.size == log_var.size == noise.size:
        raise ShapeError("mu, log_var, and noise must have equal lengths")
    z = mu + np.exp(log_var / 2.0) * noise
    return LatentSample(mu=mu, log_var=log_var, z=z, noise=noise)


def elbo_loss(a: DctCoeffs, a_prime: DctCoeffs, mu: np.ndarray, log_var: np.ndarray,
              kl_weight: float = 1.0) -> float:
    """Mean-squared reconstruction error plus weighted KL to the unit Gaussian."""
    if a.coeffs.shape != a_prime.coeffs.shape:
        raise ShapeError(f"coefficient shapes differ: {a.coeffs.shape} vs {a_prime.coeffs.shape}")
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    log_var = np.asarray(log_var, dtype=np.float64).reshape(-1)
    if mu.size != log_var.size:
        raise ShapeError("mu and log_var lengths differ")
    recon = float(np.mean((a.coeffs - a_prime.coeffs) ** 2))
    kl = -0.5 * float(np.sum(1.0 + log_var - mu * mu - np.exp(log_var)))
    return recon + kl_weight * kl


def masked_fuse(s_m: MotionSequence, s_n: MotionSequence, mask: BodyMask,
                n_coeffs: int) -> DctCoeffs:
    """Combine two actions coefficient-wise: mask picks columns from the first."""
    if s_m.data.shape != s_n.data.shape:
        raise ShapeError(f"sequence shapes differ: {s_m.data.shape} vs {s_n.data.shape}")
    if mask.m.size != s_m.data.shape[1]:
        raise ShapeError(f"mask width {mask.m.size} != pose width {s_m.data.shape[1]}")
    a_m = dct_encode(s_m.data, n_coeffs)
    a_n = dct_encode(s_n.data, n_coeffs)
    fused = mask.m * a_m.coeffs + mask.complement * a_n.coeffs
    return DctCoeffs(coeffs=fused, original_length=a_m.original_length)


def synthesize_composite(params: VaeParams, s_m: MotionSequence, s_n: MotionSequence,
                         mask: BodyMask, n_coeffs: int,
                         noise: np.ndarray | None = None) -> MotionSequence:
    """Mint a composite action from two atomics through the trained model.

    noise=None uses the latent mean (deterministic); otherwise the provided
    standard-normal vector drives the reparameterized draw.
    """
    fused = masked_fuse(s_m, s_n, mask, n_coeffs)
    _check_coeffs(params, fused)
    mu, log_var = vae_encode(params, fused)
    if noise is None:
        noise = np.zeros(params.latent_dim)
    sample = reparameterize(mu, log_var, noise)
    coeffs = vae_decode(params, sample.z)
    data = idct_decode(coeffs, params.original_length)
    if s_m.fps != s_n.fps:
        raise ValueError(f"fps differ: {s_m.fps} vs {s_n.fps}")
    return MotionSequence(data=data, fps=s_m.fps, label=f"{s_m.label}+{s_n.label}")


# ----------------------------------------------------------------------
# training

@dataclass(frozen=True)
class CagTrainConfig:
    epochs: int = 400
    lr: float = 0.0005
    batch_size: int = 32
    kl_weight: float = 1.0
    latent_dim: int = 16
    hidden_dims: tuple[int, ...] = (256, 256)
    n_coeffs: int | None = None  # None keeps all N+T coefficients
    # input std multiplier; larger values keep the tanh stack near its linear
    # regime, which is what lets masked fusions of unseen action pairs decode
    # as well as the atomic actions the model was fitted on
    normalization_margin: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("epochs >= 0, batch_size >= 1, lr > 0 required")
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")
        if self.normalization_margin <= 0:
            raise ConfigError("normalization_margin must be positive")


@dataclass
class CagTrainResult:
    params: VaeParams
    loss_history: list[float]


def train_cag(dataset: list[MotionSequence], config: CagTrainConfig) -> CagTrainResult:
    """Fit the VAE to reconstruct the given atomic actions.

    Runs config.epochs of Adam over mini-batches of the per-sample loss;
    returns the fitted parameters and the per-epoch mean loss curve.
    """
    from .training import AdamState, adam_step

    if not dataset:
        raise ValueError("training dataset is empty")
    shape = dataset[0].data.shape
    for seq in dataset:
        if seq.data.shape != shape:
            raise ShapeError(f"non-uniform dataset: {seq.data.shape} vs {shape}")
    n_frames, n_cols = shape
    n_coeffs = config.n_coeffs if config.n_coeffs is not None else n_frames

    rng = np.random.default_rng(config.seed)
    params = init_vae(rng, coeff_rows=n_coeffs, coeff_cols=n_cols,
                      original_length=n_frames, latent_dim=config.latent_dim,
                      hidden_dims=config.hidden_dims)

    flats = np.stack([dct_encode(seq.data, n_coeffs).flat() for seq in dataset])
    params.input_offset = flats.mean(axis=0, keepdims=True)
    scale = max(float(flats.std()), 1e-6) * config.normalization_margin
    params.input_scale = np.full((1, flats.shape[1]), scale)

    named = params.named_parameters()
    state = AdamState.for_params(named)
    history: list[float] = []
    for _ in range(config.epochs):
        order = rng.permutation(len(dataset))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            tape = Tape()
            tensors = bind(tape, named, trainable=True)
            total = None
            for idx in batch:
                x = tape.constant(flats[idx].reshape(1, -1))
                mu, log_var = _encode(tape, params, tensors, x)
                noise = rng.standard_normal(config.latent_dim)
                z = _reparameterize(tape, mu, log_var, noise)
                recon = _decode(tape, params, tensors, z)
                loss = _elbo(tape, x, recon, mu, log_var, config.kl_weight)
                total = loss if total is None else tape.add(total, loss)
            batch_loss = tape.scale(total, 1.0 / len(batch))
            tape.backward(batch_loss)
            grads = {name: tensors[name].grad for name in named}
            adam_step(named, grads, state, config.lr)
            epoch_loss += batch_loss.item() * len(batch)
        history.append(epoch_loss / len(dataset))
    return CagTrainResult(params=params, loss_history=history)


def reconstruction_mpjpe(params: VaeParams, dataset: list[MotionSequence],
                         n_coeffs: int | None = None) -> float:
    """Mean per-joint Euclidean error of deterministic reconstructions, in mm."""
    if not dataset:
        raise ValueError("dataset is empty")
    n_coeffs = n_coeffs if n_coeffs is not None else params.coeff_rows
    errors = []
    for seq in dataset:
        a = dct_encode(seq.data, n_coeffs)
        mu, _ = vae_encode(params, a)
        recon = idct_decode(vae_decode(params, mu), params.original_length)
        diff = (recon - seq.data).reshape(seq.frames, -1, 3)
        errors.append(float(np.linalg.norm(diff, axis=2).mean()))
    return float(np.mean(errors))
