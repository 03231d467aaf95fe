"""Composite skeletal-motion synthesis and multi-branch early-exit prediction.

The pipeline, end to end on synthetic motions: generate atomic skeletal
actions with exact composite ground truth, fit a VAE over DCT-coded
trajectories that mints composite actions by masked fusion, and train a
three-branch graph-convolutional predictor whose per-branch policy networks
pick early exits per sample. Everything runs on a small built-in
reverse-mode autodiff engine, CPU only, deterministic under fixed seeds.
"""

from .autodiff import Tape, Tensor, grad_check
from .dct import DctCoeffs, dct_encode, idct_decode
from .datagen import (ActionSpec, DatasetManifest, DatasetSplits, build_dataset,
                      compose_oracle, default_manifest, default_skeleton,
                      generate_atomic, load_checkpoint, load_motion,
                      manifest_from_json, manifest_to_json, save_checkpoint,
                      save_motion)
from .exits import (ExitDecision, FlopsReport, PolicyNetParams, TendencyStats,
                    count_flops, gumbel_softmax_st, policy_forward,
                    tendency_counts, tendency_loss)
from .motion import (MotionSequence, PartLayout, Skeleton, downsample,
                     merge_parts, remove_global_translation, split_parts)
from .predictor import (Branch, GcBlock, GcLayer, MotionAttentionParams,
                        PredictorConfig, PredictorParams, branch_forward_to_exit,
                        gc_layer_forward, init_predictor, motion_attention,
                        paper_scale_config, predict, self_attention)
from .training import (AdamState, EvalReport, PredictorModel, TrainConfig,
                       TrainResult, adam_step, evaluate, init_predictor_model,
                       mpjpe_loss, mpjpe_metric, total_loss, train_predictor,
                       zero_velocity_baseline)
from .vae import (BodyMask, CagTrainConfig, LatentSample, VaeParams, elbo_loss,
                  init_vae, masked_fuse, reconstruction_mpjpe, reparameterize,
                  synthesize_composite, train_cag, vae_decode, vae_encode)

__version__ = "0.1.0"
