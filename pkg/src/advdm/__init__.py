"""Desk-scale lab for protective perturbations against latent diffusion
models: a from-scratch reverse-mode tape, a toy DDPM over a learned
latent space, Monte-Carlo signed-gradient attacks on the diffusion loss,
preprocessing defenses, and distributional evaluation."""

from .attacks import (AttackConfig, AttackResult, BudgetReport, advdm,
                      embedding_attack, pgd_classifier, pgd_dm, verify_budget)
from .checkpoint import load_checkpoint, save_checkpoint
from .classifier import Classifier, ClassifierTrainConfig, train_classifier
from .codec import CodecTrainConfig, LatentCodec, train_codec
from .config import default_config, load_config, validate_config
from .datasets import (Dataset, gaussian_mixture_2d, load_dataset,
                       read_idx_images, read_idx_labels, synthetic_shapes,
                       write_idx_images, write_idx_labels)
from .defenses import DefenseConfig, apply_defense, jpeg_like, resample, tvm
from .diffusion import (Denoiser, DiffusionSchedule, TrainConfig, diffpure,
                        diffusion_loss_batch, forward_diffuse, img2img, l_dm,
                        mc_diffusion_loss, sample, train_denoiser)
from .inversion import (InversionConfig, InversionResult,
                        generate_from_inversion, invert, style_transfer)
from .metrics import embed, frechet, precision_recall
from .pipeline import (ModelBundle, RunManifest, build_bundle, emit_plot_data,
                       run_scenario, run_sweep)
from .tensor import GradientTape, RngStream, Tensor

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
