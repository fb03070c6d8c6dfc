"""Adversarial missingness attacks against GLM modelers who remediate missing data."""

from ._kernels import BACKEND
from .bilevel import BilevelConfig, TrainTrace, blamm_train, ift_vjp, inner_solve, upper_loss
from .data import Dataset, MaskMatrix, PartialDataset, ScalerParams, apply_mask, load_csv, split, standardize
from .glm import AttackTarget, GlmFamily, GlmFit, constrained_target, irls_fit, kl_distance, wald_inference
from .mechanism import MaskDistribution, MechanismNet, mechanism_forward, sample_masks
from .remediation import AttackData, RemediationKind

__version__ = "0.1.0"
