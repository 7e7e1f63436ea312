"""Certified stability of smoothed predictions and attention top-k sets.

Wraps a deterministic image model in Gaussian noise plus a one-shot
denoising step, estimates the smoothed prediction and attention vector by
Monte Carlo, and computes a radius within which the top class and the
attention top-k overlap are provably stable.  Projected-gradient attacks
and saliency metrics round out the toolkit for checking those certificates
empirically.
"""

from ._backend import available_backends, backend_name
from .core import (AlphaSweepResult, AttackObjective, AttentionMode,
                   CertificationResult, CertParams, ConfidenceMode, DataError,
                   InvariantError, LinfMode, Norm, SmoothedEstimate,
                   default_alpha_grid, normalize_simplex)
from .divergence import (gaussian_renyi_bound, prediction_threshold,
                         renyi_divergence, sup_over_alpha)
from .topk import (TopKContext, brute_force_min_divergence, make_context,
                   min_divergence_to_break, overlap_ratio, topk_set,
                   worst_case_q)
from .smoothing import (IdentityDenoiser, NoiseSchedule, ShrinkageDenoiser,
                        dds_transform, fuse_maps, linear_schedule,
                        timestep_for_sigma)
from .model import (ToyViTParams, fit_head, forward, init_params, load_model,
                    save_model)
from .certify import (SmoothedModel, certify_input, estimate_smoothed,
                      faithful_region)
from .attacks import AttackConfig, pgd_attack, verify_region
from .metrics import (average_precision, miou, p_auc, perturbation_curve,
                      pixel_accuracy, s_faith)
from .datagen import synthesize

__version__ = "0.1.0"
