"""Unsupervised image registration regularized by a cooperative autoencoder."""

from coopreg.experiments import (
    ExperimentSpec,
    ReportRow,
    cached_run,
    emit_report,
    latent_sweep,
    make_spec,
    run_experiment,
)
from coopreg.fields import bilinear_sample, spatial_gradient, to_signed_distance, warp_image
from coopreg.figures import render_falsecolor
from coopreg.metrics import EvalResult, ae_relative_error, dice, landmark_error, posthoc_ae_fit
from coopreg.networks import (
    CAEConfig,
    PrimaryConfig,
    cae_forward,
    init_cae,
    init_primary,
    primary_forward,
)
from coopreg.objectives import (
    ObjectiveValue,
    ObjectiveWeights,
    l2_image_loss,
    ncc_loss,
    smoothness_penalty,
    total_objective,
)
from coopreg.synth import (
    PairDataset,
    RegistrationPair,
    ShapeSample,
    build_pair_dataset,
    make_linear_boxbump,
    make_rotating_boxbump,
)
from coopreg.training import TrainConfig, TrainedModel, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
