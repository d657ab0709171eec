"""Low-variance score-matching objectives for diffusion-based simulation-based
inference on gray-box simulators, with posterior sampling and diagnostics."""

from .errors import DivergenceError, UnreachableObservationError, UnsupportedTaskError
from .metrics import MmdConfig, median_heuristic, mmd_u, score_l1_error, variance_profile
from .nn import (
    ScoreNetwork,
    WeightSchedule,
    load_checkpoint,
    make_score_network,
    make_weight_schedule,
    save_checkpoint,
    score_net_eval,
    weight_schedule_eval,
)
from .sampler import load_samples, sample_posterior, save_samples
from .sde import T_MIN, NoiseSchedule, forward_sample, reverse_step
from .simulators import (
    GALTON,
    GAUSSIAN,
    MIXTURE,
    Dataset,
    GaltonSim,
    GaussianSim,
    JointDraw,
    MixtureCategoricalSim,
    gaussian_clean_posterior_score,
    gaussian_true_score,
    generate_dataset,
    joint_score,
    load_dataset,
    make_simulator,
    reference_posterior,
    save_dataset,
    simulate,
)
from .targets import (
    RegressionTarget,
    dsm_target,
    ltsm_target,
    mix_target,
    optimal_weight_mc,
    tsm_target,
)
from .training import TrainConfig, TrainLog, batch_loss, train

__version__ = "0.1.0"
