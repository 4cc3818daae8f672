"""Illumination-robust moving object detection.

Each frame of a sequence is decomposed into background + illumination change
+ foreground by two tiny generative decoder networks with optimizable
per-frame latent codes, trained unsupervised.  An illumination-invariant
image steers the split so lighting changes and shadows stay out of the
foreground masks.  Works in batch mode (whole sequence) and online mode
(frozen decoders, streaming frames).
"""

__version__ = "0.1.0"

from .core import (
    BatchResult,
    Checkpoint,
    Decomposition,
    FrameVariables,
    OnlineResult,
    PriorMap,
    RunningStd,
    TrainConfig,
    TrainingDivergedError,
    compute_prior_map,
    evaluate_objective,
    load_checkpoint,
    loss_decomp,
    loss_reconst,
    loss_reg,
    objective_gradients,
    save_checkpoint,
    threshold_foreground,
    total_loss,
    train_batch,
    train_online,
    weights_checksum,
)
from .invariant import (
    InvariantFrame,
    InvariantModel,
    calibrate_direction,
    log_chromaticity,
    project_invariant,
    psi,
    psi_sequence,
    wiener_reflectance,
)
from .io import (
    DatasetError,
    Frame,
    MaskSequence,
    Sequence,
    load_masks,
    load_sequence,
    save_image,
    save_mask,
)
from .metrics import (
    FrameScore,
    NoEvaluableFramesError,
    confusion,
    f_measure_sequence,
    score_frames,
)
from .nets import (
    AdamState,
    GfcnParams,
    RowwiseAdam,
    adam_step,
    gfcn_backward,
    gfcn_forward,
    init_params,
)
from .synth import (
    IlluminationEvent,
    MovingObject,
    SynthConfig,
    generate,
    standard_fixture_config,
)

__all__ = [name for name in dir() if not name.startswith("_")]
