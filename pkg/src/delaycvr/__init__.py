"""Delayed-feedback conversion-rate prediction toolkit.

Unbiased IPS/ICVR loss estimators and their non-negative variants, the
dual learning algorithm, the Oracle/Naive/DFM baselines, a synthetic
delayed-feedback data generator, and a benchmark grid runner.
"""

from .errors import (
    ConfigError,
    DelayCvrError,
    DivisionGuardError,
    InvalidInputError,
    MissingGroundTruthError,
    TrainingDivergedError,
)
from .evaluate import (
    ExperimentGrid,
    ResultsTable,
    log_loss,
    mean_propensity,
    relative_log_loss,
    run_experiment,
)
from .losses import (
    ClipPolicy,
    DeltaPair,
    LabeledBatch,
    cross_entropy_deltas,
    grad_icvr,
    grad_ips,
    grad_nonneg,
    icvr_loss,
    icvr_variance,
    ideal_loss,
    ips_loss,
    ips_variance,
    nonneg_loss,
)
from .models import (
    LinearSigmoidModel,
    OptimizerState,
    apply_gradient_step,
    predict_cvr,
    predict_propensity,
    sigmoid,
)
from .synthgen import (
    Coefficients,
    SynthConfig,
    SyntheticDataset,
    generate,
    generate_test_set,
    read_dataset,
    sample_coefficients,
    sample_delay,
    true_cvr,
    true_propensity,
    write_dataset,
)
from .trainers import (
    DfmModel,
    TrainConfig,
    TrainReport,
    dfm_negative_log_likelihood,
    train_dfm,
    train_dla,
    train_naive,
    train_oracle,
)

__version__ = "0.1.0"
