"""gapens: evaluate, analyze, and optimally combine ensembles of
multi-label classifiers under a pooled top-k ranking metric."""

__version__ = "0.1.0"

from ._kernels import BACKEND as KERNEL_BACKEND
from .core import (
    AlignmentError,
    FormatError,
    LabelSet,
    NumericError,
    PredictionSet,
    SplitSpec,
    require_aligned,
    select_rows,
    split_examples,
)
from .io import (
    export_top_k_csv,
    load_labels,
    load_predictions,
    save_labels,
    save_predictions,
)
from .metrics import (
    ClassAccuracyReport,
    OracleMatrix,
    class_accuracy,
    class_accuracy_report,
    gap_at_k,
    gap_from_arrays,
    oracle_matrix,
    top_frequency_classes,
)
from .diversity import (
    DiversityCurve,
    correct_counts,
    entropy_diversity,
    interrater_kappa,
    subset_sweep,
)
from .combine import (
    AdamState,
    EnsembleWeights,
    FitReport,
    MoeHyperparams,
    adam_step,
    apply_weights,
    average_combine,
    ensemble_cross_entropy,
    fit_pair_weight,
    greedy_correlation_ensemble,
    load_weights,
    moe_fit,
    pearson_correlation,
    save_weights,
)
from .nets import (
    FeatureVector,
    NetTrainConfig,
    ToyNetConfig,
    ToyNetParams,
    aggregate_mean_std,
    fcrn_forward,
    fcrn_train,
    gated_layer_forward,
    grad_check,
    init_params,
    resnet_block_forward,
)
from .synth import FamilySpec, PredictorFamily, SynthDataset, SynthSpec, gen_dataset, gen_predictor_family

__all__ = [name for name in dir() if not name.startswith("_")]
