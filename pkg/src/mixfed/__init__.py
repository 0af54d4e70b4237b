"""Deterministic simulator for federated segmentation over clients that hold
mixed subsets of imaging modalities.

The library couples a small float64 autodiff core with per-modality encoder
networks, modality-grouped federated aggregation, an adversarially trained
shared encoder (gradient reversal), and a server-hosted prototype memory
that compensates each client's missing modalities.
"""

from .config import (
    AblationFlags,
    ExperimentConfig,
    MemoryConfig,
    Mechanisms,
    config_from_dict,
    config_to_dict,
    mechanisms,
    parse_config,
    preset,
)
from .data import (
    ClientDataSpec,
    DataConfig,
    ModalityProfile,
    SceneSpec,
    build_federation,
    dump_dataset,
    generate_sample,
    load_dataset,
)
from .federation import (
    AggregationPlan,
    ClientState,
    Experiment,
    Upload,
    aggregate,
    local_train,
    plan_aggregation,
    run_experiment,
)
from .losses import (
    LossConfig,
    TripletBatch,
    dice_loss,
    fedprox_term,
    gaussian_entropy,
    modality_ce,
    total_loss,
    triplet_entropy_loss,
)
from .memory import (
    BankSnapshot,
    ClusterResult,
    PrototypeBank,
    compensate,
    extract_prototypes,
    kmeans,
    retrieve,
)
from .metrics import (
    DiceReport,
    dice_score,
    export_representations,
    mdice,
    mean_pairwise_cosine_distance,
)
from .nets import (
    ArchConfig,
    ModalityId,
    ParamBundle,
    RepSet,
    classify_modality,
    compute_reps,
    decode,
    encode_shared,
    encode_tailored,
    fuse_pair,
    init_params,
    make_modalities,
)
from .optim import SGD, Adam
from .tensor import Tensor, backward, grl, no_grad

__version__ = "0.1.0"
