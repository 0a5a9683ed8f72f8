"""Training-free OOD detection via multi-layer class prototypes.

Build per-layer, unit-norm class prototypes from an ID calibration set,
score test samples by their fused max cosine similarity across layers,
and evaluate ID/OOD separation with AUROC and FPR@95%TPR.
"""

from .baselines import MahalanobisModel, energy, fit_mahalanobis, mahalanobis_score, max_logit, msp
from .errors import (
    BankFormatError,
    ConfigError,
    DataError,
    DegeneratePrototypeError,
    EmptyClassError,
    FormatError,
    InsufficientCalibration,
    IoError,
    ManifestError,
    OodProtoError,
    ProvenanceWarning,
    ShapeError,
    SingularCovariance,
    UnsupportedDtype,
)
from .features import PooledBatch, global_avg_pool, l2_normalize, prepare_layer
from .metrics import EvalReport, auroc, decide, evaluate, fpr_at_tpr
from .prototypes import (
    CalibrationConfig,
    PrototypeBank,
    build_prototypes,
    load_bank,
    sample_calibration,
    save_bank,
)
from .scoring import (
    ScoreRecord,
    WeightScheme,
    fuse,
    layer_max,
    layer_similarities,
    resolve_weights,
    score_dataset,
    write_score_csv,
)
from .synth import SynthConfig, expected_separation, generate
from .tensor_store import DatasetManifest, LayerEntry, load_manifest, load_tensor, save_tensor

__version__ = "0.1.0"
