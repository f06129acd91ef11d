"""Watermarking for masked-diffusion decoding by steering the unmasking order.

Generation commits positions whose candidate tokens land in a keyed parity
set, never touching the model's probabilities; detection needs only the
token sequence and the key. Includes toy predictors, a top-k lookahead
variant, block-wise decoding, token-edit attacks, exact and Monte Carlo
calibration, an evaluation harness, and a subprocess bridge for serving
real models behind the same predictor interface.
"""

from .attack import ATTACK_KINDS, AttackSpec, apply_attack, edit_count
from .decoder import (
    DECODE_MODES,
    DecodeConfig,
    DecodeTrace,
    LookaheadRecord,
    audit_no_reweighting,
    decode_blockwise,
    decode_lookahead,
    decode_plain,
    decode_watermarked,
)
from .detector import (
    CalibratedThreshold,
    DetectionReport,
    DetectorConfig,
    WindowStat,
    batch_global,
    batch_z_win,
    calibrate,
    decide,
    detect,
    global_z,
    window_scan,
)
from .errors import (
    BridgeError,
    CalibrationInfeasibleError,
    ConfigError,
    DecodeError,
    DegenerateAttackError,
    DgmarkError,
    InvalidInputError,
    InvalidQueryError,
    InvalidTokenError,
    InvalidVocabularyError,
    InvalidWindowError,
    TrainingError,
    TruncationError,
)
from .evaluate import (
    TPR_AT_FPR_LEVELS,
    ConfusionRates,
    EvalReport,
    Histogram,
    ScoreSet,
    confusion,
    evaluate_scores,
    join_ppl,
    match_ratio_histogram,
    roc_auc,
    roc_points,
    tpr_at_fpr,
)
from .partition import (
    MODE_KEYED,
    MODE_TOKEN_ID_MOD_2,
    PARTITION_MODES,
    ParityPartition,
    WatermarkKey,
    build_partition,
    in_matching_set,
    load_key,
    match_bit_matrix,
    match_bits,
    save_key,
)
from .predictor import (
    MASKED,
    ContextMixToyModel,
    FactorizedToyModel,
    PartialSequence,
    PredictiveDistribution,
    Predictor,
    predict,
    train_context_mix,
)
from .randomness import derive_seed, seed_sequence, stream
from .strategy import (
    SELECTIONS,
    STRATEGY_KINDS,
    Proposal,
    StrategySpec,
    propose,
    propose_rows,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
