"""splitaudit: audit object-detection train/test splits for data leakage.

Two complementary probes: perceptual-hash near-duplicate scanning across
the split boundary, and the incremental-leakage protocol (inject k% of
the test images into train, retrain, and flag splits whose performance
barely responds).
"""

__version__ = "0.1.0"

from .audit import (  # noqa: F401
    Combination,
    StepSummary,
    Verdict,
    VerdictRule,
    detect_leakage,
    relative_increase,
    summarize_runs,
)
from .dataset import (  # noqa: F401
    Annotation,
    DatasetManifest,
    ImageRecord,
    ManifestFormat,
    SplitSpec,
    SplitStrategy,
    load_manifest,
    make_split,
    validate_split,
)
from .detmetrics import Detection, EvalMetrics, evaluate, iou  # noqa: F401
from .errors import SplitAuditError  # noqa: F401
from .leakage import (  # noqa: F401
    LeakagePlan,
    LeakageStep,
    MaterializedSplit,
    apply_step,
    leak_count,
    make_leakage_plan,
)
from .phash import (  # noqa: F401
    PerceptualHash,
    compute_phash,
    hamming_distance,
    hash_corpus,
    hash_image,
    to_grayscale,
)
from .runner import (  # noqa: F401
    AdapterConfig,
    MockParams,
    RunRecord,
    mock_evaluate,
    run_external,
    run_plan,
)
from .simindex import (  # noqa: F401
    HashIndex,
    SimilarityReport,
    build_index,
    cross_split_scan,
    query_within,
)
