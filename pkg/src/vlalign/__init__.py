"""vlalign: source-free adaptation for vision-language embedding spaces.

Pipeline: realign visual and text embeddings in an SVD projection of the
text span, pseudo-label images by graph label propagation, then refine both
modalities with a two-branch self-training loop that only trains on labels
the branches agree on.
"""

from ._kernels import BACKEND
from .adapt import (
    AffineAdapter,
    ClassCenters,
    OptimizerState,
    adapter_forward,
    backprop_to_adapter,
    ce_loss_and_grads,
    class_centers,
    cosine_logits,
    sgd_step,
)
from .affinity import SparseMatrix, build_topk_affinity, normalize_symmetric
from .containers import (
    UNLABELED,
    ClassCatalog,
    EmbeddingSet,
    LabelVector,
    l2_normalize,
    load_container,
    save_container,
)
from .errors import (
    ContainerIOError,
    DegenerateInputError,
    DegenerateProjectionError,
    DegenerateSpanError,
    EngineError,
    FormatError,
    SelfTrainAborted,
    SolverError,
    ValidationError,
)
from .harness import (
    EvalReport,
    SynthSpec,
    generate_synth,
    split_transductive_inductive,
    top1_accuracy,
)
from .labelprop import (
    DiffusionResult,
    LabelSource,
    PseudoLabelSet,
    extract_pseudo_labels,
    knn_pseudo_labels,
    propagate,
    propagate_union,
)
from .projection import (
    AlignmentStats,
    ProjectionBasis,
    Variant,
    alignment_stats,
    compute_text_basis,
    project,
)
from .selftrain import (
    Branch,
    BranchState,
    Mode,
    RunConfig,
    infer,
    run_epoch,
    run_reclip,
    share_labels,
    zero_shot_predictions,
)

__version__ = "0.1.0"
