"""Sparse training toolkit for audio-visual token pipelines.

Three strategies, each usable on its own:

* random token masking on an epoch schedule (:mod:`avsparse.masking`)
* attention-guided key-token merging (:mod:`avsparse.merging`)
* loss-driven key-subset selection with InfoBatch soft pruning
  (:mod:`avsparse.selection`)

:mod:`avsparse.simulator` runs them together on a synthetic workload and
accounts for the compute they save.
"""

from .errors import InvalidInput, ShapeError
from .masking import MaskPlan, MaskSchedule, TokenSet, apply_mask, mask_active, plan_mask
from .merging import (
    AttentionInputs,
    MergeResult,
    assign_clusters,
    importance_scores,
    merge_tokens,
    prumerge,
    select_key_tokens,
    token_similarity,
)
from .numeric import (
    argsort_desc,
    make_rng,
    quartiles,
    sample_without_replacement,
    scaled_dot_attention,
    softmax,
)
from .selection import (
    InfoBatchConfig,
    KeySubset,
    PruneDecision,
    ScoreBoard,
    SelectionConfig,
    epoch_update,
    infobatch_step,
    merge_epoch_flags,
    run_selection,
    select_key_subset,
    warmup_scores,
)

__version__ = "0.1.0"
