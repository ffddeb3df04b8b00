"""Adjacent token merging (A-ToMe) in a toy Transformer-transducer.

Arrays are float32 numpy arrays with one token or frame per row.
"""

from ._atome import (
    EncoderConfig,
    EncoderWeights,
    FormatError,
    InputError,
    MergePolicy,
    PolicyError,
    SelectionError,
    UsageError,
    adjacent_similarities,
    encode,
    encode_longform,
    greedy_decode,
    init_weights,
    merge_pairs,
    ratio_budget,
    run_sweep,
    select_pairs_budget,
    select_pairs_ratio,
    select_pairs_threshold,
    synth_features,
)

__all__ = [
    "EncoderConfig",
    "EncoderWeights",
    "FormatError",
    "InputError",
    "MergePolicy",
    "PolicyError",
    "SelectionError",
    "UsageError",
    "adjacent_similarities",
    "encode",
    "encode_longform",
    "greedy_decode",
    "init_weights",
    "merge_pairs",
    "ratio_budget",
    "run_sweep",
    "select_pairs_budget",
    "select_pairs_ratio",
    "select_pairs_threshold",
    "synth_features",
]
