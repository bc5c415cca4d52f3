"""Robust white-box watermarks for transformer embedding matrices."""

from .attacks import (EquivParams, apply_equiv_transform, collude, gen_equiv_params,
                      perturb, prune_global, quantize, quantize_tensor)
from .errors import (AmbiguousRecovery, ConditioningFailure, DegenerateInput, FormatError,
                     GenerationFailure, InvalidArgument, SingularMatrix, WatermarkError)
from .invariants import (InvariantMatrix, apply_frame_correction, compute_invariants,
                         condition_number, permute_invariant_rows, recover_permutation)
from .keys import (InvertiblePair, OrthoKey, PermKey, SingleUserKey, UserKey, gen_invertible,
                   gen_orthogonal, gen_permutation, gen_permutations)
from .keystore import Keystore, load_keystore, save_keystore
from .model import LayerWeights, ModelBundle, forward, gen_synthetic_model
from .modelio import load_model, save_model
from .multi import (MultiUserContext, add_noise, extract_watermark_multi,
                    insert_watermark_user, make_multi_context)
from .prng import PrngStream, derive_seed
from .probstats import (ProbParams, binom_lower_tail, binom_upper_tail, estimate_p,
                        pr_u_random, pr_u_wrong, pr_wm_success)
from .single import (DetectionReport, InsertionConfig, extract_watermark, insert_watermark,
                     null_distribution, watermark_statistic)

__version__ = "0.1.0"

__all__ = [
    "EquivParams", "apply_equiv_transform", "collude", "gen_equiv_params", "perturb",
    "prune_global", "quantize", "quantize_tensor", "AmbiguousRecovery", "ConditioningFailure",
    "DegenerateInput", "FormatError", "GenerationFailure", "InvalidArgument", "SingularMatrix",
    "WatermarkError", "InvariantMatrix", "apply_frame_correction", "compute_invariants",
    "condition_number", "permute_invariant_rows", "recover_permutation", "InvertiblePair",
    "OrthoKey", "PermKey", "SingleUserKey", "UserKey", "gen_invertible", "gen_orthogonal",
    "gen_permutation", "gen_permutations", "Keystore", "load_keystore", "save_keystore",
    "LayerWeights", "ModelBundle", "forward", "gen_synthetic_model", "load_model",
    "save_model", "MultiUserContext", "add_noise", "extract_watermark_multi",
    "insert_watermark_user", "make_multi_context", "PrngStream", "derive_seed", "ProbParams",
    "binom_lower_tail", "binom_upper_tail", "estimate_p", "pr_u_random", "pr_u_wrong",
    "pr_wm_success", "DetectionReport", "InsertionConfig", "extract_watermark",
    "insert_watermark", "null_distribution", "watermark_statistic",
]
