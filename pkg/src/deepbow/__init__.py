"""Contextual bag-of-visual-words retrieval.

Local keypoint matches are verified on three levels (local binary
signature, regional context, global context) fused as a product of
exponential similarity kernels, served from a memory-compact inverted
file that stores context signatures once per image.
"""

from .datastore import (
    GroundTruth,
    ImageRecord,
    read_dataset,
    read_ground_truth,
    write_dataset,
    write_ground_truth,
)
from .index import DeepIndex, build_index, load_index, memstats, save_index
from .metrics import EvalReport, average_precision, make_report, ns_score
from .normalize import SrnConfig, root_sift, srn
from .scoring import (
    ALL_LEVELS,
    BINARY_CONTEXT,
    FLOAT_CONTEXT,
    MatchParams,
    MatchScore,
    combine,
    s_global,
    s_local,
    s_regional,
    sketch_to_euclidean,
)
from .search import QueryConfig, burst_weight, score_query
from .simfit import SimilarityCurve, empirical_match_probability, fit_curve
from .sketch import (
    HeModel,
    LshBank,
    hamming,
    he_signature,
    load_lsh_bank,
    lsh_sketch,
    save_lsh_bank,
    train_he,
)
from .synth import SynthConfig, generate
from .vocab import (
    Vocabulary,
    idf,
    load_vocabulary,
    quantize,
    save_vocabulary,
    train_kmeans,
)

__version__ = "0.1.0"
