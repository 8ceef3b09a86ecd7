"""msfnet: a from-scratch multi-scale fusion CNN + GNN library.

Dense float64 linear algebra, graph spectral constructions, neural and
graph-neural layers with hand-derived backward passes, a composite
image+graph classifier, cross-entropy SGD training with the 80/20 + 5-fold
protocol, and precision/recall/mAP evaluation. Every backward pass is
validated against central finite differences.
"""

from .exceptions import (
    ConfigError,
    ConvergenceError,
    DatasetError,
    DegenerateFeatureError,
    ShapeError,
    StaleCacheError,
    UndefinedMetricError,
)
from .linalg import EigenDecomposition, as_matrix, matmul, row_softmax, symmetric_eigen, transpose
from .graph import (
    Graph,
    NeighborSample,
    adjacency_matrix,
    degree_matrix,
    derive_seed,
    knn_similarity_graph,
    laplacian,
    normalized_adjacency,
    sample_neighbors,
)
from .layers import (
    BackwardResult,
    Conv2d,
    Dense,
    MaxPool2d,
    MultiHeadAttention,
    PyramidPooling,
    SideFusion,
    grad_check,
    relu,
    sigmoid,
)
from .gnn import GcnLayer, GcnNodeClassifier, GraphSageLayer, Nn4gLayer
from .data import (
    DatasetManifest,
    ImageRecord,
    PreprocessConfig,
    SbmSpec,
    histogram_equalize,
    load_isic_layout,
    median_denoise,
    normalize,
    preprocess_chain,
    resize,
    synth_sbm_graph,
    synth_texture_dataset,
)
from .train import (
    EpochLog,
    SplitSpec,
    TrainConfig,
    cross_entropy,
    k_fold_indices,
    lr_at,
    one_hot,
    predict_probs,
    sgd_step,
    split_indices,
    train_loop,
    train_node_classifier,
)
from .metrics import (
    ConfusionCounts,
    MetricsReport,
    PrCurve,
    average_precision,
    build_report,
    mean_average_precision,
    precision,
    recall,
)
from .model import (
    LinearSoftmaxModel,
    MsfCnnConfig,
    MsfCnnModel,
    build_model,
    load_checkpoint,
    load_params_into,
    save_checkpoint,
)

__version__ = "0.1.0"
