"""sentinet: a CPU training engine for binary visual sentiment analysis.

Small convolutional networks with a logistic head, progressive filtering of
noisy training labels, k-fold domain-transfer fine-tuning, and color/BoW
feature baselines, all reproducible from explicit seeds.
"""

from .baselines import (Codebook, LinearConfig, LinearModel, bow,
                        build_vocabulary, extract_descriptors, extract_features,
                        gch, lch, predict_linear, train_linear)
from .dataio import (Dataset, Sample, SyntheticConfig, aggregate_worker_labels,
                     generate_synthetic, load_image, load_manifest,
                     resize_center_crop, save_image, save_manifest, write_corpus)
from .errors import (CheckpointError, ConfigError, DataError,
                     DegenerateFilterError, FormatError, IoError, LabelError,
                     ParameterError, ParseError, ScoreError, SentinetError,
                     ShapeError)
from .metrics import (ConfusionMatrix, MetricsReport, confusion, emit_report,
                      evaluate_scores, export_filter_grid, metrics,
                      predict_labels, rank_extremes)
from .network import (Checkpoint, NetworkSpec, build_architecture, forward,
                      load_checkpoint, save_checkpoint)
from .progressive import (FilterOutcome, ProgressiveResult, filter_training_set,
                          removal_probability, train_progressive)
from .tensor import Rng, Tensor, matmul, reduce, tensor_new
from .training import (TrainConfig, TrainHistory, class_probabilities,
                       logistic_loss, loss_gradient, score_dataset, sgd_step,
                       train)
from .transfer import (FoldPlan, TransferResult, cross_domain_evaluate,
                       fine_tune, partition_folds)

__version__ = "0.1.0"
