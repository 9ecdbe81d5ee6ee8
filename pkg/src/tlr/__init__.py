"""Temporal anomaly detection on binary user x object access matrices.

A single low-rank stationary model is fitted to averaged training
intervals; a linear regression on time features predicts each interval's
expected log-likelihood, and the gap between observed and predicted
log-likelihood is the anomaly score.
"""
from .coldstart import FoldingIndex, build_folding_index, fold_user, folded_log_likelihood
from .data import (AveragedMatrix, Dataset, IntervalMatrix, average_matrix, load_dataset,
                   save_dataset, split_chronological)
from .errors import TLRError
from .likelihood import LogLikelihood, bernoulli_cross_entropy, log_likelihood
from .lowrank import (ModelMatrix, SvdFactors, evaluate_entry, find_model, soft_threshold,
                      sparse_svd, spectral_norm)
from .modelfile import load_pipeline, save_pipeline
from .scoring import ScoredInterval, normalize_scores, rank_intervals, score_interval
from .training import TrainConfig, TrainedPipeline, load_config, train

__version__ = "0.1.0"
