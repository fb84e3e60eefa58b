"""Grayscale malware-image classification with convolutional networks written directly on numpy."""
from .datasets import LabeledDataset, generate_synthetic, load_corpus, one_hot, split_train_test
from .evaluation import (
    CvSummary,
    FoldResult,
    accuracy,
    confusion_matrix,
    evaluate_model_cv,
    kfold_split,
    summarize_performance,
)
from .imaging import GrayImage, bytes_to_image, normalize, resize_to_input
from .model import Model, build_model, load_model, model_backward, model_forward, save_model
from .reports import emit_reports
from .training import FitHistory, TrainConfig, cross_entropy, fit, sgd_momentum_step, train_epoch

__version__ = "0.1.0"
