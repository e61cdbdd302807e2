"""Classifiers sharing one prediction contract and one model file format."""

from .base import TrainedModel, load_model, save_model
from .cnn import (
    CnnModel,
    EnsembleModel,
    ExponentialMovingAverage,
    TrainConfig,
    TwoStreamModel,
    build_ensemble6,
    ema_update,
    liu_baseline,
    predict_cnn,
    predict_ensemble,
    predict_two_stream,
    simple_cnn,
    train_cnn,
    train_ensemble6,
    train_two_stream_cnn,
)
from .knn import KnnModel, predict_knn, train_knn_weighted
from .nn import CnnArchitecture, Conv, Dense, Dropout, MaxPool, Parallel
from .prediction import Prediction, l1_normalize
from .svm import LinearSvmModel, hinge_loss, predict_svm, train_linear_svm
from .trees import ExtraTreesModel, predict_trees, train_extra_trees

__all__ = [
    "CnnArchitecture", "CnnModel", "Conv", "Dense", "Dropout", "EnsembleModel",
    "ExponentialMovingAverage", "ExtraTreesModel", "KnnModel", "LinearSvmModel", "MaxPool",
    "Parallel", "Prediction", "TrainConfig", "TrainedModel", "TwoStreamModel",
    "build_ensemble6", "ema_update", "hinge_loss", "l1_normalize", "liu_baseline",
    "load_model", "predict_cnn", "predict_ensemble", "predict_knn", "predict_svm",
    "predict_trees", "predict_two_stream", "save_model", "simple_cnn", "train_cnn",
    "train_ensemble6", "train_extra_trees", "train_knn_weighted", "train_linear_svm",
    "train_two_stream_cnn",
]
