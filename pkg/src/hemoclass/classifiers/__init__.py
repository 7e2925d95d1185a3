"""Classifier heads trained on frozen backbone features.

Four heads are provided — k-nearest-neighbors, a one-vs-one SVM trained by
SMO, a random forest, and second-order gradient-boosted trees — together
with feature standardization and a versioned binary model container.
"""

from hemoclass.classifiers.standardize import Standardizer, fit_standardizer
from hemoclass.classifiers.knn import KnnModel, predict_knn, train_knn
from hemoclass.classifiers.svm import SvmModel, predict_svm, train_svm
from hemoclass.classifiers.forest import ForestModel, predict_forest, train_forest
from hemoclass.classifiers.gbt import GbtModel, predict_gbt, train_gbt
from hemoclass.classifiers.store import (
    TrainedHead,
    predict_head,
    read_head,
    train_head,
    write_head,
)

__all__ = [
    "Standardizer", "fit_standardizer",
    "KnnModel", "train_knn", "predict_knn",
    "SvmModel", "train_svm", "predict_svm",
    "ForestModel", "train_forest", "predict_forest",
    "GbtModel", "train_gbt", "predict_gbt",
    "TrainedHead", "train_head", "predict_head", "read_head", "write_head",
]
