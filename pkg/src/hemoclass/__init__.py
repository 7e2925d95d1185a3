"""Blood cell image classification from pretrained-CNN features.

The pipeline: ingest a class-per-directory image dataset, draw a
reproducible stratified split with a fixed-size test set, push images
through an ONNX backbone to get feature vectors, train classical
classifier heads (KNN / SVM / random forest / gradient-boosted trees)
with cross-validated grid search, and report per-class precision,
recall and F1 alongside overall accuracy.
"""

__version__ = "0.1.0"
