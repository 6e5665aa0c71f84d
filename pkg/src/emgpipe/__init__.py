"""Surface-EMG gesture recognition pipeline: preprocessing, windowed
features, gesture clustering, feature selection, classifiers and evaluation."""

__version__ = "0.1.0"
