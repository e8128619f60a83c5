"""Unsupervised flow- and behavior-level traffic anomaly detection for web services.

Pipeline: per-flow recurrent autoencoder -> pseudo operation labels from
HDBSCAN on whitened latents -> ECDF-calibrated anomaly scores -> behavior
extractor and one-class SVM over windows of W flows per user.
"""

__version__ = "0.1.0"
