"""Detection of staged reverse-engineering query attacks on small dense
classifiers using layer-wise ADA anomaly statistics."""

__version__ = "0.1.0"
