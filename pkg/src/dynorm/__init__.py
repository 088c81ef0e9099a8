"""dynorm: test-time cluster-aware batch normalization."""
__version__ = "0.1.0"
