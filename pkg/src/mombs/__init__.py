"""Mixed-order minibatch sampling: difficulty assessment, minibatch planning and a desk-scale harness."""

__version__ = "0.1.0"
