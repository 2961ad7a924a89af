"""Min-cost flow on separator-friendly graphs via a robust interior point
method with nested-dissection data structures."""

__version__ = "0.1.0"
