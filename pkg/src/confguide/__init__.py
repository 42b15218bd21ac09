"""Risk-controlled decision guidance for multi-label image classification.

The package calibrates a conformal risk control threshold so prediction
sets miss at most a target fraction of true findings, generates balanced
favor/against guidance for each flagged finding, and routes the flags
through direct or reviewer-in-the-loop decision configurations before
scoring everything against ground truth.
"""

from .errors import ConfguideError

__all__ = ["ConfguideError"]
__version__ = "0.1.0"
