"""Genre classification from separated vocal and accompaniment stems.

Audio decoding, median-filter source separation, MFCC features, numpy
neural networks (BiLSTM on vocals, CNN on accompaniment), bagging and
stacking fusion of their probability outputs, metrics and a file-based
pipeline.
"""

from .errors import StemGenreError

__version__ = "0.1.0"

__all__ = ["StemGenreError", "__version__"]
