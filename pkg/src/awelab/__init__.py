"""awelab: a laboratory for acoustic word embeddings on synthetic speech.

Everything runs on numpy alone: corpus generation, recurrent encoder and
decoder networks with hand-derived gradients, pair-based training
strategies, dynamic time warping, clustering plus skip-gram semantics,
retrieval, and the evaluation stack.
"""

__version__ = "0.1.0"
