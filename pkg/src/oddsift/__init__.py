"""oddsift: semi-supervised anomaly detection for large image collections.

Train a compact CNN with pseudo-label consistency on a few labelled images
plus a large unlabelled pool, refine it through active-learning cycles, and
stream-score arbitrarily large shard caches to surface the rarest images.
"""

__version__ = "0.1.0"

from .errors import OddsiftError

__all__ = ["OddsiftError", "__version__"]
