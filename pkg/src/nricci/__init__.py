"""nricci: Ricci curvature analysis of neural network data graphs.

The package trains small MNIST classifiers, labels test examples by
empirical adversarial robustness, builds per-example weighted graphs from
the active part of the network, and computes Ollivier-Ricci curvature on
every edge via exact optimal transport.  Statistical summaries (CDFs,
AUCs, negative-curvature fractions) compare robust and nonrobust inputs.
"""

from nricci.version import __version__

__all__ = ["__version__"]
