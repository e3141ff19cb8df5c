"""Street-level perception surveys, end to end.

Samples street-view locations for a city, runs a pairwise "which street
would you rather walk on" survey over a stratified image set, filters the
raw votes, ranks images with a two-player Gaussian skill model, tests for
rater-group effects with a multilevel logistic model, and aggregates
scores to small-area decile maps.
"""

__version__ = "0.1.0"
