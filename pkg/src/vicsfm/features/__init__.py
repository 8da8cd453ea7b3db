"""SIFT detection, exhaustive matching and the binary feature dump."""
from .dump import read_features, read_matches, write_features, write_matches
from .matching import Match, match_arrays, match_exhaustive
from .sift import FeatureSet, Keypoint, SiftParams, average_feature_count, detect_sift

__all__ = [
    "FeatureSet", "Keypoint", "Match", "SiftParams", "average_feature_count", "detect_sift",
    "match_arrays", "match_exhaustive", "read_features", "read_matches", "write_features", "write_matches",
]
