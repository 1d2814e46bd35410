from .keypoints import extract_keypoints, sample_at, to_metric
from .matching import MatchSet, assemble_weight, match
from .network import Architecture, DenseMaps, FeatureModel, backward, forward
from .frontend import FeatureSet, WindowFeatures, extract_window, mstep
