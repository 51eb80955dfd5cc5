"""Deep bidirectional LSTM with co-occurrence regularization for skeleton action recognition."""

from .cooccurrence import RegConfig, partition_groups, penalty_subgradient, penalty_value
from .network import LayerSpec, Network, NetworkConfig, SequenceSample, forward, predict
from .recurrent import DropoutMasks, LstmParams, masks_sample
from .skeleton import PreprocessConfig, SkeletonSequence, SynthSpec, preprocess, synth_generate
from .training import SgdConfig, cross_validate, evaluate, gradient_check, train

__version__ = "0.1.0"
