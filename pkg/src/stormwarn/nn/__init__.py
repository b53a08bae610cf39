from .conv import RADAR_BLOCKS, ConvBlock, ConvParams, conv_block_forward, feature_extractor_forward
from .loss import LossWeights, class_balanced_ce, class_balanced_ce_grad, class_weights
from .lstm import LstmParams, LstmState, lstm_cell_step, lstm_forward
from .toy import Adam, TrainConfig, TrainResult, TrainingDivergedError, train_toy_classifier

__all__ = [
    "Adam",
    "ConvBlock",
    "ConvParams",
    "LossWeights",
    "LstmParams",
    "LstmState",
    "RADAR_BLOCKS",
    "TrainConfig",
    "TrainResult",
    "TrainingDivergedError",
    "class_balanced_ce",
    "class_balanced_ce_grad",
    "class_weights",
    "conv_block_forward",
    "feature_extractor_forward",
    "lstm_cell_step",
    "lstm_forward",
    "train_toy_classifier",
]
