from needlepick.models.nets import ConvDecoder, ConvEncoder, MLP
from needlepick.models.rssm import RSSM, categorical_kl
from needlepick.models.world import HeadOutputs, WorldModel, prepare_batch

__all__ = [
    "ConvDecoder",
    "ConvEncoder",
    "MLP",
    "RSSM",
    "categorical_kl",
    "HeadOutputs",
    "WorldModel",
    "prepare_batch",
]
