"""Multi-round paraphrase generation guided by back-translation."""

from .backtranslator import BackTranslator, BTConfig, bt_forward, bt_loss
from .bridge import SoftSequence, TemperatureSchedule, autoregressive_soft_decode, gumbel_noise, gumbel_softmax, soft_embed, temperature
from .config import RunConfig, load_config
from .corpus import Vocabulary, build_vocab, make_batches, tokenize
from .paraphraser import Paraphraser, ParaphraserConfig, first_word_coefficient, kl_loss, paraphrase_loss, sample_latent

__version__ = "0.1.0"

__all__ = [
    "BTConfig", "BackTranslator", "Paraphraser", "ParaphraserConfig", "RunConfig", "SoftSequence",
    "TemperatureSchedule", "Vocabulary", "autoregressive_soft_decode", "bt_forward", "bt_loss", "build_vocab",
    "first_word_coefficient", "gumbel_noise", "gumbel_softmax", "kl_loss", "load_config", "make_batches",
    "paraphrase_loss", "sample_latent", "soft_embed", "temperature", "tokenize",
]
