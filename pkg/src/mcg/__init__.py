"""Generative video question answering pretrained with instance- and token-level contrastive losses."""

from .config import Config, load_config, toy_config
from .model import MCG, generate_answer, import_weights, score_choices
from .text import Vocabulary, toy_vocabulary

__all__ = [
    "Config",
    "MCG",
    "Vocabulary",
    "generate_answer",
    "import_weights",
    "load_config",
    "score_choices",
    "toy_config",
    "toy_vocabulary",
]
__version__ = "0.1.0"
