"""Self-supervised text style transfer from two non-parallel corpora.

Modules: ``corpus`` (data), ``tokenizer`` (BPE), ``noiser`` (span-masking
noise), ``seqmodel`` (encoder-decoder), ``mining`` (margin scoring and pair
extraction), ``trainer`` (denoising pre-training and the joint training
loop), ``evaluation`` (metrics and rating statistics), ``cli``.
"""
from .corpus import Sentence, StyleCorpus, StyleTag
from .tokenizer import BpeModel, TokenSequence

__all__ = ["BpeModel", "Sentence", "StyleCorpus", "StyleTag", "TokenSequence"]
