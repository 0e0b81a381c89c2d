"""Affect-conditioned generation of facial landmark sequences for one partner of a dyad.

Modules: ``pdm`` (shape model), ``corpus`` (affect, sequences, synthetic
data), ``dictionary`` (affect-shape dictionary), ``clstm`` (conditional
LSTM), ``cgan`` (shape-space conditional GAN), ``sketch`` (line renderer),
``evaluation`` (metrics and reports) and ``cli``.
"""
from .corpus import AffectClass, Corpus, DyadSequence, SynthConfig, synth
from .pdm import PDMModel, ShapeParams, build_pdm, fit, project

__all__ = ["AffectClass", "Corpus", "DyadSequence", "PDMModel", "ShapeParams", "SynthConfig", "build_pdm",
           "fit", "project", "synth"]
__version__ = "0.1.0"
