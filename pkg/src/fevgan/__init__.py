"""Conditional facial-expression video generation with a dual-encoder spatio-temporal GAN."""

from .data import EXPRESSIONS, DatasetRecord, DatasetSplit, ExpressionLabel
from .generator import Generator, GeneratorConfig, generate
from .discriminator import Discriminator, discriminate
from .identity import SurrogateBackend, VGGFaceBackend, build_backend
from .losses import LossReport, LossWeights
from .trainer import TrainConfig, TrainState, initialize, train, train_step

__version__ = "0.1.0"
