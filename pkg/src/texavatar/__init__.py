"""Textured neural avatars: pose-to-UV generator, learned part textures, synthetic oracle."""

from .generator import GeneratorConfig, build_generator, generator_forward
from .losses import FeatureExtractor, LossWeights, image_loss, mask_loss, total_loss
from .metrics import ssim
from .pose import CMU19, Camera, PoseFrame, RasterConfig, SkeletonDef, rasterize_bones
from .renderer import bilinear_sample, composite, sample_texture
from .train import TrainConfig, evaluate, render, train

__version__ = "0.1.0"
