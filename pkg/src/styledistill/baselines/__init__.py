"""Baseline stylization methods and the caption provider."""

from .captioning import CaptionError, CaptionerConfig, caption_style_image
from .prompt import style_in_prompt
from .style_loss import (FeatureExtractor, StyleNet, load_or_train_extractor, neural_style_loss,
                         style_regularizer, train_feature_extractor)
from .textual_inversion import InversionDivergedError, InvertedToken, initial_embedding, textual_inversion
