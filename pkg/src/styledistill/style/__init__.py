"""Style injection through self-attention key/value swapping."""

from .injection import (DEFAULT_SWAP_LAYERS, AttentionCache, IncompleteCacheError, MissingTimestepError,
                        StyleReference, capture_style_features, modified_cfg_combine,
                        modified_predict_noise)
from .inversion import (ReconstructionWarning, invert_style_image, load_style_reference,
                        save_style_reference)
