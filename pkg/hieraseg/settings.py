"""
Settings for the hieraseg toolkit.

Module-level constants, read once at import. Only a handful may be overridden
from the environment; everything else is changed per run through the command
line, which resolves a `RunConfig` (see `hieraseg.commands.base`).
"""

import os

# Reserved label value for unlabeled pixels (propagates through every level)
IGNORE_INDEX = 255

DEFAULT_SEED = 0

# Worker cap for process pools (ablation grid cells, dataset generation)
THREADS = max(1, int(os.environ.get("HIERA_SEG_THREADS", "1") or 1))

# Rows per tile when decoding large rasters
DECODE_TILE_ROWS = 16

# Desk-scale defaults
IMAGE_SIZE = 64
IMAGE_CHANNELS = 4
ENCODER_WIDTHS = (16, 32, 64)
DECODER_DIM = 32
ITERATIONS = 2000
BATCH_SIZE = 8
LEARNING_RATE = 0.05
MOMENTUM = 0.9
EVAL_EVERY = 250

# Synthetic scenes
SCENE_REGIONS = 24
SCENE_NOISE = 0.25
SCENE_MIN_MEAN_DISTANCE = 1.0
SCENE_MIN_SEPARABILITY = 0.9

# Finite-difference gradient checks
GRADCHECK_STEP = 1e-3
GRADCHECK_RTOL = 1e-4
GRADCHECK_ATOL = 1e-6
# Step shrinks (by 10 each) tried when +-step crosses a relu or max-pool switch
GRADCHECK_REFINEMENTS = 2

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "simple": {
            "format": "%(asctime)s %(levelname)s %(name)s: %(message)s",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "simple",
            "stream": "ext://sys.stderr",
        },
    },
    "loggers": {
        "hieraseg": {
            "handlers": ["console"],
            "level": os.environ.get("HIERA_SEG_LOG_LEVEL", "INFO"),
            "propagate": False,
        },
    },
}
