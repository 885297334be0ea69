from .merging import MergingBlock, merge
from .bhccm import BhccmHead, bhccm_forward, FUSION_MODES
from .segnet import NetConfig, ToySegNet, build_segnet, HEAD_MODES
from .checkpoint import save_checkpoint, load_state, load_segnet, read_manifest
