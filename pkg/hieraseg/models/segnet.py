"""
`hieraseg` toy encoder/decoder segmentation network.

Encoder stage k: 3x3 conv + relu, then 2x2 average pooling. The decoder walks
back up: bilinear x2, concatenation with the matching encoder stage output
(the input image at full resolution), 3x3 conv + relu. The last decoder stage
emits `decoder_dim` channels at input resolution, which feed either a flat
1x1 projection to the finest level or a `BhccmHead`.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Any, Mapping, Optional, Sequence

from hieraseg import settings
from hieraseg.exceptions import ShapeError, ValidationError
from hieraseg.hierarchy import Hierarchy
from hieraseg.numeric import ops
from hieraseg.numeric.nn import Conv2d, Module
from hieraseg.numeric.rng import derive_rng
from hieraseg.numeric.tensor import Tensor

from .bhccm import FUSION_MODES, BhccmHead

logger = logging.getLogger(__name__)

HEAD_MODES = ("flat", "bhccm")


@dataclass(frozen=True)
class NetConfig:
    num_classes: tuple[int, ...]
    in_channels: int = settings.IMAGE_CHANNELS
    widths: tuple[int, ...] = settings.ENCODER_WIDTHS
    decoder_dim: int = settings.DECODER_DIM
    head: str = "bhccm"
    fusion: str = "bidirectional"
    block_bias: bool = True
    block_norm: bool = False

    def __post_init__(self):
        object.__setattr__(self, "num_classes", tuple(int(c) for c in self.num_classes))
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.head not in HEAD_MODES:
            raise ValidationError(f"Unknown head {self.head!r}; expected one of {HEAD_MODES}")
        if self.fusion not in FUSION_MODES:
            raise ValidationError(f"Unknown fusion mode {self.fusion!r}; expected one of {FUSION_MODES}")
        if not self.widths:
            raise ValidationError("The encoder needs at least one stage")
        if not self.num_classes or min(self.num_classes) < 1:
            raise ValidationError(f"Invalid class counts {self.num_classes}")

    @classmethod
    def for_hierarchy(cls, hierarchy: Hierarchy, **kwargs) -> "NetConfig":
        return cls(num_classes=hierarchy.num_classes, **kwargs)

    @property
    def downsampling(self) -> int:
        return 2 ** len(self.widths)

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["num_classes"] = list(self.num_classes)
        data["widths"] = list(self.widths)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "NetConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"Unknown network config keys {unknown}")
        return cls(**data)


class ToySegNet(Module):
    def __init__(self, config: NetConfig, seed: int = settings.DEFAULT_SEED, label: str = "segnet"):
        self.config = config
        encoder_rng = derive_rng(seed, f"{label}/encoder")
        decoder_rng = derive_rng(seed, f"{label}/decoder")
        head_rng = derive_rng(seed, f"{label}/head")

        widths = config.widths
        channels = [config.in_channels, *widths]
        self.encoder = [
            Conv2d(channels[k], channels[k + 1], 3, encoder_rng) for k in range(len(widths))
        ]
        # decoder[k] produces the resolution of encoder stage k-1 (k = 0 is full resolution)
        decoder = []
        for k in range(len(widths) - 1):
            decoder.append(Conv2d(widths[k + 1] + widths[k], widths[k], 3, decoder_rng))
        decoder.insert(0, Conv2d(widths[0] + config.in_channels, config.decoder_dim, 3, decoder_rng))
        self.decoder = decoder

        if config.head == "flat":
            self.head = Conv2d(config.decoder_dim, config.num_classes[-1], 1, head_rng)
        else:
            self.head = BhccmHead(
                config.decoder_dim,
                config.num_classes,
                head_rng,
                fusion=config.fusion,
                block_bias=config.block_bias,
                block_norm=config.block_norm,
            )
        logger.debug(
            "Built %s network (%s fusion), %d parameters",
            config.head,
            config.fusion,
            self.num_parameters(),
        )

    @property
    def num_stages(self) -> int:
        return len(self.encoder)

    @property
    def is_hierarchical(self) -> bool:
        return self.config.head == "bhccm"

    def check_input(self, img) -> Tensor:
        img = ops.as_tensor(img)
        multiple = self.config.downsampling
        if (
            img.ndim != 4
            or img.shape[1] != self.config.in_channels
            or img.shape[2] % multiple
            or img.shape[3] % multiple
        ):
            raise ShapeError(
                f"segnet input (channels {self.config.in_channels}, sides divisible by {multiple})",
                img.shape,
            )
        return img

    def encode_stage(self, k: int, x: Tensor) -> Tensor:
        return ops.avg_pool2d(ops.relu(self.encoder[k](x)))

    def encode(self, img) -> list[Tensor]:
        img = self.check_input(img)
        stages = []
        x = img
        for k in range(self.num_stages):
            x = self.encode_stage(k, x)
            stages.append(x)
        return stages

    def decode(self, stages: Sequence[Tensor], img: Tensor) -> Tensor:
        """Decoder features (B, decoder_dim, H, W) from encoder stage outputs."""
        y = stages[-1]
        for k in range(self.num_stages - 1, 0, -1):
            skip = stages[k - 1]
            y = ops.bilinear_upsample(y, size=skip.shape[2:])
            y = ops.relu(self.decoder[k](ops.concat([y, skip], axis=1)))
        y = ops.bilinear_upsample(y, size=img.shape[2:])
        return ops.relu(self.decoder[0](ops.concat([y, img], axis=1)))

    def features(self, img) -> Tensor:
        img = self.check_input(img)
        return self.decode(self.encode(img), img)

    def forward_flat(self, img) -> Tensor:
        if self.is_hierarchical:
            raise ValidationError("forward_flat needs a network with a flat head")
        return self.head(self.features(img))

    def forward_hiera(self, img) -> list[Tensor]:
        if not self.is_hierarchical:
            raise ValidationError("forward_hiera needs a network with a bhccm head")
        return self.head(self.features(img))

    def forward(self, img) -> list[Tensor]:
        """Per-level logits; a flat network returns its single finest-level output."""
        if self.is_hierarchical:
            return self.forward_hiera(img)
        return [self.forward_flat(img)]

    def check_hierarchy(self, hierarchy: Hierarchy) -> None:
        expected = hierarchy.num_classes if self.is_hierarchical else hierarchy.num_classes[-1:]
        actual = self.config.num_classes if self.is_hierarchical else self.config.num_classes[-1:]
        if tuple(expected) != tuple(actual):
            raise ValidationError(
                f"Network predicts {'/'.join(map(str, actual))} classes, hierarchy has "
                f"{'/'.join(map(str, expected))}"
            )

    def load_encoder_decoder(self, other: "ToySegNet") -> None:
        """Copy encoder and decoder weights from a network of the same widths."""
        own = dict(self.named_parameters())
        for name, param in other.named_parameters():
            if name.startswith(("encoder.", "decoder.")):
                if name not in own or own[name].shape != param.shape:
                    raise ShapeError(f"load_encoder_decoder[{name}]", param.shape, own.get(name, param).shape)
                own[name].data = param.data.copy()


def build_segnet(
    hierarchy: Hierarchy,
    head: str = "bhccm",
    fusion: str = "bidirectional",
    seed: int = settings.DEFAULT_SEED,
    config: Optional[NetConfig] = None,
    **kwargs,
) -> ToySegNet:
    config = config or NetConfig.for_hierarchy(hierarchy, head=head, fusion=fusion, **kwargs)
    net = ToySegNet(config, seed=seed)
    net.check_hierarchy(hierarchy)
    return net
