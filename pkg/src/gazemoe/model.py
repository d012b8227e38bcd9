"""The classifier: conv stem, residual stages with hybrid MoE blocks
swapped in at configured positions, a gaze encoder feeding those blocks,
and a linear classification head.

The gaze feature is computed once per forward and adapted to each hybrid
block through a learned linear projection. A config with no hybrid
positions degenerates to a plain residual network that never touches the
heatmap (baseline mode).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .errors import ContractError, DimensionError, ValidationError
from .layers import Conv2d, Linear, Module, ResidualBasicBlock
from .moe import HybridMoeBlock, RoutingRecord
from .tensor import Tensor


class GazeEncoder(Module):
    """Heatmap -> fixed-width feature: stride-2 convs, relu, pool, linear."""

    def __init__(self, in_channels: int, conv_channels: tuple[int, ...],
                 out_width: int, rng: np.random.Generator, dtype=np.float64):
        convs = []
        prev = in_channels
        for ch in conv_channels:
            convs.append(Conv2d(prev, ch, 3, rng, stride=2, pad=1, dtype=dtype))
            prev = ch
        self.convs = convs
        self.proj = Linear(prev, out_width, rng, dtype)

    def __call__(self, heatmap: Tensor) -> Tensor:
        if heatmap.ndim != 4:
            raise DimensionError(f"heatmap must be [B,C,H,W], got {heatmap.shape}")
        lo, hi = heatmap.data.min(), heatmap.data.max()
        if lo < 0.0 or hi > 1.0:
            raise ValidationError(
                f"heatmap values must lie in [0,1], found range [{lo}, {hi}]"
            )
        x = heatmap
        for conv in self.convs:
            x = T.relu(conv(x))
        return self.proj(T.global_avg_pool(x))


class Stage(Module):
    """One backbone stage: a sequence of residual or hybrid blocks."""

    def __init__(self, blocks: list):
        self.blocks = blocks


class HybridMoeNet(Module):
    """Gaze-conditioned residual classifier with routed expert blocks."""

    def __init__(self, config: ModelConfig, dtype=np.float64):
        config.validate()
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(config.seed)
        hybrid_at = set(config.hybrid_positions)

        self.stem = Conv2d(config.in_channels, config.stem_channels, 3, rng,
                           stride=config.stem_stride, pad=1, dtype=dtype)
        stages = []
        gaze_projs = []
        in_ch = config.stem_channels
        block_id = 0
        for s, (out_ch, n_blocks, stage_stride) in enumerate(
            zip(config.stage_channels, config.blocks_per_stage, config.stage_strides)
        ):
            blocks = []
            for b in range(n_blocks):
                stride = stage_stride if b == 0 else 1
                if (s, b) in hybrid_at:
                    blocks.append(HybridMoeBlock(
                        in_ch, out_ch, config.num_experts, config.top_k,
                        config.gaze_feature_width, rng, stride=stride,
                        block_id=block_id, dtype=dtype,
                    ))
                    gaze_projs.append(Linear(
                        config.gaze_feature_width, config.gaze_feature_width, rng, dtype
                    ))
                    block_id += 1
                else:
                    blocks.append(ResidualBasicBlock(in_ch, out_ch, rng,
                                                     stride=stride, dtype=dtype))
                in_ch = out_ch
            stages.append(Stage(blocks))
        self.stages = stages
        self.gaze_encoder = GazeEncoder(1, config.gaze_encoder_channels,
                                        config.gaze_feature_width, rng, dtype)
        self.gaze_projs = gaze_projs
        self.head = Linear(in_ch, config.num_classes, rng, dtype)

    # -- structure helpers ------------------------------------------------

    def hybrid_blocks(self) -> list[HybridMoeBlock]:
        return [blk for stage in self.stages for blk in stage.blocks
                if isinstance(blk, HybridMoeBlock)]

    @property
    def is_baseline(self) -> bool:
        return not self.hybrid_blocks()

    def reset_expert_counters(self) -> None:
        for blk in self.hybrid_blocks():
            blk.reset_eval_counts()

    def expert_evals(self) -> int:
        return sum(blk.expert_eval_count() for blk in self.hybrid_blocks())

    def count_expert_evals(self, image: Tensor, heatmap: Tensor | None) -> int:
        """Expert-block evaluations in one forward over this batch."""
        self.reset_expert_counters()
        with T.no_grad():
            self(image, heatmap)
        return self.expert_evals()

    # -- forward ------------------------------------------------------------

    def encode_gaze(self, heatmap: Tensor) -> Tensor:
        return self.gaze_encoder(heatmap)

    def __call__(self, image: Tensor,
                 heatmap: Tensor | None) -> tuple[Tensor, list[RoutingRecord]]:
        if image.ndim != 4:
            raise DimensionError(f"image must be [B,C,H,W], got {image.shape}")
        if self.is_baseline:
            x_exp = None  # heatmap deliberately untouched
        else:
            if heatmap is None:
                raise ContractError("model has hybrid blocks; heatmap is required")
            if heatmap.shape[0] != image.shape[0]:
                raise ContractError(
                    f"batch mismatch: {image.shape[0]} images, "
                    f"{heatmap.shape[0]} heatmaps"
                )
            x_exp = self.encode_gaze(heatmap)

        x = T.relu(self.stem(image))
        records: list[RoutingRecord] = []
        hybrid_index = 0
        for stage in self.stages:
            for blk in stage.blocks:
                if isinstance(blk, HybridMoeBlock):
                    proj = self.gaze_projs[hybrid_index]
                    hybrid_index += 1
                    x, (rec_dd, rec_de) = blk(x, proj(x_exp))
                    records.extend((rec_dd, rec_de))
                else:
                    x = blk(x)
        logits = self.head(T.global_avg_pool(x))
        return logits, records


def build_model(config: ModelConfig, precision: str = "float64") -> HybridMoeNet:
    dtype = np.float64 if precision == "float64" else np.float32
    return HybridMoeNet(config, dtype=dtype)
