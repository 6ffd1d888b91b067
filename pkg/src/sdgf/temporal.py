"""Inception-style dilated convolution block with residual and layer norm.

Four parallel convolutions with kernel widths {3, 5} and dilations
{1, 2} run over the last axis of a (batch, features, positions) tensor,
their channel-concatenated output is merged by a width-1 convolution,
a width-1 residual projection of the input is added, and the result is
layer-normalized over the feature axis.

The fused representation carries nodes on its last axis; ``conv_axis``
chooses whether the kernels slide over that axis ("nodes", the default)
or over the feature axis ("channels"), in which case the block must have
been built with the node count as its channel width.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .errors import ConfigError, ShapeError

BRANCH_SHAPES = ((3, 1), (3, 2), (5, 1), (5, 2))
CONV_AXES = ("nodes", "channels")


@dataclass
class InceptionBlock:
    """Parameters for one block operating on ``channels`` feature maps."""

    channels: int
    branch_kernels: list[ad.Parameter]
    branch_biases: list[ad.Parameter]
    merge_kernel: ad.Parameter
    merge_bias: ad.Parameter
    residual_kernel: ad.Parameter
    residual_bias: ad.Parameter
    norm_gain: ad.Parameter
    norm_bias: ad.Parameter


def branch_width(channels: int) -> int:
    """Per-branch channel count: half the block width, rounded up."""
    return (channels + 1) // 2


def _bias(b: ad.Parameter) -> ad.Tensor:
    return ad.reshape(b, (1, b.shape[0], 1))


def _pre_norm(h: ad.Tensor, block: InceptionBlock) -> ad.Tensor:
    """Branches, merge, and residual; everything before the layer norm."""
    outs = []
    for (width, dilation), kernel, bias in zip(
        BRANCH_SHAPES, block.branch_kernels, block.branch_biases
    ):
        assert kernel.shape[2] == width
        outs.append(ad.add(ad.conv1d(h, kernel, dilation), _bias(bias)))
    merged = ad.add(
        ad.conv1d(ad.concat(outs, axis=1), block.merge_kernel), _bias(block.merge_bias)
    )
    residual = ad.add(ad.conv1d(h, block.residual_kernel), _bias(block.residual_bias))
    return ad.add(merged, residual)


def inception_forward(h: ad.Tensor, block: InceptionBlock, conv_axis: str = "nodes") -> ad.Tensor:
    """Run one block over (batch, features, nodes), preserving the shape."""
    if conv_axis not in CONV_AXES:
        raise ConfigError(f"unknown conv axis {conv_axis!r}; available: {CONV_AXES}")
    if h.ndim != 3:
        raise ShapeError(f"expected (batch, features, nodes), got {h.shape}")
    if conv_axis == "channels":
        h = ad.transpose(h, (0, 2, 1))
    if h.shape[1] != block.channels:
        raise ShapeError(
            f"block was built for {block.channels} channels on the conv input, got {h.shape}"
        )
    out = _pre_norm(h, block)
    if conv_axis == "channels":
        out = ad.transpose(out, (0, 2, 1))
    return ad.layer_norm(out, 1, block.norm_gain, block.norm_bias)
