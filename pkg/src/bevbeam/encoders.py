"""Modality-specific encoders producing features on the shared BEV grid.

Camera: a strided residual CNN (trained from scratch) followed by a stack of
cross-attention layers in which learnable per-cell BEV queries attend to the
flattened camera tokens.  LiDAR grids, radar maps, and GPS masks go through
structurally identical three-block conv encoders.  A parallel MLP encodes the
raw GPS coordinates into a dense vector for post-temporal injection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nd
from .errors import ContractError, DimensionError


# -- parameter containers -----------------------------------------------------


@dataclass
class ConvBlock:
    """conv -> batchnorm -> relu unit."""

    w: nd.Tensor
    b: nd.Tensor
    gamma: nd.Tensor
    beta: nd.Tensor
    bn: nd.BatchNormState
    stride: int = 1

    def named_parameters(self, prefix: str):
        yield f"{prefix}.w", self.w
        yield f"{prefix}.b", self.b
        yield f"{prefix}.gamma", self.gamma
        yield f"{prefix}.beta", self.beta

    def named_states(self, prefix: str):
        yield f"{prefix}.bn", self.bn

    def __call__(self, x: nd.Tensor, training: bool) -> nd.Tensor:
        y = nd.conv2d(x, self.w, self.b, stride=self.stride, padding=1)
        return nd.relu(nd.batch_norm(y, self.gamma, self.beta, self.bn, training))


def _conv_block(c_in: int, c_out: int, rng, dtype, stride: int = 1) -> ConvBlock:
    return ConvBlock(
        w=nd.init.kaiming_normal((c_out, c_in, 3, 3), fan_in=c_in * 9, rng=rng, dtype=dtype),
        b=nd.init.zeros(c_out, dtype=dtype),
        gamma=nd.init.ones(c_out, dtype=dtype),
        beta=nd.init.zeros(c_out, dtype=dtype),
        bn=nd.BatchNormState(c_out, dtype=dtype),
        stride=stride,
    )


@dataclass
class ResidualUnit:
    """Two 3x3 convs with batchnorm; identity skip; ReLU on the sum."""

    conv1: ConvBlock
    w2: nd.Tensor
    b2: nd.Tensor
    gamma2: nd.Tensor
    beta2: nd.Tensor
    bn2: nd.BatchNormState

    def named_parameters(self, prefix: str):
        yield from self.conv1.named_parameters(f"{prefix}.conv1")
        yield f"{prefix}.conv2.w", self.w2
        yield f"{prefix}.conv2.b", self.b2
        yield f"{prefix}.conv2.gamma", self.gamma2
        yield f"{prefix}.conv2.beta", self.beta2

    def named_states(self, prefix: str):
        yield from self.conv1.named_states(f"{prefix}.conv1")
        yield f"{prefix}.conv2.bn", self.bn2

    def __call__(self, x: nd.Tensor, training: bool) -> nd.Tensor:
        y = self.conv1(x, training)
        y = nd.conv2d(y, self.w2, self.b2, stride=1, padding=1)
        y = nd.batch_norm(y, self.gamma2, self.beta2, self.bn2, training)
        return nd.relu(nd.add(x, y))


def _residual_unit(channels: int, rng, dtype) -> ResidualUnit:
    return ResidualUnit(
        conv1=_conv_block(channels, channels, rng, dtype),
        w2=nd.init.kaiming_normal((channels, channels, 3, 3), fan_in=channels * 9,
                                  rng=rng, dtype=dtype),
        b2=nd.init.zeros(channels, dtype=dtype),
        gamma2=nd.init.ones(channels, dtype=dtype),
        beta2=nd.init.zeros(channels, dtype=dtype),
        bn2=nd.BatchNormState(channels, dtype=dtype),
    )


@dataclass
class CameraBackboneParams:
    """Five stride-2 stages, each a downsampling conv block plus a residual unit."""

    stages: list  # [(ConvBlock, ResidualUnit)] x 5
    c_back: int

    def named_parameters(self, prefix: str = "backbone"):
        for i, (down, res) in enumerate(self.stages):
            yield from down.named_parameters(f"{prefix}.stage{i}.down")
            yield from res.named_parameters(f"{prefix}.stage{i}.res")

    def named_states(self, prefix: str = "backbone"):
        for i, (down, res) in enumerate(self.stages):
            yield from down.named_states(f"{prefix}.stage{i}.down")
            yield from res.named_states(f"{prefix}.stage{i}.res")


def build_camera_backbone(c_back: int, rng, dtype=np.float32) -> CameraBackboneParams:
    base = [32, 64, 128, 256, 512]
    scaled = [max(4, round(c * c_back / 512)) for c in base]
    scaled[-1] = c_back
    stages = []
    c_in = 3
    for c_out in scaled:
        stages.append((_conv_block(c_in, c_out, rng, dtype, stride=2),
                       _residual_unit(c_out, rng, dtype)))
        c_in = c_out
    return CameraBackboneParams(stages=stages, c_back=c_back)


def camera_backbone(img: nd.Tensor, p: CameraBackboneParams, training: bool) -> nd.Tensor:
    """(B, 3, S, S) normalized image -> (B, c_back, S/32, S/32) feature map."""
    if img.ndim != 4 or img.shape[1] != 3:
        raise DimensionError(f"camera_backbone: expected (B, 3, H, W), got {tuple(img.shape)}")
    if img.shape[2] % 32 or img.shape[3] % 32 or img.shape[2] < 32:
        raise DimensionError(
            f"camera_backbone: spatial size must be a multiple of 32, got {tuple(img.shape[2:])}")
    x = img
    for down, res in p.stages:
        x = res(down(x, training), training)
    return x


@dataclass
class AttentionLayerParams:
    w_k: nd.Tensor  # (c_bev, c_back)
    w_v: nd.Tensor  # (c_bev, c_back)
    w_o: nd.Tensor  # (c_bev, c_bev)
    ln_gamma: nd.Tensor
    ln_beta: nd.Tensor

    def named_parameters(self, prefix: str):
        yield f"{prefix}.w_k", self.w_k
        yield f"{prefix}.w_v", self.w_v
        yield f"{prefix}.w_o", self.w_o
        yield f"{prefix}.ln_gamma", self.ln_gamma
        yield f"{prefix}.ln_beta", self.ln_beta


@dataclass
class CameraToBevParams:
    """Learnable BEV queries plus the cross-attention stack."""

    query_embed: nd.Tensor  # (H_bev * W_bev, c_bev)
    pos_embed: nd.Tensor    # same shape; added at layer 1 only
    layers: list
    n_heads: int
    grid_hw: tuple
    c_back: int

    def __post_init__(self):
        c_bev = self.query_embed.shape[1]
        if c_bev % self.n_heads:
            raise ContractError(f"c_bev {c_bev} must divide evenly into {self.n_heads} heads")

    def named_parameters(self, prefix: str = "cam2bev"):
        yield f"{prefix}.query_embed", self.query_embed
        yield f"{prefix}.pos_embed", self.pos_embed
        for i, layer in enumerate(self.layers):
            yield from layer.named_parameters(f"{prefix}.layer{i}")

    def named_states(self, prefix: str = "cam2bev"):
        return iter(())


def build_camera_to_bev(grid_hw: tuple, c_bev: int, c_back: int, n_layers: int = 3,
                        n_heads: int = 4, rng=None, dtype=np.float32) -> CameraToBevParams:
    n_query = grid_hw[0] * grid_hw[1]
    layers = [
        AttentionLayerParams(
            w_k=nd.init.xavier_uniform((c_bev, c_back), c_back, c_bev, rng, dtype),
            w_v=nd.init.xavier_uniform((c_bev, c_back), c_back, c_bev, rng, dtype),
            w_o=nd.init.xavier_uniform((c_bev, c_bev), c_bev, c_bev, rng, dtype),
            ln_gamma=nd.init.ones(c_bev, dtype=dtype),
            ln_beta=nd.init.zeros(c_bev, dtype=dtype),
        )
        for _ in range(n_layers)
    ]
    return CameraToBevParams(
        query_embed=nd.init.normal((n_query, c_bev), 0.02, rng, dtype),
        pos_embed=nd.init.normal((n_query, c_bev), 0.02, rng, dtype),
        layers=layers,
        n_heads=n_heads,
        grid_hw=grid_hw,
        c_back=c_back,
    )


def _split_heads(x: nd.Tensor, n_heads: int) -> nd.Tensor:
    b, t, c = x.shape
    return nd.transpose(nd.reshape(x, (b, t, n_heads, c // n_heads)), (0, 2, 1, 3))


def _merge_heads(x: nd.Tensor) -> nd.Tensor:
    b, h, t, dk = x.shape
    return nd.reshape(nd.transpose(x, (0, 2, 1, 3)), (b, t, h * dk))


def multi_head_attention(q: nd.Tensor, k: nd.Tensor, v: nd.Tensor, n_heads: int,
                         probe: list | None = None) -> nd.Tensor:
    """Scaled dot-product attention with per-head scale 1/sqrt(d_k).

    ``probe``, when given, collects the softmax weight arrays for inspection.
    """
    d_k = q.shape[-1] // n_heads
    qh, kh, vh = (_split_heads(t, n_heads) for t in (q, k, v))
    scores = nd.scale(nd.matmul(qh, nd.transpose(kh, (0, 1, 3, 2))), 1.0 / math.sqrt(d_k))
    weights = nd.softmax(scores, axis=-1)
    if probe is not None:
        probe.append(weights.data)
    return _merge_heads(nd.matmul(weights, vh))


def camera_to_bev(feat: nd.Tensor, p: CameraToBevParams,
                  probe: list | None = None) -> nd.Tensor:
    """Project camera features onto the BEV grid via stacked cross-attention.

    Per layer: K/V projections of the camera tokens, multi-head attention from
    the BEV queries, output projection, residual add of the layer input, and
    layer norm.  Positional encodings join the queries before layer 1.
    """
    if feat.ndim != 4 or feat.shape[1] != p.c_back:
        raise DimensionError(
            f"camera_to_bev: expected (B, {p.c_back}, h, w), got {tuple(feat.shape)}")
    b = feat.shape[0]
    h_bev, w_bev = p.grid_hw
    tokens = nd.transpose(nd.reshape(feat, (b, p.c_back, -1)), (0, 2, 1))  # (B, T, c_back)
    q0 = nd.add(p.query_embed, p.pos_embed)
    q = nd.stack([q0] * b, axis=0)  # (B, N_q, c_bev)
    for layer in p.layers:
        k = nd.matmul(tokens, nd.transpose(layer.w_k, (1, 0)))
        v = nd.matmul(tokens, nd.transpose(layer.w_v, (1, 0)))
        ctx = multi_head_attention(q, k, v, p.n_heads, probe=probe)
        z = nd.matmul(ctx, nd.transpose(layer.w_o, (1, 0)))
        q = nd.layer_norm(nd.add(q, z), layer.ln_gamma, layer.ln_beta)
    c_bev = q.shape[-1]
    return nd.reshape(nd.transpose(q, (0, 2, 1)), (b, c_bev, h_bev, w_bev))


@dataclass
class ConvBevEncoderParams:
    """Three conv->batchnorm->ReLU blocks at fixed spatial resolution."""

    blocks: list

    def named_parameters(self, prefix: str):
        for i, block in enumerate(self.blocks):
            yield from block.named_parameters(f"{prefix}.block{i}")

    def named_states(self, prefix: str):
        for i, block in enumerate(self.blocks):
            yield from block.named_states(f"{prefix}.block{i}")


def build_conv_bev_encoder(c_in: int, c_bev: int, rng, dtype=np.float32) -> ConvBevEncoderParams:
    # channel evolution scales with c_bev: c_in -> c/4 -> c/2 -> c
    mids = [max(4, c_bev // 4), max(4, c_bev // 2), c_bev]
    blocks = []
    prev = c_in
    for c_out in mids:
        blocks.append(_conv_block(prev, c_out, rng, dtype))
        prev = c_out
    return ConvBevEncoderParams(blocks=blocks)


def conv_bev_encoder(x: nd.Tensor, p: ConvBevEncoderParams, training: bool) -> nd.Tensor:
    """(B, c_in, H, W) -> (B, c_bev, H, W); spatial size unchanged."""
    expected = p.blocks[0].w.shape[1]
    if x.ndim != 4 or x.shape[1] != expected:
        raise DimensionError(
            f"conv_bev_encoder: expected (B, {expected}, H, W), got {tuple(x.shape)}")
    for block in p.blocks:
        x = block(x, training)
    return x


@dataclass
class GpsMlpParams:
    """Dense GPS pathway: LN(W2 . ReLU(LN(W1 g + b1)) + b2)."""

    w1: nd.Tensor
    b1: nd.Tensor
    ln1_gamma: nd.Tensor
    ln1_beta: nd.Tensor
    w2: nd.Tensor
    b2: nd.Tensor
    ln2_gamma: nd.Tensor
    ln2_beta: nd.Tensor

    def named_parameters(self, prefix: str = "gps_mlp"):
        for name in ("w1", "b1", "ln1_gamma", "ln1_beta", "w2", "b2",
                     "ln2_gamma", "ln2_beta"):
            yield f"{prefix}.{name}", getattr(self, name)

    def named_states(self, prefix: str = "gps_mlp"):
        return iter(())


def build_gps_mlp(c_bev: int, hidden: int = 128, rng=None, dtype=np.float32) -> GpsMlpParams:
    return GpsMlpParams(
        w1=nd.init.xavier_uniform((hidden, 2), 2, hidden, rng, dtype),
        b1=nd.init.zeros(hidden, dtype=dtype),
        ln1_gamma=nd.init.ones(hidden, dtype=dtype),
        ln1_beta=nd.init.zeros(hidden, dtype=dtype),
        w2=nd.init.xavier_uniform((c_bev, hidden), hidden, c_bev, rng, dtype),
        b2=nd.init.zeros(c_bev, dtype=dtype),
        ln2_gamma=nd.init.ones(c_bev, dtype=dtype),
        ln2_beta=nd.init.zeros(c_bev, dtype=dtype),
    )


def gps_mlp(g: nd.Tensor, p: GpsMlpParams) -> nd.Tensor:
    """(B, 2) calibrated coordinates -> (B, c_bev) dense embedding."""
    if g.ndim != 2 or g.shape[1] != 2:
        raise DimensionError(f"gps_mlp: expected (B, 2), got {tuple(g.shape)}")
    h = nd.affine(g, p.w1, p.b1)
    h = nd.relu(nd.layer_norm(h, p.ln1_gamma, p.ln1_beta))
    h = nd.affine(h, p.w2, p.b2)
    return nd.layer_norm(h, p.ln2_gamma, p.ln2_beta)
