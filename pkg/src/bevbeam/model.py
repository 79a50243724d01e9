"""Unified BEV fusion, temporal transformer, gated GPS injection, and head.

The full forward pass: per timestep, each modality is encoded onto the BEV
grid and fused by channel concatenation + reduction + residual refinement;
the five pooled features run through a pre-norm transformer; the dense GPS
embedding joins through a tanh-gated residual; a two-layer head produces the
beam distribution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nd
from .data import SEQUENCE_LEN, SampleSequence
from .encoders import (
    CameraBackboneParams,
    CameraToBevParams,
    ConvBevEncoderParams,
    GpsMlpParams,
    _residual_unit,
    build_camera_backbone,
    build_camera_to_bev,
    build_conv_bev_encoder,
    build_gps_mlp,
    camera_backbone,
    camera_to_bev,
    conv_bev_encoder,
    gps_mlp,
    multi_head_attention,
)
from .errors import ContractError, DimensionError
from .preprocess import (
    BevGridSpec,
    CameraNormConfig,
    calibrate_gps,
    gps_to_mask,
    lidar_to_bev,
    normalize_camera,
    radar_to_maps,
)

ABLATION_MODES = (
    "full", "drop_camera", "drop_lidar", "drop_radar", "drop_gps",
    "mean_pool", "single_frame", "gps_spatial_only", "gps_mlp_only",
)


@dataclass
class ModelConfig:
    """Structural hyperparameters of the fusion model."""

    grid_h: int = 128
    grid_w: int = 128
    extent: float = 50.0
    c_bev: int = 256
    c_back: int = 512
    cam_size: int = 256
    attn_layers: int = 3
    attn_heads: int = 4
    temporal_layers: int = 4
    temporal_heads: int = 4
    head_hidden: int = 512
    dropout: float = 0.1
    beams: int = 64
    gps_mlp_hidden: int = 128

    @property
    def grid(self) -> BevGridSpec:
        return BevGridSpec(extent=self.extent, height=self.grid_h, width=self.grid_w)

    @property
    def camera_norm(self) -> CameraNormConfig:
        return CameraNormConfig(out_size=(self.cam_size, self.cam_size))


@dataclass
class FusionParams:
    """4*c_bev -> c_bev reduction followed by two residual blocks."""

    reduce_w: nd.Tensor
    reduce_b: nd.Tensor
    reduce_gamma: nd.Tensor
    reduce_beta: nd.Tensor
    reduce_bn: nd.BatchNormState
    res1: object
    res2: object

    def named_parameters(self, prefix: str = "fusion"):
        yield f"{prefix}.reduce.w", self.reduce_w
        yield f"{prefix}.reduce.b", self.reduce_b
        yield f"{prefix}.reduce.gamma", self.reduce_gamma
        yield f"{prefix}.reduce.beta", self.reduce_beta
        yield from self.res1.named_parameters(f"{prefix}.res1")
        yield from self.res2.named_parameters(f"{prefix}.res2")

    def named_states(self, prefix: str = "fusion"):
        yield f"{prefix}.reduce.bn", self.reduce_bn
        yield from self.res1.named_states(f"{prefix}.res1")
        yield from self.res2.named_states(f"{prefix}.res2")


@dataclass
class TemporalLayerParams:
    """Pre-norm transformer encoder block (self-attention + GELU feed-forward)."""

    ln1_gamma: nd.Tensor
    ln1_beta: nd.Tensor
    w_q: nd.Tensor
    w_k: nd.Tensor
    w_v: nd.Tensor
    w_o: nd.Tensor
    ln2_gamma: nd.Tensor
    ln2_beta: nd.Tensor
    ff_w1: nd.Tensor
    ff_b1: nd.Tensor
    ff_w2: nd.Tensor
    ff_b2: nd.Tensor

    def named_parameters(self, prefix: str):
        for name in ("ln1_gamma", "ln1_beta", "w_q", "w_k", "w_v", "w_o",
                     "ln2_gamma", "ln2_beta", "ff_w1", "ff_b1", "ff_w2", "ff_b2"):
            yield f"{prefix}.{name}", getattr(self, name)


@dataclass
class TemporalParams:
    """Transformer stack plus learned per-step positional embeddings."""

    layers: list
    pos_embed: nd.Tensor  # (SEQUENCE_LEN, c_bev)
    n_heads: int

    def named_parameters(self, prefix: str = "temporal"):
        yield f"{prefix}.pos_embed", self.pos_embed
        for i, layer in enumerate(self.layers):
            yield from layer.named_parameters(f"{prefix}.layer{i}")


@dataclass
class GateParams:
    """Scalar gate for the dense GPS pathway, initialized to 0."""

    s: nd.Tensor

    def named_parameters(self, prefix: str = "gate"):
        yield f"{prefix}.s", self.s


@dataclass
class HeadParams:
    """Two affine layers with ReLU and dropout between them."""

    w1: nd.Tensor
    b1: nd.Tensor
    w2: nd.Tensor
    b2: nd.Tensor
    dropout: float = 0.1

    def named_parameters(self, prefix: str = "head"):
        for name in ("w1", "b1", "w2", "b2"):
            yield f"{prefix}.{name}", getattr(self, name)


@dataclass
class BeamDistribution:
    """Row-stochastic distribution over the beam codebook."""

    probs: nd.Tensor  # (B, M)

    def top_ranked(self, k: int = 3) -> np.ndarray:
        order = np.argsort(-self.probs.data, axis=1, kind="stable")
        return order[:, :k]


@dataclass
class ModelParams:
    """Complete learnable parameter store for the fusion model."""

    config: ModelConfig
    backbone: CameraBackboneParams
    cam2bev: CameraToBevParams
    lidar_enc: ConvBevEncoderParams
    radar_enc: ConvBevEncoderParams
    gps_enc: ConvBevEncoderParams
    gps_mlp: GpsMlpParams
    fusion: FusionParams
    temporal: TemporalParams
    gate: GateParams
    head: HeadParams

    def named_parameters(self) -> dict:
        out = {}
        out.update(self.backbone.named_parameters("backbone"))
        out.update(self.cam2bev.named_parameters("cam2bev"))
        out.update(self.lidar_enc.named_parameters("lidar_enc"))
        out.update(self.radar_enc.named_parameters("radar_enc"))
        out.update(self.gps_enc.named_parameters("gps_enc"))
        out.update(self.gps_mlp.named_parameters("gps_mlp"))
        out.update(self.fusion.named_parameters("fusion"))
        out.update(self.temporal.named_parameters("temporal"))
        out.update(self.gate.named_parameters("gate"))
        out.update(self.head.named_parameters("head"))
        return out

    def named_states(self) -> dict:
        out = {}
        out.update(self.backbone.named_states("backbone"))
        out.update(self.lidar_enc.named_states("lidar_enc"))
        out.update(self.radar_enc.named_states("radar_enc"))
        out.update(self.gps_enc.named_states("gps_enc"))
        out.update(self.fusion.named_states("fusion"))
        return out

    def parameters(self) -> list:
        return list(self.named_parameters().values())


def build_fusion(c_bev: int, rng, dtype=np.float32) -> FusionParams:
    return FusionParams(
        reduce_w=nd.init.kaiming_normal((c_bev, 4 * c_bev, 1, 1), fan_in=4 * c_bev,
                                        rng=rng, dtype=dtype),
        reduce_b=nd.init.zeros(c_bev, dtype=dtype),
        reduce_gamma=nd.init.ones(c_bev, dtype=dtype),
        reduce_beta=nd.init.zeros(c_bev, dtype=dtype),
        reduce_bn=nd.BatchNormState(c_bev, dtype=dtype),
        res1=_residual_unit(c_bev, rng, dtype),
        res2=_residual_unit(c_bev, rng, dtype),
    )


def build_temporal(c_bev: int, n_layers: int, n_heads: int, rng,
                   dtype=np.float32) -> TemporalParams:
    if c_bev % n_heads:
        raise ContractError(f"temporal d_model {c_bev} must divide into {n_heads} heads")
    hidden = 4 * c_bev
    layers = []
    for _ in range(n_layers):
        layers.append(TemporalLayerParams(
            ln1_gamma=nd.init.ones(c_bev, dtype=dtype),
            ln1_beta=nd.init.zeros(c_bev, dtype=dtype),
            w_q=nd.init.xavier_uniform((c_bev, c_bev), c_bev, c_bev, rng, dtype),
            w_k=nd.init.xavier_uniform((c_bev, c_bev), c_bev, c_bev, rng, dtype),
            w_v=nd.init.xavier_uniform((c_bev, c_bev), c_bev, c_bev, rng, dtype),
            w_o=nd.init.xavier_uniform((c_bev, c_bev), c_bev, c_bev, rng, dtype),
            ln2_gamma=nd.init.ones(c_bev, dtype=dtype),
            ln2_beta=nd.init.zeros(c_bev, dtype=dtype),
            ff_w1=nd.init.xavier_uniform((hidden, c_bev), c_bev, hidden, rng, dtype),
            ff_b1=nd.init.zeros(hidden, dtype=dtype),
            ff_w2=nd.init.xavier_uniform((c_bev, hidden), hidden, c_bev, rng, dtype),
            ff_b2=nd.init.zeros(c_bev, dtype=dtype),
        ))
    return TemporalParams(
        layers=layers,
        pos_embed=nd.init.normal((SEQUENCE_LEN, c_bev), 0.02, rng, dtype),
        n_heads=n_heads,
    )


def build_model_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    rng = np.random.default_rng(seed)
    return ModelParams(
        config=cfg,
        backbone=build_camera_backbone(cfg.c_back, rng, dtype),
        cam2bev=build_camera_to_bev((cfg.grid_h, cfg.grid_w), cfg.c_bev, cfg.c_back,
                                    cfg.attn_layers, cfg.attn_heads, rng, dtype),
        lidar_enc=build_conv_bev_encoder(1, cfg.c_bev, rng, dtype),
        radar_enc=build_conv_bev_encoder(2, cfg.c_bev, rng, dtype),
        gps_enc=build_conv_bev_encoder(1, cfg.c_bev, rng, dtype),
        gps_mlp=build_gps_mlp(cfg.c_bev, cfg.gps_mlp_hidden, rng, dtype),
        fusion=build_fusion(cfg.c_bev, rng, dtype),
        temporal=build_temporal(cfg.c_bev, cfg.temporal_layers, cfg.temporal_heads,
                                rng, dtype),
        gate=GateParams(s=nd.Tensor(np.zeros((), dtype=dtype), requires_grad=True)),
        head=HeadParams(
            w1=nd.init.kaiming_normal((cfg.head_hidden, cfg.c_bev), cfg.c_bev, rng, dtype),
            b1=nd.init.zeros(cfg.head_hidden, dtype=dtype),
            w2=nd.init.xavier_uniform((cfg.beams, cfg.head_hidden), cfg.head_hidden,
                                      cfg.beams, rng, dtype),
            b2=nd.init.zeros(cfg.beams, dtype=dtype),
            dropout=cfg.dropout,
        ),
    )


# -- model-ready inputs ---------------------------------------------------------


@dataclass
class ModelInputs:
    """Preprocessed batch: everything forward_batch consumes."""

    camera: np.ndarray | None    # (B, T, 3, S, S) f32
    lidar: np.ndarray | None     # (B, T, 1, H, W) f32
    radar: np.ndarray | None     # (B, T, 2, H, W) f32
    gps_mask: np.ndarray | None  # (B, T, 1, H, W) f32
    gps_vec: np.ndarray | None   # (B, 2) f32, calibrated t=2 reading
    labels: np.ndarray | None = None
    seq_ids: list = field(default_factory=list)

    @property
    def batch(self) -> int:
        for arr in (self.camera, self.lidar, self.radar, self.gps_mask):
            if arr is not None:
                return arr.shape[0]
        raise ContractError("ModelInputs holds no modality data")


def preprocess_samples(samples: list, cfg: ModelConfig) -> ModelInputs:
    """SampleSequences -> batched model inputs.

    GPS masks use the t=1 reading at t=1 and hold the t=2 reading afterwards;
    the dense pathway sees the calibrated t=2 reading.
    """
    grid = cfg.grid
    norm = cfg.camera_norm
    cams, lids, rads, masks, vecs, labels, ids = [], [], [], [], [], [], []
    for sample in samples:
        sample.validate()
        g1 = calibrate_gps(sample.gps[0], sample.calibration)
        g2 = calibrate_gps(sample.gps[1], sample.calibration)
        cam_t, lid_t, rad_t, mask_t = [], [], [], []
        for t, frame in enumerate(sample.frames):
            cam_t.append(normalize_camera(frame.camera, norm).data)
            lid_t.append(lidar_to_bev(frame.lidar, grid, "height_only").data)
            rad_t.append(radar_to_maps(frame.radar, (grid.height, grid.width)).data)
            mask_t.append(gps_to_mask(g1 if t == 0 else g2, grid).data)
        cams.append(np.stack(cam_t))
        lids.append(np.stack(lid_t))
        rads.append(np.stack(rad_t))
        masks.append(np.stack(mask_t))
        vecs.append([g2.dx, g2.dy])
        labels.append(sample.label)
        ids.append(sample.seq_id)
    return ModelInputs(
        camera=np.stack(cams).astype(np.float32),
        lidar=np.stack(lids).astype(np.float32),
        radar=np.stack(rads).astype(np.float32),
        gps_mask=np.stack(masks).astype(np.float32),
        gps_vec=np.asarray(vecs, dtype=np.float32),
        labels=np.asarray(labels, dtype=np.int64),
        seq_ids=ids,
    )


# -- forward pieces ---------------------------------------------------------------


def fuse_bev(cam: nd.Tensor, lid: nd.Tensor, rad: nd.Tensor, gps_spatial: nd.Tensor,
             p: FusionParams, training: bool) -> nd.Tensor:
    """Concatenate the four BEV features, reduce channels, refine residually."""
    shapes = {tuple(t.shape) for t in (cam, lid, rad, gps_spatial)}
    if len(shapes) != 1:
        raise DimensionError(f"fuse_bev: modality shapes differ: {sorted(shapes)}")
    x = nd.concat([cam, lid, rad, gps_spatial], axis=1)
    x = nd.conv2d(x, p.reduce_w, p.reduce_b, stride=1, padding=0)
    x = nd.relu(nd.batch_norm(x, p.reduce_gamma, p.reduce_beta, p.reduce_bn, training))
    x = p.res1(x, training)
    return p.res2(x, training)


def _temporal_block(x: nd.Tensor, layer: TemporalLayerParams, n_heads: int,
                    probe: list | None) -> nd.Tensor:
    h = nd.layer_norm(x, layer.ln1_gamma, layer.ln1_beta)
    q = nd.matmul(h, nd.transpose(layer.w_q, (1, 0)))
    k = nd.matmul(h, nd.transpose(layer.w_k, (1, 0)))
    v = nd.matmul(h, nd.transpose(layer.w_v, (1, 0)))
    attn = nd.matmul(multi_head_attention(q, k, v, n_heads, probe=probe),
                     nd.transpose(layer.w_o, (1, 0)))
    x = nd.add(x, attn)
    h = nd.layer_norm(x, layer.ln2_gamma, layer.ln2_beta)
    h = nd.affine(h, layer.ff_w1, layer.ff_b1)
    h = nd.affine(nd.gelu(h), layer.ff_w2, layer.ff_b2)
    return nd.add(x, h)


def temporal_encode(z_steps: list, p: TemporalParams,
                    probe: list | None = None) -> nd.Tensor:
    """Stack per-step (B, C) features, add positional embeddings, run the
    transformer, and mean-pool over time."""
    if len(z_steps) != SEQUENCE_LEN:
        raise ContractError(
            f"temporal_encode: expected {SEQUENCE_LEN} step features, got {len(z_steps)}")
    x = nd.stack(z_steps, axis=1)  # (B, T, C)
    x = nd.add(x, p.pos_embed)
    for layer in p.layers:
        x = _temporal_block(x, layer, p.n_heads, probe)
    return nd.reduce_mean(x, axis=1)


def _temporal_single_frame(z_last: nd.Tensor, p: TemporalParams,
                           probe: list | None = None) -> nd.Tensor:
    """Length-1 variant reusing the trained stack: only the t=5 feature."""
    x = nd.stack([z_last], axis=1)
    x = nd.add(x, nd.reshape(nd.take_rows(p.pos_embed, [SEQUENCE_LEN - 1]),
                             (1, z_last.shape[-1])))
    for layer in p.layers:
        x = _temporal_block(x, layer, p.n_heads, probe)
    return nd.reduce_mean(x, axis=1)


def gps_inject(z_final: nd.Tensor, h_gps: nd.Tensor, g: GateParams) -> nd.Tensor:
    """Gated residual: z + tanh(s) * h_gps; identity (bit-exact) at s = 0."""
    return nd.gated_add(z_final, h_gps, g.s)


def classify_head(z_aug: nd.Tensor, p: HeadParams, training: bool,
                  rng: np.random.Generator | None = None) -> BeamDistribution:
    """Two-layer MLP with dropout, then softmax over the codebook."""
    h = nd.relu(nd.affine(z_aug, p.w1, p.b1))
    if training and p.dropout > 0:
        if rng is None:
            raise ContractError("classify_head: training mode needs an rng for dropout")
        h = nd.dropout(h, p.dropout, rng, training=True)
    logits = nd.affine(h, p.w2, p.b2)
    return BeamDistribution(probs=nd.softmax(logits, axis=-1))


def _zero_feature(batch: int, cfg: ModelConfig, dtype) -> nd.Tensor:
    return nd.tensor(np.zeros((batch, cfg.c_bev, cfg.grid_h, cfg.grid_w), dtype=dtype))


def forward_batch(inputs: ModelInputs, params: ModelParams, training: bool = False,
                  rng: np.random.Generator | None = None, ablation: str = "full",
                  probe: dict | None = None) -> BeamDistribution:
    """Full pipeline: encode -> fuse per step -> temporal -> inject -> classify.

    ``ablation`` disables one pathway (zeroed BEV feature, bypassed temporal
    stack, or single-frame input) for the evaluation harness.  ``probe``
    collects attention weights under keys 'cross' and 'temporal'.
    """
    if ablation not in ABLATION_MODES:
        raise ContractError(f"unknown ablation mode {ablation!r}")
    cfg = params.config
    b = inputs.batch
    dtype = params.head.w1.dtype
    cross_probe = probe.setdefault("cross", []) if probe is not None else None
    temp_probe = probe.setdefault("temporal", []) if probe is not None else None

    drop_cam = ablation == "drop_camera"
    drop_lid = ablation == "drop_lidar"
    drop_rad = ablation == "drop_radar"
    drop_gps_spatial = ablation in ("drop_gps", "gps_mlp_only")
    drop_gps_dense = ablation in ("drop_gps", "gps_spatial_only")

    for name, arr, dropped in (("camera", inputs.camera, drop_cam),
                               ("lidar", inputs.lidar, drop_lid),
                               ("radar", inputs.radar, drop_rad),
                               ("gps_mask", inputs.gps_mask, drop_gps_spatial),
                               ("gps_vec", inputs.gps_vec, drop_gps_dense)):
        if arr is None and not dropped:
            raise ContractError(f"forward_batch: missing {name} without a dropout flag")

    steps = range(SEQUENCE_LEN - 1, SEQUENCE_LEN) if ablation == "single_frame" \
        else range(SEQUENCE_LEN)
    z_steps = []
    for t in steps:
        if drop_cam:
            cam_feat = _zero_feature(b, cfg, dtype)
        else:
            feat = camera_backbone(nd.tensor(inputs.camera[:, t]), params.backbone, training)
            cam_feat = camera_to_bev(feat, params.cam2bev, probe=cross_probe)
        lid_feat = _zero_feature(b, cfg, dtype) if drop_lid else conv_bev_encoder(
            nd.tensor(inputs.lidar[:, t]), params.lidar_enc, training)
        rad_feat = _zero_feature(b, cfg, dtype) if drop_rad else conv_bev_encoder(
            nd.tensor(inputs.radar[:, t]), params.radar_enc, training)
        gps_feat = _zero_feature(b, cfg, dtype) if drop_gps_spatial else conv_bev_encoder(
            nd.tensor(inputs.gps_mask[:, t]), params.gps_enc, training)
        fused = fuse_bev(cam_feat, lid_feat, rad_feat, gps_feat, params.fusion, training)
        z_steps.append(nd.reduce_mean(fused, axis=(2, 3)))

    if ablation == "mean_pool":
        z_final = nd.reduce_mean(nd.stack(z_steps, axis=1), axis=1)
    elif ablation == "single_frame":
        z_final = _temporal_single_frame(z_steps[0], params.temporal, probe=temp_probe)
    else:
        z_final = temporal_encode(z_steps, params.temporal, probe=temp_probe)

    if drop_gps_dense:
        z_aug = z_final
    else:
        h_gps = gps_mlp(nd.tensor(inputs.gps_vec), params.gps_mlp)
        z_aug = gps_inject(z_final, h_gps, params.gate)
    return classify_head(z_aug, params.head, training, rng)


def forward_full(samples: list | SampleSequence, params: ModelParams,
                 training: bool = False, rng: np.random.Generator | None = None,
                 ablation: str = "full", probe: dict | None = None) -> BeamDistribution:
    """Forward pass from raw SampleSequences (preprocessing included)."""
    if isinstance(samples, SampleSequence):
        samples = [samples]
    inputs = preprocess_samples(samples, params.config)
    return forward_batch(inputs, params, training=training, rng=rng,
                         ablation=ablation, probe=probe)


def predict_ranked(samples: list, params: ModelParams, k: int = 3):
    """Per-sample ranked beam indices and probabilities (eval mode)."""
    dist = forward_full(samples, params, training=False)
    ranked = dist.top_ranked(k)
    probs = np.take_along_axis(dist.probs.data, ranked, axis=1)
    return ranked, probs
