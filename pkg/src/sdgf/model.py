"""The forecasting model: normalization, graph branches, fusion, head.

Forward pipeline for a (batch, input_len, n_vars) window:

    revin normalize
      -> static branch:  input projection -> propagation over the
         correlation graph (frozen from the training split, or per-batch)
      -> dynamic branches: wavelet decomposition; each component is
         projected, learns its own adjacency, and propagates through it
      -> attention-gated fusion of all branches
      -> inception block(s)
      -> per-variable MLP head mapping features to the horizon
    revin denormalize

Ablations switch individual stages to neutral implementations (identity
graphs, unweighted fusion, no temporal block) without touching the rest.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import fusion as fu
from . import graphs as gr
from . import temporal as tp
from . import wavelet as wv
from .errors import CheckpointError, ConfigError, ShapeError, StateError

ABLATION_MODES = ("gsl", "gf", "tfl")

CHECKPOINT_MAGIC = b"SDGF\x00"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    """Hyperparameters; everything downstream is derived from these."""

    input_len: int
    horizon: int
    n_vars: int
    hidden: int = 64
    levels: int = 3
    family: str = "haar"
    boundary: str = "circular"
    depth: int = 2
    alpha: float = 0.5
    embed_dim: int = 16
    literal_eq3: bool = False
    per_batch_static: bool = False
    share_dynamic_weights: bool = False
    temporal_blocks: int = 1
    branch_width: int = 0
    conv_axis: str = "nodes"
    seed: int = 0

    def __post_init__(self):
        for name in ("input_len", "horizon", "n_vars", "hidden", "embed_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.temporal_blocks < 0:
            raise ConfigError(f"temporal_blocks must be >= 0, got {self.temporal_blocks}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie strictly inside (0, 1), got {self.alpha}")
        if self.depth < 0:
            raise ConfigError(f"depth must be >= 0, got {self.depth}")
        if self.branch_width < 0:
            raise ConfigError(f"branch_width must be >= 0, got {self.branch_width}")
        if self.conv_axis not in tp.CONV_AXES:
            raise ConfigError(f"unknown conv axis {self.conv_axis!r}; available: {tp.CONV_AXES}")
        if self.boundary not in wv.BOUNDARIES:
            raise ConfigError(f"unknown boundary {self.boundary!r}; available: {wv.BOUNDARIES}")
        wv.wavelet_filter(self.family)
        admissible = wv.max_levels(self.input_len, wv.wavelet_filter(self.family))
        if not 1 <= self.levels <= admissible:
            raise ConfigError(
                f"levels must lie in [1, {admissible}] for input_len {self.input_len}"
                f" and family {self.family}, got {self.levels}"
            )


class RevinLayer:
    """Per-window standardization with a learnable affine, invertible."""

    def __init__(self, gamma: ad.Parameter, beta: ad.Parameter, eps: float = 1e-5):
        self.gamma = gamma
        self.beta = beta
        self.eps = float(eps)
        self._mean: np.ndarray | None = None
        self._std: np.ndarray | None = None

    def normalize(self, x: ad.Tensor) -> ad.Tensor:
        """Remove per-(item, variable) mean/std over time, then affine."""
        if x.ndim != 3 or x.shape[2] != self.gamma.shape[0]:
            raise ShapeError(f"expected (batch, time, {self.gamma.shape[0]}), got {x.shape}")
        n = x.shape[2]
        mean = x.data.mean(axis=1, keepdims=True)
        std = np.sqrt(x.data.var(axis=1, keepdims=True) + self.eps)
        self._mean, self._std = mean, std
        z = ad.div(ad.sub(x, ad.Tensor(mean)), ad.Tensor(std))
        return ad.add(
            ad.mul(z, ad.reshape(self.gamma, (1, 1, n))), ad.reshape(self.beta, (1, 1, n))
        )

    def denormalize(self, y: ad.Tensor) -> ad.Tensor:
        """Invert the affine and restore the cached statistics."""
        if self._mean is None:
            raise StateError("denormalize called before normalize cached any statistics")
        n = self.gamma.shape[0]
        if y.ndim != 3 or y.shape[2] != n or y.shape[0] != self._mean.shape[0]:
            raise ShapeError(
                f"expected (batch {self._mean.shape[0]}, horizon, {n}) to invert, got {y.shape}"
            )
        # eps^2 keeps the division defined if gamma is driven to zero.
        guard = ad.add(ad.reshape(self.gamma, (1, 1, n)), self.eps * self.eps)
        z = ad.div(ad.sub(y, ad.reshape(self.beta, (1, 1, n))), guard)
        return ad.add(ad.mul(z, ad.Tensor(self._std)), ad.Tensor(self._mean))


@dataclass
class SdgfModel:
    config: ModelConfig
    revin: RevinLayer
    input_proj: ad.Parameter
    static_cfg: gr.GraphPropagationConfig
    dynamic_cfgs: list[gr.GraphPropagationConfig]
    dynamic_layers: list[gr.DynamicGraphLayer]
    fusion_layer: fu.FusionLayer
    blocks: list[tp.InceptionBlock]
    head_w1: ad.Parameter
    head_b1: ad.Parameter
    head_w2: ad.Parameter
    head_b2: ad.Parameter
    static_adjacency: np.ndarray | None = None
    ablations: frozenset = field(default_factory=frozenset)


def build_model(cfg: ModelConfig) -> SdgfModel:
    """Construct a model with seeded initialization in a fixed order."""
    rng = np.random.default_rng(cfg.seed)
    n, length, dim = cfg.n_vars, cfg.input_len, cfg.hidden
    scales = cfg.levels + 1

    def linear(name, fan_in, shape):
        bound = 1.0 / np.sqrt(fan_in)
        return ad.Parameter(name, rng.uniform(-bound, bound, shape))

    revin = RevinLayer(
        ad.Parameter("revin.gamma", np.ones(n)), ad.Parameter("revin.beta", np.zeros(n))
    )
    input_proj = linear("input_proj", length, (length, dim))

    def prop_cfg(prefix):
        thetas = [linear(f"{prefix}.theta{k}", dim, (dim, dim)) for k in range(cfg.depth + 1)]
        return gr.GraphPropagationConfig(alpha=cfg.alpha, depth=cfg.depth, theta=thetas)

    static_cfg = prop_cfg("static")

    dynamic_cfgs = []
    dynamic_layers = []
    shared = None
    if cfg.share_dynamic_weights:
        shared = gr.DynamicGraphLayer(
            linear("dyn_shared.w1", length, (length, cfg.embed_dim)),
            linear("dyn_shared.w2", length, (length, cfg.embed_dim)),
        )
    for s in range(scales):
        if shared is not None:
            dynamic_layers.append(shared)
        else:
            dynamic_layers.append(
                gr.DynamicGraphLayer(
                    linear(f"dyn{s}.w1", length, (length, cfg.embed_dim)),
                    linear(f"dyn{s}.w2", length, (length, cfg.embed_dim)),
                )
            )
        dynamic_cfgs.append(prop_cfg(f"dyn{s}"))

    fusion_layer = fu.FusionLayer(
        ad.Parameter("fusion.q", rng.uniform(-0.1, 0.1, dim)),
        ad.Parameter("fusion.w_k", np.eye(dim) + rng.normal(0.0, 0.01, (dim, dim))),
    )

    conv_ch = dim if cfg.conv_axis == "nodes" else n
    width = cfg.branch_width or tp.branch_width(conv_ch)
    blocks = []
    for b in range(cfg.temporal_blocks):
        kernels = [
            linear(f"block{b}.branch{i}", conv_ch * k, (width, conv_ch, k))
            for i, (k, _) in enumerate(tp.BRANCH_SHAPES)
        ]
        biases = [ad.Parameter(f"block{b}.branch{i}_bias", np.zeros(width)) for i in range(4)]
        blocks.append(
            tp.InceptionBlock(
                channels=conv_ch,
                branch_kernels=kernels,
                branch_biases=biases,
                merge_kernel=linear(f"block{b}.merge", 4 * width, (conv_ch, 4 * width, 1)),
                merge_bias=ad.Parameter(f"block{b}.merge_bias", np.zeros(conv_ch)),
                residual_kernel=linear(f"block{b}.residual", conv_ch, (conv_ch, conv_ch, 1)),
                residual_bias=ad.Parameter(f"block{b}.residual_bias", np.zeros(conv_ch)),
                norm_gain=ad.Parameter(f"block{b}.norm_gain", np.ones(dim)),
                norm_bias=ad.Parameter(f"block{b}.norm_bias", np.zeros(dim)),
            )
        )

    head_w1 = linear("head.w1", dim, (dim, 2 * dim))
    head_b1 = ad.Parameter("head.b1", np.zeros(2 * dim))
    head_w2 = linear("head.w2", 2 * dim, (2 * dim, cfg.horizon))
    head_b2 = ad.Parameter("head.b2", np.zeros(cfg.horizon))

    return SdgfModel(
        config=cfg,
        revin=revin,
        input_proj=input_proj,
        static_cfg=static_cfg,
        dynamic_cfgs=dynamic_cfgs,
        dynamic_layers=dynamic_layers,
        fusion_layer=fusion_layer,
        blocks=blocks,
        head_w1=head_w1,
        head_b1=head_b1,
        head_w2=head_w2,
        head_b2=head_b2,
    )


def parameters(model: SdgfModel) -> list[ad.Parameter]:
    """All parameters in construction order, shared ones listed once."""
    out: list[ad.Parameter] = [model.revin.gamma, model.revin.beta, model.input_proj]
    out.extend(model.static_cfg.theta)
    seen = set()
    for layer, cfg in zip(model.dynamic_layers, model.dynamic_cfgs):
        if id(layer) not in seen:
            seen.add(id(layer))
            out.extend([layer.w1, layer.w2])
        out.extend(cfg.theta)
    out.extend([model.fusion_layer.q, model.fusion_layer.w_k])
    for block in model.blocks:
        out.extend(block.branch_kernels)
        out.extend(block.branch_biases)
        out.extend(
            [
                block.merge_kernel,
                block.merge_bias,
                block.residual_kernel,
                block.residual_bias,
                block.norm_gain,
                block.norm_bias,
            ]
        )
    out.extend([model.head_w1, model.head_b1, model.head_w2, model.head_b2])
    return out


def effective_parameters(model: SdgfModel) -> list[ad.Parameter]:
    """Parameters that the forward pass actually uses under the ablations."""
    skip: set[int] = set()
    if "gsl" in model.ablations:
        for layer in model.dynamic_layers:
            skip.update((id(layer.w1), id(layer.w2)))
    if "gf" in model.ablations:
        skip.update((id(model.fusion_layer.q), id(model.fusion_layer.w_k)))
    if "tfl" in model.ablations:
        for block in model.blocks:
            for p in (
                *block.branch_kernels,
                *block.branch_biases,
                block.merge_kernel,
                block.merge_bias,
                block.residual_kernel,
                block.residual_bias,
                block.norm_gain,
                block.norm_bias,
            ):
                skip.add(id(p))
    return [p for p in parameters(model) if id(p) not in skip]


def parameter_count(model: SdgfModel) -> int:
    return sum(p.size for p in parameters(model))


def predicted_parameter_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count; tests pin it against the built model."""
    length, horizon, n, dim = cfg.input_len, cfg.horizon, cfg.n_vars, cfg.hidden
    scales = cfg.levels + 1
    hops = cfg.depth + 1
    total = 2 * n + length * dim
    total += hops * dim * dim * (1 + scales)
    pairs = 1 if cfg.share_dynamic_weights else scales
    total += pairs * 2 * length * cfg.embed_dim
    total += dim + dim * dim
    conv_ch = dim if cfg.conv_axis == "nodes" else n
    width = cfg.branch_width or tp.branch_width(conv_ch)
    per_block = sum(width * conv_ch * k for k, _ in tp.BRANCH_SHAPES) + 4 * width
    per_block += conv_ch * 4 * width + conv_ch
    per_block += conv_ch * conv_ch + conv_ch
    per_block += 2 * dim
    total += cfg.temporal_blocks * per_block
    total += dim * 2 * dim + 2 * dim + 2 * dim * horizon + horizon
    return total


def set_static_graph(model: SdgfModel, series: np.ndarray) -> None:
    """Freeze the static adjacency from a (rows, n_vars) training series."""
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 2 or series.shape[1] != model.config.n_vars:
        raise ShapeError(f"expected (rows, {model.config.n_vars}), got {series.shape}")
    model.static_adjacency = gr.pearson_adjacency(series[None, :, :])


def _project(x: ad.Tensor, proj: ad.Parameter) -> ad.Tensor:
    """Map (batch, length, vars) time profiles to (batch, hidden, vars)."""
    return ad.transpose(ad.matmul(ad.transpose(x, (0, 2, 1)), proj), (0, 2, 1))


def _identity_adjacency(batch: int, n: int) -> ad.Tensor:
    return ad.Tensor(np.broadcast_to(np.eye(n), (batch, n, n)).copy())


def forward_with_details(x: ad.Tensor, model: SdgfModel) -> tuple[ad.Tensor, dict]:
    """Forward pass returning the prediction and inspection artifacts.

    The details dict carries the fusion weights, the static adjacency,
    and the per-scale dynamic adjacencies as plain arrays.
    """
    cfg = model.config
    if x.ndim != 3 or x.shape[1] != cfg.input_len or x.shape[2] != cfg.n_vars:
        raise ShapeError(
            f"expected (batch, {cfg.input_len}, {cfg.n_vars}), got {x.shape}"
        )
    batch, n = x.shape[0], cfg.n_vars
    x_norm = model.revin.normalize(x)

    if "gsl" in model.ablations:
        static_adj = np.eye(n)
    elif cfg.per_batch_static:
        static_adj = gr.pearson_adjacency(x_norm.data)
    else:
        if model.static_adjacency is None:
            raise StateError(
                "static graph is not frozen; call set_static_graph or enable per-batch mode"
            )
        static_adj = model.static_adjacency
    h_static = gr.static_graph_conv(
        _project(x_norm, model.input_proj), static_adj, model.static_cfg, cfg.literal_eq3
    )

    components = wv.decompose(
        x_norm, wv.wavelet_filter(cfg.family), cfg.levels, cfg.boundary
    ).components
    h_dyn = []
    dynamic_adjs = []
    for comp, layer, pcfg in zip(components, model.dynamic_layers, model.dynamic_cfgs):
        if "gsl" in model.ablations:
            adj = _identity_adjacency(batch, n)
        else:
            adj = gr.dynamic_adjacency(comp, layer)
        h_dyn.append(
            gr.dynamic_graph_conv(_project(comp, model.input_proj), adj, pcfg, cfg.literal_eq3)
        )
        dynamic_adjs.append(adj.data)

    if "gf" in model.ablations:
        branches = [h_static, *h_dyn]
        total = branches[0]
        for branch in branches[1:]:
            total = ad.add(total, branch)
        fused = ad.scale(total, 1.0 / len(branches))
        alpha = np.full((batch, len(branches)), 1.0 / len(branches))
    else:
        fused, alpha_t = fu.fuse(h_static, h_dyn, model.fusion_layer)
        alpha = alpha_t.data

    if "tfl" not in model.ablations:
        for block in model.blocks:
            fused = tp.inception_forward(fused, block, cfg.conv_axis)

    per_var = ad.transpose(fused, (0, 2, 1))
    hidden = ad.tanh(ad.add(ad.matmul(per_var, model.head_w1), model.head_b1))
    out = ad.add(ad.matmul(hidden, model.head_w2), model.head_b2)
    y = model.revin.denormalize(ad.transpose(out, (0, 2, 1)))
    details = {"alpha": alpha, "static": np.asarray(static_adj), "dynamic": dynamic_adjs}
    return y, details


def forward(x: ad.Tensor, model: SdgfModel) -> ad.Tensor:
    """Predict (batch, horizon, n_vars) from (batch, input_len, n_vars)."""
    return forward_with_details(x, model)[0]


def ablate(model: SdgfModel, mode: str) -> SdgfModel:
    """A view of the model with one stage neutralized; parameters shared."""
    if mode not in ABLATION_MODES:
        raise ConfigError(f"unknown ablation mode {mode!r}; available: {ABLATION_MODES}")
    return dataclasses.replace(model, ablations=model.ablations | {mode})


# ---------------------------------------------------------------------------
# Checkpointing


def save_checkpoint(model: SdgfModel, extra: dict | None = None) -> bytes:
    """Serialize config, frozen static graph, and all parameter values.

    ``extra`` is any JSON-safe dict the caller wants carried along (the
    training pipeline stores its dataset scaler here).
    """
    header = {
        "config": dataclasses.asdict(model.config),
        "ablations": sorted(model.ablations),
        "extra": extra or {},
    }
    head_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<I", CHECKPOINT_VERSION)
    out += struct.pack("<I", len(head_bytes))
    out += head_bytes
    if model.static_adjacency is None:
        out += b"\x00"
    else:
        out += b"\x01"
        out += np.ascontiguousarray(model.static_adjacency, dtype="<f8").tobytes()
    params = parameters(model)
    out += struct.pack("<I", len(params))
    for p in params:
        name = p.name.encode("utf-8")
        out += struct.pack("<H", len(name))
        out += name
        out += struct.pack("<B", p.ndim)
        out += struct.pack(f"<{p.ndim}I", *p.shape)
        out += np.ascontiguousarray(p.data, dtype="<f8").tobytes()
    return bytes(out)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def read(self, count: int) -> bytes:
        if self.pos + count > len(self.blob):
            raise CheckpointError(
                f"checkpoint truncated: wanted {count} bytes at offset {self.pos},"
                f" have {len(self.blob) - self.pos}"
            )
        chunk = self.blob[self.pos : self.pos + count]
        self.pos += count
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.read(struct.calcsize(fmt)))


def load_checkpoint(blob: bytes) -> tuple[SdgfModel, dict]:
    """Rebuild a model from ``save_checkpoint`` output, bit-exact."""
    r = _Reader(blob)
    if r.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint: bad magic")
    (version,) = r.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (head_len,) = r.unpack("<I")
    try:
        header = json.loads(r.read(head_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    try:
        cfg = ModelConfig(**header["config"])
    except (KeyError, TypeError, ConfigError) as exc:
        raise CheckpointError(f"checkpoint config does not match this build: {exc}") from None
    model = build_model(cfg)
    for mode in header.get("ablations", []):
        model = ablate(model, mode)

    (has_static,) = r.unpack("<B")
    if has_static:
        n = cfg.n_vars
        raw = r.read(n * n * 8)
        model.static_adjacency = np.frombuffer(raw, dtype="<f8").reshape(n, n).copy()

    by_name = {p.name: p for p in parameters(model)}
    (count,) = r.unpack("<I")
    if count != len(by_name):
        raise CheckpointError(
            f"checkpoint stores {count} parameters, this config builds {len(by_name)}"
        )
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.read(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        if name not in by_name:
            raise CheckpointError(f"checkpoint parameter {name!r} has no slot in the model")
        target = by_name[name]
        if tuple(shape) != target.shape:
            raise CheckpointError(
                f"parameter {name!r} has shape {tuple(shape)}, expected {target.shape}"
            )
        size = int(np.prod(shape)) if shape else 1
        raw = r.read(size * 8)
        target.data = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return model, header.get("extra", {})
