"""The five-stage patch transformer.

Pipeline, with x of shape (B, 1, c, l):

    temporal CNN      -> (B, k, c, l/4)    kernel (1, K), same padding, pool 4
    feature enhance   -> (B, k, c, l/8)    1x1 kernel mixing feature maps, pool 2
    spatial patching  -> (B, p, k, l/8)    region-mean local branch + global conv
    temporal patching -> (B, q, l_token)   sliding windows, flatten, project
    transformer + FC  -> (B, n_classes)

p = |local graphs| + 1 and q = p * n_windows in the default wiring; the
ablation flags rewire exactly one stage each.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .errors import ConfigurationError, ShapeError
from .rng import Rng
from .tensor import (
    BatchNormState,
    Parameter,
    Tensor,
    avg_pool_time,
    batch_norm,
    concat,
    conv_spatial,
    conv_temporal,
    dropout,
    layer_norm,
    leaky_relu,
    linear,
    multi_head_attention,
    relu,
    sliding_windows,
)


@dataclass
class ConvBlock:
    kernels: Parameter
    bias: Parameter
    bn: BatchNormState


@dataclass
class LinearBlock:
    weight: Parameter
    bias: Parameter


@dataclass
class NormBlock:
    gamma: Parameter
    beta: Parameter


@dataclass
class EncoderLayer:
    wq: LinearBlock
    wk: LinearBlock
    wv: LinearBlock
    wo: LinearBlock
    norm1: NormBlock
    ffn_in: LinearBlock
    ffn_out: LinearBlock
    norm2: NormBlock


def parameter_shapes(config: ModelConfig) -> dict:
    """Ordered name -> shape map of every trainable parameter.

    This is the single source of truth shared by build(), param_count() and
    the checkpoint format.
    """
    k, d = config.k, config.l_token
    shapes: dict = {}
    shapes["tcnn.kernels"] = (k, 1, 1, config.kernel_len)
    shapes["tcnn.bias"] = (k,)
    shapes["tcnn.bn.gamma"] = (k,)
    shapes["tcnn.bn.beta"] = (k,)
    if config.has_fem:
        shapes["fem.kernels"] = (k, k, 1, 1)
        shapes["fem.bias"] = (k,)
        shapes["fem.bn.gamma"] = (k,)
        shapes["fem.bn.beta"] = (k,)
    if config.has_spm:
        flat = k * config.t_spatial
        shapes["spm.local.weight"] = (config.c, flat)
        shapes["spm.local.bias"] = (config.c, flat)
        shapes["spm.global.kernels"] = (k, k, config.c, 1)
        shapes["spm.global.bias"] = (k,)
        shapes["spm.global.bn.gamma"] = (k,)
        shapes["spm.global.bn.beta"] = (k,)
    shapes["tpm.proj.weight"] = (config.token_in_dim, d)
    shapes["tpm.proj.bias"] = (d,)
    if config.positional_embedding:
        shapes["tpm.pos"] = (config.n_tokens, d)
    for i in range(config.n_layers):
        base = f"transformer.{i}"
        for name in ("wq", "wk", "wv", "wo"):
            shapes[f"{base}.attn.{name}.weight"] = (d, d)
            shapes[f"{base}.attn.{name}.bias"] = (d,)
        shapes[f"{base}.norm1.gamma"] = (d,)
        shapes[f"{base}.norm1.beta"] = (d,)
        shapes[f"{base}.ffn_in.weight"] = (d, config.ffn_mult * d)
        shapes[f"{base}.ffn_in.bias"] = (config.ffn_mult * d,)
        shapes[f"{base}.ffn_out.weight"] = (config.ffn_mult * d, d)
        shapes[f"{base}.ffn_out.bias"] = (d,)
        shapes[f"{base}.norm2.gamma"] = (d,)
        shapes[f"{base}.norm2.beta"] = (d,)
    shapes["head.weight"] = (config.n_tokens * d, config.n_classes)
    shapes["head.bias"] = (config.n_classes,)
    return shapes


def buffer_shapes(config: ModelConfig) -> dict:
    """Non-trainable state (batch-norm running statistics)."""
    k = config.k
    out = {"tcnn.bn.running_mean": (k,), "tcnn.bn.running_var": (k,)}
    if config.has_fem:
        out["fem.bn.running_mean"] = (k,)
        out["fem.bn.running_var"] = (k,)
    if config.has_spm:
        out["spm.global.bn.running_mean"] = (k,)
        out["spm.global.bn.running_var"] = (k,)
    return out


def param_count(config: ModelConfig) -> int:
    """Exact trainable scalar count for a configuration."""
    config.validate()
    return sum(int(np.prod(s)) for s in parameter_shapes(config).values())


def _init_value(name: str, shape: tuple, rng: Rng) -> tuple[np.ndarray, str]:
    """Initializer policy: what array a parameter starts from, and its spec tag."""
    if name == "spm.local.weight":
        return np.ones(shape), "ones"
    if name.endswith("bn.gamma") or name.endswith("norm1.gamma") or name.endswith("norm2.gamma"):
        return np.ones(shape), "ones"
    if name == "tpm.pos":
        return rng.normal(0.0, 0.02, shape), "normal(0, 0.02)"
    if name.endswith(".bias") or name.endswith(".beta") or name == "spm.local.bias":
        return np.zeros(shape), "zeros"
    if name.endswith("kernels"):
        fan_in = int(np.prod(shape[1:]))
    else:  # 2-D projection weights
        fan_in = shape[0]
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape), f"uniform(+-1/sqrt({fan_in}))"


class PatchFormerModel:
    """Parameter set plus the forward computation of all five stages."""

    def __init__(self, config: ModelConfig, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Parameter] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self.tcnn: ConvBlock | None = None
        self.fem: ConvBlock | None = None
        self.local_weight: Parameter | None = None
        self.local_bias: Parameter | None = None
        self.global_conv: ConvBlock | None = None
        self.tpm_proj: LinearBlock | None = None
        self.pos: Parameter | None = None
        self.layers: list[EncoderLayer] = []
        self.head: LinearBlock | None = None

    # -- parameter bookkeeping ---------------------------------------------

    def _register(self, name: str, array: np.ndarray, init_spec: str) -> Parameter:
        p = Parameter(Tensor(array.astype(self.dtype)), name, init_spec)
        if name in self._params:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        self._params[name] = p
        return p

    @property
    def parameters(self) -> dict[str, Parameter]:
        return self._params

    @property
    def buffers(self) -> dict[str, np.ndarray]:
        return self._buffers

    def zero_grad(self):
        for p in self._params.values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        """Copies of every parameter and buffer, keyed by name."""
        state = {name: p.data.copy() for name, p in self._params.items()}
        state.update({name: b.copy() for name, b in self._buffers.items()})
        return state

    def load_state(self, state: dict):
        for name, p in self._params.items():
            src = np.asarray(state[name], dtype=self.dtype)
            if src.shape != p.data.shape:
                raise ShapeError(f"state for {name!r} has shape {src.shape}, expected {p.data.shape}")
            p.data[...] = src
        for name, buf in self._buffers.items():
            src = np.asarray(state[name], dtype=self.dtype)
            if src.shape != buf.shape:
                raise ShapeError(f"state for {name!r} has shape {src.shape}, expected {buf.shape}")
            buf[...] = src

    def _bn_state(self, prefix: str) -> BatchNormState:
        k = self.config.k
        self._buffers[f"{prefix}.running_mean"] = np.zeros(k, dtype=self.dtype)
        self._buffers[f"{prefix}.running_var"] = np.ones(k, dtype=self.dtype)
        return BatchNormState(
            gamma=self._params[f"{prefix}.gamma"].tensor,
            beta=self._params[f"{prefix}.beta"].tensor,
            running_mean=self._buffers[f"{prefix}.running_mean"],
            running_var=self._buffers[f"{prefix}.running_var"],
        )

    # -- forward stages ------------------------------------------------------

    def _tensor(self, name: str) -> Tensor:
        return self._params[name].tensor

    def temporal_cnn(self, x: Tensor, mode: str = "eval") -> Tensor:
        """(B, 1, c, l) -> (B, k, c, l/4)."""
        cfg = self.config
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != cfg.c or x.shape[3] != cfg.l:
            raise ShapeError(f"expected input (B, 1, {cfg.c}, {cfg.l}), got {x.shape}")
        z = conv_temporal(x, self.tcnn.kernels.tensor, self.tcnn.bias.tensor)
        z = batch_norm(z, self.tcnn.bn, mode)
        z = leaky_relu(z, cfg.leaky_slope)
        return avg_pool_time(z, 4, 4)

    def feature_enhance(self, x: Tensor, mode: str = "eval") -> Tensor:
        """(B, k, c, l/4) -> (B, k, c, l/8): 1x1 feature-map mixing, pool 2."""
        if self.fem is None:
            raise ConfigurationError("model was built without the feature-enhancement stage")
        z = conv_temporal(x, self.fem.kernels.tensor, self.fem.bias.tensor)
        z = batch_norm(z, self.fem.bn, mode)
        z = leaky_relu(z, self.config.leaky_slope)
        return avg_pool_time(z, 2, 2)

    def spm_local_filter(self, x: Tensor) -> Tensor:
        """(B, k, c, T) -> (B, c, k*T): elementwise gate W .* z - b under ReLU."""
        if self.local_weight is None:
            raise ConfigurationError("model was built without the spatial-patching stage")
        b, k, c, t = x.shape
        z = x.transpose(0, 2, 1, 3).reshape(b, c, k * t)
        return relu(z * self.local_weight.tensor - self.local_bias.tensor)

    def spm_global(self, x: Tensor, mode: str = "eval") -> Tensor:
        """(B, k, c, T) -> (B, 1, k, T): full-height convolution over channels."""
        if self.global_conv is None:
            raise ConfigurationError("model was built without the spatial-patching stage")
        z = conv_spatial(x, self.global_conv.kernels.tensor, self.global_conv.bias.tensor)
        z = batch_norm(z, self.global_conv.bn, mode)
        z = leaky_relu(z, self.config.leaky_slope)
        # pool of length/step 1 keeps the time axes of both branches aligned
        z = avg_pool_time(z, 1, 1)
        return z.transpose(0, 2, 1, 3)

    def spm(self, x: Tensor, mode: str = "eval") -> Tensor:
        """(B, k, c, T) -> (B, p, k, T): local region patches plus one global patch."""
        b, k, c, t = x.shape
        filtered = self.spm_local_filter(x)
        local = aggregate(filtered, self.config.graphs)
        local = local.reshape(b, self.config.n_regions, k, t)
        global_patch = self.spm_global(x, mode)
        if global_patch.shape[-1] != local.shape[-1]:
            raise ShapeError(
                f"branch time mismatch: local {local.shape[-1]} vs global {global_patch.shape[-1]}"
            )
        return concat([local, global_patch], axis=1)

    def tpm(self, z: Tensor) -> Tensor:
        """(B, p, k, T) -> (B, q, l_token): windowed slices, flattened, projected."""
        cfg = self.config
        b, p, k, t = z.shape
        if cfg.l_t > t:
            raise ConfigurationError(f"patch length l_t={cfg.l_t} exceeds time length {t}")
        win = sliding_windows(z, cfg.l_t, cfg.step_effective)  # (B, p, k, n_w, l_t)
        n_w = win.shape[3]
        if cfg.token_granularity == "window":
            tok = win.transpose(0, 3, 1, 2, 4).reshape(b, n_w, p * k * cfg.l_t)
        else:
            # patch-major ordering: all windows of patch 0, then patch 1, ...
            tok = win.transpose(0, 1, 3, 2, 4).reshape(b, p * n_w, k * cfg.l_t)
        tok = linear(tok, self.tpm_proj.weight.tensor, self.tpm_proj.bias.tensor)
        if self.pos is not None:
            tok = tok + self.pos.tensor
        return tok

    def transformer_encode(self, x: Tensor, mode: str = "eval", rng: Rng | None = None) -> Tensor:
        """(B, q, l_token) -> (B, q, l_token): post-norm residual encoder stack."""
        cfg = self.config
        for layer in self.layers:
            attn = multi_head_attention(
                x, cfg.n_head,
                layer.wq.weight.tensor, layer.wq.bias.tensor,
                layer.wk.weight.tensor, layer.wk.bias.tensor,
                layer.wv.weight.tensor, layer.wv.bias.tensor,
                layer.wo.weight.tensor, layer.wo.bias.tensor,
                dropout_p=cfg.dropout_p, rng=rng, mode=mode,
            )
            x = layer_norm(x + attn, layer.norm1.gamma.tensor, layer.norm1.beta.tensor)
            h = relu(linear(x, layer.ffn_in.weight.tensor, layer.ffn_in.bias.tensor))
            h = linear(h, layer.ffn_out.weight.tensor, layer.ffn_out.bias.tensor)
            h = dropout(h, cfg.dropout_p, rng, mode)
            x = layer_norm(x + h, layer.norm2.gamma.tensor, layer.norm2.beta.tensor)
        return x

    def forward(self, x, mode: str = "eval", rng: Rng | None = None) -> Tensor:
        """Full pipeline to logits (B, n_classes)."""
        cfg = self.config
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        if mode == "train" and cfg.dropout_p > 0 and rng is None:
            raise ValueError("train-mode forward needs an Rng for dropout")
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        elif x.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype))

        z = self.temporal_cnn(x, mode)
        if cfg.has_fem:
            z = self.feature_enhance(z, mode)
        if cfg.has_spm:
            z = self.spm(z, mode)
        else:
            z = z.transpose(0, 2, 1, 3)  # each raw channel becomes a patch
        tok = self.tpm(z)
        tok = self.transformer_encode(tok, mode, rng)
        flat = tok.reshape(x.shape[0], cfg.n_tokens * cfg.l_token)
        flat = dropout(flat, cfg.dropout_p, rng, mode)
        return linear(flat, self.head.weight.tensor, self.head.bias.tensor)


def aggregate(z: Tensor, regions: list) -> Tensor:
    """Mean of each region's channel rows: (B, c, D) -> (B, n_regions, D)."""
    if z.ndim != 3:
        raise ShapeError(f"aggregate expects (B, c, D), got {z.shape}")
    c = z.shape[1]
    index_lists = []
    for gi, group in enumerate(regions):
        idx = [int(i) for i in group]
        if len(idx) == 0:
            raise ConfigurationError(f"region {gi} is empty")
        if any(not 0 <= i < c for i in idx):
            raise ConfigurationError(f"region {gi} references a channel outside [0, {c})")
        index_lists.append(idx)

    data = np.stack([z.data[:, idx, :].mean(axis=1) for idx in index_lists], axis=1)

    def bw(g):
        gz = np.zeros_like(z.data)
        for i, idx in enumerate(index_lists):
            gz[:, idx, :] += g[:, i : i + 1, :] / len(idx)
        return (gz,)

    return Tensor._from_op(data, (z,), bw)


def build(config: ModelConfig, rng: Rng, dtype=np.float32) -> PatchFormerModel:
    """Allocate and initialize every parameter; deterministic given the seed."""
    config.validate()
    model = PatchFormerModel(config, dtype=dtype)
    init_rng = rng.spawn("init")
    for name, shape in parameter_shapes(config).items():
        value, spec = _init_value(name, shape, init_rng)
        model._register(name, value, spec)

    p = model._params
    model.tcnn = ConvBlock(p["tcnn.kernels"], p["tcnn.bias"], model._bn_state("tcnn.bn"))
    if config.has_fem:
        model.fem = ConvBlock(p["fem.kernels"], p["fem.bias"], model._bn_state("fem.bn"))
    if config.has_spm:
        model.local_weight = p["spm.local.weight"]
        model.local_bias = p["spm.local.bias"]
        model.global_conv = ConvBlock(
            p["spm.global.kernels"], p["spm.global.bias"], model._bn_state("spm.global.bn")
        )
    model.tpm_proj = LinearBlock(p["tpm.proj.weight"], p["tpm.proj.bias"])
    if config.positional_embedding:
        model.pos = p["tpm.pos"]
    for i in range(config.n_layers):
        base = f"transformer.{i}"
        model.layers.append(
            EncoderLayer(
                wq=LinearBlock(p[f"{base}.attn.wq.weight"], p[f"{base}.attn.wq.bias"]),
                wk=LinearBlock(p[f"{base}.attn.wk.weight"], p[f"{base}.attn.wk.bias"]),
                wv=LinearBlock(p[f"{base}.attn.wv.weight"], p[f"{base}.attn.wv.bias"]),
                wo=LinearBlock(p[f"{base}.attn.wo.weight"], p[f"{base}.attn.wo.bias"]),
                norm1=NormBlock(p[f"{base}.norm1.gamma"], p[f"{base}.norm1.beta"]),
                ffn_in=LinearBlock(p[f"{base}.ffn_in.weight"], p[f"{base}.ffn_in.bias"]),
                ffn_out=LinearBlock(p[f"{base}.ffn_out.weight"], p[f"{base}.ffn_out.bias"]),
                norm2=NormBlock(p[f"{base}.norm2.gamma"], p[f"{base}.norm2.beta"]),
            )
        )
    model.head = LinearBlock(p["head.weight"], p["head.bias"])
    return model
