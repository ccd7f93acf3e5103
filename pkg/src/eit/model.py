"""The EIT architecture.

An image is tokenized by an overlapping convolution plus max-pool
(the patch stage), then runs through a stack of pre-norm encoder layers.
Each layer splits the channel axis between a depthwise-convolution branch
and multi-head attention according to a per-layer schedule; the default
"decreasing" policy gives shallow layers a conv-heavy split that shrinks
to pure attention at the last layer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .errors import ConfigError, ContractError
from .tensor import (ConvSpec, Tensor, concat, conv2d, dropout, layernorm,
                     matmul, maxpool2d, softmax_rows)

SPLIT_POLICIES = ("decreasing", "increasing", "invariant", "parallel", "none")
BRANCH_STYLES = ("conv", "conv3", "gelu_conv_fc", "conv_bn_relu", "none")
POS_EMBED_MODES = ("none", "trainable")


@dataclass(frozen=True)
class PatchStage:
    """Patch-stage geometry: conv kernel/stride/padding plus the pooling
    size (pool kernel == pool stride)."""
    kernel: int
    stride: int
    padding: int = 0
    pool: int = 1


@dataclass(frozen=True)
class ConvBranch:
    kernel: int = 3
    stride: int = 1
    branch_style: str = "conv"


@dataclass(frozen=True)
class ModelConfig:
    channels: int
    layers: int
    heads: int
    classes: int
    image: tuple[int, int, int]
    eitp: PatchStage
    eitt: ConvBranch = ConvBranch()
    mlp_ratio: int = 4
    split_policy: str = "decreasing"
    pos_embed: str = "none"
    dropout: float = 0.0

    def __post_init__(self):
        if self.channels < 1 or self.layers < 1 or self.heads < 1 or self.classes < 1:
            raise ConfigError("channels/layers/heads/classes must be positive")
        if self.channels % self.heads:
            raise ConfigError(
                f"channels ({self.channels}) not divisible by heads ({self.heads})")
        if len(self.image) != 3 or self.image[2] != 3:
            raise ConfigError(f"image must be (H, W, 3), got {self.image}")
        if self.eitp.stride > self.eitp.kernel:
            raise ConfigError("patch-stage stride must not exceed its kernel")
        if self.eitt.stride != 1:
            raise ConfigError("conv-branch stride must be 1 (token grid preserved)")
        if self.split_policy not in SPLIT_POLICIES:
            raise ConfigError(f"unknown split_policy {self.split_policy!r}")
        if self.eitt.branch_style not in BRANCH_STYLES:
            raise ConfigError(f"unknown branch_style {self.eitt.branch_style!r}")
        if self.pos_embed not in POS_EMBED_MODES:
            raise ConfigError(f"unknown pos_embed {self.pos_embed!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout {self.dropout} outside [0, 1)")

    # -- geometry ---------------------------------------------------------

    def patch_conv_spec(self) -> ConvSpec:
        return ConvSpec(self.eitp.kernel, self.eitp.kernel, self.eitp.stride,
                        self.eitp.padding, 1, 3, self.channels)

    def token_grid(self) -> tuple[int, int]:
        h, w, _ = self.image
        hc, wc = self.patch_conv_spec().out_size(h, w)
        sm = self.eitp.pool
        h0 = (hc - sm) // sm + 1
        w0 = (wc - sm) // sm + 1
        if h0 < 1 or w0 < 1:
            raise ConfigError(
                f"pooling {sm} collapses the {hc}x{wc} conv output to nothing")
        return h0, w0

    def token_count(self) -> int:
        h0, w0 = self.token_grid()
        return 1 + h0 * w0

    def pixel_spacing(self) -> int:
        """Pixels per token-grid step."""
        return self.eitp.stride * self.eitp.pool


def config_to_dict(config: ModelConfig) -> dict:
    d = asdict(config)
    d["image"] = list(config.image)
    return d


def config_from_dict(doc: dict) -> ModelConfig:
    """Build a ModelConfig from a JSON document; unknown keys are rejected."""
    def pick(src, cls, known, required):
        unknown = set(src) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = set(required) - set(src)
        if missing:
            raise ConfigError(f"missing config keys: {sorted(missing)}")

    top = ("channels", "layers", "heads", "classes", "image", "eitp", "eitt",
           "mlp_ratio", "split_policy", "pos_embed", "dropout")
    pick(doc, ModelConfig, top, ("channels", "layers", "heads", "classes",
                                 "image", "eitp"))
    eitp = doc["eitp"]
    pick(eitp, PatchStage, ("kernel", "stride", "padding", "pool"),
         ("kernel", "stride"))
    eitt = doc.get("eitt", {})
    pick(eitt, ConvBranch, ("kernel", "stride", "branch_style"), ())
    kwargs = {k: doc[k] for k in ("channels", "layers", "heads", "classes",
                                  "mlp_ratio", "split_policy", "pos_embed",
                                  "dropout") if k in doc}
    return ModelConfig(image=tuple(doc["image"]), eitp=PatchStage(**eitp),
                       eitt=ConvBranch(**eitt), **kwargs)


def load_config(path) -> ModelConfig:
    with open(path) as f:
        try:
            doc = json.load(f)
        except ValueError as e:
            raise ConfigError(f"{path}: not valid JSON: {e}") from e
    return config_from_dict(doc)


# -- split schedule --------------------------------------------------------


@dataclass(frozen=True)
class SplitSchedule:
    """Per-layer channel allocation: conv branch gets conv[i], attention
    gets attn[i]. For the parallel policy both equal the full width."""
    conv: tuple[int, ...]
    attn: tuple[int, ...]
    policy: str


def build_schedule(channels: int, heads: int, layers: int,
                   policy: str = "decreasing") -> SplitSchedule:
    """Channel split per layer. The conv share at depth i (1-based) is
    C - floor((C // h) * i / L) * h, which keeps the attention share
    divisible by the head count while shrinking the conv share to zero at
    the last layer. "invariant" evaluates the same formula at ratio 1/2,
    "increasing" mirrors the decreasing schedule, "none" is a pure
    attention model and "parallel" gives both branches the full width.
    """
    if channels < 1 or heads < 1 or layers < 1:
        raise ConfigError("channels/heads/layers must be positive")
    if channels % heads:
        raise ConfigError(f"channels ({channels}) not divisible by heads ({heads})")
    if policy not in SPLIT_POLICIES:
        raise ConfigError(f"unknown split policy {policy!r}")

    if policy == "none":
        conv = [0] * layers
    elif policy == "parallel":
        return SplitSchedule((channels,) * layers, (channels,) * layers, policy)
    elif policy == "invariant":
        conv = [channels - (channels // heads // 2) * heads] * layers
    else:
        conv = [channels - ((channels // heads) * i // layers) * heads
                for i in range(1, layers + 1)]
        if policy == "increasing":
            conv = conv[::-1]
    attn = [channels - ct for ct in conv]
    if min(attn) < heads:
        raise ConfigError(
            f"schedule gives a layer fewer attention channels ({min(attn)}) "
            f"than heads ({heads})")
    return SplitSchedule(tuple(conv), tuple(attn), policy)


def schedule_for(config: ModelConfig) -> SplitSchedule:
    return build_schedule(config.channels, config.heads, config.layers,
                          config.split_policy)


# -- parameters ------------------------------------------------------------


def param_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...], str, str]]:
    """Every parameter tensor as (name, shape, component, init_kind).
    Shapes are a pure function of the config; the same enumeration drives
    both initialization and the analytic parameter count."""
    c = config.channels
    k = config.eitp.kernel
    kt = config.eitt.kernel
    ratio = config.mlp_ratio
    sched = schedule_for(config)
    out = [("eitp.weight", (c, 3, k, k), "patch_embed", "conv"),
           ("eitp.bias", (c,), "patch_embed", "conv_bias")]
    out.append(("cls_token", (1, 1, c), "embeddings", "token"))
    if config.pos_embed == "trainable":
        out.append(("pos_embed", (1, config.token_count(), c), "embeddings", "token"))
    for i in range(config.layers):
        ct, cm = sched.conv[i], sched.attn[i]
        p = f"layers.{i}"
        out += [(f"{p}.norm1.gain", (c,), "norm", "ones"),
                (f"{p}.norm1.shift", (c,), "norm", "zeros"),
                (f"{p}.attn.qkv.weight", (cm, 3 * cm), "attention", "proj"),
                (f"{p}.attn.qkv.bias", (3 * cm,), "attention", "zeros"),
                (f"{p}.attn.out.weight", (cm, cm), "attention", "proj"),
                (f"{p}.attn.out.bias", (cm,), "attention", "zeros")]
        style = config.eitt.branch_style
        if config.split_policy == "parallel":
            # full-width standard convolution, summed with attention
            out += [(f"{p}.conv.weight", (c, c, kt, kt), "conv_branch", "conv"),
                    (f"{p}.conv.bias", (c,), "conv_branch", "conv_bias")]
        elif ct > 0 and style != "none":
            if style == "conv3":
                for j in range(3):
                    out += [(f"{p}.conv{j}.weight", (ct, 1, kt, kt), "conv_branch", "conv"),
                            (f"{p}.conv{j}.bias", (ct,), "conv_branch", "conv_bias")]
            else:
                out += [(f"{p}.conv.weight", (ct, 1, kt, kt), "conv_branch", "conv"),
                        (f"{p}.conv.bias", (ct,), "conv_branch", "conv_bias")]
                if style == "gelu_conv_fc":
                    out += [(f"{p}.fc.weight", (ct, ct), "conv_branch", "proj"),
                            (f"{p}.fc.bias", (ct,), "conv_branch", "zeros")]
                elif style == "conv_bn_relu":
                    out += [(f"{p}.bn.gain", (ct,), "conv_branch", "ones"),
                            (f"{p}.bn.shift", (ct,), "conv_branch", "zeros")]
        out += [(f"{p}.norm2.gain", (c,), "norm", "ones"),
                (f"{p}.norm2.shift", (c,), "norm", "zeros"),
                (f"{p}.mlp.fc1.weight", (c, ratio * c), "mlp", "proj"),
                (f"{p}.mlp.fc1.bias", (ratio * c,), "mlp", "zeros"),
                (f"{p}.mlp.fc2.weight", (ratio * c, c), "mlp", "proj"),
                (f"{p}.mlp.fc2.bias", (c,), "mlp", "zeros")]
    out += [("norm.gain", (c,), "norm", "ones"),
            ("norm.shift", (c,), "norm", "zeros"),
            ("head.weight", (c, config.classes), "head", "proj"),
            ("head.bias", (config.classes,), "head", "zeros")]
    return out


def _trunc_normal(rng: np.random.Generator, shape, std=0.02) -> np.ndarray:
    x = rng.standard_normal(shape)
    while True:
        bad = np.abs(x) > 2.0
        if not bad.any():
            return x * std
        x[bad] = rng.standard_normal(int(bad.sum()))


def _xavier_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, shape)


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    """Fan-in scaled projections, fan-in uniform convolutions, identity
    norms. Projection weights use Xavier limits rather than a fixed small
    std so token features stay input-dependent at depth under plain SGD;
    the class token and positional table keep the small truncated-normal
    draw."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape, _, kind in param_shapes(config):
        if kind == "proj":
            data = _xavier_uniform(rng, shape)
        elif kind == "token":
            data = _trunc_normal(rng, shape)
        elif kind == "conv":
            fan_in = int(np.prod(shape[1:]))
            bound = 1.0 / np.sqrt(fan_in)
            data = rng.uniform(-bound, bound, shape)
        elif kind == "conv_bias":
            data = np.zeros(shape)
        elif kind == "ones":
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


def check_param_shapes(params: dict[str, Tensor], config: ModelConfig):
    expected = {name: shape for name, shape, _, _ in param_shapes(config)}
    got = {name: tuple(t.shape) for name, t in params.items()}
    if expected != got:
        raise ContractError("parameter tensors do not match the config")


# -- forward pass ----------------------------------------------------------


def eitp_embed(images: Tensor, params: dict[str, Tensor],
               config: ModelConfig) -> Tensor:
    """Tokenize: overlapping conv, max-pool, flatten, prepend class token,
    optionally add the trainable position embedding."""
    h, w, _ = config.image
    if images.shape[1:] != (3, h, w):
        raise ContractError(f"image batch {images.shape} does not match "
                            f"configured size {(3, h, w)}")
    n = images.shape[0]
    x = conv2d(images, params["eitp.weight"], params["eitp.bias"],
               config.patch_conv_spec())
    x = maxpool2d(x, config.eitp.pool, config.eitp.pool)
    h0, w0 = config.token_grid()
    x = x.reshape(n, config.channels, h0 * w0).transpose(0, 2, 1)
    cls = params["cls_token"] + Tensor(np.zeros((n, 1, config.channels)))
    x = concat([cls, x], axis=1)
    if config.pos_embed == "trainable":
        x = x + params["pos_embed"]
    return x


def mha(x: Tensor, qkv_w: Tensor, qkv_b: Tensor, out_w: Tensor, out_b: Tensor,
        heads: int) -> tuple[Tensor, np.ndarray]:
    """Multi-head self-attention over (N, T, C_M) with per-head scaling
    1/sqrt(C_M / heads). Returns the output and the attention weights
    (N, heads, T, T) for the probes."""
    n, t, cm = x.shape
    if cm == 0 or cm % heads:
        raise ConfigError(f"attention width {cm} not divisible by {heads} heads")
    d = cm // heads
    qkv = matmul(x, qkv_w) + qkv_b
    q = qkv[:, :, :cm].reshape(n, t, heads, d).transpose(0, 2, 1, 3)
    k = qkv[:, :, cm:2 * cm].reshape(n, t, heads, d).transpose(0, 2, 1, 3)
    v = qkv[:, :, 2 * cm:].reshape(n, t, heads, d).transpose(0, 2, 1, 3)
    a = softmax_rows(matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(d)))
    o = matmul(a, v).transpose(0, 2, 1, 3).reshape(n, t, cm)
    return matmul(o, out_w) + out_b, a.data


def _grid_conv(tokens: Tensor, weight: Tensor, bias: Tensor,
               spec: ConvSpec, grid: tuple[int, int]) -> Tensor:
    """Apply a spatial conv to patch tokens laid out row-major on the grid."""
    n, p, c = tokens.shape
    h0, w0 = grid
    x = tokens.reshape(n, h0, w0, c).transpose(0, 3, 1, 2)
    x = conv2d(x, weight, bias, spec)
    return x.transpose(0, 2, 3, 1).reshape(n, p, c)


def _batchnorm_tokens(x: Tensor, gain: Tensor, shift: Tensor,
                      eps: float = 1e-5) -> Tensor:
    # current-batch statistics over (batch, token) for each channel
    cnt = x.shape[0] * x.shape[1]
    mu = x.sum(axis=(0, 1), keepdims=True) * (1.0 / cnt)
    xc = x - mu
    var = (xc * xc).sum(axis=(0, 1), keepdims=True) * (1.0 / cnt)
    return xc / (var + eps).sqrt() * gain + shift


def eitt_branch(x: Tensor, params: dict[str, Tensor], prefix: str,
                config: ModelConfig, grid: tuple[int, int],
                standard: bool = False) -> Tensor:
    """Convolution branch over (N, T, C_T). The class token (index 0) has
    no grid position and bypasses the branch untouched."""
    n, t, ct = x.shape
    h0, w0 = grid
    if t - 1 != h0 * w0:
        raise ContractError(f"{t - 1} patch tokens do not fill a {h0}x{w0} grid")
    style = "conv" if standard else config.eitt.branch_style
    if style == "none" or ct == 0:
        return x
    kt = config.eitt.kernel
    groups = 1 if standard else ct
    spec = ConvSpec(kt, kt, 1, kt // 2, groups, ct, ct)
    patches = x[:, 1:, :]
    if standard:
        y = _grid_conv(patches, params[f"{prefix}.conv.weight"],
                       params[f"{prefix}.conv.bias"], spec, grid)
    elif style == "conv":
        y = _grid_conv(patches, params[f"{prefix}.conv.weight"],
                       params[f"{prefix}.conv.bias"], spec, grid)
    elif style == "conv3":
        y = patches
        for j in range(3):
            y = _grid_conv(y, params[f"{prefix}.conv{j}.weight"],
                           params[f"{prefix}.conv{j}.bias"], spec, grid)
    elif style == "gelu_conv_fc":
        y = _grid_conv(patches.gelu(), params[f"{prefix}.conv.weight"],
                       params[f"{prefix}.conv.bias"], spec, grid)
        y = matmul(y, params[f"{prefix}.fc.weight"]) + params[f"{prefix}.fc.bias"]
    elif style == "conv_bn_relu":
        y = _grid_conv(patches, params[f"{prefix}.conv.weight"],
                       params[f"{prefix}.conv.bias"], spec, grid)
        y = _batchnorm_tokens(y, params[f"{prefix}.bn.gain"],
                              params[f"{prefix}.bn.shift"]).relu()
    else:  # pragma: no cover - guarded by config validation
        raise ConfigError(f"unknown branch style {style!r}")
    return concat([x[:, 0:1, :], y], axis=1)


def encoder_layer(x: Tensor, params: dict[str, Tensor], layer: int,
                  config: ModelConfig, schedule: SplitSchedule,
                  grid: tuple[int, int], train: bool = False,
                  rng: np.random.Generator | None = None
                  ) -> tuple[Tensor, np.ndarray]:
    """Pre-norm residual layer: channel-split conv/attention mix, then MLP.
    Returns the new activations and the attention weights."""
    p = f"layers.{layer}"
    c = config.channels
    ct, cm = schedule.conv[layer], schedule.attn[layer]
    n1 = layernorm(x, params[f"{p}.norm1.gain"], params[f"{p}.norm1.shift"])
    attn_out, attn = mha(n1 if cm == c else n1[:, :, c - cm:],
                         params[f"{p}.attn.qkv.weight"], params[f"{p}.attn.qkv.bias"],
                         params[f"{p}.attn.out.weight"], params[f"{p}.attn.out.bias"],
                         config.heads)
    if train and config.dropout > 0:
        attn_out = dropout(attn_out, config.dropout, rng)
    if schedule.policy == "parallel":
        mix = eitt_branch(n1, params, p, config, grid, standard=True) + attn_out
    elif ct == 0:
        mix = attn_out
    else:
        conv_out = eitt_branch(n1[:, :, :ct], params, p, config, grid)
        mix = concat([conv_out, attn_out], axis=2)
    y = x + mix
    n2 = layernorm(y, params[f"{p}.norm2.gain"], params[f"{p}.norm2.shift"])
    hdn = (matmul(n2, params[f"{p}.mlp.fc1.weight"]) + params[f"{p}.mlp.fc1.bias"]).gelu()
    if train and config.dropout > 0:
        hdn = dropout(hdn, config.dropout, rng)
    out = matmul(hdn, params[f"{p}.mlp.fc2.weight"]) + params[f"{p}.mlp.fc2.bias"]
    if train and config.dropout > 0:
        out = dropout(out, config.dropout, rng)
    return y + out, attn


def forward(images, params: dict[str, Tensor], config: ModelConfig,
            train: bool = False, rng: np.random.Generator | None = None,
            collect_probes: bool = False):
    """Full model: tokenize, L encoder layers, final norm, classify the
    class token. With collect_probes=True also returns, per layer, the
    layer input and attention weights (plain arrays, batch-first)."""
    if not isinstance(images, Tensor):
        images = Tensor(images)
    schedule = schedule_for(config)
    grid = config.token_grid()
    x = eitp_embed(images, params, config)
    probes = []
    for i in range(config.layers):
        if collect_probes:
            layer_input = x.data.copy()
        x, attn = encoder_layer(x, params, i, config, schedule, grid, train, rng)
        if collect_probes:
            probes.append({"layer": i, "input": layer_input, "attention": attn})
    x = layernorm(x, params["norm.gain"], params["norm.shift"])
    logits = matmul(x[:, 0, :], params["head.weight"]) + params["head.bias"]
    if collect_probes:
        return logits, probes
    return logits
