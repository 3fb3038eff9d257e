"""Feature extractor topologies and their parameters.

Two families share one declarative representation:

* ``sharpness2d`` / ``spatial2d`` — an 18-layer residual network applied
  frame by frame (stem conv + max pool, then four stages of two basic
  blocks at 64/128/256/512 channels in canonical scale).  The two variants
  are structurally identical; they differ only in whether the harness
  pretrains them on distorted stills.
* ``slowfast3d`` — a two-pathway video network: a slow pathway sampling
  every 16th frame at high channel width, and a fast pathway sampling
  every 2nd frame at an eighth of the width.  Stages are bottleneck
  blocks; there are no lateral connections between pathways, and motion
  features are pooled from the fast pathway's final 256-channel map.

No normalization layers anywhere: every convolution carries a per-channel
bias and is followed by ReLU (for residual blocks, after the skip add).
``tiny`` scale shrinks both families to 32x32-friendly two-stage nets for
fast training and gradient tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as tk
from .data import VideoClip
from .tensor import ConvSpec, ShapeError, Tensor

__all__ = [
    "PoolSpec",
    "BlockSpec",
    "StageSpec",
    "PathwaySpec",
    "NetworkSpec",
    "NetworkParams",
    "FeatureSequence",
    "VARIANTS",
    "SCALES",
    "build_extractor",
    "run_pathways",
    "extract_sharpness",
    "extract_motion",
    "set_freeze",
    "last_two_stage_prefixes",
    "pretrain_sharpness",
]

VARIANTS = ("sharpness2d", "spatial2d", "slowfast3d")
SCALES = ("canonical", "tiny")


@dataclass(frozen=True)
class PoolSpec:
    kernel: tuple[int, ...]
    stride: tuple[int, ...]
    padding: tuple[int, ...]

    def out_extents(self, in_extents: Sequence[int]) -> tuple[int, ...]:
        return tuple(
            (n + 2 * p - k) // s + 1
            for n, k, s, p in zip(in_extents, self.kernel, self.stride, self.padding)
        )


@dataclass(frozen=True)
class BlockSpec:
    """Residual block: a conv chain plus an optional 1x1 projection skip."""

    name: str
    convs: tuple[ConvSpec, ...]
    projection: ConvSpec | None = None

    @property
    def out_channels(self) -> int:
        return self.convs[-1].out_channels


@dataclass(frozen=True)
class StageSpec:
    name: str
    blocks: tuple[BlockSpec, ...]


@dataclass(frozen=True)
class PathwaySpec:
    """One conv pathway: temporal frame stride, stem, pool, residual stages."""

    name: str
    frame_stride: int
    stem_conv: ConvSpec
    stem_pool: PoolSpec | None
    stages: tuple[StageSpec, ...]

    def layer_names(self) -> list[str]:
        names = ["stem"]
        if self.stem_pool is not None:
            names.append("pool")
        names.extend(st.name for st in self.stages)
        return names

    def layout(self, extents: tuple[int, ...]) -> dict[str, tuple[int, ...]]:
        """Closed-form output extents per layer for given input extents
        (post frame subsampling; the temporal axis is included for 3D)."""
        trace: dict[str, tuple[int, ...]] = {}
        cur = self.stem_conv.out_extents(extents)
        trace["stem"] = cur
        if self.stem_pool is not None:
            cur = self.stem_pool.out_extents(cur)
            trace["pool"] = cur
        for st in self.stages:
            for blk in st.blocks:
                for cs in blk.convs:
                    cur = cs.out_extents(cur)
            trace[st.name] = cur
        return trace


@dataclass(frozen=True)
class NetworkSpec:
    """Declarative extractor topology: one pathway for the 2D variants,
    (slow, fast) for the 3D one.  ``feature_pathway`` names the pathway
    whose final map feeds pooling."""

    variant: str
    scale: str
    pathways: tuple[PathwaySpec, ...]
    feature_pathway: str
    min_hw: int
    min_t: int

    @property
    def feature_channels(self) -> int:
        pw = self.pathway(self.feature_pathway)
        return pw.stages[-1].blocks[-1].out_channels

    @property
    def feature_width(self) -> int:
        return 2 * self.feature_channels  # mean + std per channel

    def pathway(self, name: str) -> PathwaySpec:
        for pw in self.pathways:
            if pw.name == name:
                return pw
        raise KeyError(f"no pathway named {name!r}")

    def describe(self) -> dict:
        """JSON-friendly topology description (used for params-file hashing)."""

        def conv_d(c: ConvSpec | None):
            if c is None:
                return None
            return [list(c.kernel), list(c.stride), list(c.padding), c.in_channels, c.out_channels]

        return {
            "variant": self.variant,
            "scale": self.scale,
            "feature_pathway": self.feature_pathway,
            "pathways": [
                {
                    "name": pw.name,
                    "frame_stride": pw.frame_stride,
                    "stem": conv_d(pw.stem_conv),
                    "pool": None
                    if pw.stem_pool is None
                    else [list(pw.stem_pool.kernel), list(pw.stem_pool.stride), list(pw.stem_pool.padding)],
                    "stages": [
                        {
                            "name": st.name,
                            "blocks": [
                                {
                                    "name": b.name,
                                    "convs": [conv_d(c) for c in b.convs],
                                    "proj": conv_d(b.projection),
                                }
                                for b in st.blocks
                            ],
                        }
                        for st in pw.stages
                    ],
                }
                for pw in self.pathways
            ],
        }


class NetworkParams:
    """Named parameter tensors plus the per-parameter freeze state."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors.keys())

    def values(self) -> list[Tensor]:
        return list(self.tensors.values())

    @property
    def freeze_mask(self) -> dict[str, bool]:
        return {name: t.frozen for name, t in self.tensors.items()}

    def state_bytes(self) -> bytes:
        return b"".join(t.data.tobytes() for t in self.tensors.values())


@dataclass
class FeatureSequence:
    """Per-frame feature vectors: ``features`` has shape (T_f, D)."""

    features: Tensor

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ShapeError(f"feature sequence must be 2D, got {self.features.shape}")
        if not np.all(np.isfinite(self.features.data)):
            raise FloatingPointError("feature sequence contains non-finite values")

    @property
    def length(self) -> int:
        return self.features.shape[0]

    @property
    def width(self) -> int:
        return self.features.shape[1]


# -- topology builders ---------------------------------------------------------


def _basic_block(name: str, in_ch: int, out_ch: int, stride: int) -> BlockSpec:
    convs = (
        ConvSpec((3, 3), (stride, stride), (1, 1), in_ch, out_ch),
        ConvSpec((3, 3), (1, 1), (1, 1), out_ch, out_ch),
    )
    proj = None
    if stride != 1 or in_ch != out_ch:
        proj = ConvSpec((1, 1), (stride, stride), (0, 0), in_ch, out_ch)
    return BlockSpec(name, convs, proj)


def _bottleneck3d(
    name: str, in_ch: int, inner: int, out_ch: int, k_t: int, spatial_stride: int
) -> BlockSpec:
    convs = (
        ConvSpec((k_t, 1, 1), (1, 1, 1), (k_t // 2, 0, 0), in_ch, inner),
        ConvSpec((1, 3, 3), (1, spatial_stride, spatial_stride), (0, 1, 1), inner, inner),
        ConvSpec((1, 1, 1), (1, 1, 1), (0, 0, 0), inner, out_ch),
    )
    proj = None
    if spatial_stride != 1 or in_ch != out_ch:
        proj = ConvSpec(
            (1, 1, 1), (1, spatial_stride, spatial_stride), (0, 0, 0), in_ch, out_ch
        )
    return BlockSpec(name, convs, proj)


def _stage2d(name: str, n_blocks: int, in_ch: int, out_ch: int, first_stride: int) -> StageSpec:
    blocks = []
    for i in range(n_blocks):
        blocks.append(
            _basic_block(
                f"b{i + 1}",
                in_ch if i == 0 else out_ch,
                out_ch,
                first_stride if i == 0 else 1,
            )
        )
    return StageSpec(name, tuple(blocks))


def _stage3d(
    name: str,
    n_blocks: int,
    in_ch: int,
    inner: int,
    out_ch: int,
    k_t: int,
    first_stride: int,
) -> StageSpec:
    blocks = []
    for i in range(n_blocks):
        blocks.append(
            _bottleneck3d(
                f"b{i + 1}",
                in_ch if i == 0 else out_ch,
                inner,
                out_ch,
                k_t,
                first_stride if i == 0 else 1,
            )
        )
    return StageSpec(name, tuple(blocks))


def _resnet2d_pathways(scale: str) -> tuple[PathwaySpec, ...]:
    if scale == "canonical":
        stem = ConvSpec((7, 7), (2, 2), (3, 3), 3, 64)
        pool = PoolSpec((3, 3), (2, 2), (1, 1))
        stages = (
            _stage2d("stage1", 2, 64, 64, 1),
            _stage2d("stage2", 2, 64, 128, 2),
            _stage2d("stage3", 2, 128, 256, 2),
            _stage2d("stage4", 2, 256, 512, 2),
        )
    else:
        stem = ConvSpec((3, 3), (2, 2), (1, 1), 3, 8)
        pool = PoolSpec((3, 3), (2, 2), (1, 1))
        stages = (
            _stage2d("stage1", 1, 8, 8, 1),
            _stage2d("stage2", 1, 8, 16, 2),
        )
    return (PathwaySpec("main", 1, stem, pool, stages),)


def _slowfast_pathways(scale: str) -> tuple[PathwaySpec, ...]:
    if scale == "canonical":
        slow = PathwaySpec(
            "slow",
            frame_stride=16,
            stem_conv=ConvSpec((1, 7, 7), (1, 2, 2), (0, 3, 3), 3, 64),
            stem_pool=PoolSpec((1, 3, 3), (1, 2, 2), (0, 1, 1)),
            stages=(
                _stage3d("res2", 3, 64, 64, 256, 1, 1),
                _stage3d("res3", 4, 256, 128, 512, 1, 2),
                _stage3d("res4", 6, 512, 256, 1024, 3, 2),
                _stage3d("res5", 3, 1024, 512, 2048, 3, 2),
            ),
        )
        fast = PathwaySpec(
            "fast",
            frame_stride=2,
            stem_conv=ConvSpec((5, 7, 7), (1, 2, 2), (2, 3, 3), 3, 8),
            stem_pool=PoolSpec((1, 3, 3), (1, 2, 2), (0, 1, 1)),
            stages=(
                _stage3d("res2", 3, 8, 8, 32, 3, 1),
                _stage3d("res3", 4, 32, 16, 64, 3, 2),
                _stage3d("res4", 6, 64, 32, 128, 3, 2),
                _stage3d("res5", 3, 128, 64, 256, 3, 2),
            ),
        )
    else:
        slow = PathwaySpec(
            "slow",
            frame_stride=4,
            stem_conv=ConvSpec((1, 3, 3), (1, 2, 2), (0, 1, 1), 3, 8),
            stem_pool=None,
            stages=(
                _stage3d("res2", 1, 8, 8, 32, 1, 1),
                _stage3d("res3", 1, 32, 16, 64, 3, 2),
            ),
        )
        fast = PathwaySpec(
            "fast",
            frame_stride=2,
            stem_conv=ConvSpec((3, 3, 3), (1, 2, 2), (1, 1, 1), 3, 2),
            stem_pool=None,
            stages=(
                _stage3d("res2", 1, 2, 2, 8, 3, 1),
                _stage3d("res3", 1, 8, 4, 16, 3, 2),
            ),
        )
    return (slow, fast)


def build_extractor(variant: str, scale: str, seed: int) -> tuple[NetworkSpec, NetworkParams]:
    """Build a topology and seeded He-uniform parameters (biases zero).

    The same seed always yields bit-identical parameters; all freeze flags
    start cleared.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    if scale not in SCALES:
        raise ValueError(f"unknown scale {scale!r}, expected one of {SCALES}")
    if variant in ("sharpness2d", "spatial2d"):
        pathways = _resnet2d_pathways(scale)
        feature_pathway = "main"
        min_hw = 32 if scale == "canonical" else 8
        min_t = 2
    else:
        pathways = _slowfast_pathways(scale)
        feature_pathway = "fast"
        min_hw = 32 if scale == "canonical" else 8
        min_t = 16 if scale == "canonical" else 4
    spec = NetworkSpec(variant, scale, pathways, feature_pathway, min_hw, min_t)

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    tensors: dict[str, Tensor] = {}

    def add_conv(prefix: str, cs: ConvSpec) -> None:
        fan_in = cs.in_channels * int(np.prod(cs.kernel))
        w = tk.he_uniform(rng, cs.weight_shape(), fan_in)
        tensors[f"{prefix}.w"] = Tensor(w, requires_grad=True, name=f"{prefix}.w")
        tensors[f"{prefix}.b"] = Tensor(
            np.zeros(cs.out_channels), requires_grad=True, name=f"{prefix}.b"
        )

    for pw in spec.pathways:
        base = f"{pw.name}." if len(spec.pathways) > 1 else ""
        add_conv(f"{base}stem", pw.stem_conv)
        for st in pw.stages:
            for blk in st.blocks:
                for i, cs in enumerate(blk.convs):
                    add_conv(f"{base}{st.name}.{blk.name}.conv{i + 1}", cs)
                if blk.projection is not None:
                    add_conv(f"{base}{st.name}.{blk.name}.proj", blk.projection)
    return spec, NetworkParams(tensors)


# -- forward -------------------------------------------------------------------


def _block_forward(params: NetworkParams, prefix: str, blk: BlockSpec, x: Tensor) -> Tensor:
    out = x
    for i, cs in enumerate(blk.convs):
        out = tk.conv(out, cs, params[f"{prefix}.conv{i + 1}.w"], params[f"{prefix}.conv{i + 1}.b"])
        if i < len(blk.convs) - 1:
            out = tk.relu(out)
    if blk.projection is not None:
        skip = tk.conv(x, blk.projection, params[f"{prefix}.proj.w"], params[f"{prefix}.proj.b"])
    else:
        skip = x
    return tk.relu(out + skip)


def _pathway_forward(
    params: NetworkParams,
    pw: PathwaySpec,
    base: str,
    x: Tensor,
    trace: dict[str, tuple[int, ...]] | None = None,
) -> Tensor:
    def note(layer: str, t: Tensor) -> None:
        if trace is not None:
            trace[f"{base}{layer}" if base else layer] = t.shape[2:]

    out = tk.relu(tk.conv(x, pw.stem_conv, params[f"{base}stem.w"], params[f"{base}stem.b"]))
    note("stem", out)
    if pw.stem_pool is not None:
        out = tk.maxpool(out, pw.stem_pool.kernel, pw.stem_pool.stride, pw.stem_pool.padding)
        note("pool", out)
    for st in pw.stages:
        for blk in st.blocks:
            out = _block_forward(params, f"{base}{st.name}.{blk.name}", blk, out)
        note(st.name, out)
    return out


def run_pathways(
    spec: NetworkSpec,
    params: NetworkParams,
    x: Tensor,
    trace: dict[str, tuple[int, ...]] | None = None,
) -> dict[str, Tensor]:
    """Run every pathway on x and return the final maps by pathway name.

    For 3D variants x is (N, 3, T, H, W) and each pathway first samples
    frames at its own temporal stride; for 2D variants x is (N, 3, H, W).
    """
    outputs: dict[str, Tensor] = {}
    multi = len(spec.pathways) > 1
    for pw in spec.pathways:
        base = f"{pw.name}." if multi else ""
        inp = x
        if pw.frame_stride > 1:
            inp = tk.temporal_subsample(x, pw.frame_stride, axis=2)
        if trace is not None:
            trace[f"{base}data"] = inp.shape[2:]
        outputs[pw.name] = _pathway_forward(params, pw, base, inp, trace)
    return outputs


def _check_clip(spec: NetworkSpec, clip: VideoClip) -> None:
    t, _, h, w = clip.frames.shape
    if h < spec.min_hw or w < spec.min_hw:
        raise ShapeError(
            f"clip {clip.id!r} frames are {w}x{h}, below the {spec.scale} minimum {spec.min_hw}"
        )
    if t < spec.min_t or t % spec.min_t != 0:
        raise ShapeError(
            f"clip {clip.id!r} has {t} frames; {spec.scale} {spec.variant} needs a multiple of {spec.min_t}"
        )


def extract_sharpness(spec: NetworkSpec, params: NetworkParams, clip: VideoClip) -> FeatureSequence:
    """Frame-level sharpness features: the 2D network runs independently on
    every frame; each final map is mean+std pooled.  Output is (T, 2C)."""
    if spec.variant not in ("sharpness2d", "spatial2d"):
        raise ValueError(f"extract_sharpness needs a 2D variant, got {spec.variant!r}")
    _check_clip(spec, clip)
    final = run_pathways(spec, params, clip.frames)["main"]
    feats = tk.gap_gsp(final, channel_axis=1, reduce_axes=(2, 3))
    return FeatureSequence(feats)


def extract_motion(spec: NetworkSpec, params: NetworkParams, clip: VideoClip) -> FeatureSequence:
    """Motion features from the fast pathway's final map, mean+std pooled
    over space per temporal index.  Output is (T / fast_stride, 2C).

    The slow pathway runs as part of the topology but does not feed the
    pooled features."""
    if spec.variant != "slowfast3d":
        raise ValueError(f"extract_motion needs slowfast3d, got {spec.variant!r}")
    _check_clip(spec, clip)
    t, c, h, w = clip.frames.shape
    x = tk.reshape(tk.moveaxis(clip.frames, 0, 1), (1, c, t, h, w))
    fast = run_pathways(spec, params, x)[spec.feature_pathway]
    pooled = tk.gap_gsp(fast, channel_axis=1, reduce_axes=(3, 4))  # (1, 2C, T_f)
    feats = tk.reshape(tk.moveaxis(pooled, 2, 0), (pooled.shape[2], pooled.shape[1]))
    return FeatureSequence(feats)


# -- freezing and pretraining ---------------------------------------------------


def set_freeze(params: NetworkParams, unfrozen_prefixes: Sequence[str]) -> NetworkParams:
    """Unfreeze parameters under the listed dotted prefixes, freeze the rest.

    Each prefix must address at least one existing parameter group.
    """
    names = params.names()
    for prefix in unfrozen_prefixes:
        if not any(n == prefix or n.startswith(prefix + ".") for n in names):
            raise KeyError(f"freeze prefix {prefix!r} names no parameters")
    for name, t in params.tensors.items():
        t.frozen = not any(
            name == p or name.startswith(p + ".") for p in unfrozen_prefixes
        )
    return params


def last_two_stage_prefixes(spec: NetworkSpec) -> tuple[str, ...]:
    """Dotted prefixes of the feature pathway's last two residual stages,
    the group unfrozen for sharpness fine-tuning."""
    pw = spec.pathway(spec.feature_pathway)
    base = f"{pw.name}." if len(spec.pathways) > 1 else ""
    return tuple(f"{base}{st.name}" for st in pw.stages[-2:])


def pretrain_sharpness(
    spec: NetworkSpec,
    params: NetworkParams,
    stills: Sequence[tuple[np.ndarray, float]],
    epochs: int,
    lr: float,
    head_seed: int = 0,
) -> tuple[NetworkParams, list[float]]:
    """Fit the 2D extractor to pseudo-MOS labels of distorted stills.

    Full-batch gradient descent on the mean squared error of a linear head
    over the pooled features.  The freeze mask is honored: frozen stages
    stay bit-identical.  Returns the updated params and the per-epoch loss
    trace (finite everywhere).
    """
    if spec.variant not in ("sharpness2d", "spatial2d"):
        raise ValueError(f"pretrain_sharpness needs a 2D variant, got {spec.variant!r}")
    if len(stills) == 0:
        raise ValueError("pretrain_sharpness needs at least one labeled still")
    if epochs < 0:
        raise ValueError(f"epochs must be >= 0, got {epochs}")
    batch = Tensor(np.stack([img for img, _ in stills]))
    labels = Tensor(np.array([lab for _, lab in stills], dtype=np.float64))
    rng = np.random.default_rng(np.random.SeedSequence(head_seed))
    width = spec.feature_width
    head_w = Tensor(tk.he_uniform(rng, (width, 1), width), requires_grad=True, name="pretrain.w")
    head_b = Tensor(np.zeros(1), requires_grad=True, name="pretrain.b")
    trainable = params.values() + [head_w, head_b]
    trace: list[float] = []
    for _ in range(epochs):
        final = run_pathways(spec, params, batch)["main"]
        feats = tk.gap_gsp(final, channel_axis=1, reduce_axes=(2, 3))
        pred = tk.reshape(tk.linear(feats, head_w, head_b), (len(stills),))
        err = pred - labels
        loss = tk.tmean(err * err)
        value = loss.item()
        if not np.isfinite(value):
            raise FloatingPointError("pretraining loss diverged; lower the learning rate")
        tk.zero_grads(trainable)
        tk.backward(loss)
        tk.sgd_step(trainable, lr)
        trace.append(value)
    return params, trace
