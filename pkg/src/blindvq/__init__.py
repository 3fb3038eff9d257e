"""Blind video quality assessment from sharpness and motion feature streams.

A dependency-light numpy implementation: a frame-level 2D sharpness
extractor and a two-pathway 3D motion extractor feed mean+std pooled
features into a single fused quality head, trained with differentiable
PLCC and soft-rank SRCC losses and evaluated with SRCC plus
logistic-remapped PLCC.
"""

from .tensor import ConvSpec, Tensor, backward, no_grad, sgd_step, zero_grads
from .data import (
    DistortionSpec,
    ManifestRecord,
    VideoClip,
    distort_image,
    load_manifest,
    read_frames,
    split,
    synth_corpus,
    synth_stills,
)
from .networks import (
    FeatureSequence,
    NetworkParams,
    NetworkSpec,
    build_extractor,
    extract_motion,
    extract_sharpness,
    pretrain_sharpness,
    set_freeze,
)
from .fusion import FusedSequence, QualityHead, build_head, fuse, predict_batch, predict_quality
from .objectives import (
    Logistic4,
    fit_logistic4,
    plcc,
    plcc_loss,
    soft_rank,
    srcc,
    srcc_loss,
    total_loss,
)
from .harness import RunConfig, compare_run, eval_run, synth_run, train_run

__version__ = "0.1.0"
