"""Run orchestration: corpus synthesis, training, evaluation, comparison.

A training run loads the corpus manifest, splits it 60/20/20 with a seeded
shuffle, builds the chosen 2D extractor plus the 3D motion extractor,
optionally pretrains the 2D stream on distorted stills (the sharpness2d
variant), extracts and caches fused features per clip, and then runs
minibatch SGD on the quality head under the combined correlation loss.
After every epoch the train and val splits are scored (SRCC, raw PLCC,
logistic-mapped PLCC, loss); the test split is scored once at the end.

Everything that is random derives from the single config seed, so a rerun
writes byte-identical logs and parameter files.

Outputs:
  * epoch log CSV with header ``epoch,split,srcc,plcc,mapped_plcc,loss``
  * a binary parameter file (format documented at ``save_params``)
  * for comparison runs, a two-variant CSV and an aligned text table.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import data as dat
from . import fusion as fu
from . import networks as nets
from . import objectives as obj
from . import tensor as tk
from .tensor import Tensor

__all__ = [
    "RunConfig",
    "EpochRecord",
    "RunResult",
    "ComparisonReport",
    "LOG_HEADER",
    "TRAIN_VARIANTS",
    "load_config_file",
    "synth_run",
    "train_run",
    "eval_run",
    "compare_run",
    "save_params",
    "load_params",
    "REFERENCE_FOOTNOTE",
]

LOG_HEADER = "epoch,split,srcc,plcc,mapped_plcc,loss"
TRAIN_VARIANTS = ("spatial2d", "sharpness2d")

# Published full-scale results, printed by comparison runs as context only;
# synthetic desk-scale corpora are not comparable and nothing asserts these.
REFERENCE_FOOTNOTE = (
    "reference (published full-scale study, context only, not asserted): "
    "spatial SRCC 0.9 PLCC 0.9133; sharpness SRCC 0.8954 PLCC 0.8788"
)

_PARAMS_MAGIC = b"BVQP"
_PARAMS_VERSION = 1


@dataclass
class RunConfig:
    """Flat run configuration; every field can come from a ``key = value``
    config file, with CLI flags taking precedence."""

    corpus: str = "corpus"
    out: str = "runs"
    scale: str = "tiny"
    variant: str = "sharpness2d"
    epochs: int = 20
    batch_size: int = 8
    lr: float = 1e-3
    alpha: float = 0.5
    tau: float = 0.1
    seed: int = 0
    # corpus synthesis
    clips: int = 54
    frames: int = 8
    size: int = 32
    # still-image pretraining (sharpness2d only)
    pretrain_images: int = 48
    pretrain_epochs: int = 60
    pretrain_lr: float = 1e-3

    def validate_for_training(self) -> None:
        if self.variant not in TRAIN_VARIANTS:
            raise ValueError(f"variant must be one of {TRAIN_VARIANTS}, got {self.variant!r}")
        if self.scale not in nets.SCALES:
            raise ValueError(f"scale must be one of {nets.SCALES}, got {self.scale!r}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2 for correlation losses, got {self.batch_size}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")


_INT_KEYS = {"epochs", "batch_size", "seed", "clips", "frames", "size", "pretrain_images", "pretrain_epochs"}
_FLOAT_KEYS = {"lr", "alpha", "tau", "pretrain_lr"}


def load_config_file(path: str | Path) -> dict:
    """Parse a flat ``key = value`` file (# comments and blank lines ok)."""
    values: dict = {}
    known = set(RunConfig.__dataclass_fields__)
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{line_no}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ValueError(f"{path}:{line_no}: unknown config key {key!r}")
        if key in _INT_KEYS:
            values[key] = int(value)
        elif key in _FLOAT_KEYS:
            values[key] = float(value)
        else:
            values[key] = value
    return values


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    split: str
    srcc: float
    plcc: float
    mapped_plcc: float
    loss: float

    def csv_row(self) -> str:
        return (
            f"{self.epoch},{self.split},{_fmt(self.srcc)},{_fmt(self.plcc)},"
            f"{_fmt(self.mapped_plcc)},{_fmt(self.loss)}"
        )


@dataclass
class RunResult:
    records: list[EpochRecord]
    log_path: Path
    params_path: Path
    test_metrics: dict

    def split_records(self, split: str) -> list[EpochRecord]:
        return [r for r in self.records if r.split == split]


@dataclass
class ComparisonReport:
    """Final test SRCC/PLCC per variant, plus rendered outputs."""

    rows: dict[str, dict[str, float]]
    table_text: str
    csv_path: Path
    table_path: Path

    def __post_init__(self):
        if set(self.rows) != set(TRAIN_VARIANTS):
            raise ValueError(f"comparison needs exactly the variants {TRAIN_VARIANTS}")


def _fmt(v: float) -> str:
    return f"{v:.12g}"


def _child_seeds(seed: int, n: int = 8) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n)


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# -- scoring -------------------------------------------------------------------


def _evaluate_split(
    scores: np.ndarray, mos: np.ndarray, alpha: float, tau: float
) -> tuple[float, float, float, float]:
    """(srcc, plcc, mapped_plcc, loss) over one split's score/MOS pairs.

    The logistic remap needs >= 5 points and a well-posed fit; on tiny
    splits (or a non-converged fit) the raw PLCC stands in.
    """
    srcc_v = obj.srcc(scores, mos)
    with tk.no_grad():
        plcc_v = obj.plcc(scores, mos).item()
        loss_v = obj.total_loss(scores, mos, alpha, tau).item()
    try:
        _, mapped = obj.fit_logistic4(scores, mos)
    except obj.DegenerateInputError:
        mapped = plcc_v
    except obj.FitConvergenceError as e:
        mapped = e.mapped_plcc
    return srcc_v, plcc_v, mapped, loss_v


# -- feature cache -------------------------------------------------------------


def _extract_corpus_features(
    corpus: Path,
    records: Sequence[dat.ManifestRecord],
    spec2d: nets.NetworkSpec,
    params2d: nets.NetworkParams,
    spec3d: nets.NetworkSpec,
    params3d: nets.NetworkParams,
) -> dict[str, fu.FusedSequence]:
    features: dict[str, fu.FusedSequence] = {}
    with tk.no_grad():
        for rec in records:
            clip = dat.read_frames(corpus, rec)
            sharp = nets.extract_sharpness(spec2d, params2d, clip)
            motion = nets.extract_motion(spec3d, params3d, clip)
            features[rec.id] = fu.fuse(sharp, motion)
    return features


def _batches(ids: list[str], batch_size: int, rng: np.random.Generator) -> list[list[str]]:
    order = rng.permutation(len(ids))
    shuffled = [ids[i] for i in order]
    chunks = [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2].extend(chunks.pop())
    return chunks


# -- runs ----------------------------------------------------------------------


def synth_run(config: RunConfig) -> Path:
    """Generate the synthetic corpus named by the config; returns the
    manifest path.  Refuses to overwrite an existing manifest."""
    corpus = Path(config.corpus)
    if (corpus / "manifest.csv").exists():
        raise FileExistsError(f"corpus already exists: {corpus / 'manifest.csv'}")
    return dat.synth_corpus(
        corpus,
        n_clips=config.clips,
        frames_per_clip=config.frames,
        size=config.size,
        seed=config.seed,
    )


def train_run(config: RunConfig) -> RunResult:
    """Full training run; see the module docstring for the protocol."""
    config.validate_for_training()
    corpus = Path(config.corpus)
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = dat.load_manifest(corpus / "manifest.csv")
    seeds = _child_seeds(config.seed)
    assignment = dat.split(records, seed=_seed_int(seeds[0]))

    spec2d, params2d = nets.build_extractor(config.variant, config.scale, _seed_int(seeds[1]))
    spec3d, params3d = nets.build_extractor("slowfast3d", config.scale, _seed_int(seeds[2]))

    if config.variant == "sharpness2d":
        stills = dat.synth_stills(
            n_images=config.pretrain_images, size=config.size, seed=_seed_int(seeds[5])
        )
        nets.set_freeze(params2d, nets.last_two_stage_prefixes(spec2d))
        nets.pretrain_sharpness(
            spec2d,
            params2d,
            stills,
            epochs=config.pretrain_epochs,
            lr=config.pretrain_lr,
            head_seed=_seed_int(seeds[6]),
        )

    features = _extract_corpus_features(corpus, records, spec2d, params2d, spec3d, params3d)
    mos = {rec.id: rec.mos for rec in records}
    by_split = {
        name: [rec.id for rec in records if assignment[rec.id] == name]
        for name in ("train", "val", "test")
    }
    head = fu.build_head(spec2d.feature_width + spec3d.feature_width, _seed_int(seeds[3]))
    shuffle_rng = np.random.default_rng(seeds[4])

    def score_split(ids: list[str]) -> tuple[np.ndarray, np.ndarray]:
        with tk.no_grad():
            scores = fu.predict_batch([features[i] for i in ids], head).data
        return scores, np.array([mos[i] for i in ids])

    def eval_record(epoch: int, split_name: str) -> EpochRecord | None:
        # correlations need >= 2 clips; degenerate splits of a very small
        # corpus (e.g. 8 clips -> 5/2/1) are skipped rather than faked
        if len(by_split[split_name]) < 2:
            return None
        try:
            sc, ms = score_split(by_split[split_name])
            return EpochRecord(
                epoch, split_name, *_evaluate_split(sc, ms, config.alpha, config.tau)
            )
        except Exception as e:
            raise RuntimeError(
                f"evaluation failed at epoch {epoch} on split {split_name!r}: {e}"
            ) from e

    log: list[EpochRecord] = []
    for epoch in range(1, config.epochs + 1):
        for batch_ids in _batches(by_split["train"], config.batch_size, shuffle_rng):
            try:
                scores = fu.predict_batch([features[i] for i in batch_ids], head)
                loss = obj.total_loss(
                    scores, np.array([mos[i] for i in batch_ids]), config.alpha, config.tau
                )
                tk.zero_grads(head.parameters())
                tk.backward(loss)
                tk.sgd_step(head.parameters(), config.lr)
            except Exception as e:
                raise RuntimeError(
                    f"training failed at epoch {epoch}, batch {batch_ids}: {e}"
                ) from e
        for split_name in ("train", "val"):
            rec = eval_record(epoch, split_name)
            if rec is not None:
                log.append(rec)
    test_rec = eval_record(config.epochs, "test")
    if test_rec is not None:
        log.append(test_rec)

    log_path = out_dir / "epoch_log.csv"
    with open(log_path, "w", encoding="utf-8", newline="\n") as f:
        f.write(LOG_HEADER + "\n")
        for rec in log:
            f.write(rec.csv_row() + "\n")
    params_path = out_dir / "params.bin"
    save_params(params_path, config, spec2d, params2d, spec3d, params3d, head)
    test_metrics = (
        {}
        if test_rec is None
        else {
            "srcc": test_rec.srcc,
            "plcc": test_rec.plcc,
            "mapped_plcc": test_rec.mapped_plcc,
        }
    )
    return RunResult(log, log_path, params_path, test_metrics)


def eval_run(
    params_path: str | Path, corpus: str | Path, split_name: str, out: str | Path | None = None
) -> dict:
    """Score a saved model on one split of a corpus.

    The split assignment is re-derived from the seed stored in the params
    file, so it matches the training run that produced it.
    """
    if split_name not in ("train", "val", "test"):
        raise ValueError(f"split must be train/val/test, got {split_name!r}")
    loaded = load_params(params_path)
    corpus = Path(corpus)
    records = dat.load_manifest(corpus / "manifest.csv")
    seeds = _child_seeds(loaded["seed"])
    assignment = dat.split(records, seed=_seed_int(seeds[0]))
    ids = [rec.id for rec in records if assignment[rec.id] == split_name]
    if len(ids) < 2:
        raise ValueError(f"split {split_name!r} has {len(ids)} clips; need >= 2 to correlate")
    features = _extract_corpus_features(
        corpus,
        [rec for rec in records if rec.id in set(ids)],
        loaded["spec2d"],
        loaded["params2d"],
        loaded["spec3d"],
        loaded["params3d"],
    )
    with tk.no_grad():
        scores = fu.predict_batch([features[i] for i in ids], loaded["head"]).data
    mos = np.array([rec.mos for rec in records if rec.id in set(ids)])
    srcc_v, plcc_v, mapped, _ = _evaluate_split(scores, mos, alpha=0.5, tau=0.1)
    metrics = {"srcc": srcc_v, "plcc": plcc_v, "mapped_plcc": mapped}
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / f"eval_{split_name}.csv", "w", encoding="utf-8", newline="\n") as f:
            f.write("split,srcc,plcc,mapped_plcc\n")
            f.write(f"{split_name},{_fmt(srcc_v)},{_fmt(plcc_v)},{_fmt(mapped)}\n")
    return metrics


def compare_run(config: RunConfig) -> ComparisonReport:
    """Train both 2D variants under identical seeds and hyperparameters and
    report final test SRCC/PLCC side by side."""
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows: dict[str, dict[str, float]] = {}
    for variant in TRAIN_VARIANTS:
        sub = replace(config, variant=variant, out=str(out_dir / variant))
        result = train_run(sub)
        rows[variant] = {
            "srcc": result.test_metrics["srcc"],
            "plcc": result.test_metrics["plcc"],
        }
    width = 14
    lines = [
        f"{'criterion/model':<16}{'spatial2d':>{width}}{'sharpness2d':>{width}}",
        f"{'SRCC':<16}{rows['spatial2d']['srcc']:>{width}.4f}{rows['sharpness2d']['srcc']:>{width}.4f}",
        f"{'PLCC':<16}{rows['spatial2d']['plcc']:>{width}.4f}{rows['sharpness2d']['plcc']:>{width}.4f}",
        "",
        REFERENCE_FOOTNOTE,
    ]
    table_text = "\n".join(lines) + "\n"
    csv_path = out_dir / "comparison.csv"
    with open(csv_path, "w", encoding="utf-8", newline="\n") as f:
        f.write("variant,srcc,plcc\n")
        for variant in TRAIN_VARIANTS:
            f.write(f"{variant},{_fmt(rows[variant]['srcc'])},{_fmt(rows[variant]['plcc'])}\n")
    table_path = out_dir / "comparison.txt"
    table_path.write_text(table_text, encoding="utf-8")
    return ComparisonReport(rows, table_text, csv_path, table_path)


# -- parameter file ------------------------------------------------------------


def _topology_hash(spec2d: nets.NetworkSpec, spec3d: nets.NetworkSpec, head_width: int) -> bytes:
    blob = json.dumps(
        {"sharp": spec2d.describe(), "motion": spec3d.describe(), "head": head_width},
        sort_keys=True,
    ).encode("utf-8")
    return hashlib.sha256(blob).digest()[:8]


def save_params(
    path: str | Path,
    config: RunConfig,
    spec2d: nets.NetworkSpec,
    params2d: nets.NetworkParams,
    spec3d: nets.NetworkSpec,
    params3d: nets.NetworkParams,
    head: fu.QualityHead,
) -> None:
    """Write the model to a little-endian binary file.

    Layout: magic ``BVQP``, u32 version, 8-byte topology hash, u64 config
    seed, length-prefixed variant and scale strings, u32 tensor count, then
    per tensor: u16 name length + UTF-8 name, u8 frozen flag, u8 ndim,
    ndim x u32 extents, raw float64 data.
    """
    named: list[tuple[str, Tensor]] = []
    named.extend((f"sharp.{n}", t) for n, t in params2d.tensors.items())
    named.extend((f"motion.{n}", t) for n, t in params3d.tensors.items())
    named.append(("head.w", head.w))
    named.append(("head.b", head.b))
    with open(path, "wb") as f:
        f.write(_PARAMS_MAGIC)
        f.write(struct.pack("<I", _PARAMS_VERSION))
        f.write(_topology_hash(spec2d, spec3d, head.width))
        f.write(struct.pack("<Q", config.seed))
        for s in (config.variant, config.scale):
            raw = s.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
        f.write(struct.pack("<I", len(named)))
        for name, t in named:
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<BB", int(t.frozen), t.ndim))
            f.write(struct.pack(f"<{t.ndim}I", *t.shape))
            f.write(t.data.astype("<f8").tobytes())


def load_params(path: str | Path) -> dict:
    """Read a params file and rebuild specs, parameters, and head.

    Raises on bad magic or when the stored topology hash does not match the
    topology rebuilt from the stored variant and scale.
    """
    raw = Path(path).read_bytes()
    if raw[:4] != _PARAMS_MAGIC:
        raise ValueError(f"{path}: not a params file (magic {raw[:4]!r})")
    pos = 4
    (version,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if version != _PARAMS_VERSION:
        raise ValueError(f"{path}: unsupported params version {version}")
    stored_hash = raw[pos : pos + 8]
    pos += 8
    (seed,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    strings = []
    for _ in range(2):
        (n,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        strings.append(raw[pos : pos + n].decode("utf-8"))
        pos += n
    variant, scale = strings
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    arrays: dict[str, tuple[np.ndarray, bool]] = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos : pos + n].decode("utf-8")
        pos += n
        frozen, ndim = struct.unpack_from("<BB", raw, pos)
        pos += 2
        dims = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        size = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f8", count=size, offset=pos).reshape(dims).copy()
        pos += 8 * size
        arrays[name] = (arr, bool(frozen))

    spec2d, params2d = nets.build_extractor(variant, scale, seed=0)
    spec3d, params3d = nets.build_extractor("slowfast3d", scale, seed=0)
    head_w = arrays["head.w"][0]
    if _topology_hash(spec2d, spec3d, head_w.shape[0]) != stored_hash:
        raise ValueError(f"{path}: topology hash mismatch; params do not fit {variant}/{scale}")
    for prefix, params in (("sharp.", params2d), ("motion.", params3d)):
        for name, t in params.tensors.items():
            arr, frozen = arrays[prefix + name]
            if arr.shape != t.shape:
                raise ValueError(f"{path}: tensor {prefix + name} has shape {arr.shape}, want {t.shape}")
            t.data = arr
            t.frozen = frozen
    head = fu.QualityHead(
        Tensor(arrays["head.w"][0], requires_grad=True),
        Tensor(arrays["head.b"][0], requires_grad=True),
    )
    return {
        "variant": variant,
        "scale": scale,
        "seed": int(seed),
        "spec2d": spec2d,
        "params2d": params2d,
        "spec3d": spec3d,
        "params3d": params3d,
        "head": head,
    }
