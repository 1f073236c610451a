"""
Utterance samples, feature-file ingestion, a synthetic two-domain corpus,
the stratified split protocol and the class/domain-balanced batch sampler.
"""

import csv
import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, IngestionError, SplitError

EMOTIONS = ("Angry", "Sad", "Happy", "Neutral")
ANGRY, SAD, HAPPY, NEUTRAL = range(4)
DOMAINS = ("Source", "Target")
SOURCE, TARGET = 0, 1
ELICITATION_TAGS = ("NI", "OI", "TI", "TR", "SYNTH_A", "SYNTH_B")

FEATURE_MAGIC = b"EDF1"
MANIFEST_HEADER = ["id", "domain", "emotion", "elicitation", "acoustic_path", "visual_path"]

# Per-class utterance counts by elicitation tag (Angry, Sad, Happy, Neutral).
MSP_IMPROV_COUNTS = {
    "NI": (38, 66, 1372, 1164),
    "OI": (470, 633, 1048, 1789),
    "TI": (115, 106, 136, 283),
    "TR": (169, 80, 88, 241),
}


@dataclass(eq=False)
class UtteranceSample:
    id: str
    acoustic: np.ndarray  # [T_a, acoustic_dim]; 40 Mel-filter bank coefficients + energy
    visual: np.ndarray  # [T_v, visual_dim] face embeddings
    emotion: int
    domain: int
    elicitation_tag: str = "SYNTH_A"

    def __post_init__(self):
        self.acoustic = np.asarray(self.acoustic, dtype=np.float64)
        self.visual = np.asarray(self.visual, dtype=np.float64)
        if self.acoustic.ndim != 2 or self.visual.ndim != 2:
            raise ValueError(f"sample {self.id}: features must be 2-D [frames, dims]")
        if self.visual.shape[0] < 1:
            raise ValueError(f"sample {self.id}: empty visual sequence")
        if self.emotion not in range(len(EMOTIONS)):
            raise ValueError(f"sample {self.id}: emotion {self.emotion} out of range")
        if self.domain not in (SOURCE, TARGET):
            raise ValueError(f"sample {self.id}: domain {self.domain} out of range")
        if self.elicitation_tag not in ELICITATION_TAGS:
            raise ValueError(f"sample {self.id}: unknown elicitation tag {self.elicitation_tag!r}")

    def with_domain(self, domain):
        return UtteranceSample(self.id, self.acoustic, self.visual, self.emotion, domain, self.elicitation_tag)

    def same_as(self, other):
        return (self.id == other.id and self.emotion == other.emotion and self.domain == other.domain
                and self.elicitation_tag == other.elicitation_tag
                and self.acoustic.shape == other.acoustic.shape and self.visual.shape == other.visual.shape
                and self.acoustic.tobytes() == other.acoustic.tobytes()
                and self.visual.tobytes() == other.visual.tobytes())


# ---------------------------------------------------------------- feature files

def write_features(path, array):
    array = np.ascontiguousarray(array, dtype="<f8")
    if array.ndim != 2:
        raise ValueError(f"feature arrays must be 2-D, got shape {array.shape}")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", *array.shape))
        fh.write(array.tobytes())


def read_features(path):
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IngestionError(f"{path}: cannot read feature file ({exc.strerror})") from exc
    if blob[:4] != FEATURE_MAGIC:
        raise IngestionError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 12:
        raise IngestionError(f"{path}: truncated header")
    rows, cols = struct.unpack_from("<II", blob, 4)
    if len(blob) - 12 != 8 * rows * cols:
        raise IngestionError(f"{path}: header says {rows}x{cols} but file holds {(len(blob) - 12) // 8} values")
    return np.frombuffer(blob, dtype="<f8", offset=12).reshape(rows, cols).astype(np.float64)


def _parse_enum(value, names, what):
    value = value.strip()
    if value.isdigit():
        idx = int(value)
        if idx < len(names):
            return idx
    lowered = [n.lower() for n in names]
    if value.lower() in lowered:
        return lowered.index(value.lower())
    raise ValueError(f"unknown {what} {value!r}")


def save_samples(samples, directory, manifest_name="manifest.csv"):
    """Write each sample's features plus a manifest; returns the manifest path."""
    feat_dir = os.path.join(directory, "features")
    os.makedirs(feat_dir, exist_ok=True)
    manifest = os.path.join(directory, manifest_name)
    with open(manifest, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for s in samples:
            a_rel = os.path.join("features", f"{s.id}.acoustic.edf")
            v_rel = os.path.join("features", f"{s.id}.visual.edf")
            write_features(os.path.join(directory, a_rel), s.acoustic)
            write_features(os.path.join(directory, v_rel), s.visual)
            writer.writerow([s.id, DOMAINS[s.domain], EMOTIONS[s.emotion], s.elicitation_tag, a_rel, v_rel])
    return manifest


def load_manifest(path, acoustic_dim=None, visual_dim=None):
    """Read a manifest CSV; feature paths are relative to the manifest's directory."""
    base = os.path.dirname(os.path.abspath(path))
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise IngestionError(f"{path}: cannot open manifest ({exc.strerror})") from exc
    samples = []
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise IngestionError(f"{path}: expected header {','.join(MANIFEST_HEADER)}, got {header}")
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                if len(row) != len(MANIFEST_HEADER):
                    raise ValueError(f"expected {len(MANIFEST_HEADER)} fields, got {len(row)}")
                sid, domain, emotion, tag, a_path, v_path = row
                acoustic = read_features(os.path.join(base, a_path))
                visual = read_features(os.path.join(base, v_path))
                for arr, dim, what in ((acoustic, acoustic_dim, "acoustic"), (visual, visual_dim, "visual")):
                    if dim is not None and arr.shape[1] != dim:
                        raise ValueError(f"{what} features have {arr.shape[1]} columns, expected {dim}")
                samples.append(UtteranceSample(
                    sid, acoustic, visual, _parse_enum(emotion, EMOTIONS, "emotion"),
                    _parse_enum(domain, DOMAINS, "domain"), tag.strip()))
            except (ValueError, IngestionError) as exc:
                raise IngestionError(f"{path}, row {row_no}: {exc}") from exc
    return samples


def count_by_tag(samples):
    """``{tag: [count per emotion]}``, the layout of the per-category utterance table."""
    out = {}
    for s in samples:
        out.setdefault(s.elicitation_tag, [0] * len(EMOTIONS))[s.emotion] += 1
    return out


# ---------------------------------------------------------------- synthetic corpus

@dataclass
class SynthConfig:
    acoustic_dim: int = 41
    visual_dim: int = 512
    source_counts: tuple = (100, 100, 100, 100)
    target_counts: tuple = (100, 100, 100, 100)
    class_separation: float = 1.5
    happy_angry_similarity: float = 0.6  # 0 = independent means, 1 = identical
    domain_shift: float = 3.0  # norm of the target-domain offset
    noise: float = 1.0  # stationary per-frame std
    rho: float = 0.5  # AR(1) coefficient of the frame noise
    acoustic_length: tuple = (24, 40)
    visual_length: tuple = (4, 10)
    domain_overlap_fraction: float = 0.0  # target samples drawn without the shift
    seed: int = 0
    source_tag: str = "SYNTH_A"
    target_tag: str = "SYNTH_B"

    def __post_init__(self):
        self.source_counts = tuple(int(c) for c in self.source_counts)
        self.target_counts = tuple(int(c) for c in self.target_counts)
        self.acoustic_length = tuple(int(c) for c in self.acoustic_length)
        self.visual_length = tuple(int(c) for c in self.visual_length)
        if len(self.source_counts) != len(EMOTIONS) or len(self.target_counts) != len(EMOTIONS):
            raise ConfigError(f"counts need one entry per emotion ({len(EMOTIONS)})")
        if min(self.source_counts + self.target_counts) < 1:
            raise ConfigError("every class needs at least one sample per domain")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError(f"rho must be in [0, 1), got {self.rho}")
        if not 0.0 <= self.domain_overlap_fraction <= 1.0:
            raise ConfigError("domain_overlap_fraction must be in [0, 1]")
        for lo, hi in (self.acoustic_length, self.visual_length):
            if not 1 <= lo <= hi:
                raise ConfigError(f"invalid length range ({lo}, {hi})")

    @classmethod
    def small(cls, **overrides):
        base = dict(acoustic_dim=8, visual_dim=16)
        base.update(overrides)
        return cls(**base)


def _class_means(rng, dim, separation, similarity):
    means = rng.standard_normal((len(EMOTIONS), dim))
    means[HAPPY] = similarity * means[ANGRY] + (1.0 - similarity) * means[HAPPY]
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True).mean()
    return means


def _ar1(rng, mean, length, noise, rho):
    out = np.empty((length, mean.shape[0]))
    dev = noise * rng.standard_normal(mean.shape[0])
    innovation = noise * math.sqrt(1.0 - rho * rho)
    for t in range(length):
        if t:
            dev = rho * dev + innovation * rng.standard_normal(mean.shape[0])
        out[t] = mean + dev
    return out


def generate_synthetic(cfg):
    """
    Two-domain corpus of AR(1) feature sequences around per-class means.

    Frame t of a class-k sample in the target domain is
    mu_k + delta + rho * (x_{t-1} - mu_k - delta) + eps_t; source samples
    have no delta.  The Happy mean is pulled toward the Angry mean so the
    classes carry a similarity structure.  Deterministic in ``cfg.seed``.
    """
    rng = np.random.default_rng(cfg.seed)
    mu_a = _class_means(rng, cfg.acoustic_dim, cfg.class_separation, cfg.happy_angry_similarity)
    mu_v = _class_means(rng, cfg.visual_dim, cfg.class_separation, cfg.happy_angry_similarity)
    delta_a = rng.standard_normal(cfg.acoustic_dim)
    delta_a *= cfg.domain_shift / np.linalg.norm(delta_a)
    delta_v = rng.standard_normal(cfg.visual_dim)
    delta_v *= cfg.domain_shift / np.linalg.norm(delta_v)

    samples = []
    for domain, counts, tag in ((SOURCE, cfg.source_counts, cfg.source_tag),
                                (TARGET, cfg.target_counts, cfg.target_tag)):
        for emotion, count in enumerate(counts):
            for i in range(count):
                shifted = domain == TARGET and rng.random() >= cfg.domain_overlap_fraction
                t_a = int(rng.integers(cfg.acoustic_length[0], cfg.acoustic_length[1] + 1))
                t_v = int(rng.integers(cfg.visual_length[0], cfg.visual_length[1] + 1))
                acoustic = _ar1(rng, mu_a[emotion] + (delta_a if shifted else 0.0), t_a, cfg.noise, cfg.rho)
                visual = _ar1(rng, mu_v[emotion] + (delta_v if shifted else 0.0), t_v, cfg.noise, cfg.rho)
                sid = f"{tag.lower()}_{EMOTIONS[emotion].lower()}_{i:05d}"
                samples.append(UtteranceSample(sid, acoustic, visual, emotion, domain, tag))
    return samples


# ---------------------------------------------------------------- splits

@dataclass
class SplitSpec:
    target_train_fraction: float = 0.10
    target_dev_fraction: float = 0.40
    target_eval_fraction: float = 0.50
    run_index: int = 0
    seed: int = 0

    def __post_init__(self):
        fr = (self.target_train_fraction, self.target_dev_fraction, self.target_eval_fraction)
        if min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise SplitError(f"split fractions must be positive and sum to 1, got {fr}")
        max_runs = int(math.floor(1.0 / self.target_train_fraction + 1e-9))
        if not 0 <= self.run_index < max_runs:
            raise SplitError(f"run_index must be in [0, {max_runs}) for disjoint training subsets")


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def _quotas(counts, fraction):
    """Largest-remainder allocation of round(fraction * N) across classes."""
    counts = np.asarray(counts)
    total = _round_half_up(fraction * counts.sum())
    exact = fraction * counts
    base = np.floor(exact).astype(int)
    order = sorted(range(len(counts)), key=lambda c: (-(exact[c] - base[c]), c))
    for c in order[:total - base.sum()]:
        base[c] += 1
    return base


def make_splits(target_samples, spec):
    """
    Stratified (train, dev, eval) split of the target pool for one run.

    Every run shares one fixed per-class permutation and takes its training
    slice at offset ``run_index``, so the training subsets of different runs
    never overlap.  Dev and eval are redrawn per run from the remainder.
    """
    labels = np.array([s.emotion for s in target_samples])
    classes = np.unique(labels)
    by_class = {c: np.flatnonzero(labels == c) for c in classes}
    counts = [len(by_class[c]) for c in classes]
    train_q = _quotas(counts, spec.target_train_fraction)
    dev_q = _quotas(counts, spec.target_dev_fraction)

    fixed = np.random.default_rng(spec.seed)
    per_run = np.random.default_rng([spec.seed, spec.run_index + 1])
    train, dev, evaluation = [], [], []
    for c, n, t_q, d_q in zip(classes, counts, train_q, dev_q):
        if t_q < 1 or d_q < 1 or n - t_q - d_q < 1:
            raise SplitError(f"emotion class {EMOTIONS[c]} has {n} samples; too few to stratify into every split")
        if (spec.run_index + 1) * t_q > n:
            raise SplitError(f"emotion class {EMOTIONS[c]} is too small for {spec.run_index + 1} disjoint runs")
        perm = by_class[c][fixed.permutation(n)]
        lo = spec.run_index * t_q
        train.extend(perm[lo:lo + t_q])
        rest = np.concatenate([perm[:lo], perm[lo + t_q:]])
        rest = rest[per_run.permutation(len(rest))]
        dev.extend(rest[:d_q])
        evaluation.extend(rest[d_q:])
    pick = lambda idx: [target_samples[i] for i in sorted(idx)]
    return pick(train), pick(dev), pick(evaluation)


# ---------------------------------------------------------------- sampler

def _inverse_frequency(labels):
    labels = np.asarray(labels)
    counts = np.bincount(labels)
    w = 1.0 / counts[labels]
    return w / w.sum()


class BalancedSampler:
    """
    Index sampler: half of each batch from the source pool, half from the
    target pool, each half drawn with replacement with probability
    proportional to 1 / (size of the sample's emotion class in its pool).
    Without a target pool every slot is drawn from the source pool.
    """

    def __init__(self, source_labels, target_labels, batch_size, seed):
        if batch_size < 2 or batch_size % 2:
            raise ConfigError(f"batch_size must be a positive even number, got {batch_size}")
        if len(source_labels) == 0:
            raise ConfigError("source pool is empty")
        if target_labels is not None and len(target_labels) == 0:
            raise ConfigError("target pool is empty")
        self.batch_size = batch_size
        self.source_p = _inverse_frequency(source_labels)
        self.target_p = None if target_labels is None else _inverse_frequency(target_labels)
        self.rng = np.random.default_rng(seed)
        self.epoch_batches = math.ceil(len(source_labels) / (batch_size // 2))

    def draw(self):
        half = self.batch_size // 2
        if self.target_p is None:
            return self.rng.choice(len(self.source_p), size=self.batch_size, p=self.source_p), np.array([], int)
        src = self.rng.choice(len(self.source_p), size=half, p=self.source_p)
        tgt = self.rng.choice(len(self.target_p), size=half, p=self.target_p)
        return src, tgt

    def batches(self, num_batches=None):
        for _ in range(self.epoch_batches if num_batches is None else num_batches):
            yield self.draw()


def balanced_batches(source, target_train, batch_size, seed, num_batches=None):
    """Yield lists of samples: source half first, then target half."""
    sampler = BalancedSampler([s.emotion for s in source],
                              None if target_train is None else [s.emotion for s in target_train],
                              batch_size, seed)
    for src, tgt in sampler.batches(num_batches):
        yield [source[i] for i in src] + [target_train[i] for i in tgt]
