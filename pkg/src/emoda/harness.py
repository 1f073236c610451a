"""
Experiment orchestration: config files, data resolution, the modes x runs
grid, and the on-disk layout of every result.

Config files hold ``key=value`` lines (``#`` starts a comment).  Keys form
one flat namespace over the fields of TrainConfig, ModelConfig, SynthConfig
and ExperimentSpec; a key shared by several of them (``seed``,
``acoustic_dim``, ``visual_dim``) sets every one, while the qualified form
``synth.seed`` targets a single section and wins over the plain key.
"""

import json
import logging
import os
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .data import (SOURCE, TARGET, SplitSpec, SynthConfig, generate_synthetic, load_manifest, make_splits)
from .errors import ConfigError
from .metrics import aggregate, evaluate, write_run_json, write_summary_csv
from .model import ModelBundle, ModelConfig, save_bundle
from .trainer import MODES, TrainConfig, domain_probe_auc, train

log = logging.getLogger(__name__)

MODE_LABELS = {
    "source_only": "Source only",
    "source_plus_target": "Source + Target",
    "adversarial": "Domain adversarial loss only",
    "adversarial_softlabel": "Domain adversarial loss + softlabel loss",
}

# Published mean (std) UAR on MSP-IMPROV, shipped as documentation only.
REFERENCE_UAR = {
    ("NI+OI", "TR"): {"source_only": (0.5005, 0.021), "source_plus_target": (0.5837, 0.031),
                      "adversarial": (0.6225, 0.018), "adversarial_softlabel": (0.6339, 0.023)},
    ("NI+OI", "TI"): {"source_only": (0.7330, 0.020), "source_plus_target": (0.7288, 0.034),
                      "adversarial": (0.7002, 0.007), "adversarial_softlabel": (0.7092, 0.022)},
    ("TI+TR", "NI"): {"source_only": (0.4296, 0.028), "source_plus_target": (0.4440, 0.032),
                      "adversarial": (0.4601, 0.013), "adversarial_softlabel": (0.4653, 0.023)},
    ("TI+TR", "OI"): {"source_only": (0.5499, 0.010), "source_plus_target": (0.5886, 0.010),
                      "adversarial": (0.5904, 0.024), "adversarial_softlabel": (0.5920, 0.017)},
}


@dataclass
class ExperimentSpec:
    source_tags: tuple = ("SYNTH_A",)
    target_tag: str = "SYNTH_B"
    modes: tuple = MODES
    runs: int = 5
    data: str = ""  # manifest path; empty means generate the synthetic corpus
    experiment: str = "synthetic"
    probe: bool = False
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        self.source_tags = tuple(self.source_tags)
        self.modes = tuple(self.modes)
        if self.target_tag in self.source_tags:
            raise ConfigError(f"target tag {self.target_tag} is also a source tag")
        if self.runs < 1:
            raise ConfigError(f"runs must be >= 1, got {self.runs}")
        unknown = [m for m in self.modes if m not in MODES]
        if unknown:
            raise ConfigError(f"unknown modes {unknown}; valid modes are {list(MODES)}")


_SECTIONS = {"train": TrainConfig, "model": ModelConfig, "synth": SynthConfig}
_SPEC_KEYS = [f.name for f in fields(ExperimentSpec) if f.name not in _SECTIONS]


def valid_keys():
    """Plain field names plus ``section.field`` forms (e.g. ``synth.seed``) for disambiguation."""
    keys = set(_SPEC_KEYS)
    for section, cls in _SECTIONS.items():
        keys.update(f.name for f in fields(cls))
        keys.update(f"{section}.{f.name}" for f in fields(cls))
    return sorted(keys)


def read_config(path):
    """Parse a ``key=value`` file into a dict of raw strings."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    return parse_config(text, path)


def parse_config(text, origin="<config>"):
    values = {}
    allowed = set(valid_keys())
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{n}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in allowed:
            raise ConfigError(f"{origin}:{n}: unknown key {key!r}; valid keys: {', '.join(sorted(allowed))}")
        values[key] = value
    return values


def _convert(raw, default, name):
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(s) for s in items)
            return tuple(items)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def _apply(obj, values, section=None):
    changes = {}
    for f in fields(obj):
        if f.name in _SECTIONS and section is None:
            continue
        raw = values.get(f"{section}.{f.name}", values.get(f.name)) if section else values.get(f.name)
        if raw is not None:
            changes[f.name] = _convert(raw, getattr(obj, f.name), f.name)
    return replace(obj, **changes) if changes else obj


def build_spec(values, base=None):
    """ExperimentSpec from raw config values, layered over ``base`` (or the synthetic defaults)."""
    base = base or synthetic_benchmark_spec()
    sections = {name: _apply(getattr(base, name), values, name) for name in _SECTIONS}
    return _apply(replace(base, **sections), values)


def synthetic_benchmark_spec(**train_overrides):
    """Default shifted synthetic benchmark: dims 8/16, 400 + 400 samples, reduced model."""
    train_cfg = replace(TrainConfig(epochs=30, warmup_epochs=5), **train_overrides)
    return ExperimentSpec(
        train=train_cfg,
        model=ModelConfig.small(),
        synth=SynthConfig.small(source_counts=(100, 100, 100, 100), target_counts=(100, 100, 100, 100)),
        probe=True,
    )


def dump_spec(spec):
    shared = {}
    for cls in _SECTIONS.values():
        for f in fields(cls):
            shared[f.name] = shared.get(f.name, 0) + 1
    lines = ["# experiment configuration snapshot"]
    for f in fields(spec):
        if f.name not in _SECTIONS:
            lines.append(f"{f.name}={_fmt(getattr(spec, f.name))}")
    for name in _SECTIONS:
        section = getattr(spec, name)
        lines.append(f"# {name}")
        for f in fields(section):
            key = f"{name}.{f.name}" if shared[f.name] > 1 else f.name
            lines.append(f"{key}={_fmt(getattr(section, f.name))}")
    return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def load_samples(spec):
    if spec.data:
        samples = load_manifest(spec.data, spec.model.acoustic_dim, spec.model.visual_dim)
    else:
        samples = generate_synthetic(spec.synth)
    source = [s.with_domain(SOURCE) for s in samples if s.elicitation_tag in spec.source_tags]
    target = [s.with_domain(TARGET) for s in samples if s.elicitation_tag == spec.target_tag]
    if not source or not target:
        raise ConfigError(f"no samples for source tags {spec.source_tags} or target tag {spec.target_tag}")
    return source, target


@dataclass
class RunOutcome:
    mode: str
    run: int
    metrics: object
    log: object
    probe_accuracy: float = float("nan")


def run_single(spec, source, target, mode, run, out_dir=None):
    """Train and evaluate one (mode, run) cell; write its artifacts under ``out_dir``."""
    train_t, dev_t, eval_t = make_splits(target, SplitSpec(run_index=run, seed=spec.train.seed))
    cfg = replace(spec.train, mode=mode, seed=spec.train.seed + run)
    model = ModelBundle(spec.model, seed=cfg.seed)
    best, train_log = train(model, source, train_t, dev_t, cfg)
    metrics = evaluate(model, eval_t)
    probe = domain_probe_auc(model, source, eval_t, seed=cfg.seed) if spec.probe else float("nan")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        save_bundle(model, os.path.join(out_dir, "checkpoint"), best)
        train_log.write_csv(os.path.join(out_dir, "train_log.csv"))
        if train_log.softlabel_table is not None:
            train_log.softlabel_table.save(os.path.join(out_dir, "softlabel.txt"))
        extra = {"experiment": spec.experiment, "mode": mode, "run": run,
                 "selected_epoch": train_log.selected_epoch,
                 "split_sizes": [len(train_t), len(dev_t), len(eval_t)]}
        if spec.probe:
            extra["probe_accuracy"] = probe
        write_run_json(os.path.join(out_dir, "metrics.json"), metrics, **extra)
    log.info("%s run %d: eval UAR %.4f", mode, run, metrics.uar)
    return RunOutcome(mode, run, metrics, train_log, probe)


def run_experiment(spec, out_dir=None):
    """
    Run every mode x run cell and aggregate per mode.

    Returns ``{mode: (AggregateMetrics, [RunOutcome, ...])}``.  With
    ``out_dir`` the config snapshot, per-run logs/checkpoints/metrics, the
    metrics CSV, ``summary.json`` and ``summary.txt`` are written there.
    """
    source, target = load_samples(spec)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.cfg"), "w", encoding="utf-8") as fh:
            fh.write(dump_spec(spec))
    results = {}
    for mode in spec.modes:
        outcomes = []
        for run in range(spec.runs):
            run_dir = os.path.join(out_dir, mode, f"run{run}") if out_dir else None
            outcomes.append(run_single(spec, source, target, mode, run, run_dir))
        results[mode] = (aggregate([o.metrics for o in outcomes]), outcomes)
    if out_dir:
        write_summary_csv(os.path.join(out_dir, "metrics.csv"),
                          [(spec.experiment, m, o.run, o.metrics) for m, (_, outs) in results.items() for o in outs])
        with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
            json.dump(summary_dict(spec, results), fh, indent=2)
            fh.write("\n")
        with open(os.path.join(out_dir, "summary.txt"), "w", encoding="utf-8") as fh:
            fh.write(summary_table(spec, results))
    return results


def summary_dict(spec, results):
    out = {"experiment": spec.experiment, "source_tags": list(spec.source_tags), "target_tag": spec.target_tag,
           "modes": {}}
    for mode, (agg, outcomes) in results.items():
        entry = {"mean_uar": agg.mean_uar, "std_uar": agg.std_uar, "runs": [o.metrics.uar for o in outcomes]}
        if spec.probe:
            entry["probe_accuracy"] = [o.probe_accuracy for o in outcomes]
            entry["mean_probe_accuracy"] = float(np.mean(entry["probe_accuracy"]))
        out["modes"][mode] = entry
    return out


def summary_table(spec, results):
    title = f"{'+'.join(spec.source_tags)} -> {spec.target_tag}"
    width = max(len(v) for v in MODE_LABELS.values())
    lines = [f"Mean (std) of 4-class unweighted average recall, {spec.runs} run(s): {title}", ""]
    header = f"{'Experiment':<{width}}  {'UAR':>16}"
    if spec.probe:
        header += f"  {'domain probe acc':>16}"
    lines += [header, "-" * len(header)]
    for mode, (agg, outcomes) in results.items():
        row = f"{MODE_LABELS[mode]:<{width}}  {agg.mean_uar:.4f} ({agg.std_uar:.3f})".ljust(width + 18)
        if spec.probe:
            row += f"  {np.mean([o.probe_accuracy for o in outcomes]):>16.4f}"
        lines.append(row)
    lines += ["", "Published reference values on MSP-IMPROV (documentation only; not reproduced here):"]
    for (src, tgt), rows in REFERENCE_UAR.items():
        lines.append(f"  {src} -> {tgt}")
        for mode, (mean, std) in rows.items():
            lines.append(f"    {MODE_LABELS[mode]:<{width}}  {mean:.4f} ({std:.3f})")
    return "\n".join(lines) + "\n"
