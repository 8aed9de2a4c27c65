"""Flat key=value experiment configuration.

A config file is UTF-8 text, one `key = value` per line, `#` comments and
blank lines ignored. Keys not in the schema are rejected. Loading overlays
the file on the full default table, so a resolved copy written next to a
run's outputs pins every knob and reproduces the run exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .corpus import LanguageSpec, SynthSpec
from .neuralnet import TrainConfig
from .retrieval import SegmentationParams


class ConfigError(Exception):
    pass


# key -> (type tag, default); bools ride as 0/1 ints
SCHEMA = {
    "data.seed": ("int", 0),
    "data.phone_count": ("int", 20),
    "data.phone_dim": ("int", 13),
    "data.languages": ("str", "lang0:12:inv0:0.0"),
    "data.speakers_per_language": ("int", 4),
    "data.tokens_per_type": ("int", 10),
    "data.frames_per_phone_min": ("int", 2),
    "data.frames_per_phone_max": ("int", 5),
    "data.phones_per_word_min": ("int", 3),
    "data.phones_per_word_max": ("int", 6),
    "data.noise_sigma": ("float", 0.3),
    "data.speaker_offset_sigma": ("float", 0.5),
    "data.words_per_utterance_min": ("int", 4),
    "data.words_per_utterance_max": ("int", 9),
    "data.topic_count": ("int", 0),
    "data.normalize": ("int", 1),
    "data.strip_labels": ("int", 0),
    "data.split": ("str", "0.8,0.1,0.1"),
    "data.split_seed": ("int", 0),
    "train.learning_rate": ("float", 0.001),
    "train.batch_size": ("int", 300),
    "train.margin": ("float", 0.25),
    "train.temperature": ("float", 0.1),
    "train.epochs": ("int", 5),
    "train.seed": ("int", 0),
    "train.negatives_per_positive": ("int", 20),
    "train.ae_pretrain_epochs": ("int", 10),
    "train.patience": ("int", 5),
    "train.hidden_size": ("int", 400),
    "train.embedding_size": ("int", 130),
    "train.rnn_layers": ("int", 3),
    "train.pair_cap": ("int", 0),
    "train.adapt_learning_rate": ("float", 0.0),
    "seg.min_len": ("int", 20),
    "seg.max_len": ("int", 60),
    "seg.start_stride": ("int", 3),
    "seg.len_stride": ("int", 5),
    "semantics.context_window": ("int", 3),
    "semantics.clusters": ("int", 12),
    "semantics.cluster_restarts": ("int", 50),
    "semantics.sigma": ("float", 0.01),
    "semantics.soft_mode": ("str", "distance"),
    "semantics.skipgram_dim": ("int", 100),
    "semantics.skipgram_epochs": ("int", 40),
    "semantics.skipgram_lr": ("float", 0.025),
    "semantics.projection_hidden": ("int", 1024),
    "semantics.projection_activation": ("str", "relu"),
    "kws.tune_mode": ("str", "global"),
    "kws.top_k": ("int", 100),
    "kws.templates_per_keyword": ("int", 3),
    "eval.scorer": ("str", "cosine"),
    "eval.wordsim_draws": ("int", 10),
    "flow.name": ("str", ""),
    "flow.seed": ("int", 0),
}


@dataclass
class ExperimentConfig:
    values: dict

    def get(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise ConfigError(f"unknown config key {key!r}") from None

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        merged = dict(self.values)
        for key, value in overrides.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = _coerce(key, value)
        return ExperimentConfig(values=merged)


def _coerce(key, value):
    tag = SCHEMA[key][0]
    try:
        if tag == "int":
            return int(str(value).strip())
        if tag == "float":
            return float(str(value).strip())
        return str(value).strip()
    except ValueError:
        raise ConfigError(f"bad {tag} value for {key!r}: {value!r}") from None


def default_config() -> ExperimentConfig:
    return ExperimentConfig(values={key: default for key, (_, default) in SCHEMA.items()})


def parse_config_text(text) -> dict:
    out = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {line_no}: expected key = value")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"line {line_no}: unknown config key {key!r}")
        if key in out:
            raise ConfigError(f"line {line_no}: duplicate key {key!r}")
        out[key] = _coerce(key, value)
    return out


def load_config(path) -> ExperimentConfig:
    values = dict(default_config().values)
    values.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
    return ExperimentConfig(values=values)


def write_resolved(config: ExperimentConfig, path) -> None:
    lines = []
    for key in sorted(config.values):
        value = config.values[key]
        text = repr(value) if isinstance(value, float) else str(value)
        lines.append(f"{key} = {text}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# builders


def parse_languages(value: str) -> tuple:
    """Parse the data.languages string: comma-separated entries of
    name:vocab_size[:inventory[:shared_fraction]]."""
    specs = []
    for entry in value.split(","):
        parts = entry.strip().split(":")
        if len(parts) < 2 or len(parts) > 4:
            raise ConfigError(f"bad language entry {entry!r}")
        name = parts[0]
        try:
            vocab = int(parts[1])
            inventory = parts[2] if len(parts) > 2 else "inv0"
            shared = float(parts[3]) if len(parts) > 3 else 0.0
        except ValueError:
            raise ConfigError(f"bad language entry {entry!r}") from None
        specs.append(LanguageSpec(name, vocab, inventory, shared))
    return tuple(specs)


def synth_spec_from(config: ExperimentConfig) -> SynthSpec:
    g = config.get
    return SynthSpec(
        seed=g("data.seed"),
        phone_count=g("data.phone_count"),
        phone_dim=g("data.phone_dim"),
        languages=parse_languages(g("data.languages")),
        speakers_per_language=g("data.speakers_per_language"),
        tokens_per_type=g("data.tokens_per_type"),
        frames_per_phone_range=(g("data.frames_per_phone_min"), g("data.frames_per_phone_max")),
        phones_per_word_range=(g("data.phones_per_word_min"), g("data.phones_per_word_max")),
        noise_sigma=g("data.noise_sigma"),
        speaker_offset_sigma=g("data.speaker_offset_sigma"),
        words_per_utterance_range=(g("data.words_per_utterance_min"), g("data.words_per_utterance_max")),
        topic_count=g("data.topic_count"),
    )


def train_config_from(config: ExperimentConfig, **overrides) -> TrainConfig:
    g = config.get
    kwargs = dict(
        learning_rate=g("train.learning_rate"),
        batch_size=g("train.batch_size"),
        margin=g("train.margin"),
        temperature=g("train.temperature"),
        epochs=g("train.epochs"),
        seed=g("train.seed"),
        negatives_per_positive=g("train.negatives_per_positive"),
        ae_pretrain_epochs=g("train.ae_pretrain_epochs"),
        patience=g("train.patience"),
        hidden_size=g("train.hidden_size"),
        embedding_size=g("train.embedding_size"),
        rnn_layers=g("train.rnn_layers"),
    )
    kwargs.update(overrides)
    return TrainConfig(**kwargs)


def segmentation_from(config: ExperimentConfig) -> SegmentationParams:
    g = config.get
    return SegmentationParams(
        min_len=g("seg.min_len"),
        max_len=g("seg.max_len"),
        start_stride=g("seg.start_stride"),
        len_stride=g("seg.len_stride"),
    )


def parse_split(value: str):
    parts = value.split(",")
    if len(parts) != 3:
        raise ConfigError(f"bad split {value!r}: need three comma-separated fractions")
    try:
        fractions = tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"bad split {value!r}") from None
    return fractions
