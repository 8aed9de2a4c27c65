"""Shared fixtures: one tiny labeled corpus and its splits."""

import pytest

from awelab import corpus as cp


@pytest.fixture(scope="session")
def tiny_spec():
    return cp.SynthSpec(
        seed=1,
        languages=(cp.LanguageSpec("lang0", 8),),
        speakers_per_language=4,
        tokens_per_type=10,
        noise_sigma=0.3,
        speaker_offset_sigma=0.2,
        phones_per_word_range=(2, 4),
        frames_per_phone_range=(2, 8),
        phone_count=10,
    )


@pytest.fixture(scope="session")
def tiny_corpus(tiny_spec):
    return cp.generate_synthetic_corpus(tiny_spec)


@pytest.fixture(scope="session")
def tiny_normalized(tiny_corpus):
    return cp.speaker_normalize(tiny_corpus)


@pytest.fixture(scope="session")
def tiny_splits(tiny_normalized):
    # fractions chosen so the dev and test parts both hold same-word
    # different-speaker pairs (the AP metric needs at least one)
    return cp.split_corpus(tiny_normalized, (0.6, 0.2, 0.2), seed=0)


@pytest.fixture(scope="session")
def topic_spec():
    return cp.SynthSpec(
        seed=5,
        languages=(cp.LanguageSpec("lang0", 12),),
        speakers_per_language=4,
        tokens_per_type=18,
        noise_sigma=0.3,
        speaker_offset_sigma=0.2,
        phones_per_word_range=(2, 4),
        frames_per_phone_range=(2, 8),
        phone_count=10,
        topic_count=3,
    )


@pytest.fixture(scope="session")
def topic_corpus(topic_spec):
    return cp.speaker_normalize(cp.generate_synthetic_corpus(topic_spec))
