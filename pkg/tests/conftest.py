import pytest

from boter.bootstrap import CycleConfig
from boter.learner import TrainConfig
from boter.synthetic import SyntheticSpec, generate_synthetic, split_dataset


@pytest.fixture(scope="session")
def mini_benchmark():
    """Small synthetic bundle shared by module tests."""
    spec = SyntheticSpec(rng_seed=5, n_samples=40, corpus_size=300, planted_per_sample=2,
                         distractor_noise_rate=0.5, answer_vocab_size=20)
    samples, corpus, oracle = generate_synthetic(spec)
    train, test = split_dataset(samples, 30)
    return {"spec": spec, "train": train, "test": test, "corpus": corpus, "oracle": oracle}


@pytest.fixture(scope="session")
def mini_config():
    return CycleConfig(
        k_candidate=10, k_train=3, k_test=3, n_cycles=1,
        selector_train=TrainConfig(learning_rate=0.5, warmup_steps=20, epochs=3, rng_seed=31),
        answerer_train=TrainConfig(learning_rate=0.3, warmup_steps=20, epochs=2, rng_seed=32),
        rng_seed=5,
    )
