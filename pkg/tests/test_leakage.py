import numpy as np
import pytest

from dpsynth.corpus import Corpus
from dpsynth.errors import ConfigError
from dpsynth.generator import DpAdamConfig, SamplingConfig, ToyLanguageModel, train
from dpsynth.leakage import (
    CanarySpec,
    alternative_secrets,
    evaluate_canaries,
    inject,
    loss_rank,
    random_address_secret,
    random_digit_secret,
    scan_prompted,
    scan_unprompted,
)

from conftest import make_corpus

SECRET = "6438271509"
TEMPLATE = "please dial the hotline +{SECRET} to confirm"


def base_corpus(n=120):
    words = ["plan", "trip", "song", "note", "list", "menu", "idea", "game"]
    rng = np.random.default_rng(17)
    texts = [
        f"write a {words[rng.integers(len(words))]} about the {words[rng.integers(len(words))]}"
        for _ in range(n)
    ]
    return make_corpus(texts)


def overfit_model(corpus, seed=0, epochs=30):
    """Non-private training until the canary is memorized; the leakage oracle."""
    model = ToyLanguageModel.initialize(seed=seed, embed_dim=16, hidden_dim=32, max_len=72)
    config = DpAdamConfig(
        clip_threshold=1e9, noise_multiplier=0.0, batch_size=32, learning_rate=8e-3, epochs=epochs, seed=seed
    )
    train(model, corpus, config)
    return model


class TestCanarySpec:
    def test_requires_exactly_one_placeholder(self):
        with pytest.raises(ConfigError):
            CanarySpec(template="no placeholder", secret="123")
        with pytest.raises(ConfigError):
            CanarySpec(template="{SECRET} and {SECRET}", secret="123")

    def test_secret_in_prefix_rejected(self):
        with pytest.raises(ConfigError, match="prefix"):
            CanarySpec(template="code 123 is {SECRET}", secret="123")

    def test_prefix_and_filled(self):
        spec = CanarySpec(template=TEMPLATE, secret=SECRET)
        assert spec.prefix() == "please dial the hotline +"
        assert spec.filled() == f"please dial the hotline +{SECRET} to confirm"
        assert spec.filled("0000000000") == "please dial the hotline +0000000000 to confirm"


class TestInject:
    def test_single_repetition_grows_by_one(self):
        c = base_corpus(50)
        out = inject(c, CanarySpec(template=TEMPLATE, secret=SECRET, repetitions=1), seed=0)
        assert len(out) == 51

    def test_hundred_copies_present(self):
        c = base_corpus(50)
        spec = CanarySpec(template=TEMPLATE, secret=SECRET, repetitions=100)
        out = inject(c, spec, seed=0)
        assert sum(1 for t in out.texts() if t == spec.filled()) == 100

    def test_shuffle_is_seeded(self):
        c = base_corpus(50)
        spec = CanarySpec(template=TEMPLATE, secret=SECRET, repetitions=5)
        assert inject(c, spec, seed=1).ids() == inject(c, spec, seed=1).ids()
        assert inject(c, spec, seed=1).ids() != inject(c, spec, seed=2).ids()

    def test_exact_dedup_would_collapse_copies(self):
        from dpsynth.corpus import dedup_exact

        c = base_corpus(20)
        spec = CanarySpec(template=TEMPLATE, secret=SECRET, repetitions=10)
        injected = inject(c, spec, seed=0)
        collapsed = dedup_exact(injected)
        assert sum(1 for t in collapsed.texts() if t == spec.filled()) == 1


class TestAlternativeSecrets:
    def test_shape_preserved(self):
        alts = alternative_secrets(SECRET, 50, seed=0)
        assert len(alts) == 50
        assert all(len(a) == len(SECRET) and a.isdigit() and a != SECRET for a in alts)

    def test_address_shape_preserved(self):
        secret = "531 Bobbin Mill Road"
        alts = alternative_secrets(secret, 20, seed=1)
        for a in alts:
            assert len(a) == len(secret)
            assert [c.isdigit() for c in a] == [c.isdigit() for c in secret]
            assert [c.isalpha() for c in a] == [c.isalpha() for c in secret]

    def test_generators_produce_expected_formats(self):
        assert random_digit_secret(10, seed=4).isdigit()
        parts = random_address_secret(seed=4).split(" ")
        assert parts[0].isdigit() and len(parts) == 3


class TestLossRank:
    def test_uniform_model_equal_lengths_rank_one(self):
        """All candidate losses equal under a constant-logit model, and ties
        count in the canary's favour."""
        model = ToyLanguageModel.initialize(seed=0, embed_dim=4, hidden_dim=4, max_len=72)
        model.embed[:] = 0.0
        model.w1[:] = 0.0
        model.b1[:] = 0.0
        model.w2[:] = 0.0
        model.b2[:] = 0.0
        spec = CanarySpec(template=TEMPLATE, secret=SECRET, candidate_pool_size=200)
        assert loss_rank(model, spec, seed=0) == 1

    def test_overfit_model_rank_one(self):
        spec = CanarySpec(template=TEMPLATE, secret=SECRET, repetitions=60, candidate_pool_size=500)
        corpus = inject(base_corpus(60), spec, seed=3)
        model = overfit_model(corpus, seed=1)
        assert loss_rank(model, spec, seed=0) == 1

    def test_untrained_model_rank_roughly_uniform(self):
        """Median rank over random models sits in the middle of the pool."""
        pool = 200
        ranks = []
        for seed in range(50):
            model = ToyLanguageModel.initialize(seed=seed, embed_dim=4, hidden_dim=4, max_len=72)
            spec = CanarySpec(
                template=TEMPLATE, secret=random_digit_secret(10, seed=seed), candidate_pool_size=pool
            )
            ranks.append(loss_rank(model, spec, seed=seed))
        median = float(np.median(ranks))
        assert 0.3 * pool <= median <= 0.7 * pool


@pytest.fixture(scope="module")
def overfit():
    spec = CanarySpec(template=TEMPLATE, secret=SECRET, repetitions=80)
    corpus = inject(base_corpus(80), spec, seed=5)
    return overfit_model(corpus, seed=2), spec


class TestScans:

    def test_overfit_model_leaks_unprompted(self, overfit):
        model, spec = overfit
        flags = scan_unprompted(model, [spec.secret], SamplingConfig(top_p=0.95, max_len=72, seed=0), count=400)
        assert flags[spec.secret] is True

    def test_overfit_model_leaks_prompted(self, overfit):
        model, spec = overfit
        assert scan_prompted(model, spec) is True

    def test_zero_count_scan_all_false(self, overfit):
        model, spec = overfit
        flags = scan_unprompted(model, [spec.secret], SamplingConfig(max_len=72, seed=0), count=0)
        assert flags[spec.secret] is False

    def test_unreachable_secret_not_found(self, overfit):
        model, _ = overfit
        flags = scan_unprompted(model, ["zzqqxxjjvv"], SamplingConfig(top_p=0.3, max_len=16, seed=0), count=50)
        assert flags["zzqqxxjjvv"] is False

    def test_untrained_model_does_not_leak_prompted(self):
        spec = CanarySpec(template=TEMPLATE, secret=SECRET)
        for seed in range(20):
            model = ToyLanguageModel.initialize(seed=seed, embed_dim=8, hidden_dim=8, max_len=72)
            assert scan_prompted(model, spec) is False

    def test_evaluate_canaries_reports_min_rank(self, overfit):
        model, spec = overfit
        other = CanarySpec(
            template="ship the parcel to ={SECRET}= thanks", secret="940 Cedar Lane", candidate_pool_size=50
        )
        out = evaluate_canaries(model, [spec, other], SamplingConfig(max_len=72, seed=1), seed=0, scan_count=50)
        assert len(out["reports"]) == 2
        assert out["min_loss_rank"] == min(r["loss_rank"] for r in out["reports"])
