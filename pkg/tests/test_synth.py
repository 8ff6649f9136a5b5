from collections import Counter

import pytest

from fairgap.perturb import counterfactual, detect_gender
from fairgap.synth import PROXY_TOKENS, SynthConfig, generate

from conftest import F


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = SynthConfig(num_classes=3, gender_skew=(0.1, 0.5, 0.9), class_names=("a", "b", "c"), seed=4)
        path = tmp_path / "c.json"
        import json

        path.write_text(json.dumps(cfg.to_dict()))
        assert SynthConfig.from_json(path) == cfg

    @pytest.mark.parametrize(
        "kw",
        [
            {"gender_skew": (0.5,)},
            {"proxy_strength": 1.5},
            {"docs_per_class": 0},
            {"gender_skew": (0.5, -0.1)},
            {"class_names": ("a",)},
        ],
    )
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            SynthConfig(**kw)

    def test_unknown_field(self):
        with pytest.raises(ValueError, match="bogus"):
            SynthConfig.from_dict({"bogus": 1})


class TestGenerate:
    def test_counts_and_determinism(self):
        cfg = SynthConfig(docs_per_class=50, seed=3)
        ds = generate(cfg)
        assert Counter(d.label for d in ds) == {0: 50, 1: 50}
        assert generate(cfg) == ds
        assert generate(SynthConfig(docs_per_class=50, seed=4)) != ds

    def test_skew(self):
        ds = generate(SynthConfig(docs_per_class=2000, gender_skew=(0.2, 0.8), seed=0))
        for y, target in ((0, 0.2), (1, 0.8)):
            docs = [d for d in ds if d.label == y]
            frac = sum(d.gender is F for d in docs) / len(docs)
            assert abs(frac - target) < 0.04

    def test_explicit_indicators_agree_with_tag(self, lexicon):
        ds = generate(SynthConfig(docs_per_class=100, explicit_rate=1.0, seed=1))
        assert all(detect_gender(d.text, lexicon)[0] is d.gender for d in ds)

    def test_implicit_has_no_indicators(self, lexicon):
        ds = generate(SynthConfig(docs_per_class=50, explicit_rate=0.0, seed=1))
        assert all(sum(detect_gender(d.text, lexicon)[1].values()) == 0 for d in ds)

    def test_proxy(self, lexicon):
        ds = generate(SynthConfig(docs_per_class=100, proxy_strength=1.0, seed=2))
        for d in ds:
            assert PROXY_TOKENS[d.gender] in d.text.lower()
            # interventions never touch the proxy
            assert PROXY_TOKENS[d.gender] in counterfactual(d, lexicon).text.lower()
        assert not any(p in lexicon.all_indicators for p in PROXY_TOKENS.values())

    def test_no_proxy_by_default(self):
        ds = generate(SynthConfig(docs_per_class=50))
        assert not any(p in d.text.lower() for d in ds for p in PROXY_TOKENS.values())

    def test_counterfactual_round_trip(self, lexicon):
        ds = generate(SynthConfig(docs_per_class=50, seed=5))
        for d in ds:
            assert counterfactual(counterfactual(d, lexicon), lexicon).text == d.text
