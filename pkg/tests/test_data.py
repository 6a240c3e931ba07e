import numpy as np
import pytest

from lslmt.data import (
    DEFAULT_ALPHABET,
    CorpusSpec,
    Vocab,
    direction_filter,
    generate_corpus,
    generate_pair,
    make_language,
    make_language_set,
    read_corpus,
    reorder_rule_for_family,
    tag_source,
    temperature_sample,
    write_corpus,
    zero_shot_directions,
)
from lslmt.errors import ConfigError, DataError


class TestMakeLanguage:
    def test_seed_determinism(self):
        a = make_language(7, 1, 32)
        b = make_language(7, 1, 32)
        assert a.cipher == b.cipher

    def test_cipher_inverse(self):
        lang = make_language(3, 0, 32)
        seq = list(range(32))
        assert lang.decode(lang.encode(seq)) == seq

    def test_family_shares_reorder_rule(self):
        a = make_language(1, 2, 16)
        b = make_language(9, 2, 16)
        assert a.reorder == b.reorder == reorder_rule_for_family(2)
        assert make_language(4, 0, 16).reorder == "identity"


class TestGeneratePair:
    def test_invertibility_oracle(self, rng):
        src = make_language(1, 0, 32)
        tgt = make_language(2, 0, 32)
        pivot = [int(i) for i in rng.integers(0, 32, size=20)]
        ex = generate_pair(src, tgt, pivot, 0.0, rng)
        # noise-free, identity reorder: tgt = cipher_tgt(cipher_src^-1(src))
        src_ids = [DEFAULT_ALPHABET.index(t) for t in ex.src]
        chained = [tgt.cipher[p] for p in src.decode(src_ids)]
        assert list(ex.tgt) == [DEFAULT_ALPHABET[i] for i in chained]

    def test_pivot_round_trip_with_reorder(self, rng):
        src = make_language(1, 1, 32)
        tgt = make_language(2, 2, 32)
        pivot = [int(i) for i in rng.integers(0, 32, size=11)]
        ex = generate_pair(src, tgt, pivot, 0.0, rng)
        assert src.decode([DEFAULT_ALPHABET.index(t) for t in ex.src]) == pivot
        assert tgt.decode([DEFAULT_ALPHABET.index(t) for t in ex.tgt]) == pivot

    def test_same_language_identity(self, rng):
        lang = make_language(1, 1, 32)
        pivot = [int(i) for i in rng.integers(0, 32, size=9)]
        ex = generate_pair(lang, lang, pivot, 0.0, rng)
        assert ex.src == ex.tgt

    def test_noise_fraction(self, rng):
        src = make_language(1, 0, 32)
        tgt = make_language(2, 0, 32)
        pivot = [int(i) for i in rng.integers(0, 32, size=10_000)]
        ex = generate_pair(src, tgt, pivot, 0.5, rng)
        clean = generate_pair(src, tgt, pivot, 0.0, np.random.default_rng(0))
        frac = np.mean([a != b for a, b in zip(ex.src, clean.src)])
        # replacement can hit the original symbol: rate 0.5 * 31/32
        assert abs(frac - 0.5 * 31 / 32) < 0.02
        assert ex.tgt == clean.tgt  # targets stay clean


class TestTagging:
    def test_placement(self):
        assert tag_source(["t1", "t2"], "HQ", "de", "en") == ["<HQ>", "t1", "t2", "<de>", "<en>"]

    def test_empty_body(self):
        assert tag_source([], "LQ", "a", "b") == ["<LQ>", "<a>", "<b>"]

    def test_tag_ids_stable(self):
        a = Vocab(("syn0", "syn1"), 8)
        b = Vocab(("syn1", "syn0"), 8)
        assert a.ids == b.ids

    def test_tagged_length(self):
        for n in range(5):
            assert len(tag_source(["x"] * n, "HQ", "a", "b")) == n + 3


class TestTemperatureSample:
    def test_temperature_one_is_identity(self):
        sizes = {"a": 123, "b": 45, "c": 6789}
        assert temperature_sample(sizes, 1.0, 10.0) == sizes

    def test_cap_binds(self):
        out = temperature_sample({"hq": 1000, "lq": 100_000}, 5.0, 10.0)
        assert out["lq"] == 10_000
        assert out["hq"] == 1000

    def test_equal_sources_unchanged(self):
        for t in (1.0, 2.0, 5.0, 20.0):
            assert temperature_sample({"a": 500, "b": 500}, t, 10.0) == {"a": 500, "b": 500}

    def test_bounds_invariant(self, rng):
        for _ in range(25):
            sizes = {f"s{i}": int(rng.integers(1, 10_000)) for i in range(5)}
            out = temperature_sample(sizes, 5.0, 10.0)
            for k, n in sizes.items():
                assert n / 10.0 <= out[k] <= n

    def test_all_empty_rejected(self):
        with pytest.raises(DataError):
            temperature_sample({"a": 0}, 5.0, 10.0)

    def test_bad_temperature_rejected(self):
        with pytest.raises(ConfigError):
            temperature_sample({"a": 1}, 0.5, 10.0)


FAMILIES = {"syn0": 0, "syn1": 0, "syn2": 1, "syn3": 1}


class TestDirectionFilter:
    def test_full_mode(self):
        dirs = direction_filter(FAMILIES, "FULL")
        assert len(dirs) == 4 * 3

    def test_english_centric_plus_groups(self):
        train = direction_filter(FAMILIES, "ENGLISH_CENTRIC_PLUS_GROUPS", "syn0")
        expected = {
            ("syn0", "syn1"), ("syn1", "syn0"),
            ("syn0", "syn2"), ("syn2", "syn0"),
            ("syn0", "syn3"), ("syn3", "syn0"),
            ("syn2", "syn3"), ("syn3", "syn2"),
        }
        assert train == expected
        zero = zero_shot_directions(FAMILIES, "ENGLISH_CENTRIC_PLUS_GROUPS", "syn0")
        assert zero == {("syn1", "syn2"), ("syn2", "syn1"), ("syn1", "syn3"), ("syn3", "syn1")}

    def test_partition(self):
        train = direction_filter(FAMILIES, "ENGLISH_CENTRIC_PLUS_GROUPS", "syn0")
        zero = zero_shot_directions(FAMILIES, "ENGLISH_CENTRIC_PLUS_GROUPS", "syn0")
        assert train & zero == set()
        assert train | zero == direction_filter(FAMILIES, "FULL")

    def test_unknown_center_rejected(self):
        with pytest.raises(ConfigError):
            direction_filter(FAMILIES, "ENGLISH_CENTRIC_PLUS_GROUPS", "nope")


class TestCorpus:
    SPEC = CorpusSpec(n_languages=4, n_families=2, alphabet_size=16,
                      pairs_per_direction=20, lq_fraction=0.3, lq_noise_rate=0.2, seed=11)

    def test_pure_function_of_spec(self, tmp_path):
        a, b = generate_corpus(self.SPEC), generate_corpus(self.SPEC)
        write_corpus(tmp_path / "a.tsv", a)
        write_corpus(tmp_path / "b.tsv", b)
        assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()

    def test_all_directions_present(self):
        corpus = generate_corpus(self.SPEC)
        assert len(corpus) == 4 * 3
        assert all(len(v) == 20 for v in corpus.values())

    def test_quality_split(self):
        corpus = generate_corpus(self.SPEC)
        for pairs in corpus.values():
            assert sum(ex.ctx.quality == "LQ" for ex in pairs) == 6

    def test_file_round_trip(self, tmp_path):
        corpus = generate_corpus(self.SPEC)
        write_corpus(tmp_path / "c.tsv", corpus)
        back = read_corpus(tmp_path / "c.tsv")
        assert back == {k: list(v) for k, v in corpus.items()}

    def test_family_structure(self):
        langs = make_language_set(self.SPEC)
        fams = {l.id: l.family for l in langs}
        assert fams == {"syn0": 0, "syn1": 1, "syn2": 0, "syn3": 1}
