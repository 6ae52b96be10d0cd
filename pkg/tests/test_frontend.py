import pytest
from hypothesis import given, settings, strategies as st

from lowres_tts import frontend
from lowres_tts.corpus import Utterance
from lowres_tts.frontend import (BOS_ID, EOS_ID, PAD_ID, SP_ID, FrontendError,
                                 LetterToken, TokenSequence, build_vocab,
                                 decode_tokens, encode_transcript,
                                 syllable_to_letters, tag_language)


def utt(syllables, lang="mand", uid="u0"):
    return Utterance(id=uid, wav_path="", lang=lang, syllables=syllables,
                     duration_s=1.0)


syllable_strategy = st.builds(
    lambda letters, tone: letters + tone,
    st.text(alphabet="abdeghilmnouz", min_size=1, max_size=6),
    st.sampled_from(["", "1", "2", "3", "4", "5"]))


class TestSyllableToLetters:
    def test_toned(self):
        assert syllable_to_letters("zhong1") == ["z", "h", "o", "n", "g", "<t1>"]

    def test_single_letter(self):
        assert syllable_to_letters("a") == ["a"]

    @pytest.mark.parametrize("bad", ["ni3hao3", "", "Ba1", "b2a", "ba9"])
    def test_malformed(self, bad):
        with pytest.raises(FrontendError, match="malformed"):
            syllable_to_letters(bad)


class TestTagLanguage:
    def test_mand(self):
        assert tag_language(["z"], "mand") == [LetterToken("mand", "z")]

    def test_langs_distinct(self):
        assert tag_language(["z"], "shdia")[0] != tag_language(["z"], "mand")[0]

    def test_empty(self):
        assert tag_language([], "mand") == []


class TestBuildVocab:
    def test_single_syllable(self):
        vocab = build_vocab([utt(["ba1"])])
        assert vocab.size == 7  # 4 specials + b, a, <t1>
        assert LetterToken("mand", "b") in vocab
        assert LetterToken("mand", "<t1>") in vocab

    def test_empty_corpus(self):
        assert build_vocab([]).size == 4

    def test_both_langs_count_twice(self):
        vocab = build_vocab([utt(["ba1"]), utt(["ba1"], lang="shdia", uid="u1")])
        assert vocab.size == 10
        assert vocab.id_of(LetterToken("mand", "b")) != \
            vocab.id_of(LetterToken("shdia", "b"))

    def test_permutation_invariant(self):
        utts = [utt(["ba1"], uid="a"), utt(["zhong4", "gu3"], uid="b"),
                utt(["mi2"], lang="shdia", uid="c")]
        v1 = build_vocab(utts)
        v2 = build_vocab(utts[::-1])
        assert v1.token_strings() == v2.token_strings()

    def test_bad_syllable_names_utterance(self):
        with pytest.raises(FrontendError, match="u9"):
            build_vocab([utt(["x9x"], uid="u9")])


class TestEncodeTranscript:
    def test_single(self):
        vocab = build_vocab([utt(["ba1"])])
        seq = encode_transcript(["ba1"], "mand", vocab)
        toks = [vocab.id_to_token[i].symbol for i in seq.ids]
        assert toks == ["BOS", "b", "a", "<t1>", "EOS"]

    def test_pause_inserted(self):
        vocab = build_vocab([utt(["ba1"])])
        seq = encode_transcript(["ba1", "ba1"], "mand", vocab,
                                insert_pauses=True)
        assert seq.ids.count(SP_ID) == 1

    def test_oov_rejected(self):
        vocab = build_vocab([utt(["ba1"])])
        with pytest.raises(FrontendError):
            encode_transcript(["xyz9"], "mand", vocab)


class TestRoundTrip:
    @settings(max_examples=200, deadline=None)
    @given(st.lists(syllable_strategy, min_size=1, max_size=8),
           st.sampled_from(["mand", "shdia"]))
    def test_encode_decode_with_pauses(self, syllables, lang):
        vocab = build_vocab([utt(syllables, lang=lang)])
        seq = encode_transcript(syllables, lang, vocab, insert_pauses=True)
        assert decode_tokens(seq, vocab) == syllables

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.builds(lambda l, t: l + t,
                              st.text(alphabet="abdeg", min_size=1, max_size=4),
                              st.sampled_from("12345")),
                    min_size=1, max_size=8))
    def test_tone_boundaries_suffice_without_pauses(self, syllables):
        vocab = build_vocab([utt(syllables)])
        seq = encode_transcript(syllables, "mand", vocab, insert_pauses=False)
        assert decode_tokens(seq, vocab) == syllables


class TestVocabFile:
    def test_save_load(self, tmp_path):
        vocab = build_vocab([utt(["zhong1", "guo2"]),
                             utt(["mi3"], lang="shdia", uid="u1")])
        path = tmp_path / "vocab.txt"
        vocab.save(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "shared:PAD"
        assert len(lines) == vocab.size
        back = frontend.Vocabulary.load(path)
        assert back.token_strings() == vocab.token_strings()

    def test_language_separation_property(self):
        vocab = build_vocab([utt(["ba1"]), utt(["ba1"], lang="shdia", uid="u1")])
        for tok in vocab.id_to_token:
            if tok.lang == "mand":
                twin = LetterToken("shdia", tok.symbol)
                if twin in vocab:
                    assert vocab.id_of(twin) != vocab.id_of(tok)
