import pytest

from corpus import Document
from errors import FormatError
from tokenizer import (
    MASK_ID,
    PAD_ID,
    SPECIAL_TOKENS,
    UNK_ID,
    TokenizerScheme,
    build_vocabulary,
    encode_ids,
    load_vocabulary,
    save_vocabulary,
    tokenize,
)

WS = TokenizerScheme.whitespace_lower()


class TestTokenize:
    def test_whitespace_lower_strips_edge_punctuation(self):
        assert tokenize("Hello, World", WS) == ["hello", "world"]

    def test_internal_punctuation_kept(self):
        assert tokenize("(don't) U.S.A.", WS) == ["don't", "u.s.a"]

    def test_char_bigrams(self):
        assert tokenize("abcd", TokenizerScheme.char_ngram(2)) == ["ab", "bc", "cd"]

    def test_char_ngrams_ignore_whitespace(self):
        assert tokenize("日本 語", TokenizerScheme.char_ngram(2)) == ["日本", "本語"]

    def test_stream_shorter_than_n_has_no_ngrams(self):
        assert tokenize("a", TokenizerScheme.char_ngram(2)) == []
        assert tokenize(" a b ", TokenizerScheme.char_ngram(3)) == []
        assert tokenize("abc", TokenizerScheme.char_ngram(3)) == ["abc"]

    @pytest.mark.parametrize("scheme", [WS, TokenizerScheme.char_ngram(2)])
    def test_empty_text(self, scheme):
        assert tokenize("", scheme) == []

    def test_parse_and_str(self):
        assert TokenizerScheme.parse("char_ngram:3") == TokenizerScheme.char_ngram(3)
        assert str(TokenizerScheme.char_ngram(3)) == "char_ngram:3"
        assert TokenizerScheme.parse("whitespace_lower") == WS
        with pytest.raises(ValueError):
            TokenizerScheme.parse("bpe")


class TestVocabulary:
    def test_frequency_order(self):
        vocab = build_vocabulary([Document("d", "a a b")], WS)
        assert vocab.id_to_token == SPECIAL_TOKENS + ("a", "b")
        assert vocab.token_to_id["a"] < vocab.token_to_id["b"]

    def test_min_count(self):
        vocab = build_vocabulary([Document("d", "a a b")], WS, min_count=2)
        assert vocab.id_to_token[len(SPECIAL_TOKENS):] == ("a",)

    def test_empty_corpus(self):
        assert build_vocabulary([], WS).id_to_token == SPECIAL_TOKENS

    def test_ties_broken_lexicographically(self):
        vocab = build_vocabulary(["z y x"], WS)
        assert vocab.id_to_token[3:] == ("x", "y", "z")

    def test_order_independent(self):
        a = build_vocabulary(["b c", "a a"], WS)
        b = build_vocabulary(["a a", "b c"], WS)
        assert a == b and a.fingerprint == b.fingerprint

    def test_special_ids(self):
        assert (PAD_ID, MASK_ID, UNK_ID) == (0, 1, 2)

    def test_round_trip(self, tmp_path):
        vocab = build_vocabulary(["日本語 テキスト"], TokenizerScheme.char_ngram(2))
        save_vocabulary(vocab, tmp_path / "vocab.txt")
        loaded = load_vocabulary(tmp_path / "vocab.txt")
        assert loaded == vocab
        assert loaded.fingerprint == vocab.fingerprint

    def test_missing_header(self, tmp_path):
        (tmp_path / "v.txt").write_text("[PAD]\n[MASK]\n[UNK]\n", encoding="utf-8")
        with pytest.raises(FormatError):
            load_vocabulary(tmp_path / "v.txt")


class TestEncodeIds:
    def test_known_and_unknown(self):
        vocab = build_vocabulary(["a b"], WS)
        assert encode_ids("b a zzz", WS, vocab) == [vocab.token_to_id["b"], vocab.token_to_id["a"], UNK_ID]

    def test_empty(self):
        assert encode_ids("", WS, build_vocabulary(["a"], WS)) == []

    def test_literal_special_token_text_is_unknown(self):
        vocab = build_vocabulary(["a"], WS)
        ids = encode_ids("[mask] [pad]", WS, vocab)
        assert PAD_ID not in ids and MASK_ID not in ids

    def test_scheme_mismatch(self):
        vocab = build_vocabulary(["ab"], TokenizerScheme.char_ngram(2))
        with pytest.raises(ValueError):
            encode_ids("ab", WS, vocab)
