"""Language-tagged letter front end.

Syllable transcripts ("zhong1 guo2") are decomposed into letters plus a
standalone tone token, and every letter is tagged with its language so that
identical spellings in different languages map to distinct model inputs.
Encoding Shanghai-dialect data with ``lang="mand"`` reproduces the shared
phone-set configuration for comparison.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

SPECIALS = ("PAD", "BOS", "EOS", "SP")
PAD_ID, BOS_ID, EOS_ID, SP_ID = 0, 1, 2, 3

_SYLLABLE_RE = re.compile(r"^[a-z]+[0-5]?$")


class FrontendError(ValueError):
    pass


@dataclass(frozen=True)
class LetterToken:
    lang: str  # "mand", "shdia" or "shared" for specials
    symbol: str

    def __post_init__(self):
        if not self.symbol:
            raise FrontendError("empty token symbol")

    def __str__(self):
        return f"{self.lang}:{self.symbol}"


@dataclass
class TokenSequence:
    ids: list
    lang: str


def syllable_to_letters(syllable: str) -> list:
    """Decompose one syllable into letters plus an optional tone token.

    "zhong1" -> ["z", "h", "o", "n", "g", "<t1>"]
    """
    if not _SYLLABLE_RE.match(syllable or ""):
        raise FrontendError(f"malformed syllable {syllable!r}")
    if syllable[-1].isdigit():
        return list(syllable[:-1]) + [f"<t{syllable[-1]}>"]
    return list(syllable)


def tag_language(symbols, lang: str) -> list:
    if lang not in ("mand", "shdia"):
        raise FrontendError(f"unknown language {lang!r}")
    return [LetterToken(lang=lang, symbol=s) for s in symbols]


class Vocabulary:
    """Immutable bijective token<->id map with PAD at id 0."""

    def __init__(self, tokens):
        self.id_to_token = [LetterToken("shared", s) for s in SPECIALS]
        self.id_to_token += list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise FrontendError("duplicate token in vocabulary")

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def id_of(self, token: LetterToken) -> int:
        try:
            return self.token_to_id[token]
        except KeyError:
            raise FrontendError(f"out-of-vocabulary token {token}") from None

    def save(self, path) -> None:
        with open(path, "w") as f:
            for t in self.id_to_token:
                f.write(f"{t.lang}:{t.symbol}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        tokens = []
        with open(path) as f:
            for line in f:
                lang, symbol = line.rstrip("\n").split(":", 1)
                tokens.append(LetterToken(lang, symbol))
        if [t.symbol for t in tokens[:4]] != list(SPECIALS):
            raise FrontendError(f"{path}: missing or misordered special tokens")
        return cls(tokens[4:])

    @classmethod
    def from_token_strings(cls, strings) -> "Vocabulary":
        toks = []
        for s in strings:
            lang, symbol = s.split(":", 1)
            toks.append(LetterToken(lang, symbol))
        if [t.symbol for t in toks[:4]] != list(SPECIALS):
            raise FrontendError("missing or misordered special tokens")
        return cls(toks[4:])

    def token_strings(self):
        return [str(t) for t in self.id_to_token]


def build_vocab(utterances) -> Vocabulary:
    """Collect every language-tagged token observed in the corpus.

    Ordering is deterministic: specials first, then lexicographic by
    (lang, symbol), so permuting the manifest yields an identical vocabulary.
    """
    observed = set()
    for utt in utterances:
        for syl in utt.syllables:
            try:
                symbols = syllable_to_letters(syl)
            except FrontendError as e:
                raise FrontendError(
                    f"utterance {utt.id!r}: {e}") from None
            observed.update(tag_language(symbols, utt.lang))
    ordered = sorted(observed, key=lambda t: (t.lang, t.symbol))
    return Vocabulary(ordered)


def encode_transcript(syllables, lang: str, vocab: Vocabulary,
                      insert_pauses: bool = False) -> TokenSequence:
    """[BOS] + letter ids (SP between syllables if requested) + [EOS]."""
    ids = [BOS_ID]
    for k, syl in enumerate(syllables):
        if insert_pauses and k > 0:
            ids.append(SP_ID)
        for tok in tag_language(syllable_to_letters(syl), lang):
            ids.append(vocab.id_of(tok))
    ids.append(EOS_ID)
    return TokenSequence(ids=ids, lang=lang)


def decode_tokens(seq: TokenSequence, vocab: Vocabulary) -> list:
    """Reconstruct syllable strings by regrouping at tone and SP boundaries.

    Adjacent toneless syllables encoded without pauses are not separable;
    encode with insert_pauses=True when a lossless round trip is needed.
    """
    syllables = []
    current = ""
    for i in seq.ids:
        if i >= vocab.size:
            raise FrontendError(f"id {i} out of range for vocabulary")
        tok = vocab.id_to_token[i]
        if tok.symbol in ("PAD", "BOS", "EOS"):
            continue
        if tok.symbol == "SP":
            if current:
                syllables.append(current)
                current = ""
            continue
        m = re.match(r"^<t([0-5])>$", tok.symbol)
        if m:
            current += m.group(1)
            syllables.append(current)
            current = ""
        else:
            current += tok.symbol
    if current:
        syllables.append(current)
    return syllables
