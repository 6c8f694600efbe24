"""
Vocabulary
----------
Word-level vocabulary over the closed report grammar plus the coordinate
tokens "0.00".."1.00". Saved as a newline-delimited token file; the line
number is the token id.
"""

import logging

from coca_cxr.errors import VocabularyError
from coca_cxr.report_processor.grammar import detokenize, tokenize_words, vocabulary_words

logger = logging.getLogger(__name__)

PAD, BOS, EOS, POOL = "<pad>", "<bos>", "<eos>", "<pool>"
SPECIAL_TOKENS = (PAD, BOS, EOS, POOL)
PAD_ID, BOS_ID, EOS_ID, POOL_ID = range(len(SPECIAL_TOKENS))


class Vocabulary:
    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise VocabularyError(f"vocabulary must start with {', '.join(SPECIAL_TOKENS)}")
        self.tokens = tokens
        self.index = {}
        for i, token in enumerate(tokens):
            if token in self.index:
                raise VocabularyError(f"duplicate token '{token}'")
            self.index[token] = i

    @classmethod
    def default(cls):
        return cls(list(SPECIAL_TOKENS) + vocabulary_words())

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def token_id(self, token):
        try:
            return self.index[token]
        except KeyError:
            raise VocabularyError(f"unknown token '{token}'") from None

    def encode(self, text):
        """Word ids of `text`; raises VocabularyError on out-of-vocabulary words."""
        return [self.token_id(token) for token in tokenize_words(text)]

    def encode_caption(self, text, max_len):
        """
        [<bos>, words..., <eos>] leaving one slot for <pool> within max_len.
        Over-long texts are truncated before <eos>.
        """
        ids = self.encode(text)
        room = max_len - 3
        if len(ids) > room:
            logger.debug("truncating caption of %d tokens to %d", len(ids), room)
            ids = ids[:room]
        return [BOS_ID] + ids + [EOS_ID]

    def decode(self, ids):
        """Text of `ids`, stopping at <eos>/<pool> and skipping <bos>/<pad>."""
        words = []
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.tokens):
                raise VocabularyError(f"token id {i} outside vocabulary of size {len(self.tokens)}")
            if i in (EOS_ID, POOL_ID):
                break
            if i in (PAD_ID, BOS_ID):
                continue
            words.append(self.tokens[i])
        return detokenize(words)

    def save(self, path):
        with open(path, "w") as f:
            f.write("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as f:
            tokens = [line.rstrip("\n") for line in f if line.rstrip("\n")]
        return cls(tokens)
