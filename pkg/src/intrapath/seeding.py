"""Named random streams derived from one global seed."""

import zlib

import numpy as np


def _label_words(label):
    if isinstance(label, (int, np.integer)):
        return [int(label) & 0xFFFFFFFF]
    return [zlib.crc32(str(label).encode("utf-8"))]


def stream(seed, *labels):
    """Return a ``Generator`` for the stream named by ``labels`` under ``seed``.

    The same ``(seed, labels)`` always gives the same stream, independent of
    the order in which other streams were requested.
    """
    words = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF]
    for label in labels:
        words.extend(_label_words(label))
    return np.random.default_rng(np.random.SeedSequence(words))
