"""Malaysian plate grammar: sampling, validation, padding, class encoding.

A plate is one leading letter from a restricted 13-letter list, up to two
optional letters, a number 1..9999 printed without leading zeros, and one
optional trailing letter. Letters never include I or O. Labels are padded
with leading '0' characters to a fixed length of 10 and encoded over the
36-character alphabet 0-9 then A-Z.
"""

import re

LEAD_LETTERS = "ABCDJKMNPRTWZ"
BODY_LETTERS = "ABCDEFGHJKLMNPQRSTUVWXYZ"  # A-Z minus I and O
ALPHABET = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ"
ALPHABET_SIZE = len(ALPHABET)  # 36
LABEL_LENGTH = 10

_CHAR_TO_INDEX = {ch: i for i, ch in enumerate(ALPHABET)}
_PLATE_RE = re.compile(
    rf"^[{LEAD_LETTERS}][{BODY_LETTERS}]{{0,2}}[1-9][0-9]{{0,3}}[{BODY_LETTERS}]?$"
)


def validate_plate(s):
    """True iff s is a well-formed plate string."""
    return bool(_PLATE_RE.match(s))


def sample_plate(rng):
    """Draw a random plate string from the grammar.

    Each optional letter is present with probability 1/2. The number picks a
    digit count 1..4 uniformly, then a uniform value within that count, so
    short and long plates are about equally common.
    """
    parts = [LEAD_LETTERS[rng.integers(len(LEAD_LETTERS))]]
    for _ in range(2):
        if rng.integers(2):
            parts.append(BODY_LETTERS[rng.integers(len(BODY_LETTERS))])
    digits = int(rng.integers(1, 5))
    lo = 10 ** (digits - 1)
    hi = min(10 ** digits - 1, 9999)
    parts.append(str(rng.integers(lo, hi + 1)))
    if rng.integers(2):
        parts.append(BODY_LETTERS[rng.integers(len(BODY_LETTERS))])
    return "".join(parts)


def pad_label(s):
    """Left-pad with '0' to the fixed label length."""
    if len(s) > LABEL_LENGTH:
        raise ValueError(f"label {s!r} longer than {LABEL_LENGTH} characters")
    return "0" * (LABEL_LENGTH - len(s)) + s


def strip_padding(p):
    """Remove the maximal leading run of '0' characters."""
    if len(p) != LABEL_LENGTH:
        raise ValueError(f"padded label must have length {LABEL_LENGTH}, "
                         f"got {len(p)}")
    return p.lstrip("0")


def encode_label(padded):
    """Map a padded label to its list of class indices (0-9 -> 0..9,
    A-Z -> 10..35)."""
    try:
        return [_CHAR_TO_INDEX[ch] for ch in padded]
    except KeyError as e:
        raise ValueError(f"character {e.args[0]!r} not in the plate alphabet") from None


def decode_indices(indices):
    """Inverse of encode_label."""
    out = []
    for i in indices:
        i = int(i)
        if not 0 <= i < ALPHABET_SIZE:
            raise ValueError(f"class index {i} out of range [0, {ALPHABET_SIZE})")
        out.append(ALPHABET[i])
    return "".join(out)


class PlateLabel:
    """A raw plate string together with its padded and index encodings."""

    __slots__ = ("raw", "padded", "indices")

    def __init__(self, raw):
        if not validate_plate(raw):
            raise ValueError(f"{raw!r} is not a valid plate string")
        self.raw = raw
        self.padded = pad_label(raw)
        self.indices = encode_label(self.padded)

    def __repr__(self):
        return f"PlateLabel({self.raw!r})"

    def __eq__(self, other):
        return isinstance(other, PlateLabel) and other.raw == self.raw
