"""Typing alphabet, class indices, corpus frequencies, and finger assignments.

The recognizer works over 32 typeable symbols (letters plus six special
keys). Two extra class indices exist only at the network output: a
character separator and the "no output" blank used by the CTC criterion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

LETTERS = "abcdefghijklmnopqrstuvwxyz"

SPACE = " "
PERIOD = "."
COMMA = ","
ENTER = "\n"
BACKSPACE = "\b"
APOSTROPHE = "'"

SPECIALS = (SPACE, PERIOD, COMMA, ENTER, BACKSPACE, APOSTROPHE)

#: Spellings used in keylog CSV files for keys that are awkward as raw text.
KEY_NAMES = {
    "SPACE": SPACE,
    "PERIOD": PERIOD,
    "COMMA": COMMA,
    "ENTER": ENTER,
    "BACKSPACE": BACKSPACE,
    "APOSTROPHE": APOSTROPHE,
}
NAME_OF_KEY = {v: k for k, v in KEY_NAMES.items()}

# Corpus rates with published single-character values. Space is pinned just
# above its known "over 18%" share.
_PINNED_FREQ = {
    "e": 0.0898,
    "d": 0.0269,
    "c": 0.0176,
    "s": 0.0484,
    "w": 0.0186,
    "x": 0.0014,
    "a": 0.0606,
    "z": 0.0011,
    "q": 0.0010,
    "v": 0.0080,
    "p": 0.0125,
    APOSTROPHE: 0.0084,
    SPACE: 0.1850,
}

# Relative weights for the remaining symbols: standard English letter
# frequencies, plus modest rates for punctuation/control keys in dictated
# text. These are scaled into whatever probability mass the pinned values
# leave over.
_FILL_WEIGHT = {
    "t": 9.056,
    "o": 7.507,
    "i": 6.966,
    "n": 6.749,
    "h": 6.094,
    "r": 5.987,
    "l": 4.025,
    "u": 2.758,
    "m": 2.406,
    "f": 2.228,
    "g": 2.015,
    "y": 1.974,
    "b": 1.492,
    "k": 0.772,
    "j": 0.153,
    PERIOD: 1.000,
    COMMA: 0.800,
    ENTER: 0.350,
    BACKSPACE: 1.200,
}


def _default_freq(chars: tuple[str, ...]) -> dict[str, float]:
    leftover = 1.0 - sum(_PINNED_FREQ.values())
    fill_total = sum(_FILL_WEIGHT.values())
    freq = {}
    for ch in chars:
        if ch in _PINNED_FREQ:
            freq[ch] = _PINNED_FREQ[ch]
        else:
            freq[ch] = leftover * _FILL_WEIGHT[ch] / fill_total
    total = sum(freq.values())
    return {ch: p / total for ch, p in freq.items()}


@dataclass(frozen=True)
class CharSet:
    """The 32-symbol alphabet plus CTC output-class bookkeeping."""

    chars: tuple[str, ...]
    freq: dict[str, float]
    class_index: dict[str, int] = field(init=False)

    separator_class: int = field(init=False, default=32)
    blank_class: int = field(init=False, default=33)
    n_classes: int = field(init=False, default=34)

    def __post_init__(self):
        if len(self.chars) != 32:
            raise ValueError(f"expected 32 characters, got {len(self.chars)}")
        if len(set(self.chars)) != len(self.chars):
            raise ValueError("duplicate characters in alphabet")
        if set(self.freq) != set(self.chars):
            raise ValueError("freq must cover exactly the alphabet")
        if any(p < 0 for p in self.freq.values()):
            raise ValueError("negative frequency")
        if abs(sum(self.freq.values()) - 1.0) > 1e-9:
            raise ValueError("frequencies must sum to 1")
        object.__setattr__(self, "class_index", {c: i for i, c in enumerate(self.chars)})

    def __contains__(self, ch: str) -> bool:
        return ch in self.class_index

    def encode(self, text) -> list[int]:
        """Map a symbol sequence to class indices (0..31)."""
        try:
            return [self.class_index[c] for c in text]
        except KeyError as e:
            raise ValueError(f"symbol not in alphabet: {e.args[0]!r}") from None

    def decode(self, indices) -> str:
        """Map class indices back to text. Separator/blank are not symbols."""
        out = []
        for i in indices:
            if not 0 <= i < len(self.chars):
                raise ValueError(f"class index out of range: {i}")
            out.append(self.chars[i])
        return "".join(out)


def default_charset() -> CharSet:
    chars = tuple(LETTERS) + SPECIALS
    return CharSet(chars=chars, freq=_default_freq(chars))


#: Finger labels, index (2) through pinkie (5) per hand, plus the right thumb.
FINGER_ORDER = ("L2", "L3", "L4", "L5", "R2", "R3", "R4", "R5", "R-thumb")

_FINGER_KEYS = {
    "L2": ("r", "t", "f", "g", "v", "b"),
    "L3": ("e", "d", "c"),
    "L4": ("w", "s", "x"),
    "L5": ("q", "a", "z"),
    "R2": ("y", "u", "h", "j", "n", "m"),
    "R3": ("i", "k", COMMA),
    "R4": ("o", "l", PERIOD),
    "R5": ("p", APOSTROPHE, ENTER, BACKSPACE),
    "R-thumb": (SPACE,),
}

# Same-finger key pairs that are physically adjacent on a qwerty board.
_ADJACENT = (
    ("q", "a"), ("a", "z"),
    ("w", "s"), ("s", "x"),
    ("e", "d"), ("d", "c"),
    ("r", "t"), ("f", "g"), ("v", "b"), ("r", "f"), ("f", "v"), ("t", "g"), ("g", "b"),
    ("y", "u"), ("h", "j"), ("n", "m"), ("y", "h"), ("h", "n"), ("u", "j"), ("j", "m"),
    ("i", "k"), ("k", COMMA),
    ("o", "l"), ("l", PERIOD),
    ("p", APOSTROPHE), (APOSTROPHE, ENTER), ("p", BACKSPACE),
)

#: Keyboard row of each symbol: 0 = top, 1 = home, 2 = bottom.
KEY_ROW = {
    **{c: 0 for c in "qwertyuiop"},
    **{c: 1 for c in "asdfghjkl"},
    **{c: 2 for c in "zxcvbnm"},
    COMMA: 2, PERIOD: 2,
    APOSTROPHE: 1, ENTER: 1,
    BACKSPACE: 0,
    SPACE: 1,
}


@dataclass(frozen=True)
class FingerMap:
    """Which finger types each symbol, and the adjacent same-finger pairs."""

    finger_of: dict[str, str]
    adjacency: frozenset[frozenset[str]]

    def __post_init__(self):
        for pair in self.adjacency:
            a, b = tuple(pair)
            if self.finger_of[a] != self.finger_of[b]:
                raise ValueError(f"adjacency pair {(a, b)} spans two fingers")

    def fingers(self) -> tuple[str, ...]:
        return FINGER_ORDER

    def keys_of(self, finger: str) -> tuple[str, ...]:
        return tuple(c for c, f in self.finger_of.items() if f == finger)

    def is_adjacent(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in self.adjacency


def default_fingermap() -> FingerMap:
    finger_of = {}
    for finger, keys in _FINGER_KEYS.items():
        for k in keys:
            if k in finger_of:
                raise ValueError(f"key {k!r} assigned twice")
            finger_of[k] = finger
    adjacency = frozenset(frozenset(p) for p in _ADJACENT)
    return FingerMap(finger_of=finger_of, adjacency=adjacency)
