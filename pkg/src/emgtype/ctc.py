"""Connectionist temporal classification: loss and decoding.

The loss sums, in log space, over every frame-level path that collapses to
the target labeling (merge adjacent repeats, then delete blanks). Decoding
offers a greedy best-path shortcut and a prefix beam search that scores
labelings rather than paths.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .charset import CharSet
from .nn.layers import log_softmax, softmax

NEG_INF = -math.inf


def _extend_with_blanks(label, blank: int) -> np.ndarray:
    ext = np.full(2 * len(label) + 1, blank, dtype=np.int64)
    ext[1::2] = label
    return ext


def min_frames_for(label) -> int:
    """Shortest frame path that can emit ``label`` under the collapse rule."""
    repeats = sum(1 for a, b in zip(label, label[1:]) if a == b)
    return len(label) + repeats


def ctc_loss(log_probs: np.ndarray, label, blank: int) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of ``label`` plus the exact gradient.

    Args:
        log_probs: [T, K] log-probability rows.
        label: class indices, blank-free.
        blank: index of the blank class.

    Returns:
        (loss, grad) where grad is d loss / d log_probs.
    """
    label = list(label)
    if any(c == blank for c in label):
        raise ValueError("labels must not contain the blank class")
    t_len = log_probs.shape[0]
    if min_frames_for(label) > t_len:
        raise ValueError(
            f"label unalignable: needs at least {min_frames_for(label)} frames, got {t_len}"
        )
    ext = _extend_with_blanks(label, blank)
    loss, grad = kernels.ctc_forward_backward(
        np.ascontiguousarray(log_probs, dtype=np.float64), ext
    )
    return loss, grad


def ctc_loss_from_logits(logits: np.ndarray, label, blank: int) -> tuple[float, np.ndarray]:
    """CTC loss on unnormalized scores; grad folds in the softmax Jacobian.

    For log-softmax outputs the chain rule collapses to
    grad_logits = probs - posterior, which is what this returns.
    """
    lp = log_softmax(logits.astype(np.float64, copy=False))
    loss, grad_lp = ctc_loss(lp, label, blank)
    q = -grad_lp  # per-frame posterior, rows sum to 1
    grad_logits = np.exp(lp) - q
    return loss, grad_logits


def collapse_path(path, blank: int) -> list[int]:
    """Merge adjacent repeats, then delete blanks."""
    out = []
    prev = None
    for k in path:
        if k != prev:
            if k != blank:
                out.append(k)
            prev = k
    return out


def _strip_separator(indices, cs: CharSet) -> list[int]:
    return [i for i in indices if i != cs.separator_class]


def ctc_greedy_decode(probs: np.ndarray, cs: CharSet) -> str:
    """Best-path decoding: frame argmax, collapse, drop blank and separator."""
    path = probs.argmax(axis=-1)
    return cs.decode(_strip_separator(collapse_path(path, cs.blank_class), cs))


def _logaddexp(a: float, b: float) -> float:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


def beam_search(log_probs: np.ndarray, width: int, blank: int) -> list[tuple[tuple, float]]:
    """Prefix beam search over labelings.

    Each candidate prefix tracks separate mass for paths ending in blank vs
    ending in its last symbol, so repeated characters merge correctly.
    Returns surviving (prefix, total log prob) pairs, best first; ties break
    lexicographically.
    """
    if width < 1:
        raise ValueError("beam width must be >= 1")
    t_len, n_classes = log_probs.shape
    beams: dict[tuple, tuple[float, float]] = {(): (0.0, NEG_INF)}
    for t in range(t_len):
        row = log_probs[t]
        new: dict[tuple, tuple[float, float]] = {}
        for prefix, (pb, pnb) in beams.items():
            ptot = _logaddexp(pb, pnb)
            last = prefix[-1] if prefix else None
            # stay on this prefix via a blank frame
            nb, nnb = new.get(prefix, (NEG_INF, NEG_INF))
            nb = _logaddexp(nb, ptot + row[blank])
            if last is not None:
                # repeat of the final symbol merges into the same prefix
                nnb = _logaddexp(nnb, pnb + row[last])
            new[prefix] = (nb, nnb)
            for k in range(n_classes):
                if k == blank or k == last:
                    continue
                ext = prefix + (k,)
                eb, enb = new.get(ext, (NEG_INF, NEG_INF))
                new[ext] = (eb, _logaddexp(enb, ptot + row[k]))
            if last is not None:
                # emitting the final symbol again after a blank extends the prefix
                ext = prefix + (last,)
                eb, enb = new.get(ext, (NEG_INF, NEG_INF))
                new[ext] = (eb, _logaddexp(enb, pb + row[last]))
        ranked = sorted(new.items(), key=lambda kv: (-_logaddexp(*kv[1]), kv[0]))
        beams = dict(ranked[:width])
    final = sorted(beams.items(), key=lambda kv: (-_logaddexp(*kv[1]), kv[0]))
    return [(prefix, _logaddexp(*masses)) for prefix, masses in final]


def ctc_beam_decode(probs: np.ndarray, width: int, cs: CharSet) -> str:
    """Most probable labeling under prefix beam search (paper setting: width 5)."""
    with np.errstate(divide="ignore"):
        lp = np.log(probs)
    best, _ = beam_search(lp, width, cs.blank_class)[0]
    return cs.decode(_strip_separator(best, cs))
