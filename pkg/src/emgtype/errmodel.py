"""Edit-distance scoring and the maximum-likelihood noisy-channel model.

The channel generates an observed string from a source string as follows:
before each source character, and once more before end-of-string, a
geometric loop emits spurious insertions (continue with probability P_ins,
each inserted symbol drawn from p_ins); each source character x is then
either deleted with probability p_del(x) or received as y with probability
p_sub(x, y), so p_del(x) + sum_y p_sub(x, y) = 1 for every x. Parameters
are fitted by expectation-maximization over alignment lattices.
"""

from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .charset import NAME_OF_KEY, KEY_NAMES, CharSet, FingerMap, FINGER_ORDER

# ---------------------------------------------------------------------------
# Edit distance


def edit_distance(a, b) -> tuple[int, list[tuple[str, str | None, str | None]]]:
    """Levenshtein distance plus one optimal alignment.

    The alignment is a list of (op, source_symbol, target_symbol) with op in
    {match, sub, del, ins}; replaying it on ``a`` produces ``b``. Ties
    prefer match/substitute over delete over insert.
    """
    n, m = len(a), len(b)
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dist[i][0] = i
    for j in range(1, m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        row = dist[i]
        prev = dist[i - 1]
        ai = a[i - 1]
        for j in range(1, m + 1):
            cost = 0 if ai == b[j - 1] else 1
            row[j] = min(prev[j - 1] + cost, prev[j] + 1, row[j - 1] + 1)
    ops: list[tuple[str, str | None, str | None]] = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            cost = 0 if a[i - 1] == b[j - 1] else 1
            if dist[i][j] == dist[i - 1][j - 1] + cost:
                ops.append(("match" if cost == 0 else "sub", a[i - 1], b[j - 1]))
                i -= 1
                j -= 1
                continue
        if i > 0 and dist[i][j] == dist[i - 1][j] + 1:
            ops.append(("del", a[i - 1], None))
            i -= 1
            continue
        ops.append(("ins", None, b[j - 1]))
        j -= 1
    ops.reverse()
    return dist[n][m], ops


def char_accuracy(pred, truth) -> float:
    """1 - edit_distance/|truth|, clamped at zero."""
    if len(truth) == 0:
        if len(pred) == 0:
            return 1.0
        warnings.warn("non-empty prediction scored against empty truth", stacklevel=2)
        return 0.0
    d, _ = edit_distance(pred, truth)
    return max(0.0, 1.0 - d / len(truth))


def corpus_accuracy(pairs) -> float:
    """Micro-averaged accuracy: 1 - (total distance) / (total truth length)."""
    total_d = 0
    total_n = 0
    for pred, truth in pairs:
        d, _ = edit_distance(pred, truth)
        total_d += d
        total_n += len(truth)
    if total_n == 0:
        return 1.0 if total_d == 0 else 0.0
    return max(0.0, 1.0 - total_d / total_n)


# ---------------------------------------------------------------------------
# Channel model


@dataclass(frozen=True)
class ChannelModel:
    """Noisy-channel parameters over a fixed alphabet."""

    alphabet: tuple[str, ...]
    p_del: np.ndarray  # [K]
    P_ins: float
    p_ins: np.ndarray  # [K]
    p_sub: np.ndarray  # [K, K]

    def __post_init__(self):
        k = len(self.alphabet)
        if self.p_del.shape != (k,) or self.p_ins.shape != (k,) or self.p_sub.shape != (k, k):
            raise ValueError("parameter shapes do not match the alphabet")

    @property
    def index(self) -> dict[str, int]:
        return {c: i for i, c in enumerate(self.alphabet)}

    def validate(self, atol: float = 1e-12) -> None:
        if np.any(self.p_del < 0) or np.any(self.p_ins < 0) or np.any(self.p_sub < 0):
            raise ValueError("negative probability")
        if not 0 <= self.P_ins < 1:
            raise ValueError("P_ins must be in [0, 1)")
        row = self.p_del + self.p_sub.sum(axis=1)
        if np.max(np.abs(row - 1.0)) > atol:
            raise ValueError("p_del(x) + sum_y p_sub(x, y) must equal 1 for every x")
        if abs(self.p_ins.sum() - 1.0) > atol:
            raise ValueError("p_ins must sum to 1")

    def encode(self, text) -> np.ndarray:
        idx = self.index
        try:
            return np.array([idx[c] for c in text], dtype=np.int64)
        except KeyError as e:
            raise ValueError(f"symbol not in model alphabet: {e.args[0]!r}") from None


def uniform_diagonal_init(alphabet, diag=0.9, p_del=0.02, P_ins=0.01) -> ChannelModel:
    """Strictly positive starting point: near-identity substitutions.

    The diag/uniform/deletion masses are renormalized jointly so each row
    satisfies the deletion-substitution constraint exactly.
    """
    k = len(alphabet)
    sub = np.full((k, k), (1.0 - diag) / k) + np.eye(k) * diag
    dele = np.full(k, p_del)
    total = dele + sub.sum(axis=1)
    sub /= total[:, None]
    dele /= total
    return ChannelModel(
        alphabet=tuple(alphabet),
        p_del=dele,
        P_ins=P_ins,
        p_ins=np.full(k, 1.0 / k),
        p_sub=sub,
    )


class _LogModel:
    """Log-domain view of a ChannelModel used by the lattice routines."""

    def __init__(self, m: ChannelModel):
        with np.errstate(divide="ignore"):
            self.l_del = np.log(m.p_del) + np.log1p(-m.P_ins)
            self.l_sub = np.log(m.p_sub) + np.log1p(-m.P_ins)
            self.l_ins = (np.log(m.P_ins) if m.P_ins > 0 else -np.inf) + np.log(m.p_ins)
        self.l_exit = np.log1p(-m.P_ins)


def _ins_chain(base: np.ndarray, w: np.ndarray) -> np.ndarray:
    """out[j] = logaddexp(base[j], out[j-1] + w[j-1]): insertion runs ending at j."""
    m = len(w)
    if m == 0:
        return base
    if np.isfinite(w).all():
        wcum = np.concatenate([[0.0], np.cumsum(w)])
        return np.logaddexp.accumulate(base - wcum) + wcum
    # -inf weights act as barriers; fall back to the sequential form
    out = np.empty_like(base)
    out[0] = base[0]
    for j in range(1, m + 1):
        out[j] = np.logaddexp(base[j], out[j - 1] + w[j - 1])
    return out


def _ins_chain_rev(base: np.ndarray, w: np.ndarray) -> np.ndarray:
    """out[j] = logaddexp(base[j], out[j+1] + w[j]): insertion runs starting at j."""
    m = len(w)
    if m == 0:
        return base
    if np.isfinite(w).all():
        wcum = np.concatenate([[0.0], np.cumsum(w)])
        acc = np.logaddexp.accumulate((base + wcum)[::-1])[::-1]
        return acc - wcum
    out = np.empty_like(base)
    out[m] = base[m]
    for j in range(m - 1, -1, -1):
        out[j] = np.logaddexp(base[j], out[j + 1] + w[j])
    return out


def _forward_lattice(lm: _LogModel, src: np.ndarray, obs: np.ndarray) -> np.ndarray:
    """V[i, j] = log prob of consuming src[:i] and emitting obs[:j]."""
    n, m = len(src), len(obs)
    w = lm.l_ins[obs] if m else np.zeros(0)
    v = np.full((n + 1, m + 1), -np.inf)
    base = np.full(m + 1, -np.inf)
    base[0] = 0.0
    v[0] = _ins_chain(base, w)
    for i in range(1, n + 1):
        s = src[i - 1]
        base = v[i - 1] + lm.l_del[s]
        if m:
            base[1:] = np.logaddexp(base[1:], v[i - 1, :-1] + lm.l_sub[s, obs])
        v[i] = _ins_chain(base, w)
    return v


def _backward_lattice(lm: _LogModel, src: np.ndarray, obs: np.ndarray) -> np.ndarray:
    """B[i, j] = log prob of finishing the generation from state (i, j)."""
    n, m = len(src), len(obs)
    w = lm.l_ins[obs] if m else np.zeros(0)
    b = np.full((n + 1, m + 1), -np.inf)
    base = np.full(m + 1, -np.inf)
    base[m] = lm.l_exit
    b[n] = _ins_chain_rev(base, w)
    for i in range(n - 1, -1, -1):
        s = src[i]
        base = b[i + 1] + lm.l_del[s]
        if m:
            base[:-1] = np.logaddexp(base[:-1], b[i + 1, 1:] + lm.l_sub[s, obs])
        b[i] = _ins_chain_rev(base, w)
    return b


def pair_log_likelihood(m: ChannelModel, source, observed) -> float:
    """Exact log P(observed | source) summed over all generation histories."""
    src = m.encode(source)
    obs = m.encode(observed)
    lm = _LogModel(m)
    v = _forward_lattice(lm, src, obs)
    return float(v[len(src), len(obs)] + lm.l_exit)


@dataclass
class _Counts:
    sub: np.ndarray  # [K, K] expected substitution emissions
    dele: np.ndarray  # [K] expected deletions
    ins: np.ndarray  # [K] expected insertion emissions
    exits: float  # insertion-loop exits (deterministic: one per transmission + end)
    loglik: float


def expected_counts(m: ChannelModel, pairs) -> _Counts:
    """E-step: posterior-weighted operation counts over all pairs.

    ``pairs`` is an iterable of (source, observed) strings; duplicates are
    grouped internally. Raises if any pair has zero likelihood under ``m``.
    """
    k = len(m.alphabet)
    counts = _Counts(np.zeros((k, k)), np.zeros(k), np.zeros(k), 0.0, 0.0)
    lm = _LogModel(m)
    grouped = Counter((tuple(s), tuple(o)) for s, o in pairs)
    for (s_sym, o_sym), weight in grouped.items():
        src = m.encode(s_sym)
        obs = m.encode(o_sym)
        v = _forward_lattice(lm, src, obs)
        b = _backward_lattice(lm, src, obs)
        ll = v[len(src), len(obs)] + lm.l_exit
        if not np.isfinite(ll):
            raise ValueError(
                f"init support too small: pair {(''.join(s_sym), ''.join(o_sym))!r} "
                "has zero likelihood"
            )
        counts.loglik += weight * ll
        counts.exits += weight * (len(src) + 1)
        if len(obs):
            post_ins = np.exp(v[:, :-1] + lm.l_ins[obs][None, :] + b[:, 1:] - ll)
            np.add.at(counts.ins, obs, weight * post_ins.sum(axis=0))
        if len(src):
            post_del = np.exp(v[:-1, :] + lm.l_del[src][:, None] + b[1:, :] - ll)
            np.add.at(counts.dele, src, weight * post_del.sum(axis=1))
            if len(obs):
                post_sub = np.exp(
                    v[:-1, :-1] + lm.l_sub[np.ix_(src, obs)] + b[1:, 1:] - ll
                )
                np.add.at(counts.sub, (src[:, None], obs[None, :]), weight * post_sub)
    return counts


def _m_step(m: ChannelModel, c: _Counts, smoothing: float) -> ChannelModel:
    k = len(m.alphabet)
    trans = c.dele + c.sub.sum(axis=1)  # expected transmissions of each char
    denom = trans + smoothing * (k + 1)
    safe = denom > 0
    p_del = np.where(safe, (c.dele + smoothing) / np.where(safe, denom, 1.0), m.p_del)
    p_sub = np.where(
        safe[:, None], (c.sub + smoothing) / np.where(safe, denom, 1.0)[:, None], m.p_sub
    )
    ins_total = c.ins.sum()
    if ins_total + smoothing * k > 0:
        p_ins = (c.ins + smoothing) / (ins_total + smoothing * k)
    else:
        p_ins = m.p_ins
    P_ins = float(ins_total / (ins_total + c.exits)) if c.exits > 0 else m.P_ins
    return ChannelModel(alphabet=m.alphabet, p_del=p_del, P_ins=P_ins, p_ins=p_ins, p_sub=p_sub)


def em_fit(
    pairs,
    init: ChannelModel,
    max_iters: int = 100,
    tol: float = 1e-8,
    smoothing: float = 0.0,
) -> tuple[ChannelModel, list[float]]:
    """Maximum-likelihood channel fit.

    Returns the fitted model and the per-iteration total log-likelihood of
    the model *entering* each E-step; entries are non-decreasing.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("em_fit needs at least one pair")
    init.validate(atol=1e-9)
    model = init
    history: list[float] = []
    for _ in range(max_iters):
        counts = expected_counts(model, pairs)
        history.append(counts.loglik)
        model = _m_step(model, counts, smoothing)
        model.validate(atol=1e-12)
        if len(history) >= 2 and history[-1] - history[-2] < tol:
            break
    return model, history


def fit_paper_style(
    predictions, cs: CharSet, smoothing: float = 1e-6, max_iters: int = 100
) -> tuple[ChannelModel, list[float]]:
    """Fit the channel on decoded transcripts.

    ``predictions`` is an iterable of (predicted, recorded) text pairs; the
    recorded text is the channel source and the prediction the observation.
    """
    pairs = [(recorded, predicted) for predicted, recorded in predictions]
    init = uniform_diagonal_init(cs.chars)
    return em_fit(pairs, init, max_iters=max_iters, smoothing=smoothing)


def finger_confusion(
    m: ChannelModel, fm: FingerMap, cs: CharSet
) -> tuple[np.ndarray, np.ndarray, tuple[str, ...]]:
    """Aggregate the per-character channel to finger level.

    Characters are weighted by their corpus frequency within each finger,
    so rows of (substitution matrix + deletion vector) sum to 1.
    """
    fingers = FINGER_ORDER
    fpos = {f: i for i, f in enumerate(fingers)}
    k = len(fingers)
    fsub = np.zeros((k, k))
    fdel = np.zeros(k)
    weight_tot = np.zeros(k)
    idx = m.index
    unmapped = [ch for ch in m.alphabet if ch not in fm.finger_of]
    if unmapped:
        raise ValueError(f"characters with no finger assignment: {unmapped!r}")
    for ch in m.alphabet:
        f = fm.finger_of[ch]
        w = cs.freq[ch]
        fi = fpos[f]
        weight_tot[fi] += w
        row = m.p_sub[idx[ch]]
        for ch2 in m.alphabet:
            fsub[fi, fpos[fm.finger_of[ch2]]] += w * row[idx[ch2]]
        fdel[fi] += w * m.p_del[idx[ch]]
    nz = weight_tot > 0
    fsub[nz] /= weight_tot[nz, None]
    fdel[nz] /= weight_tot[nz]
    return fsub, fdel, fingers


# ---------------------------------------------------------------------------
# CSV serialization: substitution matrix, deletion and insertion vectors, and
# the scalar insertion-start probability, with headers naming the alphabet.


def _sym_name(ch: str) -> str:
    return NAME_OF_KEY.get(ch, ch)


def _sym_parse(name: str) -> str:
    return KEY_NAMES.get(name, name)


def save_channel_model(m: ChannelModel, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    names = [_sym_name(c) for c in m.alphabet]
    with open(d / "substitution.csv", "w", encoding="utf-8") as f:
        f.write("source," + ",".join(names) + "\n")
        for i, c in enumerate(names):
            f.write(c + "," + ",".join(repr(float(x)) for x in m.p_sub[i]) + "\n")
    with open(d / "deletion.csv", "w", encoding="utf-8") as f:
        f.write("char,p_del\n")
        for c, x in zip(names, m.p_del):
            f.write(f"{c},{float(x)!r}\n")
    with open(d / "insertion.csv", "w", encoding="utf-8") as f:
        f.write("char,p_ins\n")
        for c, x in zip(names, m.p_ins):
            f.write(f"{c},{float(x)!r}\n")
    with open(d / "scalars.csv", "w", encoding="utf-8") as f:
        f.write("name,value\n")
        f.write(f"P_ins,{float(m.P_ins)!r}\n")


def load_channel_model(directory) -> ChannelModel:
    d = Path(directory)
    with open(d / "substitution.csv", "r", encoding="utf-8") as f:
        header = f.readline().strip().split(",")[1:]
        alphabet = tuple(_sym_parse(n) for n in header)
        k = len(alphabet)
        sub = np.zeros((k, k))
        for i, line in enumerate(f):
            parts = line.rstrip("\n").split(",")
            sub[i] = [float(x) for x in parts[1:]]
    dele = np.zeros(k)
    with open(d / "deletion.csv", "r", encoding="utf-8") as f:
        f.readline()
        for i, line in enumerate(f):
            dele[i] = float(line.rstrip("\n").split(",")[1])
    ins = np.zeros(k)
    with open(d / "insertion.csv", "r", encoding="utf-8") as f:
        f.readline()
        for i, line in enumerate(f):
            ins[i] = float(line.rstrip("\n").split(",")[1])
    with open(d / "scalars.csv", "r", encoding="utf-8") as f:
        f.readline()
        p_ins_event = float(f.readline().rstrip("\n").split(",")[1])
    return ChannelModel(alphabet=alphabet, p_del=dele, P_ins=p_ins_event, p_ins=ins, p_sub=sub)
