"""Keylog ingestion, block segmentation, and a synthetic signal generator.

The generator exists so the whole pipeline can be exercised end to end at
desk scale: each typed character excites a small finger-and-row specific
subset of channels with a short amplitude envelope over band-limited noise,
so adjacent same-finger keys are genuinely confusable while distinct
fingers are not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .charset import KEY_NAMES, KEY_ROW, NAME_OF_KEY, CharSet, FingerMap, default_charset
from .signals import ChannelLayout, Recording


@dataclass(frozen=True)
class KeyEvent:
    time_s: float
    key: str
    in_set: bool = True


@dataclass(frozen=True)
class KeyLog:
    events: tuple[KeyEvent, ...]

    def __post_init__(self):
        times = [e.time_s for e in self.events]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("keylog timestamps must be non-decreasing")

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class LabeledBlock:
    """One fixed-duration signal window and the keystrokes typed inside it."""

    signal: Recording
    label: str
    origin: tuple[str, int]


def _canonical_key(name: str, cs: CharSet) -> tuple[str, bool]:
    if name in KEY_NAMES:
        key = KEY_NAMES[name]
        return key, key in cs
    if len(name) == 1:
        return name, name in cs
    return name, False


def ingest_keylog(path, cs: CharSet | None = None) -> KeyLog:
    """Parse a keylog CSV of ``timestamp_ms,key_name`` lines.

    Keys outside the alphabet are kept but flagged out-of-set so that
    segmentation can discard the blocks containing them. Timestamps may
    wobble backwards by at most 1 ms (clock granularity); anything worse
    is rejected.
    """
    cs = cs or default_charset()
    events: list[KeyEvent] = []
    prev_t = None
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            ts_str, sep, name = line.partition(",")
            if not sep or not name:
                raise ValueError(f"malformed line at line {lineno}: {line!r}")
            try:
                t = float(ts_str) / 1000.0
            except ValueError:
                raise ValueError(f"malformed timestamp at line {lineno}: {ts_str!r}") from None
            if prev_t is not None and t < prev_t - 1e-3:
                raise ValueError(f"non-monotonic timestamps at line {lineno}")
            key, in_set = _canonical_key(name, cs)
            events.append(KeyEvent(time_s=t, key=key, in_set=in_set))
            prev_t = max(t, prev_t) if prev_t is not None else t
    # clamp 1 ms wobble so the container invariant holds
    fixed = []
    last = -math.inf
    for e in events:
        t = max(e.time_s, last)
        fixed.append(KeyEvent(t, e.key, e.in_set) if t != e.time_s else e)
        last = t
    return KeyLog(events=tuple(fixed))


def write_keylog(path, log: KeyLog) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for e in log.events:
            name = NAME_OF_KEY.get(e.key, e.key)
            f.write(f"{e.time_s * 1000.0:.3f},{name}\n")


def segment_blocks(
    rec: Recording,
    log: KeyLog,
    cs: CharSet | None = None,
    block_seconds: float = 15.0,
) -> tuple[list[LabeledBlock], int]:
    """Cut a session into fixed blocks labeled with the keys pressed inside.

    The partial block at the end of the session is discarded, and so is any
    block containing an out-of-alphabet keystroke. Returns the retained
    blocks and the count dropped as invalid.
    """
    cs = cs or default_charset()
    n_blocks = int(rec.duration_seconds / block_seconds)
    block_len = int(round(block_seconds * rec.sample_rate))
    blocks: list[LabeledBlock] = []
    n_invalid = 0
    for b in range(n_blocks):
        t0, t1 = b * block_seconds, (b + 1) * block_seconds
        keys = [e for e in log.events if t0 <= e.time_s < t1]
        if any(not (e.in_set and e.key in cs) for e in keys):
            n_invalid += 1
            continue
        i0 = b * block_len
        sig = Recording(
            samples=rec.samples[:, i0 : i0 + block_len],
            sample_rate=rec.sample_rate,
            session_id=rec.session_id,
        )
        blocks.append(
            LabeledBlock(signal=sig, label="".join(e.key for e in keys), origin=(rec.session_id, b))
        )
    return blocks, n_invalid


def sample_text(cs: CharSet, length: int, seed: int) -> str:
    """Draw ``length`` i.i.d. symbols from the alphabet's corpus frequencies."""
    if length < 0:
        raise ValueError("length must be >= 0")
    if length == 0:
        return ""
    rng = np.random.default_rng(seed)
    probs = np.array([cs.freq[c] for c in cs.chars])
    idx = rng.choice(len(cs.chars), size=length, p=probs)
    return "".join(cs.chars[i] for i in idx)


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the synthetic generator; defaults follow the measured corpus rate.

    ``tone_mix`` blends a finger/row-specific spectral line (still inside
    the 10-1000 Hz acquisition band) into each burst's noise carrier; keys
    typed by the same finger on adjacent rows sit 12 Hz apart, so they stay
    confusable while distinct fingers separate cleanly.
    """

    chars_per_second: float = 5.03
    snr: float = 10.0
    jitter_ms: float = 10.0
    overlap: bool = True
    seed: int = 0
    sample_rate: float = 2000.0
    amplitude: float = 6000.0
    lead_seconds: float = 0.75
    tone_mix: float = 0.5

    def __post_init__(self):
        if self.chars_per_second <= 0:
            raise ValueError("chars_per_second must be positive")
        if self.snr <= 0:
            raise ValueError("snr must be positive")
        if not 0 <= self.tone_mix <= 1:
            raise ValueError("tone_mix must be in [0, 1]")


def _burst_ms(ch: str) -> float:
    # space and the two motion-heavy control keys run longer than letters
    if ch == " ":
        return 140.0
    if ch in ("\n", "\b"):
        return 125.0
    return 90.0


def burst_tone_hz(ch: str, fm: FingerMap) -> float:
    """Spectral line of a keystroke burst: finger sets the band, row the offset."""
    finger = fm.finger_of[ch]
    fi = 8 if finger == "R-thumb" else (int(finger[1]) - 2) + (0 if finger[0] == "L" else 4)
    return 70.0 + 40.0 * fi + 12.0 * KEY_ROW[ch]


def channel_weights(ch: str, fm: FingerMap, layout: ChannelLayout) -> np.ndarray:
    """Per-channel excitation weights for one keystroke.

    Fingers anchor at fixed electrodes on their arm; the keyboard row sets
    the weight of the neighboring electrode, so same-finger keys on
    adjacent rows produce similar patterns.
    """
    per_arm = layout.per_arm
    w = np.zeros(2 * per_arm)
    finger = fm.finger_of[ch]
    if finger == "R-thumb":
        w[per_arm:] = 0.5
        return w
    arm = 0 if finger.startswith("L") else 1
    off = arm * per_arm
    fi = int(finger[1]) - 2  # 0 = index .. 3 = pinkie
    anchor = round(fi * (per_arm - 1) / 3) if per_arm > 1 else 0
    w[off + anchor] = 1.0
    if per_arm > 1:
        neighbor = anchor + 1 if anchor + 1 < per_arm else anchor - 1
        w[off + neighbor] = 0.30 + 0.25 * KEY_ROW[ch]
        if ch in ("\n", "\b"):
            # whole-hand reach: spill onto one more electrode
            extra = anchor - 2 if anchor - 2 >= 0 else anchor + 2
            if 0 <= extra < per_arm:
                w[off + extra] = 0.6
    return w


def _bandlimit(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    """White noise restricted to the 10-1000 Hz acquisition band, unit RMS."""
    x = rng.standard_normal(shape)
    spec = np.fft.rfft(x, axis=-1)
    freqs = np.fft.rfftfreq(shape[-1], d=1.0 / rate)
    mask = (freqs >= 10.0) & (freqs <= 1000.0)
    if not mask.any():
        mask = freqs > 0
    spec *= mask
    y = np.fft.irfft(spec, shape[-1], axis=-1)
    rms = np.sqrt(np.mean(y**2, axis=-1, keepdims=True))
    rms[rms == 0] = 1.0
    return y / rms


def generate_synthetic(
    cfg: SynthConfig,
    text: str,
    cs: CharSet,
    fm: FingerMap,
    layout: ChannelLayout,
) -> tuple[Recording, KeyLog]:
    """Synthesize an sEMG session for ``text`` plus its ground-truth keylog.

    Keystroke times follow exponential inter-arrivals at the configured
    rate with optional jitter; each keystroke adds an enveloped band-limited
    burst on its character's channel subset, on top of a baseline noise
    floor scaled by 1/snr. Deterministic per seed.
    """
    if not text:
        raise ValueError("text must be non-empty")
    missing = [c for c in text if c not in cs]
    if missing:
        raise ValueError(f"text contains out-of-set symbols: {missing[:5]!r}")

    rng = np.random.default_rng(cfg.seed)
    rate = cfg.sample_rate
    n_keys = len(text)

    gaps = rng.exponential(1.0 / cfg.chars_per_second, size=n_keys)
    times = cfg.lead_seconds + np.cumsum(gaps)
    if cfg.jitter_ms > 0:
        times = times + rng.normal(0.0, cfg.jitter_ms / 1000.0, size=n_keys)
    durs = np.array([_burst_ms(c) / 1000.0 for c in text])
    # keep presses ordered (and non-overlapping when requested)
    for i in range(1, n_keys):
        floor_t = times[i - 1] + (durs[i - 1] if not cfg.overlap else 1e-3)
        if times[i] < floor_t:
            times[i] = floor_t

    total_s = times[-1] + durs[-1] + cfg.lead_seconds
    n = int(math.ceil(total_s * rate))
    sig = _bandlimit(rng, (layout.n_channels, n), rate) * (cfg.amplitude / cfg.snr)

    for ch, t0, dur in zip(text, times, durs):
        m = int(round(dur * rate))
        if m < 2:
            continue
        i0 = int(round(t0 * rate))
        env = np.hanning(m)
        carrier = np.sqrt(1.0 - cfg.tone_mix) * _bandlimit(rng, (m,), rate)
        if cfg.tone_mix > 0:
            phase = rng.uniform(0, 2 * np.pi)
            tone = np.sin(2 * np.pi * burst_tone_hz(ch, fm) * np.arange(m) / rate + phase)
            carrier = carrier + np.sqrt(2.0 * cfg.tone_mix) * tone
        w = channel_weights(ch, fm, layout)
        burst = np.outer(w, env * carrier) * cfg.amplitude
        i1 = min(i0 + m, n)
        sig[:, i0:i1] += burst[:, : i1 - i0]

    quantized = np.clip(np.rint(sig), -32768, 32767).astype(np.int16)
    rec = Recording(samples=quantized, sample_rate=rate, session_id=f"synth-{cfg.seed}")
    log = KeyLog(events=tuple(KeyEvent(float(t), c) for t, c in zip(times, text)))
    return rec, log


# ---------------------------------------------------------------------------
# Dataset manifest: one CSV line per session, "recording_path,keylog_path",
# relative to the manifest file.


def write_manifest(path, entries) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for emgr, keylog in entries:
            f.write(f"{emgr},{keylog}\n")


def read_manifest(path) -> list[tuple[Path, Path]]:
    base = Path(path).parent
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            emgr, sep, keylog = line.partition(",")
            if not sep:
                raise ValueError(f"malformed manifest line {lineno}: {line!r}")
            out.append((base / emgr, base / keylog))
    return out
