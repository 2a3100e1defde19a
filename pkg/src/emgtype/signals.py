"""Multichannel recording container, Fourier resampling, spatial interpolation.

The resampler is periodic (Fourier) resampling: per-channel DFT, spectrum
truncation or zero-padding to the target bin count, inverse transform, and
amplitude rescaling by the length ratio. Edge artifacts are inherent to the
periodic assumption; measurements exclude margins at both ends.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

_ALLOWED_DTYPES = (np.int16, np.float32, np.float64)


@dataclass(frozen=True)
class Recording:
    """A multichannel signal stored channel-major: samples[channel, sample]."""

    samples: np.ndarray
    sample_rate: float
    session_id: str = ""

    def __post_init__(self):
        if self.samples.ndim != 2:
            raise ValueError("samples must be a 2-D [channel, sample] array")
        if self.samples.dtype not in [np.dtype(d) for d in _ALLOWED_DTYPES]:
            raise ValueError(f"unsupported sample dtype {self.samples.dtype}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.n_channels < 1:
            raise ValueError("need at least one channel")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_seconds(self) -> float:
        return self.n_samples / self.sample_rate


@dataclass(frozen=True)
class ChannelLayout:
    """Two-arm electrode layout: contiguous channel blocks, left arm first."""

    per_arm: int = 16
    arm_order: tuple[str, str] = ("left", "right")

    def __post_init__(self):
        if self.per_arm < 1:
            raise ValueError("per_arm must be >= 1")

    @property
    def n_channels(self) -> int:
        return 2 * self.per_arm

    def arm_slice(self, arm: int) -> slice:
        return slice(arm * self.per_arm, (arm + 1) * self.per_arm)


def _fourier_resample(x: np.ndarray, m: int) -> np.ndarray:
    """Resample real rows of ``x`` to length ``m`` by spectrum truncation/padding."""
    n = x.shape[-1]
    spec = np.fft.rfft(x, axis=-1)
    out = np.zeros(x.shape[:-1] + (m // 2 + 1,), dtype=spec.dtype)
    ncopy = min(m, n)
    half = ncopy // 2 + 1
    out[..., :half] = spec[..., :half]
    if ncopy % 2 == 0:
        if m < n:
            # fold the discarded negative-Nyquist bin into the kept one
            out[..., ncopy // 2] *= 2.0
        elif m > n:
            # split the old Nyquist bin across the +/- pair it becomes
            out[..., ncopy // 2] *= 0.5
    return np.fft.irfft(out, m, axis=-1) * (m / n)


def resample_temporal(rec: Recording, target_hz: float) -> Recording:
    """Resample every channel to ``target_hz``; channels stay independent."""
    if target_hz <= 0:
        raise ValueError("degenerate target rate")
    if rec.n_samples == 0:
        raise ValueError("empty input")
    m = int(round(rec.n_samples * target_hz / rec.sample_rate))
    if m < 2:
        raise ValueError("degenerate target rate")
    y = _fourier_resample(rec.samples.astype(np.float64, copy=False), m)
    return Recording(samples=y, sample_rate=target_hz, session_id=rec.session_id)


def roundtrip_degrade(rec: Recording, low_hz: float) -> Recording:
    """Band-limit a recording to ``low_hz/2`` while keeping its rate and length.

    Resamples down to ``low_hz`` and back up, then pads/truncates the last
    sample if rounding moved the length by one. At ``low_hz`` equal to the
    recording's own rate the projection keeps the full band, so the input is
    returned unchanged.
    """
    if not 0 < low_hz <= rec.sample_rate:
        raise ValueError("low_hz must be in (0, sample_rate]")
    if low_hz == rec.sample_rate:
        return rec
    up = resample_temporal(resample_temporal(rec, low_hz), rec.sample_rate)
    y = up.samples
    if y.shape[1] > rec.n_samples:
        y = y[:, : rec.n_samples]
    elif y.shape[1] < rec.n_samples:
        pad = np.zeros((y.shape[0], rec.n_samples - y.shape[1]), dtype=y.dtype)
        y = np.concatenate([y, pad], axis=1)
    return Recording(samples=y, sample_rate=rec.sample_rate, session_id=rec.session_id)


def spatial_positions(per_arm: int, k: int) -> np.ndarray:
    """Electrode positions retained when thinning one arm to ``k`` channels.

    Channel 0, channel ``per_arm - 1``, and ``k - 2`` equally spaced points
    between them; fractional positions denote synthetic channels. ``k = 1``
    keeps only the midpoint.
    """
    if not 1 <= k <= per_arm:
        raise ValueError(f"k must be in [1, {per_arm}]")
    if k == 1:
        return np.array([(per_arm - 1) / 2.0])
    return np.arange(k) * (per_arm - 1) / (k - 1)


def downsample_spatial(rec: Recording, layout: ChannelLayout, k: int) -> Recording:
    """Thin each arm to ``k`` channels via linear interpolation between neighbors.

    Synthetic channels stay real-valued; no re-quantization is applied.
    """
    if rec.n_channels != layout.n_channels:
        raise ValueError(
            f"recording has {rec.n_channels} channels, layout expects {layout.n_channels}"
        )
    positions = spatial_positions(layout.per_arm, k)
    out = np.empty((2 * k, rec.n_samples), dtype=np.float32)
    src = rec.samples
    for arm in range(2):
        block = src[layout.arm_slice(arm)]
        for i, p in enumerate(positions):
            c = int(np.floor(p))
            f = p - c
            if f == 0.0:
                out[arm * k + i] = block[c]
            else:
                out[arm * k + i] = (1.0 - f) * block[c].astype(np.float64) + f * block[
                    c + 1
                ].astype(np.float64)
    return Recording(samples=out, sample_rate=rec.sample_rate, session_id=rec.session_id)


# ---------------------------------------------------------------------------
# EMGR container: magic "EMGR", u32 version, u32 n_channels, u32 sample_rate,
# u64 n_samples, u8 sample_kind (0 = int16, 1 = float32), then channel-major
# raw little-endian samples.

_EMGR_MAGIC = b"EMGR"
_EMGR_VERSION = 1
_EMGR_HEADER = struct.Struct("<4sIIIQB")
_KIND_TO_DTYPE = {0: np.dtype("<i2"), 1: np.dtype("<f4")}
_DTYPE_TO_KIND = {np.dtype(np.int16): 0, np.dtype(np.float32): 1}


def write_emgr(path, rec: Recording) -> None:
    """Write a recording in the EMGR container (bit-exact round-trip)."""
    kind = _DTYPE_TO_KIND.get(rec.samples.dtype)
    if kind is None:
        raise ValueError(
            f"EMGR stores int16 or float32 samples, not {rec.samples.dtype}; convert first"
        )
    if not float(rec.sample_rate).is_integer():
        raise ValueError("EMGR stores integer sample rates")
    header = _EMGR_HEADER.pack(
        _EMGR_MAGIC, _EMGR_VERSION, rec.n_channels, int(rec.sample_rate), rec.n_samples, kind
    )
    body = np.ascontiguousarray(rec.samples).astype(_KIND_TO_DTYPE[kind], copy=False)
    with open(path, "wb") as f:
        f.write(header)
        f.write(body.tobytes())


def read_emgr(path) -> Recording:
    path = Path(path)
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _EMGR_HEADER.size:
        raise ValueError(f"{path}: truncated EMGR header")
    magic, version, n_channels, rate, n_samples, kind = _EMGR_HEADER.unpack_from(raw)
    if magic != _EMGR_MAGIC:
        raise ValueError(f"{path}: not an EMGR file")
    if version != _EMGR_VERSION:
        raise ValueError(f"{path}: unsupported EMGR version {version}")
    if kind not in _KIND_TO_DTYPE:
        raise ValueError(f"{path}: unknown sample kind {kind}")
    dtype = _KIND_TO_DTYPE[kind]
    expected = _EMGR_HEADER.size + n_channels * n_samples * dtype.itemsize
    if len(raw) != expected:
        raise ValueError(f"{path}: size mismatch (got {len(raw)}, expected {expected})")
    body = np.frombuffer(raw, dtype=dtype, offset=_EMGR_HEADER.size)
    samples = body.reshape(n_channels, n_samples)
    return Recording(samples=samples, sample_rate=float(rate), session_id=path.stem)
