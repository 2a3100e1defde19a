"""The four-stage recognizer and its training/cross-validation protocol.

Stages: (1) shared per-channel conv/pool feature extraction, (2) cross-
channel merge through a time-distributed dense layer, (3) two stacked
unidirectional LSTMs, (4) dense classifier head ending in a 34-way softmax.
One extractor parameter set is applied identically to every channel, so the
channel count can change without touching any other hyperparameter.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .charset import CharSet, default_charset
from .corpus import LabeledBlock
from .ctc import ctc_beam_decode, ctc_loss_from_logits, min_frames_for
from .errmodel import corpus_accuracy
from .nn import (
    LSTM,
    Adam,
    BatchNorm,
    ConvStage,
    Dense,
    Dropout,
    ReLU,
    load_archive,
    save_archive,
    softmax,
)

#: Fixed scale mapping int16 sample counts into the unit range.
INPUT_SCALE = 1.0 / 32768.0

#: Latency budget for the convolutional front end, in input samples.
MAX_RECEPTIVE_FIELD = 200


@dataclass(frozen=True)
class ModelConfig:
    n_channels: int = 32
    conv_kernels: tuple[int, ...] = (9, 9, 9)
    conv_features: tuple[int, ...] = (16, 32, 50)
    pool_width: int = 3
    merge_fc: int = 128
    lstm_hidden: tuple[int, ...] = (128, 64)
    head_fc: tuple[int, ...] = (64, 64)
    n_classes: int = 34
    dropout_rate: float = 0.2
    blank_logit_bias: float = 2.0
    use_separator: bool = False
    seed: int = 0

    @property
    def per_channel_features(self) -> int:
        return self.conv_features[-1]

    def receptive_field(self) -> int:
        """Input samples seen by one output frame of the conv front end."""
        rf, jump = 1, 1
        for k in self.conv_kernels:
            rf += (k - 1) * jump
            rf += (self.pool_width - 1) * jump
            jump *= self.pool_width
        return rf

    def downsample_factor(self) -> int:
        return self.pool_width ** len(self.conv_kernels)

    def frames_out(self, n_samples: int) -> int:
        t = n_samples
        for _ in self.conv_kernels:
            t //= self.pool_width
        return t

    def validate(self) -> None:
        if len(self.conv_kernels) != len(self.conv_features):
            raise ValueError("conv_kernels and conv_features must pair up")
        if self.receptive_field() >= MAX_RECEPTIVE_FIELD:
            raise ValueError(
                f"latency budget violated: receptive field {self.receptive_field()} "
                f">= {MAX_RECEPTIVE_FIELD} samples"
            )
        if self.n_channels < 1 or self.n_classes < 2:
            raise ValueError("bad channel/class count")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 32
    lr: float = 1e-3
    folds: int = 10
    beam_width: int = 5
    seed: int = 0

    def validate(self) -> None:
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


class TypingNet:
    """Parameter container + forward/backward for the full architecture."""

    def __init__(self, cfg: ModelConfig, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.dtype = dtype
        rng = np.random.default_rng(cfg.seed)
        rate = cfg.dropout_rate

        self.extractor = []
        c_in = 1
        for i, (k, f) in enumerate(zip(cfg.conv_kernels, cfg.conv_features)):
            self.extractor += [
                ConvStage(
                    c_in, f, k, rng, pool=cfg.pool_width, dtype=dtype, name=f"extractor{i}"
                ),
                Dropout(rate),
            ]
            c_in = f

        merged = cfg.n_channels * cfg.per_channel_features
        self.trunk = [
            Dense(merged, cfg.merge_fc, rng, dtype=dtype, name="merge.fc"),
            BatchNorm(cfg.merge_fc, dtype=dtype, name="merge.bn"),
            ReLU(),
            Dropout(rate),
        ]
        d = cfg.merge_fc
        for i, h in enumerate(cfg.lstm_hidden):
            self.trunk.append(LSTM(d, h, rng, dtype=dtype, name=f"lstm{i}"))
            d = h
        for i, w in enumerate(cfg.head_fc):
            self.trunk += [
                Dense(d, w, rng, dtype=dtype, name=f"head{i}.fc"),
                BatchNorm(w, dtype=dtype, name=f"head{i}.bn"),
                ReLU(),
                Dropout(rate),
            ]
            d = w
        out = Dense(d, cfg.n_classes, rng, dtype=dtype, name="output.fc")
        # start with the blank dominating so early training aligns instead of
        # first having to discover the blank prior
        out.bias.value[cfg.n_classes - 1] = cfg.blank_logit_bias
        self.trunk.append(out)
        self._shape = None

    # -- parameter plumbing ------------------------------------------------

    def layers(self):
        return self.extractor + self.trunk

    def params(self):
        out = []
        for layer in self.layers():
            out.extend(layer.params())
        return out

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for layer in self.layers():
            out.update(layer.state())
        return out

    @property
    def n_params(self) -> int:
        return int(sum(p.value.size for p in self.params()))

    # -- forward / backward -------------------------------------------------

    def forward_logits(self, x: np.ndarray, *, train: bool = False, rng=None) -> np.ndarray:
        """Raw class scores for a [B, T, C] (or [T, C]) signal batch."""
        if x.ndim == 2:
            x = x[None]
        b, t, c = x.shape
        if c != self.cfg.n_channels:
            raise ValueError(f"expected {self.cfg.n_channels} channels, got {c}")
        if t < self.cfg.receptive_field():
            raise ValueError(
                f"input of {t} samples is shorter than the receptive field "
                f"({self.cfg.receptive_field()})"
            )
        h = np.ascontiguousarray(x.transpose(0, 2, 1).reshape(b * c, t, 1))
        for layer in self.extractor:
            h = layer.forward(h, train=train, rng=rng)
        t3, f = h.shape[1], h.shape[2]
        self._shape = (b, c, t3, f)
        h = np.ascontiguousarray(
            h.reshape(b, c, t3, f).transpose(0, 2, 1, 3).reshape(b, t3, c * f)
        )
        for layer in self.trunk:
            h = layer.forward(h, train=train, rng=rng)
        return h

    def forward(self, x: np.ndarray, *, train: bool = False, rng=None) -> np.ndarray:
        """Per-frame class probabilities (rows sum to 1)."""
        return softmax(self.forward_logits(x, train=train, rng=rng))

    def backward(self, grad_logits: np.ndarray) -> None:
        g = grad_logits
        for layer in reversed(self.trunk):
            g = layer.backward(g)
        b, c, t3, f = self._shape
        g = np.ascontiguousarray(
            g.reshape(b, t3, c, f).transpose(0, 2, 1, 3).reshape(b * c, t3, f)
        )
        for layer in reversed(self.extractor):
            g = layer.backward(g)

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        tensors = {p.name: p.value for p in self.params()}
        tensors.update(self.state_tensors())
        save_archive(path, tensors, meta={"model_config": asdict(self.cfg)})

    @classmethod
    def load(cls, path) -> "TypingNet":
        tensors, meta = load_archive(path)
        cfg = config_from_dict(meta["model_config"])
        net = cls(cfg)
        for p in net.params():
            if p.name not in tensors:
                raise ValueError(f"checkpoint missing tensor {p.name!r}")
            if tensors[p.name].shape != p.value.shape:
                raise ValueError(f"checkpoint shape mismatch for {p.name!r}")
            p.value[...] = tensors[p.name]
        for name, arr in net.state_tensors().items():
            if name not in tensors:
                raise ValueError(f"checkpoint missing tensor {name!r}")
            arr[...] = tensors[name]
        return net


_TUPLE_FIELDS = ("conv_kernels", "conv_features", "lstm_hidden", "head_fc")


def config_from_dict(d: dict) -> ModelConfig:
    kw = dict(d)
    for key in _TUPLE_FIELDS:
        if key in kw:
            kw[key] = tuple(kw[key])
    return ModelConfig(**kw)


def build_model(cfg: ModelConfig) -> TypingNet:
    return TypingNet(cfg)


# ---------------------------------------------------------------------------
# Training


def encode_label(text: str, cs: CharSet, use_separator: bool) -> list[int]:
    idx = cs.encode(text)
    if not use_separator or len(idx) < 2:
        return idx
    out = []
    for i, v in enumerate(idx):
        if i:
            out.append(cs.separator_class)
        out.append(v)
    return out


def _block_matrix(block: LabeledBlock) -> np.ndarray:
    return np.ascontiguousarray(block.signal.samples.T, dtype=np.float32) * np.float32(
        INPUT_SCALE
    )


def train(
    blocks: list[LabeledBlock],
    mcfg: ModelConfig,
    tcfg: TrainConfig,
    cs: CharSet | None = None,
) -> tuple[TypingNet, list[tuple[int, float]]]:
    """Minibatch CTC training; deterministic for a fixed seed.

    Returns the trained network and a history of (epoch, mean training
    loss). Blocks whose labels cannot be aligned within the output frame
    budget are rejected with a warning.
    """
    cs = cs or default_charset()
    tcfg.validate()
    if not blocks:
        raise ValueError("no training blocks")

    net = TypingNet(mcfg)
    frames = mcfg.frames_out(blocks[0].signal.n_samples)
    usable: list[tuple[LabeledBlock, list[int]]] = []
    for blk in blocks:
        label = encode_label(blk.label, cs, mcfg.use_separator)
        if 2 * len(label) + 1 > frames:
            warnings.warn(
                f"block {blk.origin} rejected: label of {len(label)} symbols cannot "
                f"align into {frames} frames",
                stacklevel=2,
            )
            continue
        usable.append((blk, label))
    if not usable:
        raise ValueError("no alignable training blocks")

    rng = np.random.default_rng(tcfg.seed)
    opt = Adam(net.params(), lr=tcfg.lr)
    history: list[tuple[int, float]] = []
    n = len(usable)
    for epoch in range(tcfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, tcfg.batch_size):
            chunk = order[start : start + tcfg.batch_size]
            x = np.stack([_block_matrix(usable[i][0]) for i in chunk])
            logits = net.forward_logits(x, train=True, rng=rng)
            grad = np.zeros_like(logits, dtype=np.float64)
            total = 0.0
            for row, i in enumerate(chunk):
                loss_i, g_i = ctc_loss_from_logits(logits[row], usable[i][1], cs.blank_class)
                grad[row] = g_i
                total += loss_i
            grad /= len(chunk)
            opt.zero_grad()
            net.backward(grad.astype(net.dtype))
            opt.step()
            losses.append(total / len(chunk))
        history.append((epoch + 1, float(np.mean(losses))))
    return net, history


def transcribe(net: TypingNet, block: LabeledBlock, cs: CharSet, beam_width: int = 5) -> str:
    probs = net.forward(_block_matrix(block)[None])[0]
    return ctc_beam_decode(probs.astype(np.float64), beam_width, cs)


def fold_partition(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Shuffle once, then split into ``folds`` contiguous shards."""
    if n < folds:
        raise ValueError(f"need at least {folds} blocks for {folds}-fold validation")
    order = np.random.default_rng(seed).permutation(n)
    return [np.sort(shard) for shard in np.array_split(order, folds)]


@dataclass
class FoldResult:
    fold: int
    accuracy: float
    converged: bool
    transcripts: list[tuple[str, str, str]] = field(default_factory=list)
    history: list[tuple[int, float]] = field(default_factory=list)


def cross_validate(
    blocks: list[LabeledBlock],
    mcfg: ModelConfig,
    tcfg: TrainConfig,
    cs: CharSet | None = None,
) -> list[FoldResult]:
    """K-fold protocol: train on the rest, decode the holdout, score it.

    Fold accuracies are micro-averaged over the holdout blocks. Every block
    appears in exactly one holdout shard.
    """
    cs = cs or default_charset()
    tcfg.validate()
    shards = fold_partition(len(blocks), tcfg.folds, tcfg.seed)
    results: list[FoldResult] = []
    for fold, shard in enumerate(shards):
        holdout = set(int(i) for i in shard)
        train_blocks = [b for i, b in enumerate(blocks) if i not in holdout]
        offset = 10007 * (fold + 1)
        net, history = train(
            train_blocks,
            replace(mcfg, seed=mcfg.seed + offset),
            replace(tcfg, seed=tcfg.seed + offset),
            cs,
        )
        transcripts = []
        for i in sorted(holdout):
            blk = blocks[i]
            pred = transcribe(net, blk, cs, tcfg.beam_width)
            block_id = f"{blk.origin[0]}:{blk.origin[1]}"
            transcripts.append((block_id, blk.label, pred))
        accuracy = corpus_accuracy([(p, t) for _, t, p in transcripts])
        converged = bool(
            history and np.isfinite(history[-1][1]) and history[-1][1] < history[0][1]
        )
        results.append(
            FoldResult(
                fold=fold,
                accuracy=accuracy,
                converged=converged,
                transcripts=transcripts,
                history=history,
            )
        )
    return results
