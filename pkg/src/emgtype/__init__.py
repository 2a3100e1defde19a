"""sEMG-to-keystroke transcription at desk scale.

A streaming per-channel CNN-LSTM-CTC recognizer, its training and
cross-validation protocol, a noisy-channel EM error analyzer, and
spatial/temporal resolution-degradation experiments, verified end to end
on synthetic data.
"""

from .charset import CharSet, FingerMap, default_charset, default_fingermap
from .corpus import (
    KeyEvent,
    KeyLog,
    LabeledBlock,
    SynthConfig,
    generate_synthetic,
    ingest_keylog,
    sample_text,
    segment_blocks,
)
from .ctc import ctc_beam_decode, ctc_greedy_decode, ctc_loss
from .errmodel import (
    ChannelModel,
    char_accuracy,
    corpus_accuracy,
    edit_distance,
    em_fit,
    finger_confusion,
    fit_paper_style,
    pair_log_likelihood,
)
from .model import (
    ModelConfig,
    TrainConfig,
    TypingNet,
    build_model,
    cross_validate,
    train,
)
from .signals import (
    ChannelLayout,
    Recording,
    downsample_spatial,
    read_emgr,
    resample_temporal,
    roundtrip_degrade,
    spatial_positions,
    write_emgr,
)

__version__ = "0.1.0"
