"""EMG-to-speech toolkit.

Arrays are time-major numpy float64: EMG is samples x channels at 1 kHz,
audio is a 1-D signal at 16 kHz, features are frames x dims at 100 Hz.
"""

from ._core import (
    AUDIO_SAMPLE_RATE,
    EMG_SAMPLE_RATE,
    MFCC_DIM,
    CcaProjection,
    EmgvoiceError,
    Workspace,
    config_keys,
    dtw,
    emg_features,
    fit_cca,
    griffin_lim,
    make_synthetic_corpus,
    mfcc,
    mulaw_decode,
    mulaw_encode,
    normalize_text,
    preprocess_audio,
    preprocess_emg,
    resolve_config,
    word_errors,
)

__all__ = [
    "AUDIO_SAMPLE_RATE",
    "EMG_SAMPLE_RATE",
    "MFCC_DIM",
    "CcaProjection",
    "EmgvoiceError",
    "Workspace",
    "config_keys",
    "dtw",
    "emg_features",
    "fit_cca",
    "griffin_lim",
    "make_synthetic_corpus",
    "mfcc",
    "mulaw_decode",
    "mulaw_encode",
    "normalize_text",
    "preprocess_audio",
    "preprocess_emg",
    "resolve_config",
    "word_errors",
]
