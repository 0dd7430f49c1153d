"""Keyword spotting with MFCC features, quantile Booleanization and a Tsetlin Machine."""

from kwstm.audio import AudioClip, DatasetSplit, build_split, normalize_length, read_wav
from kwstm.booleanizer import QuantileEncoder, flatten_mfcc
from kwstm.mfcc import MfccConfig, MfccMatrix, extract_mfcc
from kwstm.tm import OpCounters, TMHyperparams, TsetlinMachine, load_model, save_model

__all__ = [
    "AudioClip",
    "DatasetSplit",
    "MfccConfig",
    "MfccMatrix",
    "OpCounters",
    "QuantileEncoder",
    "TMHyperparams",
    "TsetlinMachine",
    "build_split",
    "extract_mfcc",
    "flatten_mfcc",
    "load_model",
    "normalize_length",
    "read_wav",
    "save_model",
]

__version__ = "0.1.0"
