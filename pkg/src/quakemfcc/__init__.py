"""Earthquake event detection from seismic waveforms using MFCC features,
from-scratch CNN and LSTM classifiers, and an STA/LTA baseline."""
from .detector import AlarmEvent, StreamingDetector, TelemetryPacket, decode_packet, encode_packet
from .features import FeatureConfig, FeatureMatrix, MFCCTransformer, extract_features
from .metrics import MetricsReport, cohen_kappa, confusion_matrix
from .nn import CNNClassifier, LSTMClassifier, Model, ModelSpec, load_model, save_model
from .stalta import StaLtaConfig, StaLtaDetector, sta_lta_ratio, trigger
from .waveform import Waveform, read_wav, upsample, write_wav

__version__ = "0.1.0"

__all__ = [
    "AlarmEvent", "CNNClassifier", "FeatureConfig", "FeatureMatrix", "LSTMClassifier",
    "MFCCTransformer", "MetricsReport", "Model", "ModelSpec", "StaLtaConfig", "StaLtaDetector",
    "StreamingDetector", "TelemetryPacket", "Waveform", "cohen_kappa", "confusion_matrix",
    "decode_packet", "encode_packet", "extract_features", "load_model", "read_wav",
    "save_model", "sta_lta_ratio", "trigger", "upsample", "write_wav",
]
