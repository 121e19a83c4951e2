"""Speaker diarization as set prediction: masks, vocal activity and speaker vectors per query slot."""
from .config import RunConfig, load_config
from .der import compute_der, parse_rttm, write_rttm
from .errors import DiformerError
from .features import Waveform, compute_logmel, normalize_waveform, read_wav, write_wav
from .inference import diarize, run_windows, stitch
from .model import DiFormer

__version__ = "0.1.0"

__all__ = [
    "DiFormer",
    "DiformerError",
    "RunConfig",
    "Waveform",
    "compute_der",
    "compute_logmel",
    "diarize",
    "load_config",
    "normalize_waveform",
    "parse_rttm",
    "read_wav",
    "run_windows",
    "stitch",
    "write_rttm",
    "write_wav",
]
