from msct.errors import ConfigError
from msct.models.config import MsctConfig
from msct.models.msct import (
    DecoderInputs,
    DecoderOutput,
    EncoderOutput,
    MsctDecoder,
    MsctEncoder,
    MsctModel,
)

# name -> (kind, fixed options); the recurrent baselines live in msct.baselines
MODELS = {
    "msct": ("msct", {}),
    "lstm-baseline": ("recurrent", {"cell": "lstm"}),
    "rnn-baseline": ("recurrent", {"cell": "rnn"}),
    "gru-baseline": ("recurrent", {"cell": "gru"}),
    "msm": ("msm", {}),
    "naive": ("naive", {}),
}

# comparison rows kept in report tables but not implemented here
RESERVED_MODELS = ("RMSN", "CRN", "G-Net", "CT")


def resolve_model(name: str) -> tuple[str, dict]:
    """Look up a model name; raises ConfigError listing the known names."""
    if name not in MODELS:
        raise ConfigError("model", f"unsupported model '{name}', expected one of {sorted(MODELS)}")
    kind, options = MODELS[name]
    return kind, dict(options)


__all__ = [
    "DecoderInputs",
    "DecoderOutput",
    "EncoderOutput",
    "MODELS",
    "MsctConfig",
    "MsctDecoder",
    "MsctEncoder",
    "MsctModel",
    "RESERVED_MODELS",
    "resolve_model",
]
