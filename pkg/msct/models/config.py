from dataclasses import dataclass

from msct.errors import ConfigError

BACKBONES = ("transformer", "lstm")


@dataclass
class MsctConfig:
    d_x: int = 1
    d_s: int = 1
    k: int = 2
    d_h: int = 32
    d_a: int | None = None
    heads: int = 2
    blocks: int = 1
    dropout: float = 0.1
    tau_max: int = 5
    backbone: str = "transformer"
    use_ps: bool = True
    use_hps: bool = True
    pe_base: float = 1000.0
    d_ff: int | None = None
    crash_class: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.d_a is None:
            self.d_a = self.d_h
        if self.blocks < 1:
            raise ConfigError("model.blocks", "must be >= 1")
        if self.k < 2:
            raise ConfigError("model.k", "needs at least two treatment classes")
        if self.tau_max < 2:
            raise ConfigError("model.tau_max", "must be >= 2")
        if min(self.d_x, self.d_s, self.d_h, self.d_a, self.heads) < 1:
            raise ConfigError("model", "widths and head count must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("model.dropout", f"rate must lie in [0, 1), got {self.dropout}")
        if self.backbone not in BACKBONES:
            raise ConfigError("model.backbone", f"expected one of {BACKBONES}, got {self.backbone!r}")
        if self.use_ps and not self.use_hps:
            raise ConfigError("model.use_hps", "the propensity pathway needs the HPS head")
        if not 0 < self.crash_class < self.k:
            raise ConfigError("model.crash_class", f"must lie in [1, {self.k})")

    @property
    def encoder_input_width(self) -> int:
        return self.d_x + self.k + 1 + self.d_s

    @property
    def decoder_input_width(self) -> int:
        return self.k + self.d_s + 2
