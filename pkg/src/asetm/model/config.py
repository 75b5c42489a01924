from __future__ import annotations

from dataclasses import asdict, dataclass, replace

from ..dsp import StftConfig


@dataclass(frozen=True)
class ModelConfig:
    """Network hyperparameters.

    ``n_enc`` is the frequency width after the encoder's strided convolution;
    the stride and kernel of that convolution are derived from ``n_freq`` so
    that the decoder's transposed convolution lands exactly back on
    ``n_freq`` bins (stride 2, kernel 3 for 201 -> 100).
    """

    c_enc: int = 16
    n_enc: int = 16
    n_tf: int = 4
    n_heads: int = 4
    ssm_state: int = 8
    ssm_headdim: int = 8
    conv_kernel: int = 4
    expand: int = 2
    dense_depth: int = 4
    lookahead_samples: int = 0
    n_freq: int = 201
    ssm_variant: str = "m2"
    attention_on: bool = True
    positional_encoding: bool = True
    mag_bias_init: float = -3.0
    phase_mode: str = "absolute"
    out_fir_taps: int = 0     # output FIR taps at lags >= 0; 0 disables the filter
    out_fir_delay: int = 0    # extra taps at negative lags
    disc_channels: int = 8

    def __post_init__(self):
        positive = ("c_enc", "n_enc", "n_tf", "n_heads", "ssm_state", "ssm_headdim", "conv_kernel",
                    "expand", "dense_depth", "n_freq", "disc_channels")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_tf % 2:
            raise ValueError(f"n_tf must be even, got {self.n_tf}")
        if self.c_enc % 4:
            raise ValueError(f"c_enc must be divisible by 4, got {self.c_enc}")
        if self.n_enc % 2:
            raise ValueError(f"n_enc must be even, got {self.n_enc}")
        if self.token_dim % self.n_heads:
            raise ValueError(
                f"attention token size {self.token_dim} = (n_enc/2)*(c_enc/4) is not divisible by "
                f"n_heads={self.n_heads}")
        if self.inner_dim % self.ssm_headdim:
            raise ValueError(f"inner width {self.inner_dim} not divisible by ssm_headdim {self.ssm_headdim}")
        if self.ssm_variant not in ("m1", "m2"):
            raise ValueError(f"ssm_variant must be 'm1' or 'm2', got {self.ssm_variant!r}")
        if self.phase_mode not in ("absolute", "relative"):
            raise ValueError(f"phase_mode must be 'absolute' or 'relative', got {self.phase_mode!r}")
        if self.n_enc >= self.n_freq:
            raise ValueError(f"n_enc={self.n_enc} must be below n_freq={self.n_freq}")
        if self.out_fir_taps < 0 or self.out_fir_delay < 0:
            raise ValueError("out_fir_taps and out_fir_delay must be >= 0")
        if self.lookahead_samples < 0:
            raise ValueError("lookahead_samples must be >= 0")

    @property
    def out_fir_len(self) -> int:
        """Output FIR length; the lookahead adds taps so the filter can start as a delay undoing it."""
        return self.out_fir_delay + self.lookahead_samples + self.out_fir_taps if self.out_fir_taps else 0

    @property
    def token_dim(self) -> int:
        return (self.n_enc // 2) * (self.c_enc // 4)

    @property
    def inner_dim(self) -> int:
        return self.expand * self.c_enc

    @property
    def n_ssm_heads(self) -> int:
        return self.inner_dim // self.ssm_headdim

    @property
    def freq_stride(self) -> int:
        return (self.n_freq - 1) // self.n_enc

    @property
    def freq_kernel(self) -> int:
        return self.n_freq - self.freq_stride * (self.n_enc - 1)

    @property
    def reduce_kernel(self) -> int:
        return self.n_enc // 2 + 1

    def with_stft(self, cfg: StftConfig) -> "ModelConfig":
        return replace(self, n_freq=cfg.n_freq)

    def to_dict(self) -> dict:
        return asdict(self)


PAPER_CONFIG = ModelConfig(c_enc=128, n_enc=100, n_tf=8, n_heads=10, ssm_state=16, ssm_headdim=16)
TOY_CONFIG = ModelConfig()
