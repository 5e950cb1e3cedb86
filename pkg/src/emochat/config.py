"""Model and training configuration with named presets."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .corpus import NUM_EMOTIONS
from .errors import ConfigurationError

CE_FORMS = ("positive", "full")
KL_DIRECTIONS = ("prior_recognition", "recognition_prior")


@dataclass
class ModelConfig:
    vocab_size: int = 512
    emb_dim: int = 32          # shared width of the semantic/emotional tables
    hidden: int = 32
    attn_dim: int = 32         # attention MLP width (hidden at paper scale)
    emo_dim: int = 32          # emotion embedding width d_e (200 at paper scale)
    kl_dim: int = 32           # shared KL projection width m
    enc_layers: int = 2
    dec_layers: int = 2
    ce_form: str = "positive"  # emotion CE: positive-term form or full BCE
    share_fusion: bool = False  # recognition side reuses prior fusion/head tensors
    kl_direction: str = "prior_recognition"
    kl_stop_recognition: bool = False  # stop-gradient on the recognition KL side
    max_len: int = 30

    def validate(self):
        for name in ("vocab_size", "emb_dim", "hidden", "attn_dim", "emo_dim",
                     "kl_dim", "enc_layers", "dec_layers", "max_len"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.vocab_size < 5:
            raise ConfigurationError("vocab_size must cover the 4 reserved ids")
        if self.ce_form not in CE_FORMS:
            raise ConfigurationError(f"ce_form must be one of {CE_FORMS}")
        if self.kl_direction not in KL_DIRECTIONS:
            raise ConfigurationError(f"kl_direction must be one of {KL_DIRECTIONS}")
        return self

    @property
    def num_emotions(self) -> int:
        return NUM_EMOTIONS


@dataclass
class TrainConfig:
    alpha: float = 0.5         # L_total = alpha * L_e + (1 - alpha) * L_NLL
    learning_rate: float = 0.5
    batch_size: int = 16
    max_steps: int = 1000
    seed: int = 0
    clip_norm: float = 5.0     # global gradient norm cap
    pretrain_steps: int = 0
    log_every: int = 50
    checkpoint_every: int = 500

    def validate(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError("alpha must lie in [0, 1]")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        for name in ("batch_size", "max_steps", "log_every", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.clip_norm <= 0:
            raise ConfigurationError("clip_norm must be positive")
        if self.pretrain_steps < 0:
            raise ConfigurationError("pretrain_steps must be >= 0")
        return self


PRESETS = {
    # h=8 d=8 |V|=32: small enough for finite-difference gradient checks
    "tiny": (ModelConfig(vocab_size=32, emb_dim=8, hidden=8, attn_dim=8,
                         emo_dim=8, kl_dim=8),
             TrainConfig(batch_size=4, max_steps=200, log_every=20,
                         checkpoint_every=100)),
    # runs in minutes on one core; default
    "desk": (ModelConfig(), TrainConfig()),
    # the published operating point (not exercised by the test suite)
    "paper": (ModelConfig(vocab_size=40000, emb_dim=200, hidden=256, attn_dim=256,
                          emo_dim=200, kl_dim=64),
              TrainConfig(batch_size=128, max_steps=100000, log_every=1000,
                          checkpoint_every=10000)),
}


def preset(name: str) -> tuple[ModelConfig, TrainConfig]:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    model, train = PRESETS[name]
    return replace(model), replace(train)


def config_fields() -> dict[str, type]:
    """name -> value type for every settable field across both configs."""
    out = {}
    for cls in (ModelConfig, TrainConfig):
        inst = cls()
        for f in fields(cls):
            out[f.name] = type(getattr(inst, f.name))
    return out
