"""Editor configuration and the closed instruction vocabulary."""

from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass, field

CONDITIONING = ("SeqCat", "EmbedAdd")
MASK_INJECTION = ("AddToSrc", "AddToTgt", "DownsampleAddToSrc", "SeqCatMask")
TUNING = ("Full", "LoRA")

NULL_TOKEN = "<null>"
UNK_TOKEN = "<unk>"

# Words used by the toy caption/instruction templates; anything else maps to <unk>.
DEFAULT_VOCAB = (
    NULL_TOKEN,
    UNK_TOKEN,
    "a", "the", "to", "change", "make", "remove", "replace", "with", "turn", "into",
    "style", "grayscale", "black", "and", "white", "color", "moving", "on", "background",
    "square", "circle", "triangle", "plain",
    "red", "green", "blue", "yellow", "magenta", "cyan", "orange", "purple",
    "left", "right", "up", "down", "still", "shape", "video", "it",
)


@dataclass(frozen=True)
class ModelConfig:
    conditioning: str = "SeqCat"
    mask_injection: str = "AddToSrc"
    tuning: str = "LoRA"
    lora_rank: int = 8
    lora_alpha: float = 16.0
    width: int = 128
    depth: int = 6
    heads: int = 4
    mlp_ratio: int = 4
    patch: tuple = (1, 2, 2)
    vae_factors: tuple = (4, 4, 4)
    channels: int = 3
    vocab: tuple = DEFAULT_VOCAB

    def __post_init__(self):
        object.__setattr__(self, "patch", tuple(int(v) for v in self.patch))
        object.__setattr__(self, "vae_factors", tuple(int(v) for v in self.vae_factors))
        object.__setattr__(self, "vocab", tuple(self.vocab))
        if self.conditioning not in CONDITIONING:
            raise ValueError(f"conditioning must be one of {CONDITIONING}")
        if self.mask_injection not in MASK_INJECTION:
            raise ValueError(f"mask_injection must be one of {MASK_INJECTION}")
        if self.tuning not in TUNING:
            raise ValueError(f"tuning must be one of {TUNING}")
        if self.tuning == "LoRA" and self.lora_rank < 1:
            raise ValueError("LoRA rank must be >= 1")
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by {self.heads} heads")
        if self.width < 6:
            raise ValueError("width must be >= 6 for the factorized position code")
        if len(self.patch) != 3 or len(self.vae_factors) != 3:
            raise ValueError("patch and vae_factors need three entries (t, h, w)")
        if self.vocab[:2] != (NULL_TOKEN, UNK_TOKEN):
            raise ValueError("vocab must start with the null and unknown tokens")
        if self.conditioning == "EmbedAdd" and self.mask_injection == "SeqCatMask":
            raise ValueError("SeqCatMask cannot be combined with EmbedAdd")

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    @property
    def lora_scale(self) -> float:
        return self.lora_alpha / self.lora_rank

    def backbone_key(self) -> tuple:
        """Fields that fix the backbone's parameter shapes."""
        return (self.width, self.depth, self.heads, self.mlp_ratio, self.patch, self.vae_factors, self.channels, self.vocab)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown model config keys {sorted(unknown)}")
        return cls(**data)


_SPLIT = re.compile(r"[a-z]+")


def tokenize(text: str, vocab=DEFAULT_VOCAB) -> list[int]:
    """Lowercased words -> ids. Empty text -> the null id alone."""
    index = {w: i for i, w in enumerate(vocab)}
    words = _SPLIT.findall(text.lower())
    if not words:
        return [0]
    return [index.get(w, 1) for w in words]


def null_ids() -> list[int]:
    return [0]
