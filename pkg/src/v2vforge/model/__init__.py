from .config import CONDITIONING, MASK_INJECTION, TUNING, DEFAULT_VOCAB, ModelConfig, tokenize
from .editor import (
    TokenSequence,
    assemble_tokens,
    backbone_names,
    checksum,
    conditioning_param_count,
    count,
    init_params,
    lora_attach,
    lora_merge,
    lora_param_count,
    mask_latent,
    model_forward,
    predict,
    trainable_names,
)
from .io import load_model, save_model
from .vae import latent_shape, pool_to_latent, surrogate_decode, surrogate_encode

__all__ = [
    "CONDITIONING",
    "DEFAULT_VOCAB",
    "MASK_INJECTION",
    "TUNING",
    "ModelConfig",
    "TokenSequence",
    "assemble_tokens",
    "backbone_names",
    "checksum",
    "conditioning_param_count",
    "count",
    "init_params",
    "latent_shape",
    "load_model",
    "lora_attach",
    "lora_merge",
    "lora_param_count",
    "mask_latent",
    "model_forward",
    "pool_to_latent",
    "predict",
    "save_model",
    "surrogate_decode",
    "surrogate_encode",
    "tokenize",
    "trainable_names",
]
