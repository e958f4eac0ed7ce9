from .attention import (
    ASPPSpatial, DualAttention, ECAGate, MSA, PairAttention, SEGate, eca_kernel_size, msa_map,
)
from .checkpoint import CheckpointError, load_model, read_container, save_model, write_container
from .config import AttentionConfig, DecoderConfig, EncoderConfig, ModelConfig
from .decoder import DecoderD1, DecoderD2
from .encoder import Encoder, ResidualUnit, encode_pair
from .model import CoSegNet, forward_pair

__all__ = [
    "ASPPSpatial",
    "DualAttention",
    "ECAGate",
    "MSA",
    "PairAttention",
    "SEGate",
    "eca_kernel_size",
    "msa_map",
    "CheckpointError",
    "load_model",
    "read_container",
    "save_model",
    "write_container",
    "AttentionConfig",
    "DecoderConfig",
    "EncoderConfig",
    "ModelConfig",
    "DecoderD1",
    "DecoderD2",
    "Encoder",
    "ResidualUnit",
    "encode_pair",
    "CoSegNet",
    "forward_pair",
]
