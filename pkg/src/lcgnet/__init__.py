"""Learned conjugate-gradient detection workbench for massive MIMO."""

from .datasets import ChannelSpec, Dataset, DatasetConfig, gen_dataset, load_dataset, save_dataset
from .detectors import (
    CgBreakdownError,
    LinearSystem,
    build_system,
    cg_detect,
    lmmse_detect,
    ml_detect,
    zf_detect,
)
from .mimo import (
    SnrSpec,
    SymbolAlphabet,
    alphabet,
    demap_min_distance,
    gen_correlated,
    gen_rayleigh,
    hardening_ratio,
    modulate,
    real_embed_matrix,
    real_embed_vector,
)
from .modelio import load_model, save_model
from .network import NetworkParams, detect, forward, forward_scalar, forward_vector, forward_with_trace
from .opcount import count_ops, memory_cost
from .quantizer import (
    HardQuantizerSpec,
    SoftQuantizerParams,
    hard_quantize,
    quantize_network,
    soft_quantize,
    tanh_sum,
    train_quantizer,
)
from .training import Curriculum, adam_step, backward, mse_loss, nmse, train_layerwise

__version__ = "0.1.0"
