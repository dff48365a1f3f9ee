"""Double binary factorization: compress dense matrices into products of
two bit-packed sign matrices with three scaling vectors, run the
addition-only forward pass, and allocate bit budgets across layers."""

from .baselines import onebit_quantize, relative_error, rtn_quantize
from .bitcore import (
    DbfFormatError,
    DbfLayer,
    SignMatrix,
    load_dbf,
    load_tensor,
    pack,
    reconstruct,
    save_dbf,
    save_tensor,
    unpack,
)
from .budget import (
    ChannelScores,
    LayerBudget,
    LayerSpec,
    allocate,
    channel_scores,
    middle_dim,
    reallocate_pipeline,
    storage_bits,
)
from .estimator import BinaryFactorizer
from .factorize import (
    FactorizeConfig,
    FactorizeReport,
    ImportanceProfile,
    admm_factor_update,
    admm_x_update,
    factorize,
    factorize_weighted,
    refine_scales,
)
from .kernel import bench_forward, forward, sign_matvec
from .svid import SvidResult, power_iteration, svid

__version__ = "0.1.0"

__all__ = [
    "BinaryFactorizer",
    "ChannelScores",
    "DbfFormatError",
    "DbfLayer",
    "FactorizeConfig",
    "FactorizeReport",
    "ImportanceProfile",
    "LayerBudget",
    "LayerSpec",
    "SignMatrix",
    "SvidResult",
    "admm_factor_update",
    "admm_x_update",
    "allocate",
    "bench_forward",
    "channel_scores",
    "factorize",
    "factorize_weighted",
    "forward",
    "load_dbf",
    "load_tensor",
    "middle_dim",
    "onebit_quantize",
    "pack",
    "power_iteration",
    "reallocate_pipeline",
    "reconstruct",
    "refine_scales",
    "relative_error",
    "rtn_quantize",
    "save_dbf",
    "save_tensor",
    "sign_matvec",
    "storage_bits",
    "svid",
    "unpack",
]
