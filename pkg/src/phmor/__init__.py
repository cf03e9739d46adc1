"""Structure-preserving model reduction for port-Hamiltonian descriptor systems."""

from ._backend import BACKEND
from .dae import DescriptorSystem, FeedthroughData, estimate_feedthrough, eval_transfer, semi_explicit_transform
from .generate import generate_benchmark
from .io import read_system, write_system
from .norms import QuadratureConfig, h2_norm_quadrature, hinf_estimate
from .optimize import OptimizerConfig, minimize
from .param import PhParameterVector, ReducedPhModel, assemble_ph, rom_param_jacobian, rom_transfer
from .phinit import balanced_truncation, modal_truncation, two_step_init
from .propt import fix_feedthrough, h2_error, propt_h2
from .sobmor import BisectionConfig, SobmorH2Config, sobmor_h2, sobmor_hinf

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BisectionConfig",
    "DescriptorSystem",
    "FeedthroughData",
    "OptimizerConfig",
    "PhParameterVector",
    "QuadratureConfig",
    "ReducedPhModel",
    "SobmorH2Config",
    "assemble_ph",
    "balanced_truncation",
    "estimate_feedthrough",
    "eval_transfer",
    "fix_feedthrough",
    "generate_benchmark",
    "h2_error",
    "h2_norm_quadrature",
    "hinf_estimate",
    "minimize",
    "modal_truncation",
    "propt_h2",
    "read_system",
    "rom_param_jacobian",
    "rom_transfer",
    "semi_explicit_transform",
    "sobmor_h2",
    "sobmor_hinf",
    "two_step_init",
    "write_system",
]
