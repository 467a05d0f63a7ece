"""Desk-scale encoder-decoder semantic segmentation with atrous separable
convolutions: numpy kernels with analytic gradients, an output-stride
planner, Multiply-Adds accounting, trimap boundary metrics, and a small
training/evaluation CLI."""

from .config import RunConfig, load_config, parse_config_text, serialize_config
from .model import Model, predict_labels, predict_multiscale
from .params import ParamStore
from .plan import ArchSpec, BlockSpec, plan_output_stride, tiny_arch_spec, toy_arch_spec
from .train import PolySchedule, SgdState, init_params, lr_at, sgd_step, train_step

__all__ = [
    "ArchSpec", "BlockSpec", "Model", "ParamStore", "PolySchedule", "RunConfig",
    "SgdState", "init_params", "load_config", "lr_at", "parse_config_text",
    "plan_output_stride", "predict_labels", "predict_multiscale",
    "serialize_config", "sgd_step", "tiny_arch_spec", "toy_arch_spec",
    "train_step",
]
