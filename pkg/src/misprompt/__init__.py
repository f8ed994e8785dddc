"""Missing-aware prompt learning for frozen multimodal transformers, at desk scale."""
from .data import MissingSpec, MultimodalSample, Scenario, apply_case, gen_synthetic, partition
from .metrics import accuracy, auroc, evaluate, f1_macro
from .model import BackboneParams, ModelConfig, count_params, forward, init_backbone
from .prompts import MissingCase, PromptBank, PromptMode, init_bank, split_kv
from .tensor import Tensor, grad_check
from .train import PromptedModel, TrainConfig, loss, train_loop, train_step

__version__ = "0.1.0"
