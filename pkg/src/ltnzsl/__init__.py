"""Differentiable fuzzy first-order logic for zero-shot classification."""
from .autodiff import Tensor, backward, grad_check
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import Dataset, generate_synthetic, load_dataset, save_dataset
from .evaluation import EvalReport, compute_metrics, evaluate, gamma_sweep, predict_gzsl, predict_zsl
from .fol import builtin_axioms, format_axiom, parse_axiom, parse_axioms, validate
from .fuzzy import FuzzyConfig, PSchedule, schedule_p
from .trainer import PRESETS, TrainConfig, TrainHistory, build_kb, kb_loss, preset, train

__version__ = "0.1.0"
