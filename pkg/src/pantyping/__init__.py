"""Path-based attention over sentence bags for fine-grained entity typing."""
from .attention import AN, MODES, PAN_A, PAN_M, UNIFORM
from .data import SentenceBag, SynthConfig, load_corpus, synth_corpus
from .hierarchy import TypeHierarchy, close_upward, compose_path, load_hierarchy, path_of
from .model import Dims, ModelParams, init_params, load_model, save_model
from .pipeline import (EvalReport, TrainConfig, evaluate, experiment_configs, run_noise_experiment, score_sets,
                       train)

__version__ = "0.1.0"
