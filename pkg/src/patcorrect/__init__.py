"""Phoneme-augmented non-autoregressive correction of speech recognition output."""

from .align import TagSeq, adjust_source, alignment_tags, edit_distance, edit_path
from .infer import CorrectionResult, bench, correct
from .metrics import EvalReport, evaluate, evaluate_groups, f_beta, wer, werr
from .model import ModelConfig, PATCorrect, load_checkpoint, save_checkpoint
from .synth import NoiseConfig, build_homophone_index, generate_pairs
from .textphon import Vocab, g2p, load_pronouncing_dict, tokenize
from .train import TrainConfig, build_dataset, train_loop

__version__ = "0.1.0"
