"""Anomalous machine-sound detection from a separator trained to remove the target machine."""

from .dataset import Clip, Manifest, SynthSpec, load_manifest, random_trim, read_clip, synth_generate
from .dsp import MixConfig, Spectrogram, StftConfig, istft, make_input_features, match_db_scale, mix, stft
from .metrics import EvalReport, ScoredClip, auc, domain_auc, omega, pauc, render_report
from .model import SeparatorConfig, SeparatorNet, build_separator, load_params, pooled_embedding, save_params
from .scoring import GaussianModel, extract_embeddings, fit_gaussian, mahalanobis, score_clip
from .training import LossWeights, TrainConfig, fit, make_training_pair, separation_loss

__version__ = "0.1.0"
