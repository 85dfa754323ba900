"""Synthetic time-series generation: a diffusion model proposes first frames,
a masked encoder-decoder extends them, and FID plus classifier uplift measure
how useful the result is."""

from .dataset import (Scaler, SequenceCorpus, SyntheticSpec, fit_scaler, generate_synthetic,
                      load_corpus, pad_to_length, save_corpus, split_per_class)
from .diffusion import DenoiserModel, DiffusionConfig, make_schedule, sample_first_steps, train_diffusion
from .evaluation import fid, run_table1_matrix, run_uplift_experiment
from .segloss import IntervalSegmentation, segment_corpus, weighted_mse
from .seqmodel import SeqModel, SeqModelConfig, build_causal_mask, build_view_mask, generate_sequence

__version__ = "0.1.0"
