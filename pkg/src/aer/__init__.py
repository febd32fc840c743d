"""Continual learning from noisy class-incremental streams.

Alternating replay/forgetting training with loss-gated buffer insertion,
asymmetric balanced replacement sampling, end-of-task buffer
consolidation, standard rehearsal baselines and an evaluation kit.
"""

__version__ = "0.1.0"

from .buffer import (MemoryBuffer, abs_select, diversity, insertion_candidates,
                     lass_scores, purity, replace_with_candidates,
                     reservoir_update)
from .config import RunConfig, config_hash, load_config
from .consolidation import (buffer_fit, corefine_labels, fit_gmm_em,
                            mixmatch_consolidate, sharpen, split_pure_uncertain)
from .engine import (MethodSpec, PRESETS, RunRecord, alternation_schedule,
                     replay_batch, resolve_method, run_seeds, run_single,
                     train_reference, train_task)
from .errors import ConfigError, InputError, NumericalError, ParseError
from .metrics import (AccuracyMatrix, aggregate_seeds, faa, final_forgetting,
                      separation_trace)
from .mlp import (MLP, Checkpoint, augment, ce_gradient, per_sample_ce,
                  restore_checkpoint, save_checkpoint)
from .stream import (Batch, Dataset, NoiseSpec, TaskStream,
                     default_superclass_pairs, inject_noise, load_csv,
                     make_synthetic, save_csv, split_tasks, split_train_test,
                     standardize)
