"""BiLSTM-CRF sequence tagger implemented directly in numpy."""
from .crf import (bio_constraints, crf_log_partition, crf_nll, crf_nll_and_grads,
                  path_score, viterbi)
from .lstm import LstmState, lstm_step
from .model import (TrainConfig, bilstm_forward, cell_weights, emissions, gradients,
                    init_params)
from .train import (AdamState, EarlyStopping, Tagger, TrainingDiverged, adam_step,
                    evaluate_tagger, train)

__all__ = [
    "AdamState", "EarlyStopping", "LstmState", "Tagger", "TrainConfig", "TrainingDiverged",
    "adam_step", "bilstm_forward", "bio_constraints", "cell_weights", "crf_log_partition",
    "crf_nll", "crf_nll_and_grads", "emissions", "evaluate_tagger", "gradients",
    "init_params", "lstm_step", "path_score", "train", "viterbi",
]
