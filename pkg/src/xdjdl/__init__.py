"""Cross-domain joint dictionary learning for reconstructing ECG cycles from PPG."""

from .dict_learning import (HyperParams, LcXdjdlModel, XdjdlModel, build_q_matrix,
                            train_lc_xdjdl, train_xdjdl)
from .evaluate import (EvalReport, Fiducials, Intervals, detect_fiducials, evaluate_batch,
                       interval_mae, intervals, pearson, rrmse, split_subwaves)
from .inference import (DctBaselineModel, ReconstructionBatch, align_r_peak_offset,
                        infer_dct_baseline, infer_ecg, infer_ecg_lc, train_dct_baseline)
from .preprocess import CyclePairSet, RawRecord, build_dataset
from .sparse_coding import JointSparsityBounds, omp, omp_batch

__version__ = "0.1.0"
