"""Per-class sparse dictionary learning with incoherence penalties.

Linear and kernelized dictionary learning for classification: each class
gets its own dictionary, trained so that atoms reconstruct that class well
while staying incoherent with every other class's atoms. Test signals are
assigned to the class whose dictionary reconstructs them best under a
sparsity budget.
"""

from .classify import (
    ClassifierModel,
    EvalReport,
    KernelClass,
    LinearClass,
    classify_signal,
    discriminative_matrix,
    error_matrix,
    evaluate,
    train,
)
from .data import (
    LabeledDataset,
    SplitSpec,
    load_dataset,
    load_model,
    load_run_config,
    save_dataset,
    save_model,
    split,
    synth_dataset,
)
from .errors import IkdlError, InputError, NumericalError
from .kernels import GramMatrix, KernelKind, KernelSpec, gram, kernel_eval, knorm
from .learning import (
    KernelTrainResult,
    LinearTrainResult,
    TrainConfig,
    UpdateMode,
    train_idl,
    train_ikdl,
)
from .pursuit import SparseCode, komp, komp_batch, omp, omp_batch

__version__ = "0.1.0"

__all__ = [
    "ClassifierModel",
    "EvalReport",
    "GramMatrix",
    "IkdlError",
    "InputError",
    "KernelClass",
    "KernelKind",
    "KernelSpec",
    "KernelTrainResult",
    "LabeledDataset",
    "LinearClass",
    "LinearTrainResult",
    "NumericalError",
    "SparseCode",
    "SplitSpec",
    "TrainConfig",
    "UpdateMode",
    "classify_signal",
    "discriminative_matrix",
    "error_matrix",
    "evaluate",
    "gram",
    "kernel_eval",
    "knorm",
    "komp",
    "komp_batch",
    "load_dataset",
    "load_model",
    "load_run_config",
    "omp",
    "omp_batch",
    "save_dataset",
    "save_model",
    "split",
    "synth_dataset",
    "train",
    "train_idl",
    "train_ikdl",
    "__version__",
]
