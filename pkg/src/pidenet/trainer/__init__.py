"""Loss, regularizers, optimizer, datasets, checkpoints and the training loop."""

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, restore_network, restore_optimizer, save_checkpoint
from .data import Dataset, SyntheticLongRangeSpec, gen_longrange, load_cifar10, longrange_dataset, read_cifar_records, write_cifar_records
from .loop import TrainConfig, TrainingDiverged, evaluate, recalibrate_batchnorm, train, write_metrics
from .objective import RegularizerConfig, hamiltonian_weights_by_unit, loss, reg_l2, reg_smooth, regularization
from .optim import SGD, lr_schedule, sgd_step

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "Dataset",
    "RegularizerConfig",
    "SGD",
    "SyntheticLongRangeSpec",
    "TrainConfig",
    "TrainingDiverged",
    "evaluate",
    "gen_longrange",
    "hamiltonian_weights_by_unit",
    "load_checkpoint",
    "load_cifar10",
    "longrange_dataset",
    "loss",
    "lr_schedule",
    "read_cifar_records",
    "reg_l2",
    "reg_smooth",
    "recalibrate_batchnorm",
    "regularization",
    "restore_network",
    "restore_optimizer",
    "save_checkpoint",
    "sgd_step",
    "train",
    "write_cifar_records",
    "write_metrics",
]
