"""Temporal shift operators, a small video CNN engine and its streaming runtime."""

from ._tsm import (
    CacheMismatch,
    Error,
    FormatError,
    IndexError,
    InvalidShape,
    InvalidSpec,
    Network,
    Padding,
    ShiftMode,
    ShiftSpec,
    Stream,
    TrainingDiverged,
    bench_shift,
    bytes_moved,
    consensus_average,
    gen_dataset,
    read_tensor,
    reverse_time,
    shift_adjoint,
    shift_offline,
    shift_offline_naive,
    train_toy,
    write_tensor,
)

__all__ = [name for name in dir() if not name.startswith("_")]
