from .checkpoint import load_checkpoint, save_checkpoint
from .kernels import cosine_sim, normalize_rows
from .optim import AdamState, adam_step, lr_at
from .rng import seeded_rng, stable_hash
from .tensor import (
    ShapeError,
    Tensor,
    add,
    as_tensor,
    concat,
    div,
    exp,
    getitem,
    l2_normalize,
    layer_norm,
    log,
    logsumexp,
    masked_mean,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    power,
    relu,
    reshape,
    slice_,
    softmax,
    sqrt,
    stack,
    sub,
    swapaxes,
    take,
    tanh,
    transpose,
    tsum,
    where,
)
