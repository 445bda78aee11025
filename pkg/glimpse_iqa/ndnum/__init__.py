"""Define the dense-tensor numerical core with tape-based reverse mode."""
from .gradcheck import (  # noqa
    GradCheckEntry,
    check_named_gradients,
    finite_diff_grad,
    relative_error,
)
from .ops import (  # noqa
    activation,
    add,
    as_tensor,
    avg_pool,
    concat,
    conv2d,
    dot,
    flatten,
    hardtanh,
    linear,
    mae_loss,
    nll_loss,
    relu,
    reshape,
    scale,
    softmax,
    total,
)
from .tensor import DTYPE, GraphTape, Tensor, backward  # noqa
