from .tensor import (DTYPE, Tensor, add, concat, conv2d, cross_entropy, expand, gather_rows, gelu,
                     index_select, is_grad_enabled, layer_norm, linear, log_softmax, matmul, mean,
                     mul, no_grad, pad, relu, reshape, scale, sigmoid, softmax, square, sub, sum_,
                     swap_last, tensor, transpose)
from .nn import (AttentionConfig, Init, Params, apply_layer_norm, apply_linear, feed_forward,
                 init_feed_forward, init_layer_norm, init_linear, init_mha, multi_head_attention,
                 scaled_dot_product_attention, scope)
from .optim import Adam, AdamState, adam_step, clip_grad_norm
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import finite_difference_grad, relative_error

__all__ = [name for name in dir() if not name.startswith("_")]
