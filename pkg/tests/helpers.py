"""Shared test utilities: finite-difference gradient checking."""
import numpy as np
from beamsight import numerics as nx
from beamsight.numerics import finite_difference_grad, mul, relative_error, sum_, tensor


def grad_check(loss_fn, params, rng=None, budget=None, step=1e-4):
    """Worst relative error between backward() and central differences over ``params``.

    ``loss_fn`` rebuilds the scalar loss from scratch.  With ``budget``, only
    that many randomly chosen coordinates (across all tensors) are probed, and
    the error is measured on the probed set as one vector.
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    for p in params:
        assert p.grad is not None, "parameter received no gradient"
    sizes = np.array([p.size for p in params])
    total = int(sizes.sum())
    if budget is None or budget >= total:
        return max(relative_error(p.grad, finite_difference_grad(loss_fn, p, step=step)) for p in params)
    rng = rng or np.random.default_rng(0)
    flat = np.sort(rng.choice(total, size=budget, replace=False))
    owner = np.searchsorted(np.cumsum(sizes), flat, side="right")
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    analytic, numeric = [], []
    for t in np.unique(owner):
        idx = flat[owner == t] - starts[t]
        fd = finite_difference_grad(loss_fn, params[t], step=step, indices=idx).reshape(-1)[idx]
        analytic.append(params[t].grad.reshape(-1)[idx])
        numeric.append(fd)
    return relative_error(np.concatenate(analytic), np.concatenate(numeric))


# ---------------------------------------------------------------------------
# gradient-check cases: each builder returns (loss_fn, params) on tiny random shapes
# ---------------------------------------------------------------------------

def _leaf(rng, *shape, lo=None):
    data = rng.normal(size=shape)
    if lo is not None:  # keep away from kinks
        data = np.sign(data) * (np.abs(data) + lo)
    return tensor(data, requires_grad=True)


def _probe(out_shape, rng):
    w = tensor(rng.normal(size=out_shape))
    return lambda out: sum_(mul(out, w))


def _unary(op, lo=None):
    def build(rng):
        n, m = rng.integers(1, 4), rng.integers(2, 5)
        x = _leaf(rng, n, m, lo=lo)
        probe = _probe((n, m), rng)
        return (lambda: probe(op(x))), [x]
    return build


def _binary(op, bias=False):
    def build(rng):
        n, m = rng.integers(1, 4), rng.integers(2, 5)
        a = _leaf(rng, n, m)
        b = _leaf(rng, m) if bias else _leaf(rng, n, m)
        probe = _probe((n, m), rng)
        return (lambda: probe(op(a, b))), [a, b]
    return build


def _case_reshape(rng):
    x = _leaf(rng, 2, 3, 4)
    probe = _probe((6, 4), rng)
    return (lambda: probe(nx.reshape(x, (6, 4)))), [x]


def _case_transpose(rng):
    x = _leaf(rng, 2, 3, 4)
    probe = _probe((4, 2, 3), rng)
    return (lambda: probe(nx.transpose(x, (2, 0, 1)))), [x]


def _case_swap_last(rng):
    x = _leaf(rng, 2, 3, 4)
    probe = _probe((2, 4, 3), rng)
    return (lambda: probe(nx.swap_last(x))), [x]


def _case_expand(rng):
    x = _leaf(rng, 2, 1, 3)
    probe = _probe((2, 4, 3), rng)
    return (lambda: probe(nx.expand(x, (2, 4, 3)))), [x]


def _case_concat(rng):
    a, b = _leaf(rng, 2, 3), _leaf(rng, 2, 2)
    probe = _probe((2, 5), rng)
    return (lambda: probe(nx.concat([a, b], axis=1))), [a, b]


def _case_index_select(rng):
    x = _leaf(rng, 5, 3)
    idx = np.array([0, 2, 2, 4])
    probe = _probe((4, 3), rng)
    return (lambda: probe(nx.index_select(x, idx))), [x]


def _case_gather_rows(rng):
    x = _leaf(rng, 2, 4, 3)
    idx = np.stack([rng.permutation(4), rng.integers(0, 4, size=4)])
    probe = _probe((2, 4, 3), rng)
    return (lambda: probe(nx.gather_rows(x, idx))), [x]


def _case_pad(rng):
    x = _leaf(rng, 2, 3)
    probe = _probe((4, 4), rng)
    return (lambda: probe(nx.pad(x, ((1, 1), (0, 1))))), [x]


def _case_sum(rng):
    x = _leaf(rng, 2, 3, 4)
    probe = _probe((2, 4), rng)
    return (lambda: probe(nx.sum_(x, axis=1))), [x]


def _case_mean(rng):
    x = _leaf(rng, 2, 3, 4)
    probe = _probe((3,), rng)
    return (lambda: probe(nx.mean(x, axis=(0, 2)))), [x]


def _case_matmul(rng):
    a, b = _leaf(rng, 2, 3, 4), _leaf(rng, 4, 5)
    probe = _probe((2, 3, 5), rng)
    return (lambda: probe(nx.matmul(a, b))), [a, b]


def _case_batched_matmul(rng):
    a, b = _leaf(rng, 2, 3, 4), _leaf(rng, 2, 4, 2)
    probe = _probe((2, 3, 2), rng)
    return (lambda: probe(nx.matmul(a, b))), [a, b]


def _case_linear(rng):
    x, w, b = _leaf(rng, 3, 4), _leaf(rng, 4, 2), _leaf(rng, 2)
    probe = _probe((3, 2), rng)
    return (lambda: probe(nx.linear(x, w, b))), [x, w, b]


def _case_softmax(rng):
    x = _leaf(rng, 3, 5)
    probe = _probe((3, 5), rng)
    return (lambda: probe(nx.softmax(x, axis=-1))), [x]


def _case_log_softmax(rng):
    x = _leaf(rng, 3, 5)
    probe = _probe((3, 5), rng)
    return (lambda: probe(nx.log_softmax(x, axis=-1))), [x]


def _case_layer_norm(rng):
    x, g, b = _leaf(rng, 3, 5), _leaf(rng, 5), _leaf(rng, 5)
    probe = _probe((3, 5), rng)
    return (lambda: probe(nx.layer_norm(x, g, b))), [x, g, b]


def _case_cross_entropy(rng):
    x = _leaf(rng, 4, 6)
    labels = rng.integers(0, 6, size=4)
    return (lambda: nx.cross_entropy(x, labels)), [x]


def _conv_case(groups=1, stride=1, padding=1, c_in=2, c_out=4):
    def build(rng):
        x = _leaf(rng, 2, c_in, 5, 5)
        w = _leaf(rng, c_out, c_in // groups, 3, 3)
        b = _leaf(rng, c_out)
        out = nx.conv2d(x, w, b, stride=stride, padding=padding, groups=groups)
        probe = _probe(out.shape, rng)
        return (lambda: probe(nx.conv2d(x, w, b, stride=stride, padding=padding, groups=groups))), [x, w, b]
    return build


def _case_sdpa(rng):
    q, k, v = _leaf(rng, 2, 3, 4), _leaf(rng, 2, 5, 4), _leaf(rng, 2, 5, 3)
    probe = _probe((2, 3, 3), rng)
    return (lambda: probe(nx.scaled_dot_product_attention(q, k, v))), [q, k, v]


def _mha_case(masked=False):
    def build(rng):
        cfg = nx.AttentionConfig(4, 2)
        init = nx.Init(rng)
        nx.init_mha(init, "a", cfg)
        w = nx.scope(init.params, "a")
        q, kv = _leaf(rng, 2, 3, 4), _leaf(rng, 2, 5, 4)
        mask = np.array([[1, 1, 0, 1, 0], [1, 1, 1, 1, 1]], dtype=bool) if masked else None
        probe = _probe((2, 3, 4), rng)
        return (lambda: probe(nx.multi_head_attention(q, kv, kv, cfg, w, key_mask=mask))), [q, kv] + list(w.values())
    return build


OP_CASES = {
    "add": _binary(nx.add),
    "add_bias": _binary(nx.add, bias=True),
    "sub": _binary(nx.sub),
    "mul": _binary(nx.mul),
    "mul_bias": _binary(nx.mul, bias=True),
    "scale": _unary(lambda x: nx.scale(x, -1.7)),
    "relu": _unary(nx.relu, lo=0.05),
    "gelu": _unary(nx.gelu),
    "sigmoid": _unary(nx.sigmoid),
    "square": _unary(nx.square),
    "reshape": _case_reshape,
    "transpose": _case_transpose,
    "swap_last": _case_swap_last,
    "expand": _case_expand,
    "concat": _case_concat,
    "index_select": _case_index_select,
    "gather_rows": _case_gather_rows,
    "pad": _case_pad,
    "sum": _case_sum,
    "mean": _case_mean,
    "matmul": _case_matmul,
    "matmul_batched": _case_batched_matmul,
    "linear": _case_linear,
    "softmax": _case_softmax,
    "log_softmax": _case_log_softmax,
    "layer_norm": _case_layer_norm,
    "cross_entropy": _case_cross_entropy,
    "conv2d": _conv_case(),
    "conv2d_stride2": _conv_case(stride=2),
    "conv2d_depthwise": _conv_case(groups=2, c_in=2, c_out=2),
    "conv2d_grouped": _conv_case(groups=2, c_in=4, c_out=4, padding=0),
    "attention": _case_sdpa,
    "multi_head_attention": _mha_case(),
    "multi_head_attention_masked": _mha_case(masked=True),
}


# ---------------------------------------------------------------------------
# tiny end-to-end models
# ---------------------------------------------------------------------------
from beamsight.encoders import PointEncoderConfig, PositionEncoderConfig, VisualEncoderConfig  # noqa: E402
from beamsight.fusion import FusionConfig  # noqa: E402
from beamsight.model import BeamModel, ModelConfig  # noqa: E402
from beamsight.preprocess import Batch  # noqa: E402

TINY_BEAMS = 6


def tiny_model_config(variant: str, mask_padding: bool = False) -> ModelConfig:
    return ModelConfig(
        variant=variant, n_beams=TINY_BEAMS,
        position=PositionEncoderConfig(embed_dim=4, n_layers=1, n_heads=2, ff_dim=6),
        visual=VisualEncoderConfig(stem_channels=4, n_stages=1, window_size=2, grid_size=2, head_dim=4,
                                   expansion=2, image_size=8),
        point=PointEncoderConfig(embed_dim=6, n_heads=2, patch_size=2, n_blocks=2, grid_pool=2,
                                 mask_padding=mask_padding),
        fusion=FusionConfig(d_z=4, n_heads=2, hidden=(6, 5), n_beams=TINY_BEAMS),
    )


def tiny_batch(rng, n: int = 2, n_points: int = 8) -> Batch:
    pts = rng.uniform(-8, 8, size=(n, n_points, 3))
    return Batch(rng.uniform(0, 1, size=(n, 2)), rng.uniform(-1, 1, size=(n, 3, 8, 8)), pts,
                 rng.integers(0, TINY_BEAMS, size=n))


def model_case(variant: str):
    def build(rng):
        model = BeamModel(tiny_model_config(variant), seed=int(rng.integers(1 << 30)))
        batch = tiny_batch(rng)
        return (lambda: nx.cross_entropy(model.forward(batch), batch.labels)), list(model.params.values())
    return build


MODEL_CASES = {f"model_{v}": model_case(v) for v in ("proposed", "baseline1", "baseline2")}
