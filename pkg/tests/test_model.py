import os.path as osp
import re
import sys
cur_dir = osp.dirname(osp.abspath(__file__))
sys.path.insert(0, osp.join(cur_dir, '..'))

import numpy as np
import pytest
from numpy.testing import assert_allclose

from hypnogrid.errors import ConfigError, DimensionError
from hypnogrid.tensor import Tensor, backward, reset_graph
from hypnogrid.tensor import functional as F
from hypnogrid.tensor.gradcheck import grad_check, projected
from hypnogrid.stage.params import (ModelConfig, STAGE_PREFIXES, init_params, count_parameters,
                                    closed_form_parameter_count, receptive_field, receptive_field_increments)
from hypnogrid.stage.model import (se_recalibrate, multi_scale_extract, residual_compress_block,
                                   intra_window_encode, inter_window_encode, attention_pool, model_forward,
                                   model_gradient_check)


def setup_function(function):
    reset_graph()


def _params(config, seed=0, dtype=np.float64):
    return init_params(config, np.random.default_rng(seed), dtype=dtype)


# shapes

def test_full_size_shape_chain():
    params = _params(ModelConfig(), dtype=np.float32)
    batch = np.random.default_rng(1).standard_normal((2, 3, 500)).astype(np.float32)
    x = multi_scale_extract(Tensor(batch.reshape(6, 1, 500)), params)
    assert x.shape == (6, 96, 250)
    for index, expected in ((1, (6, 128, 125)), (2, (6, 192, 25)), (3, (6, 256, 5))):
        x = residual_compress_block(x, params, index)
        assert x.shape == expected
    h = intra_window_encode(x, params)
    assert h.shape == (6, 128)
    u = inter_window_encode(F.reshape(h, (2, 3, 128)), params)
    assert u.shape == (2, 3, 256)
    pooled, alpha = attention_pool(u, params['attention.w_q'], params['attention.v'])
    assert pooled.shape == (2, 256)
    logits, alpha = model_forward(batch, params)
    assert logits.shape == (2, 5)
    assert_allclose(alpha.data.sum(axis=1), 1.0, atol=1e-5)


def test_ablation_shapes():
    batch = np.random.default_rng(2).standard_normal((2, 3, 200))
    logits, alpha = model_forward(batch, _params(ModelConfig.miniature(use_compression=False)))
    assert logits.shape == (2, 5) and alpha.shape == (2, 3)
    logits, alpha = model_forward(batch, _params(ModelConfig.miniature(use_sequence=False)))
    assert logits.shape == (2, 5) and alpha is None


def test_wrong_input_shapes():
    params = _params(ModelConfig.miniature())
    with pytest.raises(DimensionError):
        model_forward(np.zeros((2, 3, 199)), params)
    with pytest.raises(DimensionError):
        model_forward(np.zeros((2, 2, 200)), params)
    with pytest.raises(DimensionError):
        multi_scale_extract(Tensor(np.zeros((2, 3, 200))), params)


def test_training_with_dropout_needs_rng():
    params = _params(ModelConfig.miniature(pool_dropout=0.1))
    with pytest.raises(ConfigError):
        model_forward(np.zeros((2, 3, 200)), params, training=True)


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(branch_kernels=(6, 15, 31)).validate()
    with pytest.raises(ConfigError):
        ModelConfig(se_reduction=7).validate()
    with pytest.raises(ConfigError):
        ModelConfig(chunk_len=510).validate()
    with pytest.raises(ConfigError):
        ModelConfig(context=5).validate()


# parameter counts and receptive field

def test_multiscale_parameter_budget():
    params = _params(ModelConfig(), dtype=np.float32)
    assert count_parameters(params, 'multiscale') == 30596
    assert abs(count_parameters(params, 'multiscale') - 30600) <= 3060


@pytest.mark.parametrize('config', [ModelConfig(), ModelConfig.miniature(),
                                    ModelConfig.miniature(use_compression=False),
                                    ModelConfig.miniature(use_sequence=False)])
def test_counts_match_closed_form(config):
    params = _params(config, dtype=np.float32)
    closed = closed_form_parameter_count(config)
    for stage in STAGE_PREFIXES:
        assert count_parameters(params, stage) == closed[stage], stage
    assert count_parameters(params) == sum(closed.values())


def test_receptive_field_of_default_config():
    config = ModelConfig()
    assert receptive_field_increments(config) == [8, 32, 320]
    assert receptive_field(config) == [33, 41, 73, 393]


def test_receptive_field_without_dilation_or_stride():
    config = ModelConfig(block_dilations=(1, 1, 1), block_strides=(1, 1, 1), reduction_stride=1)
    assert receptive_field_increments(config) == [4, 4, 4]


def _ones_conv(x, k, dilation=1, stride=1):
    return F.conv1d(x, Tensor(np.ones((1, 1, k))), stride=stride, dilation=dilation)


def _support(chain, length=1200):
    x = Tensor(np.ones((1, 1, length)), requires_grad=True)
    out = chain(x)
    mid = out.shape[2] // 2
    grads = backward(F.reduce_sum(out[:, :, mid:mid + 1]), leaves=[x], accumulate=False)
    nonzero = np.flatnonzero(grads[x][0, 0])
    return nonzero[-1] - nonzero[0] + 1


def test_receptive_field_matches_impulse_response():
    config = ModelConfig()

    def chain(n_blocks):
        def run(x):
            x = _ones_conv(x, max(config.branch_kernels))
            x = _ones_conv(x, config.reduction_kernel, stride=config.reduction_stride)
            for d, s in list(zip(config.block_dilations, config.block_strides))[:n_blocks]:
                x = _ones_conv(_ones_conv(x, config.block_kernel, d), config.block_kernel, d)
                x = _ones_conv(x, 1, stride=s)
            return x
        return run

    assert [_support(chain(n)) for n in range(4)] == receptive_field(config)


# stage-level properties

def test_se_with_zero_weights_halves_input():
    u = np.random.default_rng(3).standard_normal((2, 8, 10))
    out = se_recalibrate(Tensor(u), Tensor(np.zeros((2, 8))), Tensor(np.zeros((8, 2))))
    assert_allclose(out.data, 0.5 * u)


def test_se_rejects_reduction_that_does_not_fit():
    with pytest.raises(ConfigError):
        se_recalibrate(Tensor(np.zeros((1, 6, 4))), Tensor(np.zeros((1, 6))), Tensor(np.zeros((6, 1))), reduction=4)


def test_residual_block_with_zero_convs_passes_gelu_of_input():
    config = ModelConfig.miniature(block_channels=(12, 12, 12), block_strides=(1, 1, 1))
    params = _params(config)
    for name in ('conv1.weight', 'conv1.bias', 'conv2.weight', 'conv2.bias',
                 'se.fc1.weight', 'se.fc1.bias', 'se.fc2.weight', 'se.fc2.bias'):
        params['compression.block1.' + name].data[...] = 0.0
    x = np.random.default_rng(4).standard_normal((2, 12, 20))
    out = residual_compress_block(Tensor(x), params, 1)
    assert_allclose(out.data, 0.5 * F.gelu(Tensor(x)).data, atol=1e-12)


def test_residual_block_gradients():
    params = _params(ModelConfig.miniature(), seed=5)
    names = [n for n in params.names() if n.startswith('compression.block1.')]
    x = np.random.default_rng(5).standard_normal((2, 12, 40))
    r = np.random.default_rng(6).standard_normal((2, 8, 20))

    def f(x, *_):
        return projected(residual_compress_block(x, params, 1), r)
    assert grad_check(f, [x] + [params[n] for n in names], max_coords=6) < 1e-4


def test_attention_over_identical_windows():
    rng = np.random.default_rng(7)
    row = rng.standard_normal(6)
    u = np.tile(row, (2, 3, 1))
    pooled, alpha = attention_pool(Tensor(u), Tensor(rng.standard_normal((6, 4))), Tensor(rng.standard_normal(4)))
    assert_allclose(alpha.data, 1.0 / 3)
    assert_allclose(pooled.data, np.tile(row, (2, 1)))


def test_attention_weights_sum_to_one_and_gradients():
    rng = np.random.default_rng(8)
    u, w_q, v = rng.standard_normal((4, 3, 6)), rng.standard_normal((6, 5)), rng.standard_normal(5)
    _, alpha = attention_pool(Tensor(u), Tensor(w_q), Tensor(v))
    assert_allclose(alpha.data.sum(axis=1), 1.0)
    assert (alpha.data > 0).all()
    r = rng.standard_normal((4, 6))
    assert grad_check(lambda a, b, c: projected(attention_pool(a, b, c)[0], r), [u, w_q, v]) < 1e-5


def test_attention_shape_mismatch():
    with pytest.raises(DimensionError):
        attention_pool(Tensor(np.zeros((1, 3, 6))), Tensor(np.zeros((5, 4))), Tensor(np.zeros(4)))


def test_intra_encoder_with_zero_weights_is_zero():
    params = _params(ModelConfig.miniature())
    for name in params.names():
        if name.startswith('intra.'):
            params[name].data[...] = 0.0
    h = intra_window_encode(Tensor(np.random.default_rng(9).standard_normal((3, 16, 2))), params)
    assert h.shape == (3, 8)
    assert_allclose(h.data, 0.0)


def test_inter_encoder_depends_on_window_order():
    params = _params(ModelConfig.miniature())
    h = np.random.default_rng(10).standard_normal((2, 3, 8))
    forward = inter_window_encode(Tensor(h), params).data
    swapped = inter_window_encode(Tensor(h[:, ::-1].copy()), params).data
    assert not np.allclose(forward[:, 1], swapped[:, 1])


def test_eval_forward_is_deterministic():
    params = _params(ModelConfig.miniature())
    batch = np.random.default_rng(11).standard_normal((3, 3, 200))
    a = model_forward(batch, params)[0].data
    b = model_forward(batch, params)[0].data
    assert np.array_equal(a, b)


# gradients through the whole model

_BN_FED_BIAS = re.compile(r'^(multiscale\.reduce|compression\.block\d\.(conv1|conv2|proj)|classifier\.fc[12])\.bias$')


def test_every_parameter_receives_gradient():
    params = _params(ModelConfig.miniature(), seed=12)
    rng = np.random.default_rng(12)
    logits, _ = model_forward(rng.standard_normal((4, 3, 200)), params, training=True)
    grads = backward(projected(logits, rng.standard_normal((4, 5))), leaves=list(params), accumulate=False)
    for name, p in params.named_parameters():
        if _BN_FED_BIAS.match(name):
            continue  # cancelled by the batch mean of the following norm
        assert np.any(grads[p] != 0), name


@pytest.mark.parametrize('seed', [1, 2, 3])
def test_model_gradient_check(seed):
    assert model_gradient_check(seed) < 1e-3


if __name__ == "__main__":
    pytest.main([__file__])
