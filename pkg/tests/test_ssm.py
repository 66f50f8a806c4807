import tracemalloc

import numpy as np
import pytest

from ssmadc.ssm import checkpoint
from ssmadc.ssm.gradcheck import grad_check, relative_error
from ssmadc.ssm.model import (BlockParams, BranchParams, ModelConfig, ScanParams,
                              StaleActivationError, backbone_backward, backbone_forward,
                              block_forward, init_params, preset)
from ssmadc.ssm.scan import selective_scan, selective_scan_backward
from oracles import naive_scan


def random_scan(rng, L, d, n):
    return (rng.normal(size=(L, d)), rng.uniform(0, 0.5, (L, d)),
            -np.exp(rng.normal(size=(d, n))), rng.normal(size=(L, n)),
            rng.normal(size=(L, n)), rng.normal(size=d))


# --- scan

def test_scan_small_instance_matches_oracle():
    args = random_scan(np.random.default_rng(0), 7, 3, 2)
    assert np.max(np.abs(selective_scan(*args) - naive_scan(*args))) < 1e-10


@pytest.mark.parametrize("L", [1, 2, 33, 300, 1024])
def test_scan_matches_oracle(L):
    rng = np.random.default_rng(L)
    args = random_scan(rng, L, 4, 3)
    assert np.max(np.abs(selective_scan(*args) - naive_scan(*args))) < 1e-10


def test_zero_step_is_skip_only():
    rng = np.random.default_rng(1)
    x, dt, A, B, C, D = random_scan(rng, 20, 3, 4)
    y = selective_scan(x, np.zeros_like(dt), A, B, C, D)
    assert np.array_equal(y, D * x)


def test_integrator():
    y = selective_scan(np.ones((3, 1)), np.ones((3, 1)), np.zeros((1, 1)), np.ones((3, 1)),
                       np.ones((3, 1)), np.zeros(1))
    assert y[:, 0].tolist() == [1.0, 2.0, 3.0]


def test_scan_causal():
    rng = np.random.default_rng(2)
    x, dt, A, B, C, D = random_scan(rng, 50, 3, 4)
    y0 = selective_scan(x, dt, A, B, C, D)
    x2 = x.copy()
    x2[30] += 5.0
    y1 = selective_scan(x2, dt, A, B, C, D)
    assert np.array_equal(y0[:30], y1[:30])
    assert not np.allclose(y0[30], y1[30])


def test_scan_stable_long_sequence():
    rng = np.random.default_rng(3)
    args = random_scan(rng, 100_000, 2, 4)
    assert np.all(np.isfinite(selective_scan(*args)))


def test_scan_rejects_bad_input():
    rng = np.random.default_rng(4)
    x, dt, A, B, C, D = random_scan(rng, 5, 2, 2)
    with pytest.raises(ValueError):
        selective_scan(x, -dt, A, B, C, D)
    x[0, 0] = np.nan
    with pytest.raises(ValueError):
        selective_scan(x, dt, A, B, C, D)
    with pytest.raises(ValueError):
        selective_scan(np.ones((5, 3)), dt, A, B, C, D)


def test_scan_state_memory_flat_in_length():
    peaks = []
    for L in (2048, 16384):
        args = random_scan(np.random.default_rng(0), L, 8, 16)
        selective_scan(*args)
        tracemalloc.start()
        y = selective_scan(*args)
        peak = tracemalloc.get_traced_memory()[1]
        tracemalloc.stop()
        peaks.append(peak - y.nbytes)
    assert peaks[1] <= peaks[0] * 1.05 + 4096


def test_scan_backward_finite_differences():
    rng = np.random.default_rng(5)
    args = list(random_scan(rng, 12, 3, 2))
    dy = rng.normal(size=(12, 3))
    grads = selective_scan_backward(*args, dy)
    eps = 1e-6
    for which in range(6):
        arr = args[which]
        for _ in range(4):
            idx = tuple(int(rng.integers(s)) for s in arr.shape)
            old = arr[idx]
            arr[idx] = old + eps
            plus = np.sum(selective_scan(*args) * dy)
            arr[idx] = old - eps
            minus = np.sum(selective_scan(*args) * dy)
            arr[idx] = old
            assert relative_error(grads[which][idx], (plus - minus) / (2 * eps)) < 1e-6


def test_zero_step_D_gradient():
    rng = np.random.default_rng(6)
    x, dt, A, B, C, D = random_scan(rng, 9, 3, 2)
    dy = rng.normal(size=x.shape)
    dD = selective_scan_backward(x, np.zeros_like(dt), A, B, C, D, dy)[5]
    assert np.allclose(dD, (dy * x).sum(axis=0), rtol=1e-14)


# --- block and backbone

def _zero_block(d, expand=2, n=4):
    di = d * expand
    scan = ScanParams(np.zeros((di, n)), np.zeros((di, n)), np.zeros((di, n)),
                      np.zeros((di, di)), np.zeros(di), np.zeros(di))
    return BlockParams(np.ones(d), np.zeros((d, di)), np.zeros((d, di)), np.zeros((di, d)),
                       [BranchParams(np.zeros((di, 4)), scan)])


def test_zero_weight_block_is_identity():
    u = np.random.default_rng(0).normal(size=(10, 8))
    out, _ = block_forward(u, _zero_block(8))
    assert np.array_equal(out, u)


def test_block_single_step_and_random_instance():
    p = init_params(preset("tiny"), 0).block(0, 0)
    u1 = np.random.default_rng(0).normal(size=(1, 16))
    out1, _ = block_forward(u1, p)
    assert out1.shape == (1, 16) and np.all(np.isfinite(out1))
    out16, _ = block_forward(np.random.default_rng(1).normal(size=(16, 16)), p)
    assert np.all(np.isfinite(out16))
    with pytest.raises(ValueError):
        block_forward(np.zeros((4, 5)), p)


def test_stage_lengths():
    params = init_params(preset("tiny"), 0)
    _, act = backbone_forward(np.zeros((800, 128)), params, train=True)
    assert act.stage_lengths == [800, 400, 200, 100]
    _, act = backbone_forward(np.zeros((35, 128)), params, train=True)
    assert act.stage_lengths == [35, 17, 8, 4]


def test_too_short_input():
    params = init_params(preset("tiny"), 0)
    with pytest.raises(ValueError):
        backbone_forward(np.zeros((15, 128)), params)
    with pytest.raises(ValueError):
        backbone_forward(np.zeros((20, 64)), params)


def test_zero_weights_ignore_time_scale():
    params = init_params(preset("tiny"), 0)
    for name, arr in params.tensors.items():
        if not name.endswith("norm") and name != "norm_f":
            arr[...] = 0.0
    params.tensors["head.b"][:] = [0.3, -0.2]
    f = np.random.default_rng(0).normal(size=(40, 128))
    a = backbone_forward(f, params)
    b = backbone_forward(np.repeat(f, 2, axis=0), params)
    assert np.array_equal(a, b)


def test_logits_bit_reproducible():
    f = np.random.default_rng(9).normal(size=(64, 128))
    a = backbone_forward(f, init_params(preset("tiny"), 7))
    b = backbone_forward(f, init_params(preset("tiny"), 7))
    assert a.tobytes() == b.tobytes()


def test_zero_dlogits_zero_gradients():
    params = init_params(preset("tiny"), 0)
    _, act = backbone_forward(np.random.default_rng(0).normal(size=(32, 128)), params, train=True)
    grads = backbone_backward(act, np.zeros(2))
    assert set(grads) == set(params.names())
    assert all(not g.any() for g in grads.values())


def test_stale_activation_rejected():
    params = init_params(preset("tiny"), 0)
    _, act = backbone_forward(np.zeros((32, 128)), params, train=True)
    params.bump()
    with pytest.raises(StaleActivationError):
        backbone_backward(act, np.ones(2))


def test_dlogits_shape_checked():
    params = init_params(preset("tiny"), 0)
    _, act = backbone_forward(np.zeros((32, 128)), params, train=True)
    with pytest.raises(ValueError):
        backbone_backward(act, np.ones(3))


def test_init_invariants():
    cfg = preset("tiny")
    params = init_params(cfg, 0)
    for name, arr in params.tensors.items():
        assert arr.dtype == np.float64 and np.all(np.isfinite(arr))
        if name.endswith("A_log"):
            assert np.all(-np.exp(arr) < 0)
        if name.endswith("b_dt"):
            dt = np.log1p(np.exp(arr))
            assert np.all((dt >= 1e-3 - 1e-12) & (dt <= 1e-1 + 1e-12))
    assert params["stages.3.0.W_in_x"].shape == (128, 256)


def test_presets():
    assert preset("small").depths == (1, 1, 2, 1) and preset("small").d_model == 32
    assert preset("medium").depths == (2, 2, 4, 2) and preset("medium").d_model == 48
    with pytest.raises(ValueError):
        ModelConfig(depths=(1, 1, 1))


# --- gradient check harness

def test_grad_check_tiny():
    report = grad_check(preset("tiny"), seed=0, n_samples=200)
    assert report.n_checked >= 200
    assert report.max_rel_error < 1e-4


def test_grad_check_detects_sign_flip():
    def flipped(act, dlogits):
        grads = backbone_backward(act, dlogits)
        return {k: -g for k, g in grads.items()}
    report = grad_check(preset("tiny"), seed=1, n_samples=50, backward=flipped)
    assert report.max_rel_error > 1e-2


def test_zero_input_gradients_finite():
    params = init_params(preset("tiny"), 0)
    _, act = backbone_forward(np.zeros((32, 128)), params, train=True)
    grads = backbone_backward(act, np.array([1.0, -1.0]))
    assert all(np.all(np.isfinite(g)) for g in grads.values())


# --- checkpoint

def test_checkpoint_roundtrip(tmp_path):
    params = init_params(preset("tiny", n_classes=3, feature_mean=-3.5), 4)
    path = tmp_path / "c.bin"
    sha = checkpoint.save_checkpoint(path, params)
    assert sha == checkpoint.file_sha256(path)
    back = checkpoint.load_checkpoint(path)
    assert back.config == params.config
    for name, arr in params.tensors.items():
        assert np.array_equal(back[name], arr.astype(np.float32).astype(np.float64))
    assert checkpoint.save_checkpoint(tmp_path / "d.bin", back) == sha


def test_checkpoint_corruption(tmp_path):
    blob = checkpoint.to_bytes(init_params(preset("tiny"), 0))
    assert blob[:4] == b"SSMK"
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.from_bytes(blob[:-3])
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.from_bytes(blob + b"\0")
    bad = bytearray(blob)
    bad[10] ^= 0xFF  # inside the config digest
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.from_bytes(bytes(bad))
