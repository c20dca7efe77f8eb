"""Training-loop contract: determinism, learning, ELBO bookkeeping."""

import numpy as np
import pytest

from uqtsc import arch, training, uq
from uqtsc.nncore.layers import Dense


def _toy_data(n, seed, channels=3, window=16):
    # class k centered at 2k-1; trivially separable by the channel mean
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    x = rng.normal(size=(n, channels, window)) * 0.3
    x += (2.0 * y - 1.0)[:, None, None]
    return x, y


def _toy_net(uq_method="none", seed=0, channels=3, window=16):
    cfg = arch.ModelConfig(family="cnn", uq=uq_method, cnn_blocks=1,
                           f1=16, k1=4, max_pool=2, batch_size=16,
                           dropout_rate=0.2)
    return arch.build_network(cfg, channels, window, seed=seed)


def test_smoke_two_epochs_logs_both():
    x, y = _toy_data(48, 0)
    xv, yv = _toy_data(16, 1)
    hist = training.train_network(_toy_net(), x, y, xv, yv, epochs=2, seed=3)
    assert len(hist) == 2
    assert [h.epoch for h in hist] == [0, 1]
    for h in hist:
        assert np.isfinite(h.train_loss) and np.isfinite(h.val_loss)
        assert 0.0 <= h.val_wf1 <= 1.0


def test_same_seed_identical_history():
    x, y = _toy_data(48, 2)
    xv, yv = _toy_data(16, 3)
    runs = []
    for _ in range(2):
        hist = training.train_network(_toy_net(seed=5), x, y, xv, yv,
                                      epochs=3, seed=7)
        runs.append([(h.train_loss, h.val_loss, h.val_wf1) for h in hist])
    assert runs[0] == runs[1]


def test_learns_separable_toy():
    x, y = _toy_data(96, 4)
    xv, yv = _toy_data(32, 5)
    hist = training.train_network(_toy_net(seed=6), x, y, xv, yv,
                                  epochs=8, seed=8)
    assert hist[-1].val_wf1 >= 0.9
    assert hist[-1].train_loss < hist[0].train_loss


def test_flipout_history_carries_kl():
    x, y = _toy_data(48, 9)
    xv, yv = _toy_data(16, 10)
    hist = training.train_network(_toy_net("flipout", seed=11), x, y, xv, yv,
                                  epochs=2, seed=12)
    assert all(h.kl is not None and h.kl > 0.0 for h in hist)


def test_training_log_kl_column(tmp_path):
    x, y = _toy_data(48, 13)
    xv, yv = _toy_data(16, 14)
    path = tmp_path / "log.csv"

    hist = training.train_network(_toy_net("flipout", seed=15), x, y, xv, yv,
                                  epochs=2, seed=16)
    training.write_training_log(hist, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,val_wF1,kl"
    assert len(lines) == 3

    hist = training.train_network(_toy_net(seed=15), x, y, xv, yv,
                                  epochs=2, seed=16)
    training.write_training_log(hist, path)
    assert path.read_text().splitlines()[0] == "epoch,train_loss,val_loss,val_wF1"


def test_kl_grads_match_finite_differences():
    rng = np.random.default_rng(17)
    layer = uq.FlipoutDense(Dense(4, 3, rng))
    for p in layer.params():
        p.value = rng.normal(-0.5, 0.3, size=p.value.shape)
        p.zero_grad()
    weight = 0.7
    layer.accumulate_kl_grads(weight)
    eps = 1e-6
    for p in layer.params():
        flat = p.value.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = weight * layer.kl()
            flat[i] = orig - eps
            lo = weight * layer.kl()
            flat[i] = orig
            fd = (hi - lo) / (2 * eps)
            assert p.grad.ravel()[i] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_float32_cast():
    x, y = _toy_data(48, 18)
    xv, yv = _toy_data(16, 19)
    net = _toy_net(seed=20)
    hist = training.train_network(net, x, y, xv, yv, epochs=1, seed=21,
                                  dtype=np.float32)
    assert net.params()[0].value.dtype == np.float32
    assert np.isfinite(hist[0].train_loss)


def test_singleton_tail_batch_dropped():
    rng = np.random.default_rng(22)
    batches = training._batches(33, 16, rng)
    assert [b.size for b in batches] == [16, 16]
    batches = training._batches(34, 16, rng)
    assert [b.size for b in batches] == [16, 16, 2]


def test_rejects_tiny_training_set():
    x, y = _toy_data(1, 23)
    with pytest.raises(training.EmptyTrainingSet):
        training.train_network(_toy_net(), x, y, x, y, epochs=1, seed=0)
    with pytest.raises(training.EmptyTrainingSet):
        training.evaluate(_toy_net(), np.zeros((0, 3, 16)), np.zeros(0))
