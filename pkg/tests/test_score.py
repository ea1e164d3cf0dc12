import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kspacediff.freqops import CenterMask, IdentityOp, WeightMatrix
from kspacediff.kspace import fft2c
from kspacediff.score import (CheckpointError, GaussianScoreOracle, NoiseSchedule, TrainableScore,
                              build_training_set, dsm_loss, load_checkpoint, make_schedule,
                              save_checkpoint, schedule_from_dict, train, validation_loss)

from conftest import random_complex


def test_schedule_three_levels():
    s = make_schedule(1, 0.01, 3)
    np.testing.assert_allclose(s.sigmas, [1, 0.1, 0.01], rtol=1e-14)


def test_schedule_closed_form_ratio():
    s = make_schedule(1, 0.01, 1000)
    # 1-based sigma_500 / sigma_501
    assert s.sigmas[499] / s.sigmas[500] == pytest.approx(100 ** (1 / 999), rel=1e-12)
    assert s.sigmas[0] == 1.0 and s.sigmas[-1] == 0.01


@given(smax=st.floats(0.1, 50), frac=st.floats(1e-4, 0.9), n=st.integers(2, 300))
def test_schedule_geometric_and_decreasing(smax, frac, n):
    s = make_schedule(smax, smax * frac, n)
    assert s.sigmas[0] == smax and s.sigmas[-1] == smax * frac
    assert np.all(np.diff(s.sigmas) < 0) and np.all(s.sigmas > 0)
    ratios = s.sigmas[1:] / s.sigmas[:-1]
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-9)


@pytest.mark.parametrize("args", [(1, 1, 5), (0.01, 1, 5), (1, 0, 5), (1, 0.1, 1)])
def test_schedule_rejects_bad_input(args):
    with pytest.raises(ValueError):
        make_schedule(*args)


def test_schedule_dict_round_trip():
    s = make_schedule(2, 0.02, 7)
    np.testing.assert_array_equal(schedule_from_dict(s.to_dict()).sigmas, s.sigmas)
    c = NoiseSchedule.constant(0.3)
    assert schedule_from_dict(c.to_dict()).sigmas.tolist() == [0.3]


@given(seed=st.integers(0, 2**31), v=st.floats(0.01, 4), sigma=st.floats(0.01, 2))
def test_oracle_matches_finite_differences(seed, v, sigma):
    rng = np.random.default_rng(seed)
    mu, x = random_complex(rng, (2, 3)), random_complex(rng, (2, 3))
    oracle = GaussianScoreOracle(mu, v)
    s = oracle(x, sigma)
    h = 1e-6
    fd = np.zeros_like(s)
    for idx in np.ndindex(x.shape):
        for unit, part in ((1.0, "re"), (1j, "im")):
            xp, xm = x.copy(), x.copy()
            xp[idx] += h * unit
            xm[idx] -= h * unit
            d = (oracle.log_density(xp, sigma) - oracle.log_density(xm, sigma)) / (2 * h)
            # Wirtinger derivative d/d(conj z) = (d/dre + i d/dim) / 2
            fd[idx] += 0.5 * d * unit
    np.testing.assert_allclose(fd, s, rtol=1e-6, atol=1e-6 * np.max(np.abs(s)))


def test_oracle_exact_formula(rng):
    mu, x = random_complex(rng, (4, 4)), random_complex(rng, (4, 4))
    np.testing.assert_array_equal(GaussianScoreOracle(mu, 0.3)(x, 0.5), (mu - x) / (0.3 + 0.25))


def test_dsm_loss_zero_model_equals_noise_power(rng):
    batch = random_complex(rng, (5, 4, 4))
    noise = random_complex(rng, (5, 4, 4)) / math.sqrt(2)

    def zero(x, sigma):
        return np.zeros_like(x)

    expected = np.mean(np.sum(np.abs(noise) ** 2, axis=(1, 2)))
    assert dsm_loss(zero, batch, 0.3, noise) == pytest.approx(expected, rel=1e-12)


def test_dsm_loss_zero_model_expected_dimension():
    rng = np.random.default_rng(0)
    d = 16
    noise = random_complex(rng, (20000, 4, 4)) / math.sqrt(2)
    loss = dsm_loss(lambda x, s: np.zeros_like(x), np.zeros((20000, 4, 4), complex), 0.5, noise)
    assert loss == pytest.approx(d, rel=0.02)


def test_dsm_loss_batch_order_invariant(rng):
    batch = random_complex(rng, (6, 4, 4))
    noise = random_complex(rng, (6, 4, 4))
    oracle = GaussianScoreOracle(np.zeros((4, 4)), 1.0)
    perm = rng.permutation(6)
    assert dsm_loss(oracle, batch, 0.4, noise) == pytest.approx(dsm_loss(oracle, batch[perm], 0.4, noise[perm]),
                                                                 rel=1e-12)


def test_dsm_loss_oracle_reaches_irreducible_constant():
    # data ~ CN(0, v): E[z | x + sigma z] leaves residual variance v / (v + sigma^2) per entry
    rng = np.random.default_rng(5)
    v, sigma, n = 0.5, 0.7, 40000
    x = np.sqrt(v) * random_complex(rng, (n, 1, 2)) / math.sqrt(2)
    z = random_complex(rng, (n, 1, 2)) / math.sqrt(2)
    loss = dsm_loss(GaussianScoreOracle(np.zeros((1, 2)), v), x, sigma, z)
    assert loss == pytest.approx(2 * v / (v + sigma ** 2), rel=0.02)


def test_dsm_loss_empty_batch():
    with pytest.raises(ValueError):
        dsm_loss(lambda x, s: x, np.zeros((0, 4, 4)), 0.1, np.zeros((0, 4, 4)))


def _toy_data(n, shape=(16, 16), seed=0):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[:shape[0], :shape[1]]
    imgs = []
    for _ in range(n):
        cy, cx, r = rng.uniform(5, 11), rng.uniform(5, 11), rng.uniform(2, 5)
        imgs.append(((yy - cy) ** 2 + (xx - cx) ** 2 < r ** 2).astype(float) * rng.uniform(0.5, 1))
    return fft2c(np.array(imgs))


def _model(op_tag=None, seed=0, sigma_data=0.3):
    return TrainableScore((16, 16), op_tag or {"kind": "identity"}, make_schedule(1, 0.01, 10), seed=seed,
                          sigma_data=sigma_data, hidden=8, depth=2)


def test_untrained_model_is_shape_preserving_and_finite(rng):
    m = _model()
    x = random_complex(rng, (16, 16))
    out = m(x, 0.2)
    assert out.shape == x.shape and np.all(np.isfinite(out))
    batch = m(np.stack([x, 2 * x]), 0.2)
    np.testing.assert_allclose(batch[0], out, rtol=1e-5, atol=1e-6)
    np.testing.assert_array_equal(m(x, 0.2), out)


def test_untrained_model_is_gaussian_prior_score(rng):
    m = _model(sigma_data=0.4)
    x = random_complex(rng, (16, 16))
    np.testing.assert_allclose(m(x, 0.3), -x / (0.4 ** 2 + 0.3 ** 2), rtol=1e-5)


def test_training_reduces_validation_loss_and_is_deterministic(tmp_path):
    k = _toy_data(48)
    x, scale = build_training_set(k[:40], IdentityOp((16, 16)))
    xv, _ = build_training_set(k[40:], IdentityOp((16, 16)), scale)
    assert np.max(np.abs(x)) == pytest.approx(1.0)
    sd = float(np.sqrt(np.mean(np.abs(x) ** 2)))
    a, b = _model(sigma_data=sd), _model(sigma_data=sd)
    ha = train(a, x, xv, epochs=6)
    train(b, x, xv, epochs=6)
    assert ha.final_val < ha.initial_val
    np.testing.assert_array_equal(a.parameters_vector(), b.parameters_vector())
    # beats the zero predictor on held-out data
    assert validation_loss(a, xv) < 16 * 16


def test_zero_epochs_leaves_parameters(rng):
    m = _model()
    before = m.parameters_vector().copy()
    h = train(m, random_complex(rng, (4, 16, 16)), epochs=0)
    np.testing.assert_array_equal(m.parameters_vector(), before)
    assert len(h.val_loss) == 1


def test_build_training_set_applies_operator():
    k = _toy_data(3)
    wm = WeightMatrix.build((16, 16))
    x, scale = build_training_set(k, wm)
    np.testing.assert_allclose(x * scale, wm.apply(k))
    with pytest.raises(ValueError):
        build_training_set(np.zeros((2, 16, 16)), wm)


def test_checkpoint_round_trip(tmp_path, rng):
    k = _toy_data(8)
    cm = CenterMask.build((16, 16), 4)
    x, scale = build_training_set(k, cm)
    m = TrainableScore((16, 16), cm.tag(), make_schedule(1, 0.01, 10), seed=3, data_scale=scale,
                       sigma_data=0.2, hidden=8, depth=2)
    train(m, x, epochs=1)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, m)
    raw = path.read_bytes()
    assert raw.index(b"\n") > 0
    again = load_checkpoint(path)
    assert again.operator_tag == cm.tag()
    assert again.data_scale == scale
    np.testing.assert_array_equal(again.parameters_vector(), m.parameters_vector())
    probe = random_complex(rng, (16, 16))
    np.testing.assert_array_equal(again(probe, 0.1), m(probe, 0.1))


def test_checkpoint_rejects_corruption(tmp_path):
    m = _model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, m)
    raw = path.read_bytes()
    head, _, blob = raw.partition(b"\n")
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(head + b"\n" + blob[:-4])
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
    bad.write_bytes(b"{not json\n" + blob)
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
    bad.write_bytes(head.replace(b'"operator"', b'"operatorx"') + b"\n" + blob)
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
