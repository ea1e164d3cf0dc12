import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kspacediff.arrayfile import (ArrayFile, ArrayFileError, METRIC_COLUMNS, decode_array, encode_array,
                                  read_array, read_pgm, write_array, write_metrics_csv, write_pgm)
from kspacediff.kspace import sos_combine
from kspacediff.masks import InfeasibleMask, Pattern, calibration_region, make_mask
from kspacediff.metrics import mse, psnr, ssim
from kspacediff.phantom import make_phantom, make_sensitivities
from kspacediff.recon import undersample, zero_filled

from conftest import random_complex
from oracles import mse_loop, psnr_loop, ssim_windows


# masks -----------------------------------------------------------------------------------------

@pytest.mark.parametrize("pattern", list(Pattern))
def test_full_sampling_is_all_true(pattern):
    assert make_mask(pattern, (32, 32), 1.0).omega.all()


def test_equispaced_line_enumeration():
    m = make_mask("equispaced1d", (64, 64), 4, calib=8)
    lines = np.flatnonzero(m.omega[0])
    c = 32
    expected = {j for j in range(64) if (j - c) % 4 == 0} | set(range(c - 4, c + 4))
    assert set(lines.tolist()) == expected
    assert np.all(m.omega == m.omega[0])
    assert 0.25 <= m.fraction <= 0.35


@pytest.mark.parametrize("pattern", list(Pattern))
def test_mask_determinism_and_calibration(pattern):
    a = make_mask(pattern, (64, 64), 4, calib=8, seed=5)
    b = make_mask(pattern, (64, 64), 4, calib=8, seed=5)
    np.testing.assert_array_equal(a.omega, b.omega)
    calib = calibration_region((64, 64), 8, two_d=Pattern(pattern).is_2d)
    assert a.omega[calib].all()


@pytest.mark.parametrize("pattern", [pytest.param(Pattern.POISSON, marks=pytest.mark.slow), Pattern.RANDOM2D,
                                     Pattern.UNIFORM1D, Pattern.CARTESIAN1D])
@pytest.mark.parametrize("R", [2, 4, 8])
def test_mask_fraction_within_budget(pattern, R):
    fracs = np.array([make_mask(pattern, (64, 64), R, calib=8, seed=s).fraction for s in range(100)])
    assert np.all(np.abs(fracs * R - 1) <= 0.10)
    assert abs(fracs.mean() * R - 1) <= 0.03


def test_random_masks_change_with_seed():
    a = make_mask("poisson", (64, 64), 4, seed=0)
    b = make_mask("poisson", (64, 64), 4, seed=1)
    assert not np.array_equal(a.omega, b.omega)


def test_infeasible_and_invalid_masks():
    with pytest.raises(InfeasibleMask):
        make_mask("random2d", (32, 32), 20, calib=16)
    with pytest.raises(InfeasibleMask):
        make_mask("uniform1d", (32, 32), 8, calib=8)
    with pytest.raises(ValueError):
        make_mask("random2d", (32, 32), 0.5)
    with pytest.raises(ValueError):
        make_mask("random2d", (32, 32), 2, calib=40)


def test_poisson_density_falls_off_from_center():
    m = make_mask("poisson", (64, 64), 4, calib=8, seed=2).omega
    yy, xx = np.mgrid[:64, :64]
    r = np.hypot(yy - 32, xx - 32)
    inner = m[(r > 6) & (r < 16)].mean()
    outer = m[r > 24].mean()
    assert inner > outer


# phantoms --------------------------------------------------------------------------------------

@given(seed=st.integers(0, 10_000))
def test_phantom_range_and_background(seed):
    img = sos_combine(make_phantom(seed=seed))
    assert img.min() >= 0 and img.max() <= 1
    assert img[0, 0] == 0 and img[-1, -1] == 0


def test_sensitivities_normalized():
    sens = make_sensitivities((64, 64), 4, seed=1)
    np.testing.assert_allclose(np.sum(np.abs(sens) ** 2, axis=0), 1, atol=1e-6)


def test_multicoil_sos_recovers_image():
    single = make_phantom(seed=4)
    multi = make_phantom(seed=4, coils=4, phase=True)
    np.testing.assert_allclose(sos_combine(multi), sos_combine(single), atol=1e-12)


def test_phantoms_differ_by_seed_and_validate_shape():
    assert not np.array_equal(make_phantom(seed=1).data, make_phantom(seed=2).data)
    np.testing.assert_array_equal(make_phantom("shepp-logan", seed=1).data, make_phantom("shepp-logan", seed=2).data)
    with pytest.raises(ValueError):
        make_phantom(shape=(16, 16))
    with pytest.raises(ValueError):
        make_phantom(kind="bogus")


def test_zero_filled_psnr_falls_with_acceleration():
    vals = []
    for R in (2, 4, 8):
        per = []
        for s in range(5):
            ph = make_phantom(seed=100 + s)
            meas = undersample(ph.to_kspace(), make_mask("random2d", (64, 64), R, calib=8, seed=s))
            per.append(psnr(sos_combine(ph), sos_combine(zero_filled(meas))))
        vals.append(np.mean(per))
    assert vals[0] > vals[1] > vals[2]


# metrics ---------------------------------------------------------------------------------------

def test_metric_examples():
    ref = np.zeros((8, 8))
    ref[0, 0] = 1.0
    test = ref.copy()
    test[1, 1] = math.sqrt(1e-4 * 64)
    assert psnr(ref, test) == pytest.approx(40.0)
    assert psnr(ref, ref) == math.inf
    assert mse(np.zeros((3, 3)), np.ones((3, 3))) == 1.0
    assert mse(ref, ref) == 0.0
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4)), np.ones((4, 4)))
    with pytest.raises(ValueError):
        mse(np.zeros((4, 4)), np.zeros((4, 5)))


def test_ssim_identity_and_inversion():
    img = sos_combine(make_phantom(seed=0))
    assert ssim(img, img) == pytest.approx(1.0)
    assert ssim(img, 1.0 - img) < 0.5
    with pytest.raises(ValueError):
        ssim(np.zeros((16, 16)), np.zeros((16, 16)))


@given(seed=st.integers(0, 2**31))
def test_ssim_symmetric_with_fixed_range(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((12, 12)), rng.random((12, 12))
    assert ssim(a, b, data_range=1.0) == pytest.approx(ssim(b, a, data_range=1.0), rel=1e-12)


@given(seed=st.integers(0, 2**31))
def test_metrics_ideal_only_at_equality(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((10, 10)) + 0.1
    b = a.copy()
    b[rng.integers(10), rng.integers(10)] += 0.05
    assert mse(a, b) > 0 and psnr(a, b) < math.inf and ssim(a, b) < 1


def test_metrics_match_brute_force():
    rng = np.random.default_rng(9)
    for _ in range(10):
        a, b = rng.random((16, 16)), rng.random((16, 16))
        assert psnr(a, b) == pytest.approx(psnr_loop(a, b), rel=1e-9)
        assert mse(a, b) == pytest.approx(mse_loop(a, b), rel=1e-9)
        assert ssim(a, b) == pytest.approx(ssim_windows(a, b), rel=1e-9)


# array files -----------------------------------------------------------------------------------

@given(count=st.integers(1, 3), coils=st.integers(1, 3), h=st.integers(1, 6), w=st.integers(1, 6),
       seed=st.integers(0, 2**31))
def test_array_round_trip_bitwise(count, coils, h, w, seed):
    data = random_complex(np.random.default_rng(seed), (count, coils, h, w)).astype(np.complex64)
    af = decode_array(encode_array(ArrayFile(data, "image", {"note": "x"})))
    assert af.data.tobytes() == data.tobytes()
    assert af.domain == "image" and af.meta["note"] == "x"


def test_array_file_layout(tmp_path, rng):
    data = random_complex(rng, (1, 2, 3, 4)).astype(np.complex64)
    path = tmp_path / "a.kd"
    write_array(path, ArrayFile(data))
    raw = path.read_bytes()
    head, payload = raw.split(b"\n", 1)
    import json
    header = json.loads(head)
    assert header["dims"] == [2, 3, 4] and header["dtype"] == "c64" and header["endianness"] == "little"
    assert len(payload) == 2 * 3 * 4 * 8
    first = np.frombuffer(payload[:8], dtype="<f4")
    assert first[0] == data[0, 0, 0, 0].real and first[1] == data[0, 0, 0, 0].imag
    np.testing.assert_array_equal(read_array(path).data, data)


def test_array_file_rejections(rng):
    raw = encode_array(ArrayFile(random_complex(rng, (1, 2, 2)).astype(np.complex64)))
    head, payload = raw.split(b"\n", 1)
    with pytest.raises(ArrayFileError):
        decode_array(head + b"\n" + payload[:-1])
    with pytest.raises(ArrayFileError):
        decode_array(head.replace(b'"little"', b'"big"') + b"\n" + payload)
    with pytest.raises(ArrayFileError):
        decode_array(head.replace(b'"c64"', b'"c128"') + b"\n" + payload)
    with pytest.raises(ArrayFileError):
        decode_array(head.replace(b'[1, 2, 2]', b'[1, 2, 3]') + b"\n" + payload)
    with pytest.raises(ArrayFileError):
        decode_array(b"{oops" + b"\n" + payload)
    with pytest.raises(ArrayFileError):
        decode_array(head)


def test_pgm_and_csv(tmp_path):
    img = np.linspace(0, 2, 12).reshape(3, 4)
    write_pgm(tmp_path / "x.pgm", img)
    back = read_pgm(tmp_path / "x.pgm")
    assert back.shape == (3, 4) and back.min() == 0 and back.max() == 255
    rows = [{"image_id": 0, "pattern": "random2d", "R": 4, "method": "zf", "psnr_db": 20.0, "ssim": 0.5,
             "mse": 0.01, "extra": 1}]
    write_metrics_csv(tmp_path / "m.csv", rows)
    text = (tmp_path / "m.csv").read_text().splitlines()
    assert text[0] == ",".join(METRIC_COLUMNS)
    assert text[1].startswith("0,random2d,4,zf,")
