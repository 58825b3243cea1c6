import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snse_lab.noise import (InadmissibleNoise, RKHSSpec, WindowError, coarsen, counter_normals, dump_path,
                            load_path, load_path_bytes, path_norm_halfgrowth, path_norm_holder, philox4x32,
                            sample_path, save_path, shift_path, validate_assumption_A1)
from snse_lab.spectral import DomainSpec, eigenvalues, spectral_for

SMALL = DomainSpec(1.0, 1.0, 4, 4)

# reference vectors of the Philox4x32-10 block function
KAT = [
    ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    ((0xFFFFFFFF,) * 4, (0xFFFFFFFF, 0xFFFFFFFF), (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
    ((0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344), (0xA4093822, 0x299F31D0),
     (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1)),
]


@pytest.mark.parametrize("ctr,key,expected", KAT)
def test_philox_known_answers(ctr, key, expected):
    out = tuple(int(x) for x in philox4x32(ctr, key))
    assert out == expected


def test_philox_vectorised_matches_scalar():
    ctrs = np.arange(10, dtype=np.uint64)
    vec = philox4x32((ctrs, 0, 7, 1), (3, 0))
    for i in range(10):
        one = philox4x32((i, 0, 7, 1), (3, 0))
        assert all(int(v[i]) == int(o) for v, o in zip(vec, one))


def test_counter_normals_are_standard_and_reproducible():
    z = counter_normals(5, 0, np.arange(200)[None, :], np.arange(-250, 250)[:, None])
    assert z.shape == (500, 200)
    assert abs(z.mean()) < 4 / math.sqrt(z.size)
    assert abs(z.var() - 1) < 4 * math.sqrt(2 / z.size)
    np.testing.assert_array_equal(z[17, 33], counter_normals(5, 0, 33, -233))
    assert not np.array_equal(counter_normals(5, 0, 0, 0), counter_normals(6, 0, 0, 0))
    assert not np.array_equal(counter_normals(5, 0, 0, 0), counter_normals(5, 1, 0, 0))


def test_increment_variance_matches_spectrum():
    spec = RKHSSpec(c=2.0)
    dt = 0.01
    w = sample_path(spec, SMALL, -20.0, 20.0, dt, 1)
    n = w.n_steps
    var = w.increments.var(axis=0)
    target = spec.sigma(SMALL) ** 2 * dt
    # sample variance of n normals has relative SE sqrt(2/n)
    assert np.all(np.abs(var / target - 1) < 5 * math.sqrt(2 / n))


def test_windows_regenerate_the_same_increments():
    spec = RKHSSpec()
    a = sample_path(spec, SMALL, -2.0, 1.0, 0.01, 9)
    b = sample_path(spec, SMALL, -1.0, 3.0, 0.01, 9)
    np.testing.assert_array_equal(a.increments[100:], b.increments[:200])
    np.testing.assert_array_equal(a(0.5), b(0.5))


@given(k=st.integers(-150, 100))
@settings(max_examples=25, deadline=None)
def test_shift_is_reindexing(k):
    w = sample_path(RKHSSpec(), SMALL, -2.0, 1.0, 0.01, 3)
    s = k * w.dt
    ws = shift_path(w, s)
    assert ws.increments is w.increments
    for t in (-0.3, 0.0, 0.2):
        if w.t_past <= t + s <= w.t_future and ws.t_past <= t <= ws.t_future:
            np.testing.assert_allclose(ws(t), w(t + s) - w(s), atol=1e-12)


def test_shift_outside_window_raises():
    w = sample_path(RKHSSpec(), SMALL, -1.0, 1.0, 0.01, 3)
    with pytest.raises(WindowError):
        shift_path(w, 1.5)
    with pytest.raises(WindowError):
        w(2.0)
    with pytest.raises(WindowError):
        shift_path(w, 0.005)


def test_values_start_at_zero_and_sum_increments():
    w = sample_path(RKHSSpec(), SMALL, -0.5, 0.5, 0.01, 2)
    v = w.values()
    np.testing.assert_array_equal(v[w.index(0.0)], 0.0)
    np.testing.assert_allclose(np.diff(v, axis=0), w.increments, atol=1e-13)


def test_coarsen_sums_blocks():
    w = sample_path(RKHSSpec(), SMALL, -0.4, 0.4, 0.001, 4)
    c = coarsen(w, 4)
    assert c.dt == pytest.approx(0.004)
    np.testing.assert_allclose(c.increments, w.increments.reshape(-1, 4, 4, 4).sum(axis=1), atol=1e-14)
    np.testing.assert_allclose(c(0.2), w(0.2), atol=1e-12)
    np.testing.assert_allclose(c(-0.4), w(-0.4), atol=1e-12)


def test_roundtrip_is_byte_exact(tmp_path):
    w = shift_path(sample_path(RKHSSpec(c=3.0, gamma=0.7), SMALL, -0.3, 0.2, 0.01, 11), 0.1)
    raw = dump_path(w)
    assert raw[:4] == b"PNSE"
    back = load_path_bytes(raw)
    assert back.same_as(w) and back.rkhs == w.rkhs and back.d == w.d
    assert dump_path(back) == raw
    save_path(w, tmp_path / "p.pnse")
    assert load_path(tmp_path / "p.pnse").same_as(w)


def test_table_spectrum_roundtrip():
    spec = RKHSSpec(kind="table", table=(1.0, 0.0, 0.5))
    w = sample_path(spec, SMALL, 0.0, 0.1, 0.01, 0)
    assert np.all(w.increments[:, 0, 1] == 0.0)
    back = load_path_bytes(dump_path(w))
    assert back.rkhs.table == spec.table and back.same_as(w)


def test_bad_file_rejected():
    with pytest.raises(ValueError):
        load_path_bytes(b"XXXX" + bytes(200))


@pytest.mark.parametrize("gamma,delta,ok", [(0.5, 0.3, True), (0.3, 0.3, True), (0.2, 0.25, False),
                                            (0.0, 0.45, False)])
def test_admissibility_threshold(gamma, delta, ok):
    spec = RKHSSpec(gamma=gamma, delta=delta, xi=0.49)
    rep = validate_assumption_A1(spec, DomainSpec())
    assert rep.admissible is ok
    assert rep.exponent == pytest.approx(2 * gamma + 2 * delta)
    if not ok:
        with pytest.raises(InadmissibleNoise):
            sample_path(spec, SMALL, 0.0, 0.1, 0.01, 0)


def test_admissible_partial_sums_settle():
    rep = validate_assumption_A1(RKHSSpec(gamma=0.5, delta=0.3), DomainSpec(Nx=32, Ny=32))
    tail = np.diff(rep.partial_sums)
    assert np.all(tail >= 0) and tail[-1] < tail[0]


def test_zero_table_is_inadmissible():
    assert not validate_assumption_A1(RKHSSpec(kind="table", table=(0.0,)), SMALL).admissible


@pytest.mark.parametrize("bad", [dict(delta=0.6), dict(xi=0.2), dict(c=-1.0), dict(kind="white")])
def test_rkhs_validation(bad):
    with pytest.raises(ValueError):
        RKHSSpec(**bad)


def test_holder_norm_matches_brute_force():
    w = sample_path(RKHSSpec(), SMALL, -0.2, 0.2, 0.01, 6)
    sp = spectral_for(SMALL)
    vals, t = w.values(), w.times
    best = 0.0
    for i in range(len(t)):
        for j in range(i + 1, len(t)):
            num = float(sp.norm(vals[i] - vals[j], "E", delta=w.rkhs.delta))
            den = abs(t[i] - t[j]) ** 0.4 * math.sqrt(1 + abs(t[i]) + abs(t[j]))
            best = max(best, num / den)
    assert path_norm_holder(w, 0.4, chunk=7) == pytest.approx(best, rel=1e-12)


def test_halfgrowth_norm_is_finite_and_dominates_origin():
    w = sample_path(RKHSSpec(), SMALL, -1.0, 1.0, 0.01, 6)
    val = path_norm_halfgrowth(w)
    assert math.isfinite(val) and val > 0
    sp = spectral_for(SMALL)
    assert val >= float(sp.norm(w(1.0), "E", delta=0.3)) / 2 - 1e-12


def test_sigma_power_law():
    d = DomainSpec()
    np.testing.assert_allclose(RKHSSpec(c=2.0, gamma=0.5).sigma(d), 2.0 / np.sqrt(eigenvalues(d)))
    assert RKHSSpec(c=2.0).scaled(3.0).c == 6.0
