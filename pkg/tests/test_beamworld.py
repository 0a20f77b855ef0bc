import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridbeams.beamworld import (
    BeamSet,
    ChannelKind,
    beam_angle,
    beam_inner_product,
    complex_normal,
    dft_beamset,
    draw_channel,
    draw_channels,
    grassmann_packing,
    load_beamset,
    max_coherence,
    quantize_to_grid,
    save_beamset,
    steering_vector,
    synthesize_received,
)
from gridbeams.matfile import MatrixFileError, read_matrix, write_matrix


class ZeroRng:
    """Generator stand-in that returns zeros (noiseless hook)."""

    def standard_normal(self, shape):
        return np.zeros(shape)


@pytest.fixture(scope="module")
def G():
    return dft_beamset(10, 70, 1.0)


def test_dft_norms_and_first_column(G):
    assert np.allclose(np.sum(np.abs(G.G) ** 2, axis=0), 10.0, rtol=1e-12)
    assert np.allclose(G.G[:, 0], 1.0)


def test_dft_adjacent_pair_magnitude(G):
    # |sum_{m<10} exp(2 pi i m / 70)| for a geometric sum
    expected = math.sin(math.pi / 7) / math.sin(math.pi / 70)
    assert abs(beam_inner_product(G, 0, 1)) == pytest.approx(expected, rel=1e-12)
    assert abs(beam_inner_product(G, 0, 1)) == pytest.approx(9.671, abs=1e-3)


def test_dft_wraparound_pair(G):
    ip = beam_inner_product(G, 0, 69)
    re = sum(math.cos(2 * math.pi * m / 70) for m in range(10))
    assert abs(ip) == pytest.approx(9.671, abs=1e-3)
    assert ip.real == pytest.approx(re, rel=1e-12)
    assert ip.real == pytest.approx(8.893, abs=1e-3)


def test_dft_orthogonality_every_seventh(G):
    gram = G.gram()
    for n in range(70):
        for n2 in range(70):
            if n != n2 and (n2 - n) % 7 == 0:
                assert abs(gram[n, n2]) <= 1e-9
    assert beam_inner_product(G, 3, 3) == pytest.approx(10.0)


def test_dft_rejects_zero_sizes():
    with pytest.raises(ValueError):
        dft_beamset(0, 5)
    with pytest.raises(ValueError):
        dft_beamset(5, 0)


def test_inner_product_index_range(G):
    with pytest.raises(IndexError):
        beam_inner_product(G, 0, 70)
    with pytest.raises(IndexError):
        beam_inner_product(G, -1, 0)


def test_beamset_norm_invariant():
    with pytest.raises(ValueError):
        BeamSet(np.array([[1.0, 1.0], [0.0, 1.0]]), 0.5)
    B = BeamSet(np.eye(3), 1 / 3)
    assert B.M == 3 and B.N == 3 and B.norm2 == pytest.approx(1.0)
    with pytest.raises(ValueError):
        B.G[0, 0] = 2.0


def test_matrix_file_round_trip_is_bitwise(tmp_path, G):
    p = tmp_path / "g.txt"
    save_beamset(G, p)
    H = load_beamset(p)
    assert H.beta == G.beta
    assert np.array_equal(H.G, G.G)
    raw = p.read_bytes()
    assert b"\r\n" not in raw
    assert raw.splitlines()[0] == b"10 70 1.0"


def test_load_identity_quarter_beta(tmp_path):
    p = tmp_path / "eye.txt"
    write_matrix(p, [4, 4, 0.25], np.eye(4))
    B = load_beamset(p)
    assert np.allclose(B.gram(), np.eye(4))


def test_load_rejects_zero_column(tmp_path):
    A = np.eye(4)
    A[:, 2] = 0
    p = tmp_path / "bad.txt"
    write_matrix(p, [4, 4, 0.25], A)
    with pytest.raises(MatrixFileError):
        load_beamset(p)


def test_load_renormalizes_within_one_percent(tmp_path):
    A = np.eye(3) * math.sqrt(1.004)
    p = tmp_path / "near.txt"
    write_matrix(p, [3, 3, 1 / 3], A)
    B = load_beamset(p)
    assert np.allclose(np.sum(np.abs(B.G) ** 2, axis=0), 1.0, rtol=1e-12)
    write_matrix(p, [3, 3, 1 / 3], np.eye(3) * math.sqrt(1.05))
    with pytest.raises(MatrixFileError):
        load_beamset(p)


def test_malformed_files(tmp_path):
    p = tmp_path / "x.txt"
    p.write_text("2 2 1\n1:0 0:0\n")
    with pytest.raises(MatrixFileError):
        load_beamset(p)
    p.write_text("2 2 1\n1:0 zz\n0:0 1:0\n")
    with pytest.raises(MatrixFileError):
        load_beamset(p)
    p.write_text("")
    with pytest.raises(MatrixFileError):
        read_matrix(p, 3)


def test_grassmann_two_by_two_orthogonal():
    B = grassmann_packing(2, 2, seed=3)
    assert max_coherence(B.G) < 1e-9


def test_grassmann_zero_iters_is_random_start():
    A = grassmann_packing(10, 70, iters=0, seed=5)
    B = grassmann_packing(10, 70, iters=0, seed=5)
    assert np.array_equal(A.G, B.G)
    rng = np.random.default_rng(5)
    X = complex_normal(rng, (10, 70))
    X /= np.linalg.norm(X, axis=0)
    assert np.allclose(A.G, math.sqrt(10) * X)


def test_grassmann_respects_welch_bound_and_improves():
    B = grassmann_packing(2, 3, iters=500, seed=1)
    welch = math.sqrt((3 - 2) / (2 * (3 - 1)))
    assert welch == 0.5
    assert max_coherence(B.G) >= welch - 1e-12
    start = grassmann_packing(10, 40, iters=0, seed=2)
    packed = grassmann_packing(10, 40, iters=300, seed=2)
    assert max_coherence(packed.G) <= max_coherence(start.G)


def test_grassmann_needs_n_at_least_m():
    with pytest.raises(ValueError):
        grassmann_packing(4, 3)


def test_quantize_examples(G):
    assert quantize_to_grid(G.G[:, 5], G) == 5
    assert quantize_to_grid(0.99 * G.G[:, 3] + 0.01 * G.G[:, 4], G) == 3
    assert np.array_equal(quantize_to_grid(G.G.T, G), np.arange(70))


def test_steering_on_beam_direction_quantizes_to_beam(G):
    for n in range(70):
        a = steering_vector(beam_angle(n, 70), 10)
        assert np.allclose(a, G.G[:, n], atol=1e-9)
        assert quantize_to_grid(a, G) == n


def test_quantize_tie_goes_low():
    B = BeamSet(np.array([[1.0, 1.0], [1.0, -1.0]]), 1.0)
    assert quantize_to_grid(np.array([1.0, 0.0]), B) == 0


def test_ongrid_draw(G):
    rng = np.random.default_rng(0)
    for _ in range(20):
        d = draw_channel(ChannelKind(), G, rng)
        assert np.array_equal(d.g_true, G.G[:, d.quantized_index])
        assert np.allclose(d.h_uplink, np.exp(1j * d.theta) * d.g_true)
        assert -math.pi < d.theta <= math.pi


def test_rician_zero_variance_is_los(G):
    a = draw_channels(ChannelKind("los"), G, np.random.default_rng(4), 50)
    b = draw_channels(ChannelKind("rician", sigma2=0.0), G, np.random.default_rng(4), 50)
    assert np.array_equal(a.g_true, b.g_true)
    assert np.array_equal(a.quantized_index, b.quantized_index)


def test_rician_mean_power(G):
    b = draw_channels(ChannelKind("rician", sigma2=0.1), G, np.random.default_rng(9), 100_000)
    p = np.mean(np.sum(np.abs(b.g_true) ** 2, axis=1))
    assert p == pytest.approx(11.0, abs=0.1)
    # terminal quantizes the line-of-sight part only
    los = steering_vector(b.aux["psi"][:100], 10)
    assert np.array_equal(quantize_to_grid(los, G), b.quantized_index[:100])


def test_aoa_draw_needs_rho_and_clamps(G):
    kind = ChannelKind("aoa", aoa_scale=0.1)
    with pytest.raises(ValueError):
        draw_channels(kind, G, np.random.default_rng(0), 3)
    b = draw_channels(kind, G, np.random.default_rng(0), 1000, rho=1e-6)
    assert np.all(np.abs(b.aux["psi_hat"]) < math.pi / 2)
    hi = draw_channels(kind, G, np.random.default_rng(0), 1000, rho=1e12)
    assert np.allclose(hi.aux["psi_hat"], hi.aux["psi"], atol=1e-6)


def test_channel_kind_validation(G):
    with pytest.raises(ValueError):
        ChannelKind("rician", sigma2=-0.1)
    with pytest.raises(ValueError):
        ChannelKind("mystery")
    with pytest.raises(ValueError):
        ChannelKind(uplink="calibrated")


def test_nonreciprocal_uplinks(G):
    b = draw_channels(ChannelKind(uplink="los"), G, np.random.default_rng(2), 100)
    assert np.allclose(np.sum(np.abs(b.h_uplink) ** 2, axis=1), 10.0)
    assert "xi" in b.aux
    c = draw_channels(ChannelKind(uplink="los_nophase"), G, np.random.default_rng(2), 100)
    assert "xi" not in c.aux
    assert np.allclose(c.h_uplink[:, 0], 1.0)
    H = dft_beamset(10, 5)
    d = draw_channels(ChannelKind(uplink="calibrated", uplink_set=H), G, np.random.default_rng(2), 10)
    assert np.array_equal(d.h_uplink, H.G[:, d.aux["uplink_index"]].T)


def test_synthesize_noiseless_hook(G):
    h = np.exp(0.3j) * G.G[:, 4]
    phi = np.array([0.6, 0.8j])
    Y = synthesize_received(h, phi, 2.0, rng=ZeroRng())
    assert np.allclose(Y.Y, math.sqrt(2.0) * np.outer(h, phi))
    Yc = synthesize_received(h, phi, 2.0, theta_compensated=True, theta=0.3, rng=ZeroRng())
    assert np.allclose(Yc.Y, math.sqrt(2.0) * np.outer(G.G[:, 4], phi))


def test_synthesize_validation(G):
    with pytest.raises(ValueError):
        synthesize_received(G.G[:, 0], np.array([1.0, 1.0]), 1.0)
    with pytest.raises(ValueError):
        synthesize_received(G.G[:, 0], np.array([1.0]), -1.0)


def test_synthesize_is_seeded(G):
    a = synthesize_received(G.G[:, 1], np.array([1.0]), 1.0, rng=np.random.default_rng(7))
    b = synthesize_received(G.G[:, 1], np.array([1.0]), 1.0, rng=np.random.default_rng(7))
    assert np.array_equal(a.Y, b.Y)


def test_noise_only_power():
    rng = np.random.default_rng(11)
    h = np.ones(10)
    phi = np.array([1.0, 0.0, 0.0])
    vals = [np.mean(np.abs(synthesize_received(h, phi, 0.0, rng=rng).Y) ** 2) for _ in range(100_000)]
    assert np.mean(vals) == pytest.approx(1.0, abs=0.01)


def test_received_mean_and_variance(G):
    rng = np.random.default_rng(12)
    h = G.G[:, 2]
    phi = np.array([0.6, 0.8])
    Ys = np.stack([synthesize_received(h, phi, 3.0, rng=rng).Y for _ in range(20_000)])
    mean = math.sqrt(3.0) * np.outer(h, phi)
    # entry mean has std 1/sqrt(T); allow 4 sigma
    assert np.max(np.abs(Ys.mean(axis=0) - mean)) < 4 / math.sqrt(20_000) * 1.5
    var = np.mean(np.abs(Ys - mean) ** 2)
    assert var == pytest.approx(1.0, abs=4 / math.sqrt(20_000 * 20))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 40), st.floats(0.1, 10))
def test_property_dft_norms(M, N, beta):
    B = dft_beamset(M, N, beta)
    dev = np.max(np.abs(np.sum(np.abs(B.G) ** 2, axis=0) - M * beta)) / (M * beta)
    assert dev <= 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(2, 40))
def test_property_quantize_idempotent(M, N):
    B = dft_beamset(M, N)
    q = quantize_to_grid(B.G.T, B)
    # M = 1 makes all columns equal; ties must go to the lowest index
    for n, k in enumerate(q):
        assert k <= n
        assert np.allclose(B.G[:, k], B.G[:, n])
