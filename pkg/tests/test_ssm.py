import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssmrl.ssm import (ContinuousSsm, DiscreteSsm, DivergenceError, SsmState,
                       causal_conv, compute_kernel, conv_forward,
                       discretize_bilinear, geometric_powers, init_s4d,
                       recurrent_forward, recurrent_step, write_eigen_csv,
                       write_kernel_csv)


def random_continuous(rng, m=4, conj_pairs=True):
    return ContinuousSsm(
        lam=-np.exp(rng.uniform(-2, 1, m)) + 1j * rng.uniform(-20, 20, m),
        b=rng.standard_normal(m) + 1j * rng.standard_normal(m),
        c=rng.standard_normal(m) + 1j * rng.standard_normal(m),
        d=float(rng.standard_normal()),
        log_delta=float(rng.uniform(np.log(0.001), np.log(0.1))),
        conj_pairs=conj_pairs,
    )


class TestDiscretization:
    def test_known_value(self):
        # lam=-1/2, delta=1/10: lam_bar = 0.975/1.025, b_bar = 0.1/1.025
        ssm = ContinuousSsm(lam=np.array([-0.5 + 0j]), b=np.ones(1, complex),
                            c=np.ones(1, complex), d=0.0,
                            log_delta=np.log(0.1))
        disc = discretize_bilinear(ssm)
        assert disc.lam_bar[0] == pytest.approx(0.975 / 1.025, abs=1e-15)
        assert disc.b_bar[0] == pytest.approx(0.1 / 1.025, abs=1e-15)
        assert np.array_equal(disc.c_bar, ssm.c)

    def test_rejects_nonpositive_delta(self):
        ssm = ContinuousSsm(lam=np.array([-1 + 0j]), b=np.ones(1, complex),
                            c=np.ones(1, complex), d=0.0, log_delta=-np.inf)
        with pytest.raises(ValueError):
            discretize_bilinear(ssm)

    def test_rejects_pole(self):
        # delta = exp(0) = 1 exactly, so lam = 2/delta hits the pole
        ssm = ContinuousSsm(lam=np.array([2.0 + 0j]), b=np.ones(1, complex),
                            c=np.ones(1, complex), d=0.0, log_delta=0.0)
        with pytest.raises(ValueError):
            discretize_bilinear(ssm)

    @given(re=st.floats(-1e4, -1e-6), im=st.floats(-1e4, 1e4),
           logd=st.floats(-10, 2))
    @settings(max_examples=200, deadline=None)
    def test_stable_half_plane_maps_into_disk(self, re, im, logd):
        ssm = ContinuousSsm(lam=np.array([re + 1j * im]),
                            b=np.ones(1, complex), c=np.ones(1, complex),
                            d=0.0, log_delta=logd)
        disc = discretize_bilinear(ssm)
        assert abs(disc.lam_bar[0]) < 1.0


class TestInit:
    def test_spectrum_and_ranges(self):
        ssm = init_s4d(16, rng_seed=0)
        assert len(ssm.lam) == 8
        assert np.array_equal(ssm.lam, -0.5 + 1j * np.pi * np.arange(8))
        assert np.array_equal(ssm.b, np.ones(8))
        assert 0.001 <= ssm.delta <= 0.1
        assert ssm.d == 0.0

    def test_rejects_odd_state(self):
        with pytest.raises(ValueError):
            init_s4d(7, rng_seed=0)

    def test_seeded(self):
        a, b = init_s4d(8, rng_seed=3), init_s4d(8, rng_seed=3)
        assert np.array_equal(a.c, b.c) and a.log_delta == b.log_delta

    def test_c_is_standard_complex_normal(self):
        # [DERIVED] E|c|^2 = 1 for the sqrt(0.5)-scaled components
        cs = np.concatenate([init_s4d(512, rng_seed=s).c for s in range(8)])
        assert np.mean(np.abs(cs) ** 2) == pytest.approx(1.0, rel=0.1)


class TestKernel:
    def test_matches_scalar_python_oracle(self, rng):
        ssm = random_continuous(rng, m=3)
        disc = discretize_bilinear(ssm)
        k = compute_kernel(disc, 12).k
        for i in range(12):
            want = 2.0 * sum(
                (complex(disc.c_bar[n]) * complex(disc.lam_bar[n]) ** i
                 * complex(disc.b_bar[n])).real for n in range(3))
            assert k[i] == pytest.approx(want, rel=1e-12)

    def test_plain_diagonal_has_no_pair_doubling(self):
        # scalar system lam_bar=1/2, b_bar=2, c_bar=1: k = [2, 1, 1/2, 1/4]
        disc = DiscreteSsm(lam_bar=np.array([0.5 + 0j]),
                           b_bar=np.array([2.0 + 0j]),
                           c_bar=np.array([1.0 + 0j]), conj_pairs=False)
        assert np.array_equal(compute_kernel(disc, 4).k, [2.0, 1.0, 0.5, 0.25])

    def test_geometric_powers_oracle(self, rng):
        lam = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        p = geometric_powers(lam, 9)
        for i in range(9):
            np.testing.assert_allclose(p[i], lam**i, rtol=1e-12)

    def test_rejects_empty(self):
        disc = DiscreteSsm(np.ones(1, complex), np.ones(1, complex),
                           np.ones(1, complex))
        with pytest.raises(ValueError):
            compute_kernel(disc, 0)


class TestViews:
    def test_causal_conv_matches_numpy(self, rng):
        k = rng.standard_normal(33)
        u = rng.standard_normal(33)
        np.testing.assert_allclose(causal_conv(k, u),
                                   np.convolve(k, u)[:33], atol=1e-12)

    def test_conv_equals_recurrence(self, rng):
        for _ in range(10):
            ssm = random_continuous(rng)
            disc = discretize_bilinear(ssm)
            u = rng.standard_normal(64)
            y_conv = conv_forward(compute_kernel(disc, 64), u, d=ssm.d)
            y_rec = recurrent_forward(disc, u, d=ssm.d)
            np.testing.assert_allclose(y_conv, y_rec, atol=1e-10)

    def test_step_matches_forward(self, rng):
        ssm = random_continuous(rng)
        disc = discretize_bilinear(ssm)
        u = rng.standard_normal(32)
        y_full = recurrent_forward(disc, u, d=ssm.d)
        state = SsmState.zeros(len(disc.lam_bar))
        for t in range(32):
            state, y = recurrent_step(disc, state, u[t], d=ssm.d)
            assert y == pytest.approx(y_full[t], abs=1e-9)

    def test_compensated_mode_agrees(self, rng):
        ssm = random_continuous(rng)
        disc = discretize_bilinear(ssm)
        u = rng.standard_normal(128)
        np.testing.assert_allclose(
            recurrent_forward(disc, u, mode="naive"),
            recurrent_forward(disc, u, mode="compensated"), atol=1e-10)

    def test_length_mismatch_raises(self, rng):
        disc = discretize_bilinear(random_continuous(rng))
        with pytest.raises(ValueError):
            conv_forward(compute_kernel(disc, 8), np.zeros(9))

    def test_unknown_mode_raises(self, rng):
        disc = discretize_bilinear(random_continuous(rng))
        with pytest.raises(ValueError):
            recurrent_forward(disc, np.zeros(4), mode="fused")

    def test_divergence_raises(self):
        disc = DiscreteSsm(lam_bar=np.array([2.0 + 0j]),
                           b_bar=np.ones(1, complex),
                           c_bar=np.ones(1, complex), conj_pairs=False)
        with pytest.raises(DivergenceError):
            recurrent_forward(disc, np.ones(4000))


class TestDumps:
    def test_kernel_csv_roundtrip(self, tmp_path, rng):
        ks = rng.standard_normal((2, 5))
        path = tmp_path / "k.csv"
        write_kernel_csv(path, ks)
        rows = path.read_text().strip().splitlines()
        assert rows[0] == "channel,lag,value"
        assert len(rows) == 11
        got = np.array([float(r.split(",")[2]) for r in rows[1:]]).reshape(2, 5)
        assert np.array_equal(got, ks)

    def test_eigen_csv(self, tmp_path):
        lam = np.array([[0.3 + 0.4j]])
        path = tmp_path / "e.csv"
        write_eigen_csv(path, lam)
        row = path.read_text().strip().splitlines()[1].split(",")
        assert float(row[2]) == 0.3 and float(row[3]) == 0.4
        assert float(row[4]) == pytest.approx(0.5)
