import numpy as np
import pytest
from dataclasses import replace

from conftest import reference_scenario, random_scenario
from risloc.model import (
    C_LIGHT,
    CoincidentNodesError,
    PrecodingConfig,
    composite_channel,
    default_precoding,
    geometry_to_params,
    noise_free_signal,
    steering_vector,
    synthesize,
    wrap_angle,
)


class TestSteeringVector:
    def test_broadside_all_ones(self):
        np.testing.assert_allclose(steering_vector(0.0, 4), np.ones(4))

    def test_endfire_alternates(self):
        np.testing.assert_allclose(steering_vector(np.pi / 2, 2), [1.0, -1.0],
                                   atol=1e-15)

    def test_quarter_pi_direct_formula(self):
        got = steering_vector(np.pi / 4, 3)
        expected = np.exp(1j * np.pi * np.arange(3) * np.sin(np.pi / 4))
        np.testing.assert_allclose(got, expected, rtol=1e-15)
        assert got[0] == 1.0

    def test_negated_angle_conjugates(self):
        rng = np.random.default_rng(0)
        for angle in rng.uniform(-np.pi, np.pi, size=25):
            np.testing.assert_allclose(steering_vector(-angle, 9),
                                       np.conj(steering_vector(angle, 9)),
                                       rtol=1e-13)


class TestWrapAngle:
    @pytest.mark.parametrize("x,expected", [
        (0.0, 0.0), (np.pi, np.pi), (-np.pi, np.pi),
        (3 * np.pi / 2, -np.pi / 2), (2 * np.pi, 0.0),
    ])
    def test_values(self, x, expected):
        assert wrap_angle(x) == pytest.approx(expected, abs=1e-12)

    def test_range(self):
        xs = np.random.default_rng(1).uniform(-50, 50, 300)
        wrapped = wrap_angle(xs)
        assert np.all(wrapped > -np.pi) and np.all(wrapped <= np.pi)
        np.testing.assert_allclose(np.cos(wrapped), np.cos(xs), atol=1e-12)
        np.testing.assert_allclose(np.sin(wrapped), np.sin(xs), atol=1e-12)


class TestScenarioConfig:
    def test_invariants_enforced(self):
        good = reference_scenario()
        with pytest.raises(ValueError):
            replace(good, n_sub=1)
        with pytest.raises(ValueError):
            replace(good, n_beams=good.n_bs + 1)
        with pytest.raises(ValueError):
            replace(good, sigma2=0.0)
        with pytest.raises(CoincidentNodesError):
            replace(good, p=good.q)

    def test_derived_quantities(self):
        sc = reference_scenario()
        assert sc.sample_period == pytest.approx(1.0 / 40e6)
        assert sc.wavelength == pytest.approx(C_LIGHT / 60e9)
        kappa = sc.kappa
        assert kappa.shape == (30,)
        assert kappa[0] == 0.0
        assert kappa[1] == pytest.approx(2 * np.pi / (30 / 40e6) )

    def test_meta_hides_unknowns(self):
        meta = reference_scenario().public_meta()
        assert not hasattr(meta, "p")
        assert not hasattr(meta, "delta")


class TestGeometryToParams:
    def test_reference_scenario_values(self):
        sc = reference_scenario()
        params, known = geometry_to_params(sc)
        assert params.theta_bm == pytest.approx(np.pi / 4, abs=1e-12)
        # delays recomputed from the geometry
        assert params.tau_bm == pytest.approx(np.sqrt(50) / C_LIGHT + 93.75e-9,
                                              rel=1e-12)
        assert params.tau_bm == pytest.approx(117.336e-9, abs=1e-12)
        tau_r = known.tau_br + params.tau_rm
        assert tau_r == pytest.approx(
            (np.sqrt(193) + np.sqrt(53)) / C_LIGHT + 93.75e-9, rel=1e-12)
        assert tau_r == pytest.approx(164.374e-9, abs=5e-13)
        assert params.theta_rm == pytest.approx(-2.863293, abs=1e-6)
        assert known.theta_br == pytest.approx(0.528074, abs=1e-6)
        assert known.phi_br == pytest.approx(wrap_angle(-np.pi + 0.528074),
                                             abs=1e-6)

    def test_amplitudes(self):
        sc = reference_scenario()
        params, known = geometry_to_params(sc)
        lam = sc.wavelength
        assert params.rho_bm == pytest.approx(lam / (4 * np.pi * np.sqrt(50)),
                                              rel=1e-12)
        assert params.rho_bm == pytest.approx(5.623e-5, rel=1e-3)
        # reflected-path amplitude: free-space loss over the total length
        assert params.rho_r == pytest.approx(
            lam / (4 * np.pi * (np.sqrt(193) + np.sqrt(53))), rel=1e-12)

    def test_ris_scale_zeroes_cascade(self):
        params, _ = geometry_to_params(reference_scenario(ris_scale=0.0))
        assert params.rho_r == 0.0

    def test_coupling_matrix_structure(self):
        sc = reference_scenario()
        _, known = geometry_to_params(sc)
        assert known.coupling.shape == (sc.n_ris, sc.n_bs)
        np.testing.assert_allclose(np.abs(known.coupling), 1.0, rtol=1e-12)
        assert np.linalg.matrix_rank(known.coupling) == 1
        expected = np.outer(steering_vector(known.phi_br, sc.n_ris),
                            steering_vector(known.theta_br, sc.n_bs))
        np.testing.assert_allclose(known.coupling, expected, rtol=1e-12)

    def test_round_trip_position(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            sc = random_scenario(rng)
            params, _ = geometry_to_params(sc)
            dist = (params.tau_bm - sc.delta) * C_LIGHT
            p = sc.q + dist * np.array([np.cos(params.theta_bm),
                                        np.sin(params.theta_bm)])
            np.testing.assert_allclose(p, sc.p, atol=1e-9)

    def test_phases_deterministic_per_seed(self):
        a, _ = geometry_to_params(reference_scenario(seed=5))
        b, _ = geometry_to_params(reference_scenario(seed=5))
        c, _ = geometry_to_params(reference_scenario(seed=6))
        assert a == b
        assert a.phi_bm != c.phi_bm

    def test_translation_invariance(self):
        # shifting every node by the same offset changes nothing
        sc = reference_scenario()
        shifted = replace(sc, q=sc.q + 3.0, r=sc.r + 3.0, p=sc.p + 3.0)
        a, _ = geometry_to_params(sc)
        b, _ = geometry_to_params(shifted)
        assert a == b


@pytest.fixture(scope="module")
def setup():
    sc = reference_scenario()
    params, known = geometry_to_params(sc)
    return sc, params, known


class TestCompositeChannel:

    def test_zero_phase_identity_profile(self, setup):
        sc, params, known = setup
        flat = replace(params, phi_bm=0.0, phi_r=0.0)
        h = composite_channel(0, flat, known, np.zeros(sc.n_ris), sc)
        reflected = steering_vector(flat.theta_rm, sc.n_ris) @ known.coupling
        expected = (flat.rho_bm * steering_vector(flat.theta_bm, sc.n_bs)
                    + flat.rho_r * reflected)
        np.testing.assert_allclose(h, expected, rtol=1e-12)

    def test_zero_cascade_gives_pure_los(self, setup):
        sc, params, known = setup
        no_ris = replace(params, rho_r=0.0)
        profile = np.pi * np.ones(sc.n_ris)
        h = composite_channel(3, no_ris, known, profile, sc)
        kap = sc.kappa[3]
        expected = (params.rho_bm * np.exp(1j * params.phi_bm)
                    * np.exp(-1j * kap * params.tau_bm)
                    * steering_vector(params.theta_bm, sc.n_bs))
        np.testing.assert_allclose(h, expected, rtol=1e-12)

    def test_matches_per_path_composition(self, setup):
        # brute-force oracle: evaluate each leg separately and compose
        sc, params, known = setup
        rng = np.random.default_rng(8)
        profile = rng.uniform(0, 2 * np.pi, sc.n_ris)
        n = 7
        kap = sc.kappa[n]
        h_bm = (params.rho_bm * np.exp(1j * params.phi_bm)
                * np.exp(-1j * kap * params.tau_bm)
                * steering_vector(params.theta_bm, sc.n_bs))
        # any amplitude split consistent with the cascade product works
        h_br = (1.0 * np.exp(1j * params.phi_r)
                * np.exp(-1j * kap * known.tau_br)
                * np.outer(steering_vector(known.phi_br, sc.n_ris),
                           steering_vector(known.theta_br, sc.n_bs)))
        h_rm = (params.rho_r * np.exp(0j)
                * np.exp(-1j * kap * params.tau_rm)
                * steering_vector(params.theta_rm, sc.n_ris))
        omega = np.diag(np.exp(1j * profile))
        expected = h_bm + h_rm @ omega @ h_br
        got = composite_channel(n, params, known, profile, sc)
        np.testing.assert_allclose(got, expected, rtol=1e-10)

    def test_linear_in_los_amplitude(self, setup):
        sc, params, known = setup
        profile = np.zeros(sc.n_ris)
        base = composite_channel(1, replace(params, rho_bm=0.0), known, profile, sc)
        one = composite_channel(1, params, known, profile, sc)
        scaled = composite_channel(1, replace(params, rho_bm=3.0 * params.rho_bm),
                                   known, profile, sc)
        np.testing.assert_allclose(scaled - base, 3.0 * (one - base), rtol=1e-12)

    def test_profile_phase_factors_out_of_nlos(self, setup):
        sc, params, known = setup
        rng = np.random.default_rng(9)
        profile = np.pi * rng.integers(0, 2, sc.n_ris).astype(float)
        shift = 0.7
        los = composite_channel(2, replace(params, rho_r=0.0), known, profile, sc)
        h = composite_channel(2, params, known, profile, sc)
        h_shifted = composite_channel(2, params, known, profile + shift, sc)
        np.testing.assert_allclose(h_shifted - los,
                                   np.exp(1j * shift) * (h - los), rtol=1e-10)

    def test_dimension_errors(self, setup):
        sc, params, known = setup
        with pytest.raises(ValueError):
            composite_channel(sc.n_sub, params, known, np.zeros(sc.n_ris), sc)
        with pytest.raises(ValueError):
            composite_channel(0, params, known, np.zeros(sc.n_ris + 1), sc)


class TestDefaultPrecoding:
    def test_unit_frobenius_norm(self):
        for n_bs, m in [(20, 10), (8, 1), (16, 16), (5, 3)]:
            sc = reference_scenario(n_bs=n_bs, n_beams=m, n_ris=8)
            _, known = geometry_to_params(sc)
            pre = default_precoding(sc, known)
            assert np.linalg.norm(pre.beams) == pytest.approx(1.0, abs=1e-12)

    def test_single_beam_matches_known_aod(self):
        sc = reference_scenario(n_beams=1)
        _, known = geometry_to_params(sc)
        pre = default_precoding(sc, known)
        expected = np.conj(steering_vector(known.theta_br, sc.n_bs))
        expected = expected / np.linalg.norm(expected)
        np.testing.assert_allclose(pre.beams[:, 0], expected, rtol=1e-12)

    def test_ris_profiles_binary(self):
        sc = reference_scenario()
        _, known = geometry_to_params(sc)
        pre = default_precoding(sc, known)
        entries = np.exp(1j * pre.ris_phases)
        assert np.all(np.isin(np.round(entries.real).astype(int), [-1, 1]))
        np.testing.assert_allclose(entries.imag, 0.0, atol=1e-12)

    def test_pilots_unit_modulus(self):
        sc = reference_scenario()
        _, known = geometry_to_params(sc)
        pre = default_precoding(sc, known)
        assert pre.pilots.shape == (sc.n_tx, sc.n_sub, sc.n_beams)
        np.testing.assert_allclose(np.abs(pre.pilots), 1.0, rtol=1e-12)

    def test_beam_matrix_norm_validated(self):
        sc = reference_scenario()
        _, known = geometry_to_params(sc)
        pre = default_precoding(sc, known)
        with pytest.raises(ValueError):
            PrecodingConfig(beams=2.0 * pre.beams, pilots=pre.pilots,
                            ris_phases=pre.ris_phases)


class TestSynthesize:
    def test_noise_free_limit(self):
        sc = reference_scenario()
        params, known = geometry_to_params(sc)
        pre = default_precoding(sc, known)
        obs = synthesize(sc, pre, params=params, known=known, add_noise=False)
        np.testing.assert_array_equal(obs.y, obs.noise_free)
        assert obs.y.shape == (sc.n_tx, sc.n_sub)

    def test_sqrt_power_scaling(self):
        sc = reference_scenario()
        params, known = geometry_to_params(sc)
        pre = default_precoding(sc, known)
        m1 = noise_free_signal(params, known, pre, sc)
        m4 = noise_free_signal(params, known, pre, replace(sc, power=4 * sc.power))
        np.testing.assert_allclose(m4, 2.0 * m1, rtol=1e-12)

    def test_noise_statistics(self):
        # empirical variance of the injected noise within 5% of sigma2
        sc = reference_scenario()
        params, known = geometry_to_params(sc)
        pre = default_precoding(sc, known)
        rng = np.random.default_rng(42)
        samples = []
        while len(samples) < 10_000:
            obs = synthesize(sc, pre, params=params, known=known, rng=rng)
            samples.extend((obs.y - obs.noise_free).ravel().tolist())
        samples = np.asarray(samples[:10_000])
        var = np.mean(np.abs(samples) ** 2)
        assert abs(var - sc.sigma2) / sc.sigma2 < 0.05
        # circularity: real/imag each carry half the variance
        assert np.mean(samples.real**2) == pytest.approx(sc.sigma2 / 2, rel=0.1)

    def test_noise_deterministic_from_scenario_seed(self):
        sc = reference_scenario()
        pre = default_precoding(sc, geometry_to_params(sc)[1])
        a = synthesize(sc, pre)
        b = synthesize(sc, pre)
        np.testing.assert_array_equal(a.y, b.y)

    def test_static_channel_across_transmissions(self):
        # identical pilots and profiles across g give identical noise-free rows
        sc = reference_scenario()
        params, known = geometry_to_params(sc)
        pre = default_precoding(sc, known)
        tiled = PrecodingConfig(
            beams=pre.beams,
            pilots=np.broadcast_to(pre.pilots[:1], pre.pilots.shape).copy(),
            ris_phases=np.broadcast_to(pre.ris_phases[:1],
                                       pre.ris_phases.shape).copy(),
        )
        m = noise_free_signal(params, known, tiled, sc)
        for g in range(1, sc.n_tx):
            np.testing.assert_allclose(m[g], m[0], rtol=1e-12)

    def test_observation_consistent_with_composite_channel(self):
        # brute-force oracle: per-sample evaluation through the channel row
        sc = reference_scenario(n_sub=6, n_tx=2, n_bs=5, n_ris=4, n_beams=3)
        params, known = geometry_to_params(sc)
        pre = default_precoding(sc, known)
        obs = synthesize(sc, pre, params=params, known=known, add_noise=False)
        for g in range(sc.n_tx):
            for n in range(sc.n_sub):
                h = composite_channel(n, params, known, pre.ris_phases[g], sc)
                s = pre.beams @ pre.pilots[g, n]
                expected = np.sqrt(sc.power) * (h @ s)
                assert obs.noise_free[g, n] == pytest.approx(expected, rel=1e-10)
