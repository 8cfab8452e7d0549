"""Shared fixtures and independent numerical oracles for the test suite."""

import numpy as np
import pytest
from dataclasses import replace

from risloc.bounds import location_jacobian
from risloc.model import (
    ChannelParams,
    LocationParams,
    ScenarioConfig,
    channel_params_from_location,
    default_precoding,
    geometry_to_params,
    location_from_scenario,
    noise_free_signal,
    synthesize,
)
from risloc.montecarlo import snr_to_power


def reference_scenario(snr_db=0.0, seed=7, **overrides):
    """The reference scenario with power set for the requested SNR."""
    base = ScenarioConfig(
        q=[0.0, 0.0], r=[12.0, 7.0], p=[5.0, 5.0],
        fc=60e9, bw=40e6, n_sub=30, n_tx=5,
        n_bs=20, n_ris=20, n_beams=10,
        power=1.0, sigma2=1.0, delta=93.75e-9, rng_seed=seed,
    )
    base = replace(base, **overrides) if overrides else base
    return replace(base, power=snr_to_power(base, snr_db))


def random_scenario(rng, snr_db=0.0, **sizes):
    """A random valid geometry with the MS inside the deployment box."""
    dims = dict(n_sub=16, n_tx=3, n_bs=8, n_ris=8, n_beams=4)
    dims.update(sizes)
    for _ in range(100):
        r = rng.uniform([6.0, -12.0], [16.0, 12.0])
        lo = np.minimum(0.0, r) + 0.5
        hi = np.maximum(0.0, r) - 0.5
        if np.any(hi - lo < 2.0):
            continue
        p = rng.uniform(lo, hi)
        if min(np.linalg.norm(p), np.linalg.norm(p - r)) < 1.5:
            continue
        base = ScenarioConfig(
            q=[0.0, 0.0], r=r, p=p,
            fc=60e9, bw=40e6, power=1.0, sigma2=1.0,
            delta=float(rng.uniform(2e-8, 2e-7)),
            rng_seed=int(rng.integers(0, 2**31)),
            **dims,
        )
        return replace(base, power=snr_to_power(base, snr_db))
    raise RuntimeError("could not sample a valid geometry")


@pytest.fixture(scope="session")
def reference_setup():
    """Scenario, channel parameters, precoding and a noiseless observation."""
    scenario = reference_scenario(snr_db=0.0)
    params, known = geometry_to_params(scenario)
    precoding = default_precoding(scenario, known)
    obs = synthesize(scenario, precoding, params=params, known=known,
                     add_noise=False)
    return scenario, params, known, precoding, obs


@pytest.fixture(scope="session")
def reference_setup_noisy():
    scenario = reference_scenario(snr_db=0.0)
    params, known = geometry_to_params(scenario)
    precoding = default_precoding(scenario, known)
    obs = synthesize(scenario, precoding, params=params, known=known)
    return scenario, params, known, precoding, obs


# ---------------------------------------------------------------------------
# Independent finite-difference oracles (kept free of the analytic formulas
# they are used to check).

_GAMMA_FLOORS = np.array([1e-8, 1.0, 0.0, 1.0, 1e-8, 1.0, 0.0, 1.0])


def fd_gradient_matrix(params, known, precoding, scenario, rel=1e-6):
    """Central finite differences of the noiseless signal w.r.t. channel
    parameters, shape (n_tx, n_sub, 8)."""
    gamma = params.as_vector()
    out = np.empty((scenario.n_tx, scenario.n_sub, 8), dtype=complex)
    for k in range(8):
        h = rel * max(abs(gamma[k]), _GAMMA_FLOORS[k], 1e-30)
        up = gamma.copy()
        up[k] += h
        down = gamma.copy()
        down[k] -= h
        m_up = noise_free_signal(ChannelParams.from_vector(up), known,
                                 precoding, scenario)
        m_down = noise_free_signal(ChannelParams.from_vector(down), known,
                                   precoding, scenario)
        out[..., k] = (m_up - m_down) / (2.0 * h)
    return out


def fd_channel_fim(params, known, precoding, scenario, rel=1e-6):
    """FIM accumulated from the finite-difference gradients."""
    grad = fd_gradient_matrix(params, known, precoding, scenario, rel=rel)
    return (2.0 / scenario.sigma2) * np.real(
        np.einsum("gni,gnj->ij", np.conj(grad), grad))


_ETA_FLOORS = np.array([1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1e-8])


def fd_location_jacobian(scenario, params, rel=1e-6):
    """Central finite differences of the location -> channel parameter map."""
    eta = location_from_scenario(scenario, params).as_vector()
    out = np.empty((7, 8))
    for i in range(7):
        h = rel * max(abs(eta[i]), _ETA_FLOORS[i], 1e-30)
        up = eta.copy()
        up[i] += h
        down = eta.copy()
        down[i] -= h
        g_up = channel_params_from_location(
            LocationParams.from_vector(up), scenario).as_vector()
        g_down = channel_params_from_location(
            LocationParams.from_vector(down), scenario).as_vector()
        out[i, :] = (g_up - g_down) / (2.0 * h)
    return out


def analytic_jacobian_reference(scenario):
    return location_jacobian(scenario)
