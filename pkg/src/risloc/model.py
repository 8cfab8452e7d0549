"""Scenario geometry, mmWave MISO channel model and observation synthesis.

A single multi-antenna base station (BS) sends OFDM pilots to a
single-antenna mobile station (MS) over the direct line-of-sight path and
over a reflected path controlled by a reconfigurable intelligent surface
(RIS).  This module turns node positions into channel parameters, evaluates
the composite frequency-domain channel and generates (optionally noisy)
received samples for all transmissions and subcarriers.

Units are strictly SI: positions in meters, delays in seconds, frequencies
in Hz, powers in watts.  Angles are radians wrapped to (-pi, pi].
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

C_LIGHT = 299792458.0  # speed of light [m/s]

# Fixed substream indices so each kind of random draw is reproducible
# independently of call order.
_PHASE_STREAM = 0
_PRECODING_STREAM = 1
_NOISE_STREAM = 2


class CoincidentNodesError(ValueError):
    """Two scenario nodes coincide, so path losses/angles are undefined."""


def wrap_angle(x):
    """Wrap an angle (or array of angles) to (-pi, pi]."""
    return np.pi - np.mod(np.pi - x, 2.0 * np.pi)


def _frozen_vec2(v, name):
    arr = np.array(v, dtype=float).reshape(2)
    arr.setflags(write=False)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {arr}")
    return arr


class _DerivedQuantities:
    """Quantities derived from carrier/bandwidth shared by config types."""

    @property
    def sample_period(self):
        """T = 1/B [s]."""
        return 1.0 / self.bw

    @property
    def wavelength(self):
        return C_LIGHT / self.fc

    @property
    def kappa(self):
        """Angular subcarrier frequencies 2*pi*n/(N*T), shape (n_sub,)."""
        return 2.0 * np.pi * np.arange(self.n_sub) * self.bw / self.n_sub


@dataclass(frozen=True, eq=False)
class ScenarioConfig(_DerivedQuantities):
    """Full physical scenario for one simulation.

    The MS position ``p`` and clock offset ``delta`` are the ground truth;
    estimators never see them (see :class:`ObservationMeta`).
    """

    q: np.ndarray          # BS position [m], shape (2,)
    r: np.ndarray          # RIS position [m], shape (2,)
    p: np.ndarray          # true MS position [m], shape (2,)
    fc: float              # carrier frequency [Hz]
    bw: float              # bandwidth [Hz]
    n_sub: int             # subcarriers N
    n_tx: int              # transmissions G
    n_bs: int              # BS antenna count
    n_ris: int             # RIS element count
    n_beams: int           # beam count M
    power: float           # transmit power [W]
    sigma2: float          # noise variance [W]
    delta: float           # clock offset [s]
    rng_seed: int = 0
    ris_scale: float = 1.0  # multiplies the cascaded path amplitude (0 removes the RIS path)

    def __post_init__(self):
        object.__setattr__(self, "q", _frozen_vec2(self.q, "q"))
        object.__setattr__(self, "r", _frozen_vec2(self.r, "r"))
        object.__setattr__(self, "p", _frozen_vec2(self.p, "p"))
        if self.n_sub < 2:
            raise ValueError("n_sub must be >= 2")
        if self.n_tx < 1:
            raise ValueError("n_tx must be >= 1")
        if self.n_bs < 1 or self.n_ris < 1:
            raise ValueError("n_bs and n_ris must be >= 1")
        if not 1 <= self.n_beams <= self.n_bs:
            raise ValueError("n_beams must satisfy 1 <= n_beams <= n_bs")
        if self.fc <= 0 or self.bw <= 0:
            raise ValueError("fc and bw must be positive")
        if self.power < 0:
            raise ValueError("power must be nonnegative")
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if self.ris_scale < 0:
            raise ValueError("ris_scale must be nonnegative")
        if np.allclose(self.p, self.q) or np.allclose(self.p, self.r):
            raise CoincidentNodesError("MS must not coincide with BS or RIS")

    def public_meta(self):
        """Everything an estimator may know: the scenario minus (p, delta)."""
        return ObservationMeta(
            q=self.q, r=self.r, fc=self.fc, bw=self.bw, n_sub=self.n_sub,
            n_tx=self.n_tx, n_bs=self.n_bs, n_ris=self.n_ris,
            n_beams=self.n_beams, power=self.power, sigma2=self.sigma2,
        )


@dataclass(frozen=True, eq=False)
class ObservationMeta(_DerivedQuantities):
    """Scenario snapshot without the unknowns (MS position, clock offset)."""

    q: np.ndarray
    r: np.ndarray
    fc: float
    bw: float
    n_sub: int
    n_tx: int
    n_bs: int
    n_ris: int
    n_beams: int
    power: float
    sigma2: float


@dataclass(frozen=True)
class ChannelParams:
    """Channel-domain parameter vector (8 entries, fixed ordering).

    Ordering of :meth:`as_vector`: [tau_bm, theta_bm, rho_bm, phi_bm,
    tau_rm, theta_rm, rho_r, phi_r].
    """

    tau_bm: float    # BS->MS delay incl. clock offset [s]
    theta_bm: float  # AOD BS->MS [rad]
    rho_bm: float    # direct-path amplitude modulus
    phi_bm: float    # direct-path amplitude phase [rad]
    tau_rm: float    # RIS->MS delay incl. clock offset [s]
    theta_rm: float  # AOD RIS->MS [rad]
    rho_r: float     # cascaded (BS->RIS->MS) amplitude modulus
    phi_r: float     # cascaded amplitude phase [rad]

    def __post_init__(self):
        if self.rho_bm < 0 or self.rho_r < 0:
            raise ValueError("amplitude moduli must be nonnegative")
        if self.tau_bm < 0 or self.tau_rm < 0:
            raise ValueError("delays must be nonnegative")

    def as_vector(self):
        return np.array([self.tau_bm, self.theta_bm, self.rho_bm, self.phi_bm,
                         self.tau_rm, self.theta_rm, self.rho_r, self.phi_r])

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (8,):
            raise ValueError(f"expected 8 entries, got shape {v.shape}")
        return cls(*v)


@dataclass(frozen=True)
class LocationParams:
    """Location-domain parameter vector (7 entries, fixed ordering).

    Ordering of :meth:`as_vector`: [px, py, rho_bm, phi_bm, rho_r, phi_r,
    delta].
    """

    px: float
    py: float
    rho_bm: float
    phi_bm: float
    rho_r: float
    phi_r: float
    delta: float

    def as_vector(self):
        return np.array([self.px, self.py, self.rho_bm, self.phi_bm,
                         self.rho_r, self.phi_r, self.delta])

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (7,):
            raise ValueError(f"expected 7 entries, got shape {v.shape}")
        return cls(*v)


@dataclass(frozen=True, eq=False)
class KnownRisPath:
    """Geometry of the BS->RIS leg, known because both nodes are surveyed."""

    tau_br: float    # BS->RIS time of flight [s], no clock offset
    theta_br: float  # AOD BS->RIS [rad]
    phi_br: float    # AOA at the RIS [rad]
    coupling: np.ndarray  # rank-1 RIS coupling matrix, (n_ris, n_bs) complex

    def __post_init__(self):
        arr = np.asarray(self.coupling, dtype=complex)
        arr.setflags(write=False)
        object.__setattr__(self, "coupling", arr)


@dataclass(frozen=True, eq=False)
class PrecodingConfig:
    """Beamforming matrix, pilot symbols and RIS phase profiles."""

    beams: np.ndarray       # (n_bs, n_beams) complex, unit Frobenius norm
    pilots: np.ndarray      # (n_tx, n_sub, n_beams) complex symbols
    ris_phases: np.ndarray  # (n_tx, n_ris) phases [rad]

    def __post_init__(self):
        beams = np.asarray(self.beams, dtype=complex)
        pilots = np.asarray(self.pilots, dtype=complex)
        phases = np.asarray(self.ris_phases, dtype=float)
        for arr in (beams, pilots, phases):
            arr.setflags(write=False)
        object.__setattr__(self, "beams", beams)
        object.__setattr__(self, "pilots", pilots)
        object.__setattr__(self, "ris_phases", phases)
        if beams.ndim != 2 or pilots.ndim != 3 or phases.ndim != 2:
            raise ValueError("beams must be 2-D, pilots 3-D, ris_phases 2-D")
        if pilots.shape[2] != beams.shape[1]:
            raise ValueError("pilot vectors must match the number of beams")
        if pilots.shape[0] != phases.shape[0]:
            raise ValueError("pilots and ris_phases disagree on transmission count")
        fro = np.linalg.norm(beams)
        if abs(fro - 1.0) > 1e-12:
            raise ValueError(f"beam matrix must have unit Frobenius norm, got {fro}")
        if not np.all(np.isfinite(phases)):
            raise ValueError("ris_phases must be finite")


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Received samples plus everything an estimator is allowed to know."""

    y: np.ndarray           # (n_tx, n_sub) received samples
    noise_free: np.ndarray  # (n_tx, n_sub) noiseless signal
    precoding: PrecodingConfig
    known: KnownRisPath
    meta: ObservationMeta

    def __post_init__(self):
        y = np.asarray(self.y, dtype=complex)
        m = np.asarray(self.noise_free, dtype=complex)
        expected = (self.meta.n_tx, self.meta.n_sub)
        if y.shape != expected or m.shape != expected:
            raise ValueError(f"samples must have shape {expected}")
        y.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "noise_free", m)


def _stream_rng(seed, stream):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream,)))


def steering_vector(angle, num_elements, spacing_over_lambda=0.5):
    """Uniform linear array response, first element referenced to 1."""
    k = np.arange(num_elements)
    return np.exp(1j * 2.0 * np.pi * spacing_over_lambda * k * np.sin(angle))


def steering_derivative(angle, num_elements, spacing_over_lambda=0.5):
    """Elementwise derivative of :func:`steering_vector` w.r.t. the angle."""
    k = np.arange(num_elements)
    factor = 1j * 2.0 * np.pi * spacing_over_lambda * k * np.cos(angle)
    return factor * steering_vector(angle, num_elements, spacing_over_lambda)


def geometry_to_params(scenario, rng=None):
    """Map node positions to channel parameters and the known RIS leg.

    Positions are first translated so the BS sits at the origin.  Amplitude
    moduli follow the free-space path loss law lambda/(4*pi*d); amplitude
    phases are drawn uniformly on (-pi, pi] from ``rng`` (default: the
    scenario-seeded phase substream).

    Returns
    -------
    (ChannelParams, KnownRisPath)
    """
    rel_p = scenario.p - scenario.q
    rel_r = scenario.r - scenario.q
    d_bm = float(np.linalg.norm(rel_p))
    d_br = float(np.linalg.norm(rel_r))
    d_rm = float(np.linalg.norm(rel_p - rel_r))
    if min(d_bm, d_br, d_rm) <= 0.0:
        raise CoincidentNodesError("pairwise node distances must be positive")

    theta_bm = float(np.arctan2(rel_p[1], rel_p[0]))
    theta_rm = float(np.arctan2(rel_p[1] - rel_r[1], rel_p[0] - rel_r[0]))
    theta_br = float(np.arctan2(rel_r[1], rel_r[0]))
    phi_br = float(wrap_angle(-np.pi + theta_br))

    lam = scenario.wavelength
    rho_bm = lam / (4.0 * np.pi * d_bm)
    # Cascade amplitude: free-space loss over the total reflected path
    # length.  The per-leg product lam^2/((4*pi)^2*d1*d2) buries the
    # reflected path ~77 dB below the direct one at these distances, which
    # makes position/offset jointly unidentifiable in practice.
    rho_r = lam / (4.0 * np.pi * (d_br + d_rm))

    if rng is None:
        rng = _stream_rng(scenario.rng_seed, _PHASE_STREAM)
    ph_bm, ph_br, ph_rm = rng.uniform(-np.pi, np.pi, size=3)

    params = ChannelParams(
        tau_bm=d_bm / C_LIGHT + scenario.delta,
        theta_bm=theta_bm,
        rho_bm=rho_bm,
        phi_bm=float(ph_bm),
        tau_rm=d_rm / C_LIGHT + scenario.delta,
        theta_rm=theta_rm,
        rho_r=scenario.ris_scale * rho_r,
        phi_r=float(wrap_angle(ph_br + ph_rm)),
    )
    coupling = np.outer(steering_vector(phi_br, scenario.n_ris),
                        steering_vector(theta_br, scenario.n_bs))
    known = KnownRisPath(tau_br=d_br / C_LIGHT, theta_br=theta_br,
                         phi_br=phi_br, coupling=coupling)
    return params, known


def channel_params_from_location(loc, scenario_like):
    """Deterministic location -> channel parameter map (no random draws)."""
    q = scenario_like.q
    r = scenario_like.r
    rel_p = np.array([loc.px, loc.py]) - q
    rel_pr = np.array([loc.px, loc.py]) - r
    d_bm = float(np.linalg.norm(rel_p))
    d_rm = float(np.linalg.norm(rel_pr))
    if min(d_bm, d_rm) <= 0.0:
        raise CoincidentNodesError("location coincides with BS or RIS")
    return ChannelParams(
        tau_bm=d_bm / C_LIGHT + loc.delta,
        theta_bm=float(np.arctan2(rel_p[1], rel_p[0])),
        rho_bm=loc.rho_bm,
        phi_bm=loc.phi_bm,
        tau_rm=d_rm / C_LIGHT + loc.delta,
        theta_rm=float(np.arctan2(rel_pr[1], rel_pr[0])),
        rho_r=loc.rho_r,
        phi_r=loc.phi_r,
    )


def location_from_scenario(scenario, params):
    """Ground-truth location-domain vector for a scenario/params pair."""
    rel_p = scenario.p - scenario.q
    return LocationParams(
        px=float(rel_p[0]), py=float(rel_p[1]),
        rho_bm=params.rho_bm, phi_bm=params.phi_bm,
        rho_r=params.rho_r, phi_r=params.phi_r,
        delta=scenario.delta,
    )


def precoded_pilots(precoding):
    """Per-(transmission, subcarrier) transmitted antenna vectors.

    Returns s[g, :, n] = beams @ pilots[g, n], shape (n_tx, n_bs, n_sub).
    """
    return np.einsum("bm,gnm->gbn", precoding.beams, precoding.pilots)


def ris_coupled_pilots(precoding, known):
    """Pilot vectors propagated BS -> RIS and phase-shifted per profile.

    Returns Omega^g A s^g[n] stacked as shape (n_tx, n_ris, n_sub).
    """
    s = precoded_pilots(precoding)
    coupled = np.einsum("rb,gbn->grn", known.coupling, s)
    return np.exp(1j * precoding.ris_phases)[:, :, None] * coupled


def path_signal_factors(params, known, precoding, scenario_like):
    """Array-projected pilot factors of the two paths, each (n_tx, n_sub).

    w1[g, n] is the direct-path steering vector applied to the transmitted
    vector; w2[g, n] the same for the RIS-reflected path.
    """
    a_bs = steering_vector(params.theta_bm, scenario_like.n_bs)
    a_ris = steering_vector(params.theta_rm, scenario_like.n_ris)
    w1 = np.einsum("b,gbn->gn", a_bs, precoded_pilots(precoding))
    w2 = np.einsum("r,grn->gn", a_ris, ris_coupled_pilots(precoding, known))
    return w1, w2


def noise_free_signal(params, known, precoding, scenario_like):
    """Noiseless received samples for all (transmission, subcarrier) pairs."""
    w1, w2 = path_signal_factors(params, known, precoding, scenario_like)
    kappa = scenario_like.kappa
    ramp_bm = np.exp(-1j * kappa * params.tau_bm)
    ramp_r = np.exp(-1j * kappa * (known.tau_br + params.tau_rm))
    gain_bm = params.rho_bm * np.exp(1j * params.phi_bm)
    gain_r = params.rho_r * np.exp(1j * params.phi_r)
    return np.sqrt(scenario_like.power) * (gain_bm * ramp_bm[None, :] * w1
                                           + gain_r * ramp_r[None, :] * w2)


def composite_channel(n, params, known, ris_profile, scenario_like):
    """Composite downlink channel row for subcarrier ``n``, shape (n_bs,).

    Sum of the direct path and the cascaded path reflected by the RIS with
    the given per-element phase profile.
    """
    if not 0 <= n < scenario_like.n_sub:
        raise ValueError(f"subcarrier index {n} outside [0, {scenario_like.n_sub})")
    ris_profile = np.asarray(ris_profile, dtype=float)
    if ris_profile.shape != (scenario_like.n_ris,):
        raise ValueError(f"ris_profile must have shape ({scenario_like.n_ris},)")
    kap = scenario_like.kappa[n]
    los = (params.rho_bm * np.exp(1j * params.phi_bm)
           * np.exp(-1j * kap * params.tau_bm)
           * steering_vector(params.theta_bm, scenario_like.n_bs))
    reflected = steering_vector(params.theta_rm, scenario_like.n_ris) * np.exp(1j * ris_profile)
    nlos = (params.rho_r * np.exp(1j * params.phi_r)
            * np.exp(-1j * kap * (known.tau_br + params.tau_rm))
            * (reflected @ known.coupling))
    return los + nlos


def default_precoding(scenario, known, rng=None):
    """Beams, pilots and RIS profiles used when none are supplied.

    One beam is matched to the known BS->RIS direction, the remaining
    n_beams-1 point at angles uniformly spaced in [-pi/2, pi/2].  Pilot
    symbols are unit-modulus QPSK and RIS phases are i.i.d. binary {0, pi},
    all drawn from ``rng`` (default: the scenario-seeded precoding stream).
    """
    if rng is None:
        rng = _stream_rng(scenario.rng_seed, _PRECODING_STREAM)
    cols = [np.conj(steering_vector(known.theta_br, scenario.n_bs))]
    if scenario.n_beams > 1:
        for ang in np.linspace(-np.pi / 2, np.pi / 2, scenario.n_beams - 1):
            cols.append(np.conj(steering_vector(ang, scenario.n_bs)))
    beams = np.column_stack(cols)
    beams = beams / np.linalg.norm(beams)
    quadrant = rng.integers(0, 4, size=(scenario.n_tx, scenario.n_sub, scenario.n_beams))
    pilots = np.exp(1j * (np.pi / 4.0 + np.pi / 2.0 * quadrant))
    ris_phases = np.pi * rng.integers(0, 2, size=(scenario.n_tx, scenario.n_ris)).astype(float)
    return PrecodingConfig(beams=beams, pilots=pilots, ris_phases=ris_phases)


def synthesize(scenario, precoding, params=None, known=None, rng=None, add_noise=True):
    """Generate an :class:`ObservationSet` for the scenario.

    Channel parameters default to :func:`geometry_to_params` on the scenario
    seed.  Noise is circular complex Gaussian with total variance ``sigma2``
    (sigma2/2 per real component) from the scenario-seeded noise substream
    unless ``rng`` is given; ``add_noise=False`` returns the noiseless
    samples (the sigma2 -> 0 limit).
    """
    if params is None or known is None:
        if params is not None or known is not None:
            raise ValueError("pass params and known together or neither")
        params, known = geometry_to_params(scenario)
    m = noise_free_signal(params, known, precoding, scenario)
    if add_noise:
        if rng is None:
            rng = _stream_rng(scenario.rng_seed, _NOISE_STREAM)
        scale = np.sqrt(scenario.sigma2 / 2.0)
        noise = scale * (rng.standard_normal(m.shape) + 1j * rng.standard_normal(m.shape))
        y = m + noise
    else:
        y = m.copy()
    return ObservationSet(y=y, noise_free=m, precoding=precoding,
                          known=known, meta=scenario.public_meta())


def with_power(scenario, power):
    """Copy of the scenario with a different transmit power."""
    return replace(scenario, power=power)
