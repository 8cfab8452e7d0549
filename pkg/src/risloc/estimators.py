"""Joint ML and relaxed (decoupled) estimators of position and clock offset.

Two estimators operate on an :class:`~risloc.model.ObservationSet`:

* ``ml_estimate`` minimizes the likelihood concentrated over the two complex
  path gains; the remaining unknowns are position and clock offset.  It is a
  local search and needs a good starting point.
* ``rml_estimate`` relaxes the per-subcarrier delay structure into an
  unstructured vector, which decouples the problem into a 2D position search
  (a projector residual that does not depend on the clock offset at all),
  followed by FFT-based delay recovery and a closed-form clock offset.

The relaxed model matrix is block diagonal per subcarrier, so its
least-squares residual splits into independent 2-column fits; the hot loops
live in :mod:`risloc._kernels`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from ._kernels import RANK_RTOL, concentrated_cost, projector_cost_batch
from .model import C_LIGHT, precoded_pilots, ris_coupled_pilots

# Reciprocal condition number of the 2x2 profiled-gain system below which the
# two path columns are treated as collinear.
GAIN_RCOND = 1e-12


class DegenerateGeometry(Exception):
    """The two path columns are numerically collinear; gains not separable."""


class RankDeficient(Exception):
    """The relaxed model matrix has numerical rank below 2N."""


class InsufficientTransmissions(ValueError):
    """The relaxed estimator needs at least two transmissions."""


@dataclass(frozen=True, eq=False)
class JointMlEstimate:
    """Output of the joint position/clock-offset ML search."""

    p_hat: np.ndarray            # estimated MS position [m], shape (2,)
    delta_hat: float             # estimated clock offset [s]
    alpha_hat: np.ndarray | None  # profiled complex path gains, present iff converged
    cost: float                  # final concentrated-likelihood cost
    iterations: int
    converged: bool
    sigma2_hat: float            # residual-based noise variance diagnostic


@dataclass(frozen=True, eq=False)
class RmlEstimate:
    """Output of the relaxed (decoupled) estimator."""

    p_hat: np.ndarray        # estimated MS position [m], shape (2,)
    tau_bm_hat: float        # recovered direct-path delay incl. offset [s]
    tau_r_hat: float         # recovered reflected-path delay incl. offset [s]
    delta_hat: float         # closed-form clock offset estimate [s]
    e_hat: np.ndarray        # unstructured per-subcarrier response, shape (2N,)
    cost: float              # projector residual at p_hat
    ambiguous_minimum: bool = False  # two near-minimal grid cells far apart
    on_boundary: bool = False        # coarse minimum sits on the region edge


def _pilot_operators(obs):
    s = precoded_pilots(obs.precoding)
    coupled = ris_coupled_pilots(obs.precoding, obs.known)
    return s, coupled


def _angles(points, meta):
    """AODs of both paths for candidate positions, shape (C,) each."""
    rel_p = points - meta.q[None, :]
    rel_pr = points - meta.r[None, :]
    theta_bm = np.arctan2(rel_p[:, 1], rel_p[:, 0])
    theta_rm = np.arctan2(rel_pr[:, 1], rel_pr[:, 0])
    return theta_bm, theta_rm


def _delays(p, delta, meta, known):
    d_bm = float(np.linalg.norm(p - meta.q))
    d_rm = float(np.linalg.norm(p - meta.r))
    tau_bm = d_bm / C_LIGHT + delta
    tau_r = known.tau_br + d_rm / C_LIGHT + delta
    return tau_bm, tau_r


def _candidate_factors(points, obs, s, coupled):
    """Path factors w1, w2 for a batch of positions, shape (C, G, N) each."""
    meta = obs.meta
    theta_bm, theta_rm = _angles(points, meta)
    k_bs = np.arange(meta.n_bs)
    k_ris = np.arange(meta.n_ris)
    a_bs = np.exp(1j * np.pi * np.sin(theta_bm)[:, None] * k_bs[None, :])
    a_ris = np.exp(1j * np.pi * np.sin(theta_rm)[:, None] * k_ris[None, :])
    g, _, n = s.shape
    s_flat = s.transpose(1, 0, 2).reshape(meta.n_bs, g * n)
    c_flat = coupled.transpose(1, 0, 2).reshape(meta.n_ris, g * n)
    w1 = np.ascontiguousarray((a_bs @ s_flat).reshape(-1, g, n))
    w2 = np.ascontiguousarray((a_ris @ c_flat).reshape(-1, g, n))
    return w1, w2


def _single_factors(p, obs, s, coupled):
    w1, w2 = _candidate_factors(np.asarray(p, dtype=float)[None, :], obs, s, coupled)
    return w1[0], w2[0]


def path_basis(g, p, delta, obs):
    """Per-transmission two-column basis of the stacked signal model.

    Column 0 carries the direct path, column 1 the RIS-reflected path, each
    the product of the delay phase ramp and the array-projected pilots, so
    that the noiseless samples satisfy y^g = sqrt(P) * basis @ gains.

    Returns shape (n_sub, 2).
    """
    meta = obs.meta
    if not 0 <= g < meta.n_tx:
        raise ValueError(f"transmission index {g} outside [0, {meta.n_tx})")
    s, coupled = _pilot_operators(obs)
    w1, w2 = _single_factors(p, obs, s, coupled)
    tau_bm, tau_r = _delays(np.asarray(p, dtype=float), delta, meta, obs.known)
    kappa = meta.kappa
    basis = np.empty((meta.n_sub, 2), dtype=complex)
    basis[:, 0] = np.exp(-1j * kappa * tau_bm) * w1[g]
    basis[:, 1] = np.exp(-1j * kappa * tau_r) * w2[g]
    return basis


def _ml_pieces(p, delta, obs, s, coupled):
    meta = obs.meta
    p = np.asarray(p, dtype=float)
    w1, w2 = _single_factors(p, obs, s, coupled)
    tau_bm, tau_r = _delays(p, delta, meta, obs.known)
    ph1 = np.exp(-1j * meta.kappa * tau_bm)
    ph2 = np.exp(-1j * meta.kappa * tau_r)
    return w1, w2, ph1, ph2


def profile_path_gains(p, delta, obs):
    """Least-squares optimal complex path gains for a fixed (p, delta).

    Raises :class:`DegenerateGeometry` when the 2x2 normal system of the
    stacked basis has condition number above 1/GAIN_RCOND.
    """
    s, coupled = _pilot_operators(obs)
    w1, w2, ph1, ph2 = _ml_pieces(p, delta, obs, s, coupled)
    _, gain1, gain2, rcond = concentrated_cost(
        w1, w2, ph1, ph2, obs.y, np.sqrt(obs.meta.power))
    if rcond < GAIN_RCOND:
        raise DegenerateGeometry(
            f"path basis condition number {1.0 / max(rcond, 1e-300):.2e} exceeds 1e12")
    return np.array([gain1, gain2])


def ml_cost(p, delta, obs):
    """Concentrated likelihood cost at (p, delta): the residual power after
    profiling out the two complex path gains."""
    s, coupled = _pilot_operators(obs)
    return _ml_cost_cached(p, delta, obs, s, coupled)


def _ml_cost_cached(p, delta, obs, s, coupled):
    w1, w2, ph1, ph2 = _ml_pieces(p, delta, obs, s, coupled)
    cost, _, _, rcond = concentrated_cost(
        w1, w2, ph1, ph2, obs.y, np.sqrt(obs.meta.power))
    if rcond < GAIN_RCOND:
        raise DegenerateGeometry(
            f"path basis condition number {1.0 / max(rcond, 1e-300):.2e} exceeds 1e12")
    return float(cost)


def ml_estimate(obs, init_p, init_delta, maxiter=500):
    """Local minimization of the concentrated cost over (px, py, delta).

    The clock offset is rescaled by the speed of light so all three search
    coordinates are in meters; a simplex search then converges when the
    relative cost decrease drops below 1e-12 and the step below 1e-9 m.
    Normally initialized from :func:`rml_estimate`.
    """
    meta = obs.meta
    s, coupled = _pilot_operators(obs)
    ynorm2 = float(np.sum(np.abs(obs.y) ** 2))
    scale = max(ynorm2, 1e-300)

    def objective(x):
        p = x[:2]
        delta = x[2] / C_LIGHT
        try:
            return _ml_cost_cached(p, delta, obs, s, coupled) / scale
        except DegenerateGeometry:
            return np.inf

    x0 = np.array([init_p[0], init_p[1], init_delta * C_LIGHT], dtype=float)
    res = minimize(objective, x0, method="Nelder-Mead",
                   options={"maxiter": maxiter, "maxfev": 10 * maxiter,
                            "xatol": 1e-9, "fatol": 1e-12})
    p_hat = np.array(res.x[:2])
    delta_hat = float(res.x[2] / C_LIGHT)
    converged = bool(res.success) and np.isfinite(res.fun)
    cost = float(res.fun * scale) if np.isfinite(res.fun) else np.inf
    alpha = None
    if converged:
        try:
            alpha = profile_path_gains(p_hat, delta_hat, obs)
        except DegenerateGeometry:
            converged = False
    sigma2_hat = cost / (meta.n_sub * meta.n_tx)
    return JointMlEstimate(p_hat=p_hat, delta_hat=delta_hat, alpha_hat=alpha,
                           cost=cost, iterations=int(res.nit),
                           converged=converged, sigma2_hat=sigma2_hat)


def relaxed_model_matrix(p, obs):
    """Full stacked relaxed-model matrix, shape (G*N, 2N).

    Block row g holds two N x N diagonal blocks: the array-projected pilots
    of the direct path (left) and of the reflected path (right).  Requires
    at least two transmissions for full column rank to be possible.
    """
    meta = obs.meta
    if meta.n_tx < 2:
        raise InsufficientTransmissions(
            f"relaxed model needs n_tx >= 2, got {meta.n_tx}")
    s, coupled = _pilot_operators(obs)
    w1, w2 = _single_factors(p, obs, s, coupled)
    n = meta.n_sub
    full = np.zeros((meta.n_tx * n, 2 * n), dtype=complex)
    idx = np.arange(n)
    for g in range(meta.n_tx):
        full[g * n + idx, idx] = w1[g]
        full[g * n + idx, n + idx] = w2[g]
    return full


def rml_cost(p, obs):
    """Residual power of y outside the column space of the relaxed model.

    Computed per subcarrier through a two-column orthogonal decomposition
    (never an inverse of the Gram matrix).  Raises :class:`RankDeficient`
    when any subcarrier block is numerically rank deficient.
    """
    meta = obs.meta
    if meta.n_tx < 2:
        raise InsufficientTransmissions(
            f"relaxed model needs n_tx >= 2, got {meta.n_tx}")
    s, coupled = _pilot_operators(obs)
    return _rml_cost_cached(p, obs, s, coupled)


def _rml_cost_cached(p, obs, s, coupled):
    w1, w2 = _candidate_factors(np.asarray(p, dtype=float)[None, :], obs, s, coupled)
    costs, margins = projector_cost_batch(w1, w2, obs.y)
    if margins[0] < RANK_RTOL:
        raise RankDeficient(
            f"relaxed model rank margin {margins[0]:.2e} below {RANK_RTOL:.0e}")
    return float(costs[0])


def _qr2_backsolve(u1, u2, y):
    """Thin-QR least squares of y on the 2 columns (u1, u2), per subcarrier.

    All inputs have shape (G, N); returns per-subcarrier coefficients
    (e1, e2) plus the worst-case rank margin over subcarriers.
    """
    r11 = np.sqrt(np.sum(np.abs(u1) ** 2, axis=0))
    safe11 = np.where(r11 > 0, r11, 1.0)
    q1 = np.where(r11[None, :] > 0, u1 / safe11[None, :], 0.0)
    r12 = np.sum(np.conj(q1) * u2, axis=0)
    w = u2 - q1 * r12[None, :]
    r22 = np.sqrt(np.sum(np.abs(w) ** 2, axis=0))
    safe22 = np.where(r22 > 0, r22, 1.0)
    q2 = np.where(r22[None, :] > 0, w / safe22[None, :], 0.0)

    t = r11**2 + np.abs(r12) ** 2 + r22**2
    d = (r11 * r22) ** 2
    disc = np.sqrt(np.maximum(t * t - 4.0 * d, 0.0))
    lam_max = 0.5 * (t + disc)
    lam_min = 0.5 * (t - disc)
    with np.errstate(invalid="ignore", divide="ignore"):
        margin = float(np.min(np.sqrt(np.where(lam_max > 0, lam_min / lam_max, 0.0))))

    z1 = np.sum(np.conj(q1) * y, axis=0)
    z2 = np.sum(np.conj(q2) * y, axis=0)
    e2 = z2 / safe22
    e1 = (z1 - r12 * e2) / safe11
    return e1, e2, margin


def estimate_path_responses(p, obs):
    """Unstructured per-subcarrier path responses at position p, shape (2N,).

    First N entries belong to the direct path, last N to the reflected path;
    solved subcarrier-by-subcarrier through the thin-QR least squares of the
    relaxed model (the matrix is block diagonal per subcarrier).
    """
    meta = obs.meta
    if meta.n_tx < 2:
        raise InsufficientTransmissions(
            f"relaxed model needs n_tx >= 2, got {meta.n_tx}")
    s, coupled = _pilot_operators(obs)
    w1, w2 = _single_factors(p, obs, s, coupled)
    e1, e2, margin = _qr2_backsolve(w1, w2, obs.y)
    if margin < RANK_RTOL:
        raise RankDeficient(
            f"relaxed model rank margin {margin:.2e} below {RANK_RTOL:.0e}")
    return np.concatenate([e1, e2])


def delays_from_path_responses(e_hat, meta_like):
    """Recover the two path delays from the unstructured response vector.

    Each half of ``e_hat`` samples a complex exponential whose frequency is
    -tau/(N*T); the delay is located by a zero-padded FFT peak refined with
    three-point quadratic interpolation on the log magnitude, and wrapped
    into [0, N*T).
    """
    e_hat = np.asarray(e_hat, dtype=complex)
    if e_hat.ndim != 1 or e_hat.size % 2 != 0 or e_hat.size < 4:
        raise ValueError("expected a flat vector of even length >= 4")
    n = e_hat.size // 2
    span = n * meta_like.sample_period  # unambiguous delay range

    def peak_delay(x):
        pad = max(4096, 64 * n)
        mag = np.abs(np.fft.fft(x, pad))
        k = int(np.argmax(mag))
        if mag[k] == 0.0:
            return 0.0
        left = mag[(k - 1) % pad]
        right = mag[(k + 1) % pad]
        shift = 0.0
        if left > 0.0 and right > 0.0:
            la, lb, lc = np.log(left), np.log(mag[k]), np.log(right)
            denom = la - 2.0 * lb + lc
            if denom < 0.0:
                shift = float(np.clip(0.5 * (la - lc) / denom, -0.5, 0.5))
        freq = (k + shift) / pad
        return float((-freq) % 1.0) * span

    return peak_delay(e_hat[:n]), peak_delay(e_hat[n:])


def clock_offset(p_hat, tau_bm_hat, tau_r_hat, r, q=None):
    """Closed-form clock offset from a position and both path delays.

    Averages the offsets implied by the direct path and the reflected path;
    exact when all inputs are exact.
    """
    p_hat = np.asarray(p_hat, dtype=float)
    r = np.asarray(r, dtype=float)
    q = np.zeros(2) if q is None else np.asarray(q, dtype=float)
    return 0.5 * (tau_bm_hat - np.linalg.norm(p_hat - q) / C_LIGHT
                  + tau_r_hat
                  - (np.linalg.norm(r - q) + np.linalg.norm(r - p_hat)) / C_LIGHT)


def default_search_region(meta):
    """Deployment-area search box: bounding box of BS and RIS plus a margin.

    The margin is kept modest on purpose: a uniform linear array cannot tell
    an angle from its mirror (equal sine), so every position has a ghost on
    the far side of the BS array; restricting the search to the surveyed
    deployment area is what resolves that ambiguity.
    """
    margin = max(2.0, 0.15 * float(np.linalg.norm(meta.r - meta.q)))
    lo = np.minimum(meta.q, meta.r) - margin
    hi = np.maximum(meta.q, meta.r) + margin
    return ((lo[0], hi[0]), (lo[1], hi[1]))


def _structured_cost(p, obs):
    """Full-model cost at p with delays/offset recovered from the relaxed fit.

    Used to break ties between relaxed-model aliases: a mirrored-angle ghost
    fits the relaxed (unstructured-delay) model exactly but not the
    structured one.
    """
    try:
        e_hat = estimate_path_responses(p, obs)
    except RankDeficient:
        return np.inf
    tau_bm_hat, tau_r_hat = delays_from_path_responses(e_hat, obs.meta)
    delta_hat = clock_offset(p, tau_bm_hat, tau_r_hat, obs.meta.r, obs.meta.q)
    try:
        return _ml_cost_cached(p, float(delta_hat), obs,
                               *_pilot_operators(obs))
    except DegenerateGeometry:
        return np.inf


def rml_estimate(obs, search_region=None, grid_points=50, refine=True,
                 n_starts=5):
    """Relaxed estimate: 2D grid search plus local refinement, then delays.

    Evaluates the projector cost on a ``grid_points`` x ``grid_points``
    lattice over ``search_region`` (default: the deployment box around BS
    and RIS), then refines with a simplex search (steps below 1e-4 m) from
    the ``n_starts`` best mutually separated cells, keeping the lowest
    refined cost; refining only the single best cell is not reliable
    because the coarse lattice can favor a sidelobe basin.  Refined minima
    that tie at the numerical-zero level (exact relaxed-model aliases such
    as the mirrored-angle ghost) are separated by the structured-model
    cost.  Delays and the clock offset are then recovered from the
    unstructured fit at the winning position.

    Grid cells whose relaxed model is rank deficient are excluded; if all
    cells are excluded, :class:`RankDeficient` propagates.  A coarse
    minimum nearly tied (within 1%) across cells more than two cells apart
    is flagged ``ambiguous_minimum``; a winner within one cell of the
    region edge is flagged ``on_boundary``.
    """
    meta = obs.meta
    if meta.n_tx < 2:
        raise InsufficientTransmissions(
            f"relaxed model needs n_tx >= 2, got {meta.n_tx}")
    if search_region is None:
        search_region = default_search_region(meta)
    (x_lo, x_hi), (y_lo, y_hi) = search_region

    s, coupled = _pilot_operators(obs)
    xs = np.linspace(x_lo, x_hi, grid_points)
    ys = np.linspace(y_lo, y_hi, grid_points)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    points = np.column_stack([gx.ravel(), gy.ravel()])

    w1, w2 = _candidate_factors(points, obs, s, coupled)
    costs, margins = projector_cost_batch(w1, w2, obs.y)
    valid = margins >= RANK_RTOL
    if not np.any(valid):
        raise RankDeficient("relaxed model rank deficient over the whole grid")
    costs = np.where(valid, costs, np.inf)

    order = np.argsort(costs, kind="stable")  # ties keep the lowest index
    best = int(order[0])

    near = np.flatnonzero(costs <= costs[best] * 1.01)
    near_ix, near_iy = np.divmod(near, grid_points)
    spread = max(near_ix.max() - near_ix.min(), near_iy.max() - near_iy.min())
    ambiguous = bool(spread > 2)

    # starting cells: best of each coarse basin (separated by > 2 cells)
    starts = []
    for idx in order[:200]:
        if not np.isfinite(costs[idx]):
            break
        ix, iy = divmod(int(idx), grid_points)
        if all(max(abs(ix - jx), abs(iy - jy)) > 2 for jx, jy in starts):
            starts.append((ix, iy))
        if len(starts) >= (n_starts if refine else 1):
            break

    def objective(x):
        try:
            return _rml_cost_cached(x, obs, s, coupled)
        except RankDeficient:
            return np.inf

    candidates = []
    for ix, iy in starts:
        idx = ix * grid_points + iy
        seed = points[idx]
        seed_cost = float(costs[idx])
        if refine:
            res = minimize(objective, seed, method="Nelder-Mead",
                           options={"maxiter": 300, "maxfev": 3000,
                                    "xatol": 1e-4, "fatol": 1e-15})
            if np.isfinite(res.fun) and res.fun <= seed_cost:
                candidates.append((float(res.fun), np.array(res.x)))
                continue
        candidates.append((seed_cost, np.array(seed)))

    lowest = min(c[0] for c in candidates)
    tie_band = lowest + 1e-9 * float(np.sum(np.abs(obs.y) ** 2))
    tied = [c for c in candidates if c[0] <= tie_band]
    if len(tied) > 1:
        tied.sort(key=lambda c: (_structured_cost(c[1], obs), c[0]))
        cost, p_best = tied[0]
    else:
        cost, p_best = min(candidates, key=lambda c: c[0])

    cell = np.array([xs[1] - xs[0] if grid_points > 1 else 0.0,
                     ys[1] - ys[0] if grid_points > 1 else 0.0])
    on_boundary = bool(p_best[0] <= x_lo + cell[0] or p_best[0] >= x_hi - cell[0]
                       or p_best[1] <= y_lo + cell[1] or p_best[1] >= y_hi - cell[1])

    e_hat = estimate_path_responses(p_best, obs)
    tau_bm_hat, tau_r_hat = delays_from_path_responses(e_hat, meta)
    delta_hat = clock_offset(p_best, tau_bm_hat, tau_r_hat, meta.r, meta.q)
    return RmlEstimate(p_hat=np.array(p_best), tau_bm_hat=tau_bm_hat,
                       tau_r_hat=tau_r_hat, delta_hat=float(delta_hat),
                       e_hat=e_hat, cost=cost,
                       ambiguous_minimum=ambiguous, on_boundary=on_boundary)
