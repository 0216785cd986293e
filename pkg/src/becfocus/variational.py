"""Gaussian-ansatz width and atom-number dynamics of the falling condensate.

The condensate is described by widths W_r (r = x, y, z) of a Gaussian trial
wavefunction in the frame falling with the center of mass.  The transverse
lens enters only through omega_x^2(t); y and z expand freely.  Three-body
recombination removes atoms at a rate ~ density^2 and back-reacts on the
width dynamics.

Two equivalent formulations are provided: a second-order system in
(W_r, dW_r/dt) and a first-order system in (W_r, beta_r) where beta_r is the
quadratic phase curvature of the ansatz.  The loss terms are written without
the stray hbar factors that would make them dimensionally inconsistent in SI
units (see the width-equation docstrings).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import minimize_scalar

from .constants import HBAR, SpeciesParams, UnitScaling, interaction_strength
from .optics import FocusingBeam, Kinematics, harmonic_frequency_sq

_SQRT3 = math.sqrt(3.0)
_TWOPI32 = (2.0 * math.pi) ** 1.5
_NINE_SQRT3_PI3 = 9.0 * _SQRT3 * math.pi**3
_THREEPI3 = (3.0 * math.pi) ** 3
_THREEPI6 = (3.0 * math.pi) ** 6


class CollapseDetected(RuntimeError):
    """A width fell below the collapse floor (attractive collapse regime).

    Carries the partial trajectory up to the collapse time.
    """

    def __init__(self, trajectory):
        self.trajectory = trajectory
        super().__init__(
            f"width collapsed below floor at t = {trajectory.t_end:.6e} s")


class StepSizeUnderflow(RuntimeError):
    pass


@dataclass(frozen=True)
class VariationalState:
    t: float  # s
    W: tuple  # (W_x, W_y, W_z) m
    dW: tuple  # (dW_x/dt, ...) m/s
    N: float  # atoms

    def __post_init__(self):
        if any(w <= 0 for w in self.W):
            raise ValueError("widths must be positive")
        if self.N <= 0:
            raise ValueError("atom number must be positive")


@dataclass(frozen=True)
class BetaState:
    t: float
    W: tuple  # m
    beta: tuple  # 1/m^2, quadratic phase curvature
    N: float


@dataclass(frozen=True)
class VariationalConfig:
    a_s: float  # m, post-release scattering length (may be negative)
    species: SpeciesParams
    trap: tuple  # (omega_0x, omega_0y, omega_0z) rad/s
    N0: float
    beam: FocusingBeam
    kin: Kinematics
    loss_multiplier: float = 1.0  # 1 = width-equation convention; 6 = GPE norm-flow
    rtol: float = 1e-10
    collapse_floor: float = 1e-9  # m

    def __post_init__(self):
        if any(w <= 0 for w in self.trap) or self.N0 <= 0:
            raise ValueError("trap frequencies and N0 must be positive")

    @property
    def k_loss(self) -> float:
        return self.loss_multiplier * self.species.three_body_K

    @property
    def u(self) -> float:
        return interaction_strength(self.a_s, self.species)


def initial_widths(trap, N0: float, a_s_initial: float,
                   species: SpeciesParams):
    """Thomas-Fermi-scaled initial ansatz widths (m).

    W_0i = (2/pi)^(1/10) (N0 a_s / l)^(1/5) (omega_bar / omega_i) l,
    with omega_bar the geometric-mean trap frequency and l its oscillator
    length.  Valid for repulsive initial interactions (a_s_initial > 0).
    """
    if a_s_initial <= 0:
        raise ValueError("initial widths formula requires a_s_initial > 0")
    wx, wy, wz = trap
    wbar = (wx * wy * wz) ** (1.0 / 3.0)
    osc_l = math.sqrt(HBAR / (species.mass * wbar))
    common = (2.0 / math.pi) ** 0.1 * (N0 * a_s_initial / osc_l) ** 0.2 * osc_l
    return (common * wbar / wx, common * wbar / wy, common * wbar / wz)


def _loss_terms(W, N, k_loss):
    """(Ndot, D_x, D_y, D_z): atom-loss rate and the loss drift in dW_r/dt."""
    wx, wy, wz = W
    ndot = -k_loss * N**3 / (_NINE_SQRT3_PI3 * wx**2 * wy**2 * wz**2)
    pref = k_loss * N**2 / (_SQRT3 * _THREEPI3)
    return ndot, (pref / (wx * wy**2 * wz**2),
                  pref / (wy * wx**2 * wz**2),
                  pref / (wz * wx**2 * wy**2))


def rhs_second_order(state: VariationalState, cfg: VariationalConfig):
    """Time derivatives (dW_r, ddW_r, dN) of the second-order width system.

    ddW_x = -omega_x^2(t) W_x + hbar^2/(m^2 W_x^3)
            + u N / (m (2 pi)^(3/2) W_x^2 W_y W_z)
            - 7 K^2 N^4 / (3 (3 pi)^6 W_x^3 W_y^4 W_z^4)
    (cyclic in y, z without the lens term);
    dN = -K N^3 / (9 sqrt(3) pi^3 W_x^2 W_y^2 W_z^2).
    """
    W = np.asarray(state.W, float)
    if not np.all(np.isfinite(W)) or not math.isfinite(state.N):
        raise ValueError("non-finite state")
    m = cfg.species.mass
    om2 = harmonic_frequency_sq(state.t, cfg.beam, cfg.kin, cfg.species)
    mf = cfg.u * state.N / (m * _TWOPI32)
    l7 = 7.0 * cfg.k_loss**2 * state.N**4 / (3.0 * _THREEPI6)
    wx, wy, wz = W
    ddW = np.array([
        -om2 * wx + HBAR**2 / (m**2 * wx**3) + mf / (wx**2 * wy * wz)
        - l7 / (wx**3 * wy**4 * wz**4),
        HBAR**2 / (m**2 * wy**3) + mf / (wy**2 * wx * wz)
        - l7 / (wy**3 * wx**4 * wz**4),
        HBAR**2 / (m**2 * wz**3) + mf / (wz**2 * wx * wy)
        - l7 / (wz**3 * wx**4 * wy**4),
    ])
    ndot, _ = _loss_terms(W, state.N, cfg.k_loss)
    return np.asarray(state.dW, float), ddW, ndot


def rhs_first_order(state: BetaState, cfg: VariationalConfig):
    """Time derivatives (dW_r, dbeta_r, dN) of the first-order system.

    dbeta_x = hbar/(2 m W_x^4) - (2 hbar/m) beta_x^2 - (m omega_x^2)/(2 hbar)
              + u N / (2 (2 pi)^(3/2) hbar W_x^3 W_y W_z)   (cyclic, no lens in y/z)
    dW_x = (2 hbar/m) beta_x W_x + K N^2 / (sqrt(3) (3 pi)^3 W_x W_y^2 W_z^2)
    dN as in the second-order form.
    """
    # dtype-preserving so complex-step differentiation of the flow works
    W = np.asarray(state.W)
    beta = np.asarray(state.beta)
    if not (np.all(np.isfinite(W)) and np.all(np.isfinite(beta))):
        raise ValueError("non-finite state")
    m = cfg.species.mass
    om2_vec = np.array([
        harmonic_frequency_sq(state.t, cfg.beam, cfg.kin, cfg.species), 0.0, 0.0])
    wx, wy, wz = W
    mf = cfg.u * state.N / (2.0 * _TWOPI32 * HBAR)
    others = np.array([wy * wz, wx * wz, wx * wy])
    dbeta = HBAR / (2.0 * m * W**4) - (2.0 * HBAR / m) * beta**2 \
        - m * om2_vec / (2.0 * HBAR) + mf / (W**3 * others)
    ndot, D = _loss_terms(W, state.N, cfg.k_loss)
    dW = (2.0 * HBAR / m) * beta * W + np.asarray(D)
    return dW, dbeta, ndot


class Trajectory:
    """Dense-output variational trajectory in SI units."""

    def __init__(self, cfg: VariationalConfig, scaling: UnitScaling,
                 ode_solution, t_end: float, collapsed: bool,
                 formulation: str):
        self.cfg = cfg
        self._scaling = scaling
        self._sol = ode_solution  # scaled-time dense output
        self.t_end = t_end  # s (collapse time if collapsed)
        self.collapsed = collapsed
        self.formulation = formulation

    def _raw(self, t):
        """Scaled state vector at SI time t (clipped to the valid span)."""
        tau = np.clip(np.asarray(t, float) / self._scaling.time_unit,
                      0.0, self.t_end / self._scaling.time_unit)
        return self._sol(tau)

    def widths(self, t):
        """(3, ...) array of widths (m) at SI times t."""
        y = self._raw(t)
        return y[0:3] * self._scaling.length_unit

    def width_velocities(self, t):
        y = self._raw(t)
        if self.formulation == "second":
            return y[3:6] * self._scaling.length_unit / self._scaling.time_unit
        # first-order: recover dW from beta and the loss drift
        W = y[0:3] * self._scaling.length_unit
        beta = y[3:6] / self._scaling.length_unit**2
        N = y[6]
        _, D = _loss_terms(W, N, self.cfg.k_loss)
        return (2.0 * HBAR / self.cfg.species.mass) * beta * W + np.asarray(D)

    def atom_number(self, t):
        return self._raw(t)[6]

    def state_at(self, t: float) -> VariationalState:
        W = self.widths(t)
        dW = self.width_velocities(t)
        return VariationalState(t=float(np.clip(t, 0.0, self.t_end)),
                                W=tuple(W), dW=tuple(dW),
                                N=float(self.atom_number(t)))

    def focal_time(self) -> float:
        """Time of the global minimum of W_x (s).

        For collapsed runs the minimum sits at the truncation point.
        """
        ts = np.linspace(0.0, self.t_end, 4096)
        wx = self.widths(ts)[0]
        i = int(np.argmin(wx))
        if i == 0 or i == len(ts) - 1:
            return float(ts[i])
        res = minimize_scalar(lambda t: float(self.widths(t)[0]),
                              bounds=(ts[i - 1], ts[i + 1]), method="bounded",
                              options={"xatol": self.t_end * 1e-12})
        return float(res.x)

    def loss_fraction(self, t=None) -> float:
        t = self.t_end if t is None else t
        return 1.0 - float(self.atom_number(t)) / self.cfg.N0


def integrate(cfg: VariationalConfig, t_end: float,
              formulation: str = "second",
              initial_state=None) -> Trajectory:
    """Integrate the width/loss system from release to t_end (s).

    Initial conditions default to initial_widths(...) of cfg's trap with
    dW(0) = 0 and N(0) = N0 (for the first-order form, beta(0) is chosen so
    that dW(0) = 0).  Raises CollapseDetected (carrying the partial
    trajectory) if any width reaches cfg.collapse_floor.
    """
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    wbar = float(np.prod(cfg.trap)) ** (1.0 / 3.0)
    scaling = UnitScaling.for_trap(cfg.species.mass, wbar)
    lu, tu = scaling.length_unit, scaling.time_unit

    if initial_state is None:
        W0 = initial_widths(cfg.trap, cfg.N0, cfg.a_s, cfg.species)
        dW0 = (0.0, 0.0, 0.0)
        N_init = cfg.N0
    else:
        W0, dW0, N_init = initial_state.W, initial_state.dW, initial_state.N

    if formulation == "second":
        def rhs(tau, y):
            st = VariationalState(t=tau * tu, W=tuple(y[0:3] * lu),
                                  dW=tuple(y[3:6] * lu / tu), N=y[6])
            dW, ddW, ndot = rhs_second_order(st, cfg)
            return np.concatenate([dW / lu * tu, ddW / lu * tu**2, [ndot * tu]])
        y0 = np.concatenate([np.asarray(W0) / lu,
                             np.asarray(dW0) / lu * tu, [N_init]])
    elif formulation == "first":
        _, D0 = _loss_terms(np.asarray(W0), N_init, cfg.k_loss)
        beta0 = (np.asarray(dW0) - np.asarray(D0)) * cfg.species.mass / (
            2.0 * HBAR * np.asarray(W0))

        def rhs(tau, y):
            st = BetaState(t=tau * tu, W=tuple(y[0:3] * lu),
                           beta=tuple(y[3:6] / lu**2), N=y[6])
            dW, dbeta, ndot = rhs_first_order(st, cfg)
            return np.concatenate([dW / lu * tu, dbeta * lu**2 * tu, [ndot * tu]])
        y0 = np.concatenate([np.asarray(W0) / lu,
                             beta0 * lu**2, [N_init]])
    else:
        raise ValueError(f"unknown formulation {formulation!r}")

    floor = cfg.collapse_floor / lu

    def collapse_event(tau, y):
        return min(y[0], y[1], y[2]) - floor
    collapse_event.terminal = True
    collapse_event.direction = -1

    sol = solve_ivp(rhs, (0.0, t_end / tu), y0, method="RK45",
                    rtol=cfg.rtol,
                    atol=[1e-13] * 3 + [1e-13] * 3 + [1e-6 * cfg.N0],
                    dense_output=True, events=collapse_event)
    if sol.status == -1:  # pragma: no cover - defensive
        raise StepSizeUnderflow(sol.message)
    collapsed = sol.status == 1 and len(sol.t_events[0]) > 0
    traj = Trajectory(cfg, scaling, sol.sol, t_end=sol.t[-1] * tu,
                      collapsed=collapsed, formulation=formulation)
    if collapsed:
        raise CollapseDetected(traj)
    return traj


def ansatz_density(state: VariationalState, x, y, z):
    """|psi|^2 of the Gaussian ansatz (atoms/m^3) at frame coordinates x, y, z."""
    wx, wy, wz = state.W
    peak = state.N / (math.pi**1.5 * wx * wy * wz)
    return peak * np.exp(-(np.asarray(x) / wx) ** 2
                         - (np.asarray(y) / wy) ** 2
                         - (np.asarray(z) / wz) ** 2)


def slice_density_at_plane(state: VariationalState, z_plane: float,
                           com_z: float, x, y):
    """Density n(x, y; z_plane) (atoms/m^3) at a fixed lab-frame plane.

    com_z is the lab-frame z of the center of mass (same axis as z_plane).
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    X, Y = np.meshgrid(x, y, indexing="ij")
    return ansatz_density(state, X, Y, z_plane - com_z)


def width_vs_z(traj: Trajectory, kin: Kinematics, n_samples: int = 4096):
    """(z_lab, W_x) curve plus the focal plane and all local width minima.

    z_lab = z0 - z(t): height of the center of mass above the surface
    (negative once it has passed the plane).  Returns a dict with keys
    ``z``, ``w_x``, ``z_f``/``t_f`` (the principal focus: the earliest
    local W_x minimum, or the global minimum when there is no interior
    one) and ``minima`` (list of (z, W_x) at each local minimum, interior
    points only, in time order).
    """
    ts = np.linspace(0.0, traj.t_end, n_samples)
    wx = traj.widths(ts)[0]
    z = kin.z0 - kin.z_of_t(ts)
    minima = []
    t_minima = []
    for i in range(1, n_samples - 1):
        if wx[i] < wx[i - 1] and wx[i] <= wx[i + 1]:
            res = minimize_scalar(lambda t: float(traj.widths(t)[0]),
                                  bounds=(ts[i - 1], ts[i + 1]),
                                  method="bounded",
                                  options={"xatol": traj.t_end * 1e-12})
            t_minima.append(float(res.x))
            minima.append((float(kin.z0 - kin.z_of_t(res.x)),
                           float(res.fun)))
    t_f = t_minima[0] if t_minima else traj.focal_time()
    return {"z": z, "w_x": wx,
            "z_f": float(kin.z0 - kin.z_of_t(t_f)),
            "t_f": t_f,
            "minima": minima}
