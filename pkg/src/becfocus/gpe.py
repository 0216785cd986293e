"""3D Gross-Pitaevskii solver: imaginary-time ground state and real-time
propagation through the time-dependent focusing potential.

Method: Strang splitting with the kinetic half-steps applied exactly in
Fourier space and the local part (potential + mean field + three-body loss)
advanced by an embedded Kutta-Merson 4(3) Runge-Kutta step whose 3rd/4th
order difference provides the error estimate for adaptive step control.

Conventions: psi is normalized so that the integral of |psi|^2 equals the
atom number N; the loss term enters the equation of motion as
dpsi/dt += -K |psi|^4 psi, giving a norm decay rate of 2 K int |psi|^6.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .constants import HBAR, SpeciesParams, interaction_strength

_MAGIC = b"BFGD"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class GridSpec:
    """Rectangular FFT grid: shape (points per axis), extents (m), offsets (m)."""

    shape: tuple  # (n_x, n_y, n_z), each a power of two >= 16
    extents: tuple  # (L_x, L_y, L_z) m
    offsets: tuple = (0.0, 0.0, 0.0)  # m, grid-center coordinates

    def __post_init__(self):
        for n in self.shape:
            if n < 16 or (n & (n - 1)) != 0:
                raise ValueError(f"grid points must be powers of two >= 16, got {n}")
        if any(ell <= 0 for ell in self.extents):
            raise ValueError("extents must be positive")

    @property
    def spacing(self):
        return tuple(ell / n for ell, n in zip(self.extents, self.shape))

    @property
    def cell_volume(self) -> float:
        dx, dy, dz = self.spacing
        return dx * dy * dz

    def check_resolution(self, min_width: float):
        """Require spacing <= min_width / 4 on every axis (configuration-time)."""
        if any(d > min_width / 4.0 for d in self.spacing):
            raise ValueError(
                f"grid spacing {self.spacing} does not resolve width {min_width:g} "
                "(need spacing <= width/4 on every axis)")

    def axes(self):
        """1D coordinate arrays (m), grid-centered."""
        return tuple(off + (np.arange(n) - n // 2) * d
                     for n, d, off in zip(self.shape, self.spacing, self.offsets))

    def meshes(self):
        return np.meshgrid(*self.axes(), indexing="ij")

    def k_squared(self):
        ks = [2.0 * math.pi * np.fft.fftfreq(n, d)
              for n, d in zip(self.shape, self.spacing)]
        kx, ky, kz = np.meshgrid(*ks, indexing="ij")
        return kx**2 + ky**2 + kz**2


class ComplexField3D:
    """Discretized wavefunction psi (units m^-3/2) on a GridSpec, at time t."""

    def __init__(self, grid: GridSpec, psi: np.ndarray, t: float = 0.0):
        psi = np.asarray(psi, complex)
        if psi.shape != tuple(grid.shape):
            raise ValueError("field shape does not match grid")
        self.grid = grid
        self.psi = psi
        self.t = t

    def copy(self) -> "ComplexField3D":
        return ComplexField3D(self.grid, self.psi.copy(), self.t)

    @property
    def norm(self) -> float:
        """Atom number int |psi|^2 d^3r."""
        return float(np.sum(np.abs(self.psi) ** 2) * self.grid.cell_volume)

    def save(self, path: str):
        """Binary checkpoint: magic, version, shape, extents, offsets, t,
        then complex128 amplitudes row-major (interleaved re/im doubles),
        little-endian."""
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<I", _FORMAT_VERSION))
            fh.write(struct.pack("<3I", *self.grid.shape))
            fh.write(struct.pack("<3d", *self.grid.extents))
            fh.write(struct.pack("<3d", *self.grid.offsets))
            fh.write(struct.pack("<d", self.t))
            fh.write(np.ascontiguousarray(self.psi, "<c16").tobytes())

    @classmethod
    def load(cls, path: str) -> "ComplexField3D":
        with open(path, "rb") as fh:
            if fh.read(4) != _MAGIC:
                raise ValueError("not a field checkpoint")
            (version,) = struct.unpack("<I", fh.read(4))
            if version != _FORMAT_VERSION:
                raise ValueError(f"unsupported checkpoint version {version}")
            shape = struct.unpack("<3I", fh.read(12))
            extents = struct.unpack("<3d", fh.read(24))
            offsets = struct.unpack("<3d", fh.read(24))
            (t,) = struct.unpack("<d", fh.read(8))
            grid = GridSpec(shape, extents, offsets)
            n = int(np.prod(shape))
            psi = np.frombuffer(fh.read(16 * n), dtype="<c16").reshape(shape)
        return cls(grid, psi.astype(complex), t)


@dataclass
class StepController:
    """Adaptive step-size state for the embedded 4(3) local substep."""

    dt: float = 1e-6  # s, current step
    tol: float = 1e-8  # relative local error target
    safety: float = 0.9
    dt_min: float = 1e-13  # s
    dt_max: float = 1e-3  # s
    max_rejects: int = 60

    def __post_init__(self):
        if not (self.dt_min <= self.dt <= self.dt_max):
            self.dt = min(max(self.dt, self.dt_min), self.dt_max)


class StepRejected(RuntimeError):
    pass


def observables(field: ComplexField3D) -> dict:
    """norm, center of mass (m), RMS widths (m), peak density (atoms/m^3)."""
    n3 = np.abs(field.psi) ** 2
    dv = field.grid.cell_volume
    norm = float(np.sum(n3) * dv)
    meshes = field.grid.meshes()
    com = [float(np.sum(n3 * r) * dv / norm) for r in meshes]
    rms = [math.sqrt(max(float(np.sum(n3 * (r - c) ** 2) * dv / norm), 0.0))
           for r, c in zip(meshes, com)]
    return {"norm": norm, "com": tuple(com), "rms_widths": tuple(rms),
            "peak_density": float(n3.max())}


def energy_functional(field: ComplexField3D, potential: np.ndarray,
                      a_s: float, species: SpeciesParams) -> float:
    """GPE energy E = int [hbar^2 |grad psi|^2 / 2m + V |psi|^2 + u |psi|^4 / 2]."""
    psi = field.psi
    dv = field.grid.cell_volume
    k2 = field.grid.k_squared()
    psik = np.fft.fftn(psi)
    # Parseval: int |grad psi|^2 = sum k^2 |psi_k|^2 * dV / Npoints
    kin = HBAR**2 / (2 * species.mass) * float(
        np.sum(k2 * np.abs(psik) ** 2)) * dv / psi.size
    n3 = np.abs(psi) ** 2
    u = interaction_strength(a_s, species)
    return kin + float(np.sum(potential * n3) * dv) + 0.5 * u * float(np.sum(n3**2) * dv)


class GpeSolver:
    """Real-time GPE propagator.

    ``potential`` is a callable t -> V(x, y, z) in J (array broadcastable to
    the grid, or scalar 0); typically the focusing lens
    V = m omega_x^2(t) x^2 / 2 built by :func:`lens_potential`.
    """

    def __init__(self, grid: GridSpec, species: SpeciesParams, a_s: float,
                 k_loss: float = 0.0, potential=None):
        self.grid = grid
        self.species = species
        self.u = interaction_strength(a_s, species)
        self.k_loss = k_loss
        self.potential = potential if potential is not None else (lambda t: 0.0)
        self._k2 = grid.k_squared()
        self._kin_rate = HBAR * self._k2 / (2.0 * species.mass)  # 1/s

    def _local_rhs(self, t, psi):
        v = self.potential(t)
        absq = np.abs(psi) ** 2
        return (-1j / HBAR) * (v + self.u * absq) * psi \
            - self.k_loss * absq**2 * psi

    def _merson(self, t, psi, dt):
        f = self._local_rhs
        k1 = f(t, psi)
        k2 = f(t + dt / 3, psi + dt / 3 * k1)
        k3 = f(t + dt / 3, psi + dt / 6 * (k1 + k2))
        k4 = f(t + dt / 2, psi + dt * (0.125 * k1 + 0.375 * k3))
        k5 = f(t + dt, psi + dt * (0.5 * k1 - 1.5 * k3 + 2.0 * k4))
        y4 = psi + dt * (k1 + 4.0 * k4 + k5) / 6.0
        err = dt * (2.0 * k1 - 9.0 * k3 + 8.0 * k4 - k5) / 30.0
        return y4, err

    def step_real_time(self, field: ComplexField3D, dt: float):
        """One Strang step of size dt.  Returns (new_field, relative_error).

        The error estimate is the L2 norm of the 4th/3rd-order difference of
        the local substep, relative to the field's L2 norm.
        """
        half = np.exp(-0.5j * self._kin_rate * dt)
        psi = np.fft.ifftn(half * np.fft.fftn(field.psi))
        psi, err = self._merson(field.t + dt / 2, psi, dt)
        psi = np.fft.ifftn(half * np.fft.fftn(psi))
        scale = math.sqrt(max(float(np.sum(np.abs(psi) ** 2)), 1e-300))
        rel_err = math.sqrt(float(np.sum(np.abs(err) ** 2))) / scale
        return ComplexField3D(field.grid, psi, field.t + dt), rel_err

    def evolve(self, field: ComplexField3D, t_end: float,
               controller: StepController | None = None,
               observer_times=None, observer=None) -> tuple:
        """Propagate to t_end with adaptive steps.

        observer_times: increasing sample times; at each, ``observer(field)``
        is called (default: record :func:`observables`).  Returns
        (final_field, list_of_records).  Emits a grid-escape warning when
        more than 0.1% of the norm sits in the outer 10% of the box.
        """
        ctrl = controller or StepController()
        obs_times = list(observer_times) if observer_times is not None else []
        obs = observer or (lambda f: {"t": f.t, **observables(f)})
        records = []
        edge_mask = self._edge_mask()
        next_i = 0
        while field.t < t_end - 1e-15 * max(abs(t_end), 1.0):
            while next_i < len(obs_times) and obs_times[next_i] <= field.t + 1e-15:
                records.append(obs(field))
                next_i += 1
            target = obs_times[next_i] if next_i < len(obs_times) else t_end
            dt = min(ctrl.dt, max(min(target, t_end) - field.t, ctrl.dt_min))
            rejects = 0
            while True:
                new_field, err = self.step_real_time(field, dt)
                if err <= ctrl.tol or dt <= ctrl.dt_min * 1.0001:
                    break
                rejects += 1
                if rejects > ctrl.max_rejects:
                    raise StepRejected(
                        f"step at t={field.t:.3e} rejected {rejects} times")
                dt = max(ctrl.dt_min,
                         dt * max(0.2, ctrl.safety * (ctrl.tol / err) ** 0.25))
            field = new_field
            ctrl.dt = min(ctrl.dt_max, dt * min(
                2.0, ctrl.safety * (ctrl.tol / max(err, 1e-300)) ** 0.25))
            esc = float(np.sum(np.abs(field.psi[edge_mask]) ** 2)
                        * self.grid.cell_volume)
            if esc > 1e-3 * max(field.norm, 1e-300):
                warnings.warn("grid escape: >0.1% of the norm in the outer "
                              "10% of the box", RuntimeWarning, stacklevel=2)
        while next_i < len(obs_times):
            records.append(obs(field))
            next_i += 1
        return field, records

    def _edge_mask(self):
        mask = np.zeros(self.grid.shape, bool)
        for ax, n in enumerate(self.grid.shape):
            w = max(1, n // 20)  # outer 10% = 5% per side
            sl = [slice(None)] * 3
            sl[ax] = slice(0, w)
            mask[tuple(sl)] = True
            sl[ax] = slice(n - w, n)
            mask[tuple(sl)] = True
        return mask


def lens_potential(grid: GridSpec, species: SpeciesParams, beam, kin):
    """V(t) = m omega_x^2(t) x^2 / 2 on the grid (moving-frame lens)."""
    from .optics import harmonic_frequency_sq
    x = grid.meshes()[0]
    x2 = x * x

    def pot(t):
        return 0.5 * species.mass * harmonic_frequency_sq(t, beam, kin, species) * x2
    return pot


def trap_potential(grid: GridSpec, species: SpeciesParams, trap):
    """Static harmonic trap V = m/2 sum omega_r^2 r^2 (for ground states)."""
    meshes = grid.meshes()
    v = 0.5 * species.mass * sum(w**2 * r**2 for w, r in zip(trap, meshes))
    return lambda t: v


class NonConvergence(RuntimeError):
    pass


def ground_state_imaginary_time(trap, a_s_initial: float, n0: float,
                                grid: GridSpec, species: SpeciesParams,
                                tol: float = 1e-10, dt: float | None = None,
                                max_iter: int = 200000,
                                initial: ComplexField3D | None = None
                                ) -> ComplexField3D:
    """Trapped GPE ground state via imaginary-time split stepping.

    Converged when the relative chemical-potential change per imaginary-time
    step (of fixed size dt, default 2e-3 trap periods of the geometric-mean
    frequency) drops below tol.  The returned field is normalized to n0 atoms.
    """
    if a_s_initial < 0:
        raise ValueError("imaginary-time ground state requires a_s >= 0")
    wbar = float(np.prod(trap)) ** (1.0 / 3.0)
    dt = dt if dt is not None else 2e-3 / wbar
    u = interaction_strength(a_s_initial, species)
    v_trap = trap_potential(grid, species, trap)(0.0)
    k2 = grid.k_squared()
    kin_half = np.exp(-0.5 * HBAR * k2 / (2.0 * species.mass) * dt)
    if initial is None:
        meshes = grid.meshes()
        widths = [math.sqrt(HBAR / (species.mass * w)) for w in trap]
        psi = np.exp(-sum((r / wd) ** 2 for r, wd in zip(meshes, widths))
                     ).astype(complex)
    else:
        psi = initial.psi.astype(complex)
    dv = grid.cell_volume
    psi *= math.sqrt(n0 / (float(np.sum(np.abs(psi) ** 2)) * dv))
    mu_old = None
    for _ in range(max_iter):
        psi = np.fft.ifftn(kin_half * np.fft.fftn(psi))
        psi = psi * np.exp(-dt / HBAR * (v_trap + u * np.abs(psi) ** 2))
        psi = np.fft.ifftn(kin_half * np.fft.fftn(psi))
        cur = float(np.sum(np.abs(psi) ** 2)) * dv
        mu = -HBAR * math.log(cur / n0) / (2.0 * dt)  # J
        psi *= math.sqrt(n0 / cur)
        if mu_old is not None and abs(mu - mu_old) / dt < tol * max(abs(mu), 1e-300):
            return ComplexField3D(grid, psi, 0.0)
        mu_old = mu
    raise NonConvergence(f"imaginary time did not converge in {max_iter} steps")
