"""Run orchestration: config parsing, single runs, parameter sweeps,
figure-reproduction recipes, and deterministic result tables.

Powers in sweep configs are given as multiples of the kick-calibrated
optimal power by default ("1.0" = the optimal power for that point's kick);
absolute watts are accepted via the ``power_watts`` axis.
"""

from __future__ import annotations

import concurrent.futures
import csv
import io
import json
import math
import os
import platform
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import yaml

from . import __version__
from .constants import (G_DEFAULT, HBAR, SPECIES_PRESETS, SpeciesParams,
                        kick_velocity, load_species)
from .deposition import (NoHalfCrossing, NoPeak, deposit_cuts,
                         deposit_from_trajectory, fwhm, instantaneous_profile,
                         profile_stats)
from .optics import FocusingBeam, Kinematics, calibrate_xi, optimal_power
from .variational import (CollapseDetected, VariationalConfig, initial_widths,
                          integrate, width_vs_z)

DEFAULTS = {
    "species": "Rb-85",
    "trap_hz": [10.0, 70.0, 70.0],
    "n0": 1.0e5,
    "a_s_initial_a0": 100.0,
    "beam": {
        "sigma_z": 100e-6,  # m
        "k": 2.01384e4,  # 1/m
        "detuning_hz": 200e9,  # Hz; stored as angular 2*pi*value
        "z0": 500e-6,  # m
    },
    "kinematics": {"g": G_DEFAULT},
    "model": "variational",
    "loss_multiplier": 1.0,
    "calibration": {
        "ensemble": "diverging",
        "n_rays": 21,
        "xtol": 1e-3,
    },
    "sweep": {"a_s_a0": [100.0], "power": [1.0], "kicks_hbar_k": [0.0]},
    "integrator": {"rtol": 1e-10, "collapse_floor": 1e-9},
    "deposit": {"nx": 2001, "ny": 401, "n_times": 16000,
                "map_nx": 301, "map_ny": 151, "map_n_times": 1200},
    "output_dir": "runs",
    "workers": None,  # default: available parallelism
}

RESULT_COLUMNS = [
    "run_id", "model", "a_s_a0", "kick_hbar_k", "power_w", "xi",
    "z_f_m", "fwhm_x_m", "fwhm_y_m", "peak_atoms_per_m2",
    "inst_fwhm_x_m", "inst_peak_atoms_per_m2",
    "loss_fraction", "n_end", "collapsed", "error",
]


class ConfigError(ValueError):
    pass


def _merge(base, override):
    out = dict(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass(frozen=True)
class RunConfig:
    raw: dict

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError("config root must be a mapping")
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict | None = None) -> "RunConfig":
        cfg = cls(_merge(DEFAULTS, data or {}))
        cfg.validate()
        return cfg

    def validate(self):
        r = self.raw
        unknown = set(r) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if r["model"] not in ("variational", "gpe", "both"):
            raise ConfigError(f"unknown model {r['model']!r}")
        if len(r["trap_hz"]) != 3 or any(f <= 0 for f in r["trap_hz"]):
            raise ConfigError("trap_hz must be three positive frequencies")
        sw = r["sweep"]
        axes = [sw.get("a_s_a0"), sw.get("kicks_hbar_k")]
        if not sw.get("power") and not sw.get("power_watts"):
            raise ConfigError("sweep needs a power or power_watts axis")
        if any(not ax for ax in axes):
            raise ConfigError("sweep axes must be nonempty")
        if r["calibration"]["ensemble"] not in ("diverging", "collimated"):
            raise ConfigError("calibration.ensemble must be diverging|collimated")
        self.species()  # resolves preset / file, raises on failure

    def species(self) -> SpeciesParams:
        name = self.raw["species"]
        if name in SPECIES_PRESETS:
            return SPECIES_PRESETS[name]
        if os.path.exists(str(name)):
            return load_species(str(name))
        raise ConfigError(f"unknown species preset or file: {name!r}")

    def trap(self):
        return tuple(2 * math.pi * f for f in self.raw["trap_hz"])

    def beam_template(self) -> FocusingBeam:
        b = self.raw["beam"]
        return FocusingBeam(power=0.0, sigma_z=b["sigma_z"], k=b["k"],
                            detuning=2 * math.pi * b["detuning_hz"],
                            z0=b["z0"])

    def kinematics(self, kick: float) -> Kinematics:
        sp = self.species()
        return Kinematics(v0=kick_velocity(kick, sp),
                          g=self.raw["kinematics"]["g"],
                          z0=self.raw["beam"]["z0"])

    def points(self):
        sw = self.raw["sweep"]
        pts = []
        powers = [("mult", p) for p in sw.get("power") or []]
        powers += [("watts", p) for p in sw.get("power_watts") or []]
        for a in sw["a_s_a0"]:
            for pw in powers:
                for kick in sw["kicks_hbar_k"]:
                    pts.append((float(a), pw, float(kick)))
        return pts


_XI_CACHE: dict = {}


def _calibrated_power(cfg: RunConfig, kick: float):
    """(xi*, optimal power) for one kick, using the configured ray ensemble."""
    sp = cfg.species()
    kin = cfg.kinematics(kick)
    beam = cfg.beam_template()
    cal = cfg.raw["calibration"]
    w0 = initial_widths(cfg.trap(), cfg.raw["n0"],
                        cfg.raw["a_s_initial_a0"] * sp.bohr_radius, sp)
    key = (sp, kin, beam, cal["ensemble"], cal["n_rays"], cal["xtol"], w0[0])
    if key not in _XI_CACHE:
        _XI_CACHE[key] = calibrate_xi(kin, beam, sp, ensemble=cal["ensemble"],
                                      half_width=w0[0], n_rays=cal["n_rays"],
                                      xtol=cal["xtol"])
    xi = _XI_CACHE[key]
    e0 = 0.5 * sp.mass * kin.v_at_plane**2
    return xi, optimal_power(e0, xi, beam, sp)


def run_single(cfg: RunConfig, point, out_dir: str | None = None):
    """Execute one sweep point (variational model).

    Returns (row_dict, artifacts) where artifacts holds the trajectory
    samples, deposit cuts, and the manifest.  A collapse is recorded in the
    row, not raised.
    """
    a_s_a0, power_spec, kick = point
    t0 = time.perf_counter()
    sp = cfg.species()
    kin = cfg.kinematics(kick)
    xi, p_opt = _calibrated_power(cfg, kick)
    power = power_spec[1] * p_opt if power_spec[0] == "mult" else power_spec[1]
    beam = cfg.beam_template().with_power(power)
    a_s = a_s_a0 * sp.bohr_radius
    w0 = initial_widths(cfg.trap(), cfg.raw["n0"],
                        cfg.raw["a_s_initial_a0"] * sp.bohr_radius, sp)
    from .variational import VariationalState
    init = VariationalState(t=0.0, W=w0, dW=(0.0, 0.0, 0.0), N=cfg.raw["n0"])
    vcfg = VariationalConfig(
        a_s=a_s, species=sp, trap=cfg.trap(), N0=cfg.raw["n0"],
        beam=beam, kin=kin,
        loss_multiplier=cfg.raw["loss_multiplier"],
        rtol=cfg.raw["integrator"]["rtol"],
        collapse_floor=cfg.raw["integrator"]["collapse_floor"])
    t_end = 1.6 * kin.t_cross
    collapsed = False
    try:
        traj = integrate(vcfg, t_end, initial_state=init)
    except CollapseDetected as exc:
        traj = exc.trajectory
        collapsed = True

    row = {c: "" for c in RESULT_COLUMNS}
    row.update(run_id=_run_id(point), model="variational", a_s_a0=a_s_a0,
               kick_hbar_k=kick, power_w=power, xi=xi, collapsed=collapsed,
               error="")
    artifacts = {"manifest": _manifest(cfg, point, sp, kin, xi, p_opt, power,
                                       w0, collapsed)}
    curve = width_vs_z(traj, kin)
    row["z_f_m"] = curve["z_f"]
    row["n_end"] = float(traj.atom_number(traj.t_end))
    row["loss_fraction"] = traj.loss_fraction()
    artifacts["width_vs_z"] = curve
    artifacts["trajectory"] = _trajectory_table(traj, kin)

    dep = cfg.raw["deposit"]
    try:
        if power > 0:
            x, y = _deposit_axes(traj, kin, dep)
            cut_x, cut_y = deposit_cuts(traj, kin, x, y,
                                        n_times=dep["n_times"])
            row["fwhm_x_m"] = fwhm(x, cut_x)
            row["fwhm_y_m"] = fwhm(y, cut_y)
            row["peak_atoms_per_m2"] = float(cut_x.max())
            # modest-resolution full map kept as an artifact
            xm = np.linspace(x[0], x[-1], dep["map_nx"])
            ym = np.linspace(y[0], y[-1], dep["map_ny"])
            dmap = deposit_from_trajectory(traj, kin, xm, ym,
                                           n_times=dep["map_n_times"])
            artifacts["deposit"] = dmap
            tstar, col, istats = instantaneous_profile(
                traj, kin, *_instant_axes(traj))
            row["inst_fwhm_x_m"] = istats.fwhm_x
            row["inst_peak_atoms_per_m2"] = istats.peak
            artifacts["instantaneous"] = {"t_star": tstar, "map": col,
                                          "stats": istats}
        else:
            row["error"] = "no-focusing"  # z_f undefined for free flight
            row["z_f_m"] = ""
    except (NoPeak, NoHalfCrossing) as exc:
        row["error"] = type(exc).__name__
    artifacts["manifest"]["wall_time_s"] = time.perf_counter() - t0
    if out_dir:
        _write_artifacts(out_dir, row["run_id"], row, artifacts)
    return row, artifacts


def _run_id(point):
    a, pw, kick = point
    tag = f"{pw[1]:g}x" if pw[0] == "mult" else f"{pw[1]:g}W"
    return f"as{a:g}_P{tag}_k{kick:g}"


def _manifest(cfg, point, sp, kin, xi, p_opt, power, w0, collapsed):
    return {
        "config": cfg.raw,
        "point": {"a_s_a0": point[0], "power": list(point[1]),
                  "kick_hbar_k": point[2]},
        "derived": {
            "xi": xi,
            "p_opt_w": p_opt,
            "power_w": power,
            "peak_intensity_w_m2": cfg.beam_template().with_power(power).peak_intensity,
            "initial_widths_m": list(w0),
            "v_at_plane_m_s": kin.v_at_plane,
            "t_cross_s": kin.t_cross,
            "collapsed": collapsed,
        },
        "versions": {
            "becfocus": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }


def _trajectory_table(traj, kin, n=400):
    ts = np.linspace(0.0, traj.t_end, n)
    W = traj.widths(ts)
    return {
        "t": ts, "z": kin.z0 - kin.z_of_t(ts),
        "w_x": W[0], "w_y": W[1], "w_z": W[2],
        "n": traj.atom_number(ts),
    }


def _deposit_axes(traj, kin, dep):
    """Deposit grid spanning the cloud over the window where flux is live."""
    ts = np.linspace(0.0, traj.t_end, 1200)
    W = traj.widths(ts)
    zc = kin.z0 - kin.z_of_t(ts)
    live = np.abs(zc) <= 3.7 * W[2]  # envelope > ~1e-6
    if not np.any(live):
        live = slice(None)
    x_half = 4.0 * float(np.max(W[0][live]))
    y_half = 4.0 * float(np.max(W[1][live]))
    return (np.linspace(-x_half, x_half, dep["nx"]),
            np.linspace(-y_half, y_half, dep["ny"]))


def _instant_axes(traj):
    t_star = traj.focal_time()
    wx, wy, _ = traj.widths(t_star)
    return (np.linspace(-6 * float(wx), 6 * float(wx), 1201),
            np.linspace(-6 * float(wy), 6 * float(wy), 401))


def _point_worker(args):
    cfg_dict, point, out_dir = args
    cfg = RunConfig.from_dict(cfg_dict)
    try:
        row, _ = run_single(cfg, point, out_dir=out_dir)
        return point, row, None
    except Exception as exc:  # per-point isolation
        row = {c: "" for c in RESULT_COLUMNS}
        row.update(run_id=_run_id(point), model="variational",
                   a_s_a0=point[0], kick_hbar_k=point[2],
                   error=f"{type(exc).__name__}: {exc}")
        return point, row, exc


def run_sweep(cfg: RunConfig, out_dir: str | None = None,
              parallel: bool = True):
    """Execute the Cartesian sweep.  Returns (rows, n_failures).

    Rows are sorted deterministically by (a_s, power, kick, model); per-point
    failures are flagged in the ``error`` column and do not abort the sweep.
    """
    points = cfg.points()
    workers = cfg.raw["workers"] or os.cpu_count() or 1
    jobs = [(cfg.raw, p, out_dir) for p in points]
    results = {}
    if parallel and workers > 1 and len(points) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as ex:
            for point, row, err in ex.map(_point_worker, jobs):
                results[_sort_key(point)] = (row, err)
    else:
        for job in jobs:
            point, row, err = _point_worker(job)
            results[_sort_key(point)] = (row, err)
    rows = [results[k][0] for k in sorted(results)]
    failures = sum(1 for k in sorted(results)
                   if results[k][1] is not None)
    return rows, failures


def _sort_key(point):
    a, pw, kick = point
    return (a, 0 if pw[0] == "mult" else 1, pw[1], kick)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in RESULT_COLUMNS])
    return buf.getvalue()


def rows_to_json(rows) -> str:
    return json.dumps([{c: r[c] for c in RESULT_COLUMNS} for r in rows],
                      indent=1, sort_keys=True) + "\n"


def _write_artifacts(out_dir, run_id, row, artifacts):
    d = os.path.join(out_dir, run_id)
    os.makedirs(d, exist_ok=True)
    with open(os.path.join(d, "manifest.json"), "w") as fh:
        json.dump(artifacts["manifest"], fh, indent=1, sort_keys=True,
                  default=float)
    tr = artifacts["trajectory"]
    with open(os.path.join(d, "trajectory.csv"), "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "z_m", "w_x_m", "w_y_m", "w_z_m", "n"])
        for i in range(len(tr["t"])):
            w.writerow([repr(float(tr[k][i]))
                        for k in ("t", "z", "w_x", "w_y", "w_z", "n")])
    if "deposit" in artifacts:
        dmap = artifacts["deposit"]
        np.savetxt(os.path.join(d, "deposit_n0.csv"), dmap.n0, delimiter=",")


# ---------------------------------------------------------------------------
# figure-reproduction recipes

RECIPES = {}


def recipe(fig_id):
    def deco(fn):
        RECIPES[fig_id] = fn
        return fn
    return deco


@recipe("fig44")
def _fig44(cfg: RunConfig, out_dir: str):
    """Transverse width vs longitudinal position for four powers
    (0.5, 1, 2, 4) x the p = 0 optimal power."""
    series = []
    for mult in (0.5, 1.0, 2.0, 4.0):
        row, art = run_single(cfg, (cfg.raw["sweep"]["a_s_a0"][0],
                                    ("mult", mult), 0.0))
        c = art["width_vs_z"]
        series.append({"power_mult": mult, "z": c["z"], "w_x": c["w_x"],
                       "z_f": c["z_f"], "n_minima": len(c["minima"])})
        _dump_series(out_dir, f"fig44_P{mult:g}.csv", ["z_m", "w_x_m"],
                     [c["z"], c["w_x"]])
    _dump_json(out_dir, "fig44_focal_planes.json",
               [{k: s[k] for k in ("power_mult", "z_f", "n_minima")}
                for s in series])
    return series


@recipe("fig4")
def _fig4(cfg: RunConfig, out_dir: str):
    """Deposit characterization over a_s x power at p = 0.

    Runs with the GPE-consistent loss convention (multiplier 6), which
    reproduces the reported loss magnitudes; the width-equation convention
    (multiplier 1) yields percent-level losses (see the results manifest).
    """
    over = {"sweep": {"a_s_a0": [-1.0, 1.0, 5.0, 10.0, 50.0, 100.0],
                      "power": [0.5, 1.0, 2.0, 4.0],
                      "kicks_hbar_k": [0.0]},
            "loss_multiplier": 6.0}
    c2 = RunConfig.from_dict(_merge(cfg.raw, over))
    rows, failures = run_sweep(c2, out_dir=None)
    _dump_text(out_dir, "fig4_table.csv", rows_to_csv(rows))
    _dump_text(out_dir, "fig4_table.json", rows_to_json(rows))
    return rows


@recipe("fig7")
def _fig7(cfg: RunConfig, out_dir: str):
    """Instantaneous focal profiles for attractive interactions and large
    kicks, each at its own calibrated optimal power."""
    over = {"sweep": {"a_s_a0": [-1.0], "power": [1.0],
                      "kicks_hbar_k": [32.0, 64.0, 128.0]}}
    c2 = RunConfig.from_dict(_merge(cfg.raw, over))
    rows, failures = run_sweep(c2, out_dir=None)
    _dump_text(out_dir, "fig7_table.csv", rows_to_csv(rows))
    _dump_text(out_dir, "fig7_table.json", rows_to_json(rows))
    return rows


@recipe("fig9")
def _fig9(cfg: RunConfig, out_dir: str):
    """Reduced-scale variational-vs-GPE width comparison (see gpe module).

    Heavy (minutes to tens of minutes); emits paired width series per a_s.
    """
    from .benchmark import reduced_scale_comparison
    out = []
    for a_s_a0 in (0.0, 10.0):
        res = reduced_scale_comparison(a_s_a0=a_s_a0)
        out.append(res)
        _dump_series(out_dir, f"fig9_as{a_s_a0:g}.csv",
                     ["t_s", "w_x_var_m", "w_x_gpe_m"],
                     [res["t"], res["w_var"], res["w_gpe"]])
    _dump_json(out_dir, "fig9_summary.json",
               [{k: r[k] for k in ("a_s_a0", "w_var_focus", "w_gpe_focus",
                                   "rel_diff")} for r in out])
    return out


def _dump_text(out_dir, name, text):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, name), "w") as fh:
        fh.write(text)


def _dump_json(out_dir, name, obj):
    _dump_text(out_dir, name,
               json.dumps(obj, indent=1, sort_keys=True, default=float) + "\n")


def _dump_series(out_dir, name, headers, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(headers)
    for vals in zip(*columns):
        w.writerow([repr(float(v)) for v in vals])
    _dump_text(out_dir, name, buf.getvalue())


def emit_plotdata(cfg: RunConfig, fig_id: str, out_dir: str):
    if fig_id not in RECIPES:
        raise ConfigError(f"unknown figure recipe {fig_id!r}; "
                          f"available: {sorted(RECIPES)}")
    return RECIPES[fig_id](cfg, out_dir)
