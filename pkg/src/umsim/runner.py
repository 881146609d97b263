"""Seeded Monte Carlo execution of a :class:`SimConfig`.

Work is split into cells, one per (sweep point, trial). Each cell draws
everything it needs from its own counter-based stream (see :mod:`umsim.rng`),
runs every algorithm of the task on that shared realisation and returns its
records. Cells are independent, so the worker count changes only the wall
time; records are merged by sorting.
"""
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import beamforming as bf
from . import detection as det
from .channel import Scenario, assemble_channel, multiuser_channel, sample_paths, subcarrier_frequencies
from .config import SimConfig, parse_config
from .denoisers import TweedieDenoiser
from .exceptions import InvalidParameterError
from .estimation import lmmse_estimate, ls_estimate, nmse, oamp_estimate
from .geometry import SPEED_OF_LIGHT, aperture, build_aosa, rayleigh_distance, rayleigh_distance_closed_form
from .io import TrialRecord, sort_records
from .measurement import build_pilot_operator, dft_dictionary, noise_variance_for_snr, observe
from .priors import BernoulliGaussianPrior, GaussianMixturePrior, GaussianPrior, make_prior
from .rng import stream_id, trial_stream

COVARIANCE_SWEEP = 2**32 - 1  # reserved sweep index for the sample-covariance stream


@dataclass
class RunResult:
    records: list
    failures: int = 0
    errors: list = field(default_factory=list)
    captures: dict = field(default_factory=dict)


def geometry_from_config(g):
    wavelength = g["wavelength_m"] or SPEED_OF_LIGHT / g["carrier_frequency_hz"]
    d_a = g["ae_spacing_m"] or wavelength / 2.0
    return build_aosa(wavelength, d_a, g["sa_spacing_factor"], tuple(g["sa_grid"]), tuple(g["ae_grid"]),
                      spacing_convention=g["spacing_convention"])


def load_absorption_table(path, freqs):
    """Two columns per line, ``frequency_hz gain_db``; linear interpolation in dB, amplitude out."""
    table = np.loadtxt(path, delimiter=None if not str(path).endswith(".csv") else ",", ndmin=2)
    if table.shape[1] != 2:
        raise ValueError("absorption table needs two columns: frequency_hz, gain_db")
    order = np.argsort(table[:, 0])
    gain_db = np.interp(freqs, table[order, 0], table[order, 1])
    return 10.0 ** (gain_db / 20.0)


def scenario_from_config(c, placement=None):
    near_fraction = c["near_fraction"]
    if placement is not None:
        near_fraction = {"near": 1.0, "far": 0.0, "hybrid": 0.5}[placement]
    return Scenario(num_paths=c["num_paths"], k_factor_db=c["k_factor_db"], near_fraction=near_fraction,
                    distance_range_m=tuple(c["distance_range_m"]), user_distance_m=c["user_distance_m"],
                    visibility_prob=c["visibility_prob"])


def _channel_kwargs(cfg, geometry):
    sub = cfg.channel["subcarriers"]
    kw = {"bandwidth": sub["bandwidth_hz"], "count": sub["count"]}
    if cfg.channel["absorption_table"]:
        freqs = subcarrier_frequencies(geometry.carrier_frequency_hz, sub["bandwidth_hz"], sub["count"])
        kw["absorption"] = load_absorption_table(cfg.channel["absorption_table"], freqs)
    return kw


def sweep_points(cfg):
    if cfg.task in ("chest", "detect"):
        return "snr_db", [float(v) for v in cfg.params["snr_grid"]]
    if cfg.task == "beamform":
        return "k_users", [float(v) for v in cfg.params["k_users"]]
    return "none", [0.0]


ALGORITHM_KEYS = {"chest": "algorithms", "detect": "detectors", "beamform": "schemes"}


def algorithms(cfg):
    key = ALGORITHM_KEYS.get(cfg.task)
    return list(cfg.params[key]) if key else ["aosa"]


# -- shared, immutable context ------------------------------------------------

class Context:
    """Objects every cell of a run needs, built once per process."""

    def __init__(self, cfg, shared=None):
        self.cfg = cfg
        self.geometry = geometry_from_config(cfg.geometry)
        self.sweep_name, self.sweep_values = sweep_points(cfg)
        self.shared = shared or {}
        if cfg.task == "chest":
            self._init_chest()

    def _init_chest(self):
        p = self.cfg.params
        n = self.geometry.n_elements
        self.dictionary = None
        if p["channel_source"] == "prior":
            self.prior = make_prior(p["prior"], n)
            self.covariance = self.prior.covariance
        else:
            self.prior = None
            self.covariance = self.shared["covariance"]
            self.dictionary = dft_dictionary(self.geometry)
        total = np.real(np.trace(self.covariance)) / n
        self.gauss_prior = GaussianPrior(np.zeros(n), self.covariance)
        fam = p["prior"]["family"]
        # configured family when it matches, else a fallback scaled to the channel power
        if fam == "bernoulli_gaussian":
            self.bg_prior = make_prior(p["prior"], n)
        else:
            self.bg_prior = BernoulliGaussianPrior(0.1, total / 0.1, n)
        if fam == "gaussian_mixture":
            self.gm_prior = make_prior(p["prior"], n)
        else:
            w, v = np.array([0.5, 0.3, 0.2]), np.array([0.2, 1.0, 3.0])
            self.gm_prior = GaussianMixturePrior(w, np.zeros(3), v * total / float(w @ v), n)


def sample_covariance(cfg, geometry):
    """Sample covariance of the geometric channel from a reserved stream."""
    rng = trial_stream(cfg.seed, cfg.scenario_id, COVARIANCE_SWEEP, 0)
    scen = scenario_from_config(cfg.channel)
    kw = _channel_kwargs(cfg, geometry)
    n_samples = cfg.params["covariance_samples"]
    H = np.empty((n_samples, geometry.n_elements), dtype=np.complex128)
    for i in range(n_samples):
        H[i] = assemble_channel(geometry, sample_paths(geometry, scen, rng), **kw).channels[0]
    return H.T @ H.conj() / n_samples


# -- tasks ---------------------------------------------------------------------

def _geometry_cell(ctx, value, rng):
    g = ctx.geometry
    out = [("aosa", "n_elements", float(g.n_elements), None),
           ("aosa", "aperture_m", aperture(g), None),
           ("aosa", "rayleigh_distance_m", rayleigh_distance(g), None)]
    try:
        out.append(("aosa", "rayleigh_closed_form_m", rayleigh_distance_closed_form(g), None))
    except InvalidParameterError:
        pass  # closed form needs equal subarray and element counts per axis
    return out, {}


def _chest_cell(ctx, snr_db, rng):
    p = ctx.cfg.params
    g = ctx.geometry
    n = g.n_elements
    if ctx.prior is not None:
        h = ctx.prior.sample(rng)
    else:
        scen = scenario_from_config(ctx.cfg.channel)
        h = assemble_channel(g, sample_paths(g, scen, rng), **_channel_kwargs(ctx.cfg, g)).channels[0]
    op = build_pilot_operator(n, p["ratio"], p["structure"], rng)
    op = op.with_noise(noise_variance_for_snr(op.matrix, h, snr_db))
    y = observe(op, h, rng)
    opts = dict(max_iter=p["max_iter"], tol=p["tol"], damping=p["damping"])
    out, captures = [], {}
    for alg in p["algorithms"]:
        t0 = time.perf_counter()
        try:
            iters = None
            if alg == "ls":
                est = ls_estimate(op, y)
            elif alg == "lmmse":
                est = lmmse_estimate(op, y, ctx.covariance)
            else:
                if alg == "oamp-gaussian":
                    prior, F = ctx.gauss_prior, None
                else:
                    prior = ctx.bg_prior if alg == "oamp-bg" else ctx.gm_prior
                    F = ctx.dictionary
                A = op.matrix if F is None else op.matrix @ F
                rep = oamp_estimate(A, y, TweedieDenoiser(prior), noise_variance=op.noise_variance,
                                    rng=rng, **opts)
                est = rep.estimate if F is None else F @ rep.estimate
                iters = rep.iterations_used
            out.append((alg, "nmse_db", nmse(est, h), time.perf_counter() - t0))
            if iters is not None:
                out.append((alg, "iterations", float(iters), None))
            captures[alg] = est
        except Exception as exc:
            out.append((alg, "error", math.nan, exc))
    return out, captures


def _detect_cell(ctx, snr_db, rng):
    p = ctx.cfg.params
    c = det.make_constellation(p["constellation"])
    B = p["blocks_per_trial"]
    if p["channel_model"] == "iid":
        H = det.iid_channel(rng, p["n_rx"], p["n_tx"], B)
    else:
        H = det.ill_conditioned_channel(rng, p["n_rx"], p["n_tx"], p["condition_number"], B)
    nv = det.noise_variance_for_snr(H, snr_db, c.energy)
    idx, _, y = det.simulate_block(rng, H, c, nv)
    out = []
    for name in p["detectors"]:
        opts = {}
        if name in ("amp", "oamp"):
            opts = {"max_iter": p["max_iter"]}
        elif name == "ep":
            opts = {"damping": p["ep_damping"], "max_iter": p["ep_max_iter"]}
        t0 = time.perf_counter()
        try:
            res = det.detect(name, H, y, nv, c, **opts)
            out.append((name, "ser", det.ser(res.hard_indices, idx), time.perf_counter() - t0))
            if name in ("amp", "oamp", "ep"):
                out.append((name, "iterations", float(res.iterations_used), None))
        except Exception as exc:
            out.append((name, "error", math.nan, exc))
    return out, {}


def _power_watt(value, unit):
    return bf.dbm_to_watt(value) if unit == "dBm" else 10.0 ** (value / 10.0)


def _beamform_cell(ctx, k_users, rng):
    p = ctx.cfg.params
    g = ctx.geometry
    K = int(k_users)
    scen = scenario_from_config(ctx.cfg.channel, p["placement"])
    H = multiuser_channel(g, scen, K, rng).channels[0] * 10.0 ** (p["channel_gain_db"] / 20.0)
    P = _power_watt(p["power_dbm"], p["power_unit_assumed"])
    s2 = bf.dbm_to_watt(p["noise_dbm"])
    out = []
    for scheme in p["schemes"]:
        t0 = time.perf_counter()
        try:
            opts = {}
            if scheme == "wmmse":
                opts = dict(max_iter=p["max_iter"], tol=p["tol"], restarts=p["restarts"], rng=rng)
            W = bf.beamform(scheme, H, P, s2, **opts)
            out.append((scheme, "sum_rate_bps_hz", bf.sum_rate(H, W, s2), time.perf_counter() - t0))
            if scheme == "wmmse":
                out.append((scheme, "iterations", float(W.iterations_used), None))
                steps = np.diff(W.objective_trajectory)
                out.append((scheme, "trajectory_min_step", float(steps.min()) if steps.size else 0.0, None))
        except Exception as exc:
            out.append((scheme, "error", math.nan, exc))
    return out, {}


TASK_CELLS = {"geometry": _geometry_cell, "chest": _chest_cell, "detect": _detect_cell, "beamform": _beamform_cell}


def run_cell(ctx, sweep_index, trial, timing=False, capture=False):
    cfg = ctx.cfg
    value = ctx.sweep_values[sweep_index]
    sid = stream_id(sweep_index, trial)
    rng = trial_stream(cfg.seed, cfg.scenario_id, sweep_index, trial)
    try:
        rows, captures = TASK_CELLS[cfg.task](ctx, value, rng)
    except Exception as exc:
        rows = [(alg, "error", math.nan, exc) for alg in algorithms(cfg)]
        captures = {}
    records, errors = [], []
    for alg, metric, val, extra in rows:
        records.append(TrialRecord(cfg.scenario_id, alg, ctx.sweep_name, value, trial, metric, float(val),
                                   cfg.seed, sid))
        if metric == "error":
            errors.append(f"{alg} {ctx.sweep_name}={value} trial={trial}: "
                          + "".join(traceback.format_exception_only(type(extra), extra)).strip())
        elif timing and extra is not None:
            records.append(TrialRecord(cfg.scenario_id, alg, ctx.sweep_name, value, trial, "runtime_s",
                                       float(extra), cfg.seed, sid))
    return records, errors, (captures if capture else {})


_WORKER_CTX = None


def _init_worker(config_dict, shared):
    global _WORKER_CTX
    _WORKER_CTX = Context(parse_config(config_dict), shared)


def _worker(args):
    sweep_index, trial, timing, capture = args
    return (sweep_index, trial), run_cell(_WORKER_CTX, sweep_index, trial, timing, capture)


def default_workers():
    env = os.environ.get("UMSIM_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def run_trials(config, workers=1, timing=False, capture=False):
    """Run every (sweep point, trial) cell of ``config`` and return a :class:`RunResult`.

    ``timing`` adds ``runtime_s`` records, which are not reproducible and so
    break byte-identity across runs. ``capture`` keeps the raw channel
    estimates of the chest task, keyed by algorithm in (sweep, trial) order.
    """
    cfg = config if isinstance(config, SimConfig) else parse_config(config)
    shared = {}
    if cfg.task == "chest" and cfg.params["channel_source"] == "geometric":
        shared["covariance"] = sample_covariance(cfg, geometry_from_config(cfg.geometry))
    _, values = sweep_points(cfg)
    n_trials = 1 if cfg.task == "geometry" else cfg.trials
    cells = [(s, t) for s in range(len(values)) for t in range(n_trials)]
    results = {}
    if workers <= 1 or len(cells) <= 1:
        ctx = Context(cfg, shared)
        for s, t in cells:
            results[(s, t)] = run_cell(ctx, s, t, timing, capture)
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(cfg.to_dict(), shared)) as pool:
            chunk = max(1, len(cells) // (4 * workers))
            for key, res in pool.map(_worker, [(s, t, timing, capture) for s, t in cells], chunksize=chunk):
                results[key] = res
    records, errors, captures = [], [], {}
    for key in sorted(results):
        recs, errs, caps = results[key]
        records.extend(recs)
        errors.extend(errs)
        for alg, est in caps.items():
            captures.setdefault(alg, []).append(est)
    captures = {alg: np.stack(v) for alg, v in captures.items()}
    return RunResult(sort_records(records), len(errors), errors, captures)
