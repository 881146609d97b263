"""Strict JSON scenario configs with every default materialised.

A config is a JSON object with top-level keys ``scenario_id``, ``task``,
``seed``, ``trials``, ``geometry``, ``channel`` and one block named after the
task. Unknown keys anywhere raise :class:`ConfigError` naming the dotted key.
"""
import copy
import json
import numbers
from dataclasses import dataclass, field
from pathlib import Path

from .exceptions import ConfigError

TASKS = ("geometry", "chest", "detect", "beamform")
CHEST_ALGORITHMS = ("ls", "lmmse", "oamp-gaussian", "oamp-bg", "oamp-gm")
DETECTORS = ("zf", "lmmse", "amp", "oamp", "ep", "ml")
SCHEMES = ("mrt", "zf", "wmmse")

GEOMETRY_DEFAULTS = {
    "carrier_frequency_hz": 300e9,
    "wavelength_m": None,
    "ae_spacing_m": None,
    "sa_spacing_factor": 8.0,
    "sa_grid": [2, 2],
    "ae_grid": [8, 8],
    "spacing_convention": "pitch",
}

CHANNEL_DEFAULTS = {
    "num_paths": 5,
    "k_factor_db": 10.0,
    "near_fraction": None,
    "distance_range_m": [1.0, 100.0],
    "user_distance_m": None,
    "visibility_prob": 1.0,
    "subcarriers": {"bandwidth_hz": 0.0, "count": 1},
    "absorption_table": None,
}

TASK_DEFAULTS = {
    "chest": {
        "algorithms": ["ls", "lmmse", "oamp-gaussian"],
        "channel_source": "prior",
        "prior": {"family": "gaussian", "correlation": 0.0, "variance": 1.0},
        "ratio": 0.3,
        "structure": "phase_shifter",
        "snr_grid": [0.0, 5.0, 10.0, 15.0, 20.0],
        "max_iter": 50,
        "tol": 1e-6,
        "damping": 0.7,
        "covariance_samples": 2000,
    },
    "detect": {
        "detectors": ["zf", "lmmse", "amp", "oamp", "ep"],
        "constellation": "qpsk",
        "n_rx": 32,
        "n_tx": 24,
        "channel_model": "iid",
        "condition_number": 100.0,
        "snr_grid": [4.0, 6.0, 8.0, 10.0, 12.0],
        "blocks_per_trial": 100,
        "max_iter": 30,
        "ep_damping": 0.9,
        "ep_max_iter": 20,
    },
    "beamform": {
        "schemes": ["mrt", "zf", "wmmse"],
        "k_users": [8, 16, 32],
        "placement": "near",
        "power_dbm": 10.0,
        "noise_dbm": -60.0,
        "power_unit_assumed": "dBm",
        "channel_gain_db": -70.0,
        "max_iter": 200,
        "tol": 1e-6,
        "restarts": 3,
    },
}


def _fail(key, msg):
    raise ConfigError(msg, key)


def _real(key, v, lo=None, hi=None, strict_lo=False, allow_none=False):
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, numbers.Real):
        _fail(key, f"expected a number, got {v!r}")
    v = float(v)
    if v != v or v in (float("inf"), float("-inf")):
        _fail(key, "must be finite")
    if lo is not None and (v < lo or (strict_lo and v == lo)):
        _fail(key, f"must be {'>' if strict_lo else '>='} {lo}, got {v}")
    if hi is not None and v > hi:
        _fail(key, f"must be <= {hi}, got {v}")
    return v


def _int(key, v, lo=None, hi=None):
    if isinstance(v, bool) or not isinstance(v, numbers.Integral):
        _fail(key, f"expected an integer, got {v!r}")
    v = int(v)
    if lo is not None and v < lo:
        _fail(key, f"must be >= {lo}, got {v}")
    if hi is not None and v > hi:
        _fail(key, f"must be <= {hi}, got {v}")
    return v


def _choice(key, v, options):
    if v not in options:
        _fail(key, f"must be one of {list(options)}, got {v!r}")
    return v


def _list(key, v, item, nonempty=True):
    if not isinstance(v, list) or (nonempty and not v):
        _fail(key, "expected a non-empty list")
    return [item(f"{key}[{i}]", x) for i, x in enumerate(v)]


def _merge(key, given, defaults, nested=()):
    if not isinstance(given, dict):
        _fail(key, "expected an object")
    for k in given:
        if k not in defaults:
            _fail(f"{key}.{k}" if key else k, "unknown key")
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if k in nested and isinstance(defaults[k], dict):
            out[k] = _merge(f"{key}.{k}", v, defaults[k])
        else:
            out[k] = copy.deepcopy(v)
    return out


def _pair(key, v, item):
    if not isinstance(v, list) or len(v) != 2:
        _fail(key, "expected a two-element list")
    return [item(f"{key}[0]", v[0]), item(f"{key}[1]", v[1])]


def _validate_geometry(g):
    k = "geometry"
    g["carrier_frequency_hz"] = _real(f"{k}.carrier_frequency_hz", g["carrier_frequency_hz"], 0, strict_lo=True)
    g["wavelength_m"] = _real(f"{k}.wavelength_m", g["wavelength_m"], 0, strict_lo=True, allow_none=True)
    g["ae_spacing_m"] = _real(f"{k}.ae_spacing_m", g["ae_spacing_m"], 0, strict_lo=True, allow_none=True)
    g["sa_spacing_factor"] = _real(f"{k}.sa_spacing_factor", g["sa_spacing_factor"], 1.0)
    pos = lambda key, v: _int(key, v, 1)
    g["sa_grid"] = _pair(f"{k}.sa_grid", g["sa_grid"], pos)
    g["ae_grid"] = _pair(f"{k}.ae_grid", g["ae_grid"], pos)
    _choice(f"{k}.spacing_convention", g["spacing_convention"], ("pitch", "gap"))
    return g


def _validate_channel(c):
    k = "channel"
    c["num_paths"] = _int(f"{k}.num_paths", c["num_paths"], 1)
    c["k_factor_db"] = _real(f"{k}.k_factor_db", c["k_factor_db"])
    c["near_fraction"] = _real(f"{k}.near_fraction", c["near_fraction"], 0, 1, allow_none=True)
    d = _pair(f"{k}.distance_range_m", c["distance_range_m"], lambda key, v: _real(key, v, 0, strict_lo=True))
    if not d[1] > d[0]:
        _fail(f"{k}.distance_range_m", "upper bound must exceed lower bound")
    c["distance_range_m"] = d
    c["user_distance_m"] = _real(f"{k}.user_distance_m", c["user_distance_m"], 0, strict_lo=True, allow_none=True)
    c["visibility_prob"] = _real(f"{k}.visibility_prob", c["visibility_prob"], 0, 1, strict_lo=True)
    s = c["subcarriers"]
    s["bandwidth_hz"] = _real(f"{k}.subcarriers.bandwidth_hz", s["bandwidth_hz"], 0)
    s["count"] = _int(f"{k}.subcarriers.count", s["count"], 1)
    if c["absorption_table"] is not None and not isinstance(c["absorption_table"], str):
        _fail(f"{k}.absorption_table", "expected a file path or null")
    return c


def _validate_prior(key, p):
    if not isinstance(p, dict) or "family" not in p:
        _fail(key, "expected an object with a 'family'")
    fam = _choice(f"{key}.family", p["family"], ("gaussian", "bernoulli_gaussian", "gaussian_mixture"))
    allowed = {
        "gaussian": {"family", "correlation", "variance"},
        "bernoulli_gaussian": {"family", "sparsity", "variance"},
        "gaussian_mixture": {"family", "weights", "variances", "means"},
    }[fam]
    for x in p:
        if x not in allowed:
            _fail(f"{key}.{x}", "unknown key")
    if fam == "gaussian":
        p.setdefault("correlation", 0.0)
        p.setdefault("variance", 1.0)
        p["correlation"] = _real(f"{key}.correlation", p["correlation"], 0, 0.999999)
        p["variance"] = _real(f"{key}.variance", p["variance"], 0, strict_lo=True)
    elif fam == "bernoulli_gaussian":
        p.setdefault("sparsity", 0.1)
        p.setdefault("variance", 10.0)
        p["sparsity"] = _real(f"{key}.sparsity", p["sparsity"], 0, 1, strict_lo=True)
        p["variance"] = _real(f"{key}.variance", p["variance"], 0, strict_lo=True)
    else:
        if "weights" not in p or "variances" not in p:
            _fail(key, "gaussian_mixture needs 'weights' and 'variances'")
        p["weights"] = _list(f"{key}.weights", p["weights"], lambda k, v: _real(k, v, 0, strict_lo=True))
        p["variances"] = _list(f"{key}.variances", p["variances"], lambda k, v: _real(k, v, 0, strict_lo=True))
        if len(p["weights"]) != len(p["variances"]):
            _fail(f"{key}.variances", "length must match weights")
        if abs(sum(p["weights"]) - 1.0) > 1e-9:
            _fail(f"{key}.weights", "must sum to 1")
        p.setdefault("means", [0.0] * len(p["weights"]))
        p["means"] = _list(f"{key}.means", p["means"], lambda k, v: _real(k, v))
        if len(p["means"]) != len(p["weights"]):
            _fail(f"{key}.means", "length must match weights")
    return p


def _validate_task(task, t):
    k = task
    snr = lambda key, v: _real(key, v, -100, 100)
    if task == "chest":
        t["algorithms"] = _list(f"{k}.algorithms", t["algorithms"], lambda key, v: _choice(key, v, CHEST_ALGORITHMS))
        _choice(f"{k}.channel_source", t["channel_source"], ("prior", "geometric"))
        t["prior"] = _validate_prior(f"{k}.prior", t["prior"])
        t["ratio"] = _real(f"{k}.ratio", t["ratio"], 0, 1, strict_lo=True)
        _choice(f"{k}.structure", t["structure"], ("phase_shifter", "gaussian", "identity"))
        t["snr_grid"] = _list(f"{k}.snr_grid", t["snr_grid"], snr)
        t["max_iter"] = _int(f"{k}.max_iter", t["max_iter"], 1)
        t["tol"] = _real(f"{k}.tol", t["tol"], 0)
        t["damping"] = _real(f"{k}.damping", t["damping"], 0, 1, strict_lo=True)
        t["covariance_samples"] = _int(f"{k}.covariance_samples", t["covariance_samples"], 2)
    elif task == "detect":
        t["detectors"] = _list(f"{k}.detectors", t["detectors"], lambda key, v: _choice(key, v, DETECTORS))
        _choice(f"{k}.constellation", t["constellation"], ("qpsk", "qam16"))
        t["n_rx"] = _int(f"{k}.n_rx", t["n_rx"], 1)
        t["n_tx"] = _int(f"{k}.n_tx", t["n_tx"], 1)
        _choice(f"{k}.channel_model", t["channel_model"], ("iid", "ill_conditioned"))
        t["condition_number"] = _real(f"{k}.condition_number", t["condition_number"], 1)
        t["snr_grid"] = _list(f"{k}.snr_grid", t["snr_grid"], snr)
        t["blocks_per_trial"] = _int(f"{k}.blocks_per_trial", t["blocks_per_trial"], 1)
        t["max_iter"] = _int(f"{k}.max_iter", t["max_iter"], 1)
        t["ep_damping"] = _real(f"{k}.ep_damping", t["ep_damping"], 0, 1, strict_lo=True)
        t["ep_max_iter"] = _int(f"{k}.ep_max_iter", t["ep_max_iter"], 1)
    elif task == "beamform":
        t["schemes"] = _list(f"{k}.schemes", t["schemes"], lambda key, v: _choice(key, v, SCHEMES))
        t["k_users"] = _list(f"{k}.k_users", t["k_users"], lambda key, v: _int(key, v, 1))
        _choice(f"{k}.placement", t["placement"], ("near", "far", "hybrid"))
        t["power_dbm"] = _real(f"{k}.power_dbm", t["power_dbm"])
        t["noise_dbm"] = _real(f"{k}.noise_dbm", t["noise_dbm"])
        _choice(f"{k}.power_unit_assumed", t["power_unit_assumed"], ("dBm", "dBW"))
        t["channel_gain_db"] = _real(f"{k}.channel_gain_db", t["channel_gain_db"])
        t["max_iter"] = _int(f"{k}.max_iter", t["max_iter"], 1)
        t["tol"] = _real(f"{k}.tol", t["tol"], 0)
        t["restarts"] = _int(f"{k}.restarts", t["restarts"], 1)
    return t


@dataclass
class SimConfig:
    task: str
    seed: int
    scenario_id: str = "default"
    trials: int = 10
    geometry: dict = field(default_factory=lambda: copy.deepcopy(GEOMETRY_DEFAULTS))
    channel: dict = field(default_factory=lambda: copy.deepcopy(CHANNEL_DEFAULTS))
    params: dict = field(default_factory=dict)

    def to_dict(self):
        d = {
            "scenario_id": self.scenario_id,
            "task": self.task,
            "seed": self.seed,
            "trials": self.trials,
            "geometry": copy.deepcopy(self.geometry),
            "channel": copy.deepcopy(self.channel),
        }
        if self.task != "geometry":  # the geometry task has no block of its own
            d[self.task] = copy.deepcopy(self.params)
        return d

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def replace(self, **changes):
        """Copy with top-level fields changed and re-validated."""
        d = self.to_dict()
        d.update(changes)
        return parse_config(d)


def parse_config(obj):
    """Validate a mapping and return the effective :class:`SimConfig`."""
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object", None)
    if "task" not in obj:
        _fail("task", "required")
    task = _choice("task", obj["task"], TASKS)
    allowed = {"scenario_id", "task", "seed", "trials", "geometry", "channel", task}
    for k in obj:
        if k not in allowed:
            _fail(k, "unknown key")
    if "seed" not in obj:
        _fail("seed", "required")
    seed = _int("seed", obj["seed"], 0, 2**64 - 1)
    trials = _int("trials", obj.get("trials", 10), 1)
    sid = obj.get("scenario_id", f"{task}-default")
    if not isinstance(sid, str) or not sid:
        _fail("scenario_id", "expected a non-empty string")
    geometry = _validate_geometry(_merge("geometry", obj.get("geometry", {}), GEOMETRY_DEFAULTS))
    channel = _validate_channel(_merge("channel", obj.get("channel", {}), CHANNEL_DEFAULTS, nested=("subcarriers",)))
    params = {}
    if task != "geometry":
        params = _validate_task(task, _merge(task, obj.get(task, {}), TASK_DEFAULTS[task]))
    return SimConfig(task, seed, sid, trials, geometry, channel, params)


def loads(text):
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", None) from exc
    return parse_config(obj)


def load_config(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}", None) from exc
    return loads(text)


def load_preset(name):
    """Load one of the presets shipped with the package (``fig7_detect_desk`` ...)."""
    path = Path(__file__).parent / "presets" / f"{name}.json"
    if not path.exists():
        available = sorted(p.stem for p in path.parent.glob("*.json"))
        raise ConfigError(f"unknown preset {name!r}; available: {available}", "preset")
    return load_config(path)
