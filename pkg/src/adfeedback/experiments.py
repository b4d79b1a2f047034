"""Experiment sweeps behind the ``simulate`` CLI.

Each experiment takes an :class:`ExperimentSpec` and returns rows (or a
JSON-able dict); writing files is left to the CLI. Independent cells run on a
process pool when ``threads > 1`` and are reassembled in cell order, so the
output does not depend on completion order.
"""

from __future__ import annotations

import json
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .channel import MobilityProfile, generate_trajectory
from .codec import CodecConfig, DifferentialCodec, complex_to_components, components_to_complex, encode_matrix_stream
from .gain import GainConfig
from .link import SCHEMES, SystemConfig, ber_run, csi_for_scheme, scheme_overhead
from .predictor import PredictorConfig
from .quantizer import gaussian_codebook, kmeans_codebook
from .svd import haar_entry_samples, haar_second_moments, svd_bits_per_sample

EXPERIMENTS = ("error_vs_speed", "transient", "ber_sweep", "codebook_table", "haar_moments", "overhead_table")

FIXED_MSE = {2: 0.1175, 3: 0.0345}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    experiment: str
    speeds: tuple = (5, 10, 15, 20, 25, 30, 35, 40)
    snr_db: tuple = (10, 15, 20)
    schemes: tuple = SCHEMES
    modes: tuple = ("rls", "lls")
    seeds: tuple = (1,)
    n_samples: int = 6000
    warmup: int = 1000
    realizations: int = 200
    dims: tuple = (4, 8)
    antennas: tuple = (2, 3, 4, 8)
    n_draws: int = 100_000
    sample_rate: float = 200.0
    carrier_freq: float = 2.5e9
    system: SystemConfig = field(default_factory=SystemConfig)
    codec: CodecConfig = field(default_factory=CodecConfig)
    output: str = ""

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        for name in ("speeds", "snr_db", "schemes", "modes", "seeds", "antennas"):
            if len(getattr(self, name)) == 0:
                raise ConfigError(f"{name} must not be empty")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ConfigError(f"unknown scheme {s!r}")
        statistical = ("error_vs_speed", "transient", "ber_sweep")
        if self.experiment in statistical and self.n_samples < 1000 and self.experiment != "transient":
            raise ConfigError("n_samples must be at least 1000 for statistical experiments")
        if self.warmup >= self.n_samples and self.experiment in ("error_vs_speed", "ber_sweep"):
            raise ConfigError("warmup must be shorter than n_samples")

    def profile(self, speed):
        return MobilityProfile(speed, self.carrier_freq, self.sample_rate)


# --- config parsing -------------------------------------------------------

_CODEC_KEYS = {
    "order": ("predictor", "order"), "memory": ("predictor", "memory"),
    "learning_period": ("predictor", "learning_period"), "delta0": ("predictor", "delta0"),
    "psi_form": ("predictor", "psi_form"), "max_pole_radius": ("predictor", "max_pole_radius"),
    "k1": ("gain", "k1"), "k2": ("gain", "k2"), "g0": ("gain", "g0"), "g_min": ("gain", "g_min"),
    "v0": ("gain", "v0"), "error_window": (None, "error_window"),
}
_SYSTEM_KEYS = {"M", "n_rx", "n_streams", "p_max", "snr_db"}


def _line_of(text, key):
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _fail(text, key, msg):
    line = _line_of(text, key)
    where = f"line {line}: " if line else ""
    raise ConfigError(f"{where}{msg}")


def parse_spec(text, experiment=None):
    """Build an :class:`ExperimentSpec` from a JSON document; unknown keys are errors."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise ConfigError("line 1: config must be a JSON object")
    exp = doc.get("experiment", experiment)
    if experiment is not None and exp != experiment:
        _fail(text, "experiment", f"config is for {exp!r}, not {experiment!r}")
    known = {f.name for f in fields(ExperimentSpec)}
    kwargs = {}
    for key, value in doc.items():
        if key not in known:
            _fail(text, key, f"unknown key {key!r}")
        if key == "codec":
            kwargs["codec"] = _parse_codec(text, value)
        elif key == "system":
            kwargs["system"] = _parse_system(text, value)
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    kwargs["experiment"] = exp
    try:
        return ExperimentSpec(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _parse_codec(text, doc):
    if not isinstance(doc, dict):
        _fail(text, "codec", "codec must be an object")
    pred, gain, top = {}, {}, {}
    for key, value in doc.items():
        if key not in _CODEC_KEYS:
            _fail(text, key, f"unknown codec key {key!r}")
        group, name = _CODEC_KEYS[key]
        {"predictor": pred, "gain": gain, None: top}[group][name] = value
    try:
        return CodecConfig(PredictorConfig(**pred), GainConfig(**gain), **top)
    except (TypeError, ValueError) as exc:
        _fail(text, "codec", f"bad codec settings: {exc}")


def _parse_system(text, doc):
    if not isinstance(doc, dict):
        _fail(text, "system", "system must be an object")
    for key in doc:
        if key not in _SYSTEM_KEYS:
            _fail(text, key, f"unknown system key {key!r}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()}
    try:
        return SystemConfig(**kw)
    except (TypeError, ValueError) as exc:
        _fail(text, "system", f"bad system settings: {exc}")


def load_spec(path, experiment=None):
    with open(path) as fh:
        return parse_spec(fh.read(), experiment)


def with_seed(spec, seed):
    """Replace the seed list by a single base seed (CLI ``--seed``)."""
    return replace(spec, seeds=(int(seed),))


# --- helpers --------------------------------------------------------------

def cell_seed(base, *keys):
    """Independent, reproducible integer seed for a sweep cell."""
    ints = [int(base)] + [int(round(k * 1000)) for k in keys]
    return int(np.random.SeedSequence(ints).generate_state(1)[0])


def _map(fn, cells, threads):
    if threads and threads > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, cells))
    return [fn(c) for c in cells]


def wiener_prediction_error(profile, order=2, power=1.0):
    """Ideal one-step prediction error power from the J0 autocovariance."""
    r = np.array([power * profile.correlation(k) for k in range(order + 1)])
    phi = np.array([[r[abs(i - j)] for j in range(order)] for i in range(order)])
    psi = r[1:order + 1]
    # lstsq keeps the frozen-channel case (singular phi) well defined
    return float(r[0] - psi @ np.linalg.lstsq(phi, psi, rcond=None)[0])


def wiener_floor(profile, order=2):
    """Error variance of an ideal predictor followed by a 2-bit Gaussian quantizer."""
    return FIXED_MSE[2] * wiener_prediction_error(profile, order)


def fmt(x):
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


# --- error vs speed -------------------------------------------------------

def _speed_cell(args):
    spec, speed, mode, seed = args
    traj = generate_trajectory(cell_seed(seed, speed), spec.dims, spec.profile(speed), spec.n_samples)
    fb = encode_matrix_stream(traj, spec.codec.with_mode(mode))
    return float(fb.error[spec.warmup:].mean()), float(np.mean(fb.gain[spec.warmup:]))


def run_error_vs_speed(spec, threads=1):
    cells = [(spec, sp, mode, seed) for sp in spec.speeds for mode in spec.modes for seed in spec.seeds]
    res = _map(_speed_cell, cells, threads)
    rows = []
    i = 0
    order = spec.codec.predictor.order
    for sp in spec.speeds:
        prof = spec.profile(sp)
        for mode in spec.modes:
            chunk = res[i:i + len(spec.seeds)]
            i += len(spec.seeds)
            s2e = float(np.mean([c[0] for c in chunk]))
            gain = float(np.mean([c[1] for c in chunk]))
            rows.append({
                "speed_kmh": sp, "doppler_hz": prof.doppler, "lag1_correlation": prof.correlation(1),
                "mode": mode, "sigma2_e": s2e, "sigma2_e_fixed2": FIXED_MSE[2],
                "sigma2_e_fixed3": FIXED_MSE[3], "sigma2_e_wiener": wiener_floor(prof, order),
                "mean_gain": gain, "gain_over_sigma2_e": gain / s2e,
            })
    return rows


# --- transient ------------------------------------------------------------

def transient_curve(spec, speed, mode, seed):
    """Per-iteration mean |h - h_hat|^2 over all entries of all realizations."""
    n = spec.n_samples
    chans = [generate_trajectory(cell_seed(seed, speed, r), spec.dims, spec.profile(speed), n).samples
             for r in range(spec.realizations)]
    h = np.concatenate([c.reshape(n, -1) for c in chans], axis=1)[:, :, None]
    comps = complex_to_components(h)
    codec = DifferentialCodec(spec.codec.with_mode(mode), comps.shape[1])
    err = np.empty(n)
    for i in range(n):
        codec.encode(comps[i])
        rec = components_to_complex(codec.last_reconstruction, (h.shape[1], 1))
        err[i] = np.mean(np.abs(h[i] - rec) ** 2)
    return err


def settling_iteration(curve, steady, tol=0.25, horizon=None):
    """First iteration from which the curve stays within ``tol`` of ``steady``."""
    horizon = len(curve) if horizon is None else horizon
    outside = np.flatnonzero(np.abs(curve[:horizon] - steady) > tol * steady)
    return int(outside[-1] + 1) if outside.size else 0


def _transient_cell(args):
    spec, speed, mode, seed = args
    return transient_curve(spec, speed, mode, seed)


def run_transient(spec, threads=1):
    """Rows of per-iteration error for each mode, plus a settling summary."""
    speed = spec.speeds[0]
    seed = spec.seeds[0]
    curves = _map(_transient_cell, [(spec, speed, m, seed) for m in spec.modes], threads)
    tail = max(1, spec.n_samples // 3)
    summary = {"speed_kmh": speed, "realizations": spec.realizations, "tolerance": 0.25, "modes": {}}
    for mode, c in zip(spec.modes, curves):
        steady = float(c[-tail:].mean())
        summary["modes"][mode] = {
            "steady_sigma2_e": steady,
            "settling_iteration": settling_iteration(c, steady, 0.25, len(c) - tail),
            "initial_sigma2_e": float(c[0]),
        }
    rows = [dict({"iteration": i}, **{f"sigma2_e_{m}": float(c[i]) for m, c in zip(spec.modes, curves)})
            for i in range(spec.n_samples)]
    return rows, summary


# --- BER sweep ------------------------------------------------------------

def _ber_cell(args):
    spec, speed, scheme, seed = args
    traj = generate_trajectory(cell_seed(seed, speed), (spec.system.M, spec.system.N),
                               spec.profile(speed), spec.n_samples)
    csi = csi_for_scheme(traj, scheme, spec.system, spec.codec, spec.warmup)
    pts = ber_run(traj, scheme, spec.system, cell_seed(seed, speed, SCHEMES.index(scheme)),
                  spec.codec, spec.warmup, csi=csi)
    return csi.sigma2_e, pts


def run_ber_sweep(spec, threads=1):
    cells = [(spec, sp, sch, seed) for sp in spec.speeds for sch in spec.schemes for seed in spec.seeds]
    res = _map(_ber_cell, cells, threads)
    rows = []
    for (_, sp, sch, seed), (s2e, pts) in zip(cells, res):
        rate = scheme_overhead(sch, spec.system, spec.sample_rate)
        for p in pts:
            rows.append({"scheme": sch, "speed_kmh": sp, "seed": seed, "snr_db": p.snr_db, "ber": p.ber,
                         "ci_halfwidth": p.ci_halfwidth, "n_bits": p.n_bits, "bits_per_sec": rate,
                         "sigma2_e": s2e})
    return rows


# --- tables ---------------------------------------------------------------

def run_codebook_table(spec, threads=1):
    seed = spec.seeds[0]
    out = {"n_k": 2, "n_draws": spec.n_draws, "codebooks": {}}
    for m in spec.antennas:
        samples = haar_entry_samples(m, 2, spec.n_draws, cell_seed(seed, m))
        cb = kmeans_codebook(samples, 4, seed=seed, max_iter=2000)
        out["codebooks"][str(m)] = [round(float(v), 6) for v in cb.levels]
    out["codebooks"]["gaussian"] = [round(float(v), 6) for v in gaussian_codebook(2).levels]
    return out


def run_haar_moments(spec, threads=1):
    seed = spec.seeds[0]
    out = {"n_draws": spec.n_draws, "moments": {}}
    for m in spec.antennas:
        mom = haar_second_moments(m, spec.n_draws, cell_seed(seed, m))
        out["moments"][str(m)] = {
            "target": 1.0 / m, "mean": float(mom.mean()), "min": float(mom.min()), "max": float(mom.max()),
            "max_rel_dev": float(np.max(np.abs(mom * m - 1))),
        }
    return out


def run_overhead_table(spec, threads=1):
    sysc = spec.system
    fs = spec.sample_rate
    rates = {s: scheme_overhead(s, sysc, fs) for s in spec.schemes}
    out = {"M": sysc.M, "N": sysc.N, "L": sysc.L, "sample_rate": fs, "bits_per_sec": rates,
           "svd_bits_per_sample": svd_bits_per_sample(sysc.M, sysc.layout)}
    if "fixed3" in rates and "adaptive_channel" in rates:
        out["saving_adaptive_vs_fixed3"] = rates["fixed3"] - rates["adaptive_channel"]
    return out


RUNNERS = {
    "error_vs_speed": run_error_vs_speed,
    "transient": run_transient,
    "ber_sweep": run_ber_sweep,
    "codebook_table": run_codebook_table,
    "haar_moments": run_haar_moments,
    "overhead_table": run_overhead_table,
}


def rows_to_csv(rows):
    if not rows:
        return ""
    cols = list(rows[0])
    lines = [",".join(cols)]
    lines += [",".join(fmt(r[c]) for c in cols) for r in rows]
    return "\n".join(lines) + "\n"


def is_finite_rows(rows):
    return all(math.isfinite(v) for r in rows for v in r.values() if isinstance(v, float))
