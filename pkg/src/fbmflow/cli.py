"""Experiment harness: config ingestion, validation, deterministic runs.

A run is a flat INI file (sections per concern) naming one experiment kind.
Every numeric field is validated against the owning module's preconditions
before anything executes, unknown sections or keys are rejected outright,
and all violations are reported together.  Outputs are UTF-8 CSVs with
`#`-comment metadata plus a `manifest.txt` that echoes the full config, the
effective seed, library versions, and the wall time.  Data files are
byte-identical across reruns of the same (config, seed); the manifest is
the one file that is not, since it records the wall time.
"""
from __future__ import annotations

import argparse
import configparser
import math
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import analysis
from . import continuity as ceq
from . import fbm
from . import flow
from . import fraccalc
from . import transport as tpt
from .drifts import DriftField, MollifiedFamily, drift_registry, make_drift
from .grids import TimeGrid
from .rng import derive_seed, rng_for
from .version import __version__

KINDS = ("fbm-gen", "ode-solve", "uniqueness", "moment", "tail", "girsanov",
         "transport", "continuity", "shuffle", "malliavin-norm")

_GENERATORS = {"circulant": fbm.circulant_fbm, "cholesky": fbm.cholesky_fbm,
               "volterra": fbm.volterra_fbm}


class ConfigError(ValueError):
    """Carries every violated field, not just the first."""

    def __init__(self, errors):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


def _fmt_value(v) -> str:
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seed: int
    out: str
    drift: DriftField | None
    values: dict                       # section -> {key: parsed value}
    raw: dict = field(default_factory=dict)   # section -> {key: raw string}


# --- field parsers -----------------------------------------------------------


def _p_int(s):
    return int(s)


def _p_float(s):
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("not finite")
    return v


def _p_str(s):
    return s.strip()


def _p_bool(s):
    v = s.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ValueError("not a boolean")


def _p_vector(s):
    return np.array([_p_float(tok) for tok in s.split(",")])


def _p_floats(s):
    if ":" in s:
        lo, hi, count = s.split(":")
        count = int(count)
        if count < 2:
            raise ValueError("ladder needs at least 2 points")
        return np.linspace(_p_float(lo), _p_float(hi), count)
    return np.array([_p_float(tok) for tok in s.split(",")])


def _p_ints(s):
    return [int(tok) for tok in s.split(",")]


def _p_matrix(s):
    rows = [_p_vector(r) for r in s.split(";")]
    if any(r.size != rows[0].size for r in rows):
        raise ValueError("ragged rows")
    return np.vstack(rows)


def _p_pairs(s):
    pairs = []
    for item in s.split(";"):
        a, b = item.split(":")
        pairs.append((_p_vector(a), _p_vector(b)))
    return pairs


@dataclass(frozen=True)
class Field:
    parse: callable
    constraint: str
    check: callable = None
    required: bool = False
    default: object = None


def _pos(v):
    return (np.asarray(v) > 0).all()


def _nonneg(v):
    return (np.asarray(v) >= 0).all()


_H_FIELD = Field(_p_float, "must lie in (0, 1/2)", lambda v: 0.0 < v < 0.5,
                 required=True)

_GRID = {
    "n_steps": Field(_p_int, "must be an integer >= 1", lambda v: v >= 1,
                     required=True),
    "horizon": Field(_p_float, "must be > 0", _pos, default=1.0),
}

_DRIFT_PARAMS = {
    "zero": {"dim": Field(_p_int, "must be an integer >= 1",
                          lambda v: v >= 1, default=1)},
    "constant": {"c": Field(_p_vector, "comma-separated finite reals",
                            required=True)},
    "linear": {"A": Field(_p_matrix, "semicolon-separated matrix rows",
                          lambda v: v.shape[0] == v.shape[1], required=True),
               "radius": Field(_p_float, "must be > 0", _pos, default=10.0)},
    "sign": {"amp": Field(_p_float, "must be > 0", _pos, default=1.0)},
    "indicator": {"a": Field(_p_float, "finite real", default=0.0),
                  "b": Field(_p_float, "finite real", default=1.0),
                  "amp": Field(_p_float, "must be > 0", _pos, default=1.0)},
    "bump": {"amp": Field(_p_float, "must be > 0", _pos, default=1.0),
             "center": Field(_p_vector, "comma-separated finite reals",
                             default=np.array([0.0])),
             "width": Field(_p_float, "must be > 0", _pos, default=1.0)},
    "checkerboard": {"amp": Field(_p_float, "must be > 0", _pos, default=1.0),
                     "cell": Field(_p_float, "must be > 0", _pos, default=0.5),
                     "period": Field(_p_float, "must be > 0", _pos,
                                     default=0.25)},
}


def _kind_schema(kind: str) -> dict:
    """Section -> {key: Field} for everything except [drift] subtleties."""
    noise_h = {"H": _H_FIELD}
    schema = {"experiment": {
        "kind": Field(_p_str, f"must be one of {', '.join(KINDS)}",
                      lambda v: v in KINDS, required=True),
        "seed": Field(_p_int, "must be an integer >= 0", _nonneg),
        "out": Field(_p_str, "directory path"),
    }}
    if kind == "fbm-gen":
        schema["noise"] = {
            "H": Field(_p_float, "must lie in (0, 1/2)",
                       lambda v: 0.0 < v < 0.5),
            "hurst_seq": Field(_p_vector,
                               "strictly decreasing values in (0, 1/2)",
                               lambda v: (v > 0).all() and (v < 0.5).all()
                               and (np.diff(v) < 0).all()),
            "weights": Field(_p_vector, "finite reals, sum |w| in (0, inf)",
                             lambda v: 0.0 < np.abs(v).sum() < np.inf),
            "generator": Field(_p_str, "one of circulant, cholesky, volterra",
                               lambda v: v in _GENERATORS,
                               default="circulant"),
        }
        schema["grid"] = dict(_GRID)
        schema["fbm-gen"] = {
            "n_paths": Field(_p_int, "must be an integer >= 1",
                             lambda v: v >= 1, default=1),
            "d": Field(_p_int, "must be an integer >= 1",
                       lambda v: v >= 1, default=1),
        }
    elif kind == "ode-solve":
        schema["noise"] = {"H": _H_FIELD,
                           "generator": Field(_p_str,
                                              "one of circulant, cholesky, volterra",
                                              lambda v: v in _GENERATORS,
                                              default="circulant")}
        schema["grid"] = dict(_GRID)
        schema["ode-solve"] = {
            "x0": Field(_p_vector, "comma-separated finite reals",
                        required=True),
        }
    elif kind == "uniqueness":
        schema["noise"] = {"H": _H_FIELD}
        schema["grid"] = dict(_GRID)
        schema["uniqueness"] = {
            "N": Field(_p_int, "must be an integer >= 1", lambda v: v >= 1,
                       required=True),
            "tol": Field(_p_float, "must be > 0", _pos, required=True),
            "x0": Field(_p_vector, "comma-separated finite reals",
                        default=np.array([0.0])),
            "init_pairs": Field(_p_pairs, "pairs like a:b;c:d", required=True),
            "max_iter": Field(_p_int, "must be an integer >= 1",
                              lambda v: v >= 1, default=60),
        }
    elif kind == "moment":
        schema["noise"] = {"H": _H_FIELD}
        schema["grid"] = dict(_GRID)
        schema["moment"] = {
            "p": Field(_p_int, "must be a power of two >= 2",
                       lambda v: v >= 2 and v & (v - 1) == 0, required=True),
            "N": Field(_p_int, "must be an integer >= 1", lambda v: v >= 1,
                       required=True),
            "x0": Field(_p_vector, "comma-separated finite reals",
                        default=np.array([0.0])),
            "dists": Field(_p_floats, "positive reals", _pos, required=True),
        }
    elif kind == "tail":
        schema["noise"] = {"H": _H_FIELD}
        schema["tail"] = {
            "r": Field(_p_float, "must be >= 0", _nonneg, default=0.0),
            "u": Field(_p_float, "must be > 0", _pos, required=True),
            "h1": Field(_p_vector, "comma-separated finite reals",
                        default=np.array([0.0])),
            "h2": Field(_p_vector, "comma-separated finite reals",
                        required=True),
            "lambdas": Field(_p_floats, "positive reals (list or lo:hi:count)",
                             _pos, required=True),
            "N": Field(_p_int, "must be an integer >= 1", lambda v: v >= 1,
                       required=True),
            "n_steps": Field(_p_int, "must be an integer >= 1",
                             lambda v: v >= 1, default=256),
        }
    elif kind == "girsanov":
        schema["noise"] = {"H": _H_FIELD}
        schema["grid"] = dict(_GRID)
        schema["girsanov"] = {
            "N": Field(_p_int, "must be an integer >= 1", lambda v: v >= 1,
                       required=True),
        }
    elif kind == "transport":
        schema["noise"] = {"H": _H_FIELD}
        schema["grid"] = dict(_GRID)
        schema["transport"] = {
            "nx": Field(_p_int, "must be an integer >= 2", lambda v: v >= 2,
                        required=True),
            "x_lo": Field(_p_float, "finite real", required=True),
            "x_hi": Field(_p_float, "finite real", required=True),
            "u0_center": Field(_p_float, "finite real", default=0.0),
            "u0_width": Field(_p_float, "must be > 0", _pos, default=0.5),
            "u0_amp": Field(_p_float, "must be > 0", _pos, default=1.0),
            "backward_steps": Field(_p_int, "must be an integer >= 1",
                                    lambda v: v >= 1, default=512),
            "oracle": Field(_p_bool, "boolean", default=True),
        }
    elif kind == "continuity":
        schema["noise"] = {"H": _H_FIELD}
        schema["grid"] = dict(_GRID)
        schema["continuity"] = {
            "n_cells": Field(_p_int, "must be an integer >= 1",
                             lambda v: v >= 1, required=True),
            "x_lo": Field(_p_float, "finite real", required=True),
            "x_hi": Field(_p_float, "finite real", required=True),
            "density_center": Field(_p_float, "finite real", default=0.0),
            "density_width": Field(_p_float, "must be > 0", _pos, default=0.5),
            "tests": Field(_p_pairs, "center:width pairs like c:w;c:w",
                           required=True),
            "oracle_nx": Field(_p_int, "must be an integer >= 2",
                               lambda v: v >= 2, required=True),
        }
    elif kind == "shuffle":
        schema["shuffle"] = {
            "m": Field(_p_int, "must be an integer >= 0", _nonneg,
                       required=True),
            "n": Field(_p_int, "must be an integer >= 0", _nonneg,
                       required=True),
            "n_cases": Field(_p_int, "must be an integer >= 1",
                             lambda v: v >= 1, default=200),
            "degree": Field(_p_int, "must be an integer in [0, 8]",
                            lambda v: 0 <= v <= 8, default=3),
            "theta": Field(_p_float, "finite real", default=0.0),
            "t": Field(_p_float, "finite real", default=1.0),
        }
    elif kind == "malliavin-norm":
        schema["noise"] = {"H": _H_FIELD}
        schema["grid"] = dict(_GRID)
        schema["malliavin-norm"] = {
            "N": Field(_p_int, "must be an integer in [1, 200]",
                       lambda v: 1 <= v <= 200, required=True),
            "beta": Field(_p_float, "must lie in (0, 1/2)",
                          lambda v: 0.0 < v < 0.5, required=True),
            "n_thetas": Field(_p_int, "must be an integer >= 2",
                              lambda v: v >= 2, required=True),
            "levels": Field(_p_ints, "comma-separated integers >= 0",
                            lambda v: all(x >= 0 for x in v), default=None),
            "x0": Field(_p_vector, "comma-separated finite reals",
                        default=np.array([0.0])),
        }
    if kind not in ("fbm-gen", "shuffle"):
        schema["drift"] = None      # validated by _build_drift
    return schema


def _parse_section(cp, section, fields, errors, out):
    present = set(cp[section]) if cp.has_section(section) else set()
    for key in sorted(present - set(fields)):
        errors.append(f"[{section}] {key}: unknown key")
    vals = {}
    for key, fld in fields.items():
        if key in present:
            raw = cp[section][key]
            try:
                v = fld.parse(raw)
            except Exception:
                errors.append(f"[{section}] {key}: {fld.constraint}, "
                              f"got {raw!r}")
                continue
            if fld.check is not None and not fld.check(v):
                errors.append(f"[{section}] {key}: {fld.constraint}, "
                              f"got {raw!r}")
                continue
            vals[key] = v
        elif fld.required:
            errors.append(f"[{section}] {key}: required ({fld.constraint})")
        else:
            vals[key] = fld.default
    out[section] = vals


def _build_drift(cp, errors) -> DriftField | None:
    if not cp.has_section("drift"):
        errors.append("[drift] section required for this experiment kind")
        return None
    sec = cp["drift"]
    name = sec.get("name", "").strip()
    registry = drift_registry()
    if name not in registry:
        errors.append(f"[drift] name: must be one of "
                      f"{', '.join(sorted(registry))}, got {name!r}")
        return None
    extra = {"name", "mollify"}
    if name == "sum":
        return _build_sum(cp, errors)
    fields = _DRIFT_PARAMS[name]
    for key in sorted(set(sec) - set(fields) - extra):
        errors.append(f"[drift] {key}: unknown key for drift {name!r}")
    params = {}
    ok = True
    for key, fld in fields.items():
        if key in sec:
            raw = sec[key]
            try:
                v = fld.parse(raw)
            except Exception:
                errors.append(f"[drift] {key}: {fld.constraint}, got {raw!r}")
                ok = False
                continue
            if fld.check is not None and not fld.check(v):
                errors.append(f"[drift] {key}: {fld.constraint}, got {raw!r}")
                ok = False
                continue
            params[key] = v
        elif fld.required:
            errors.append(f"[drift] {key}: required ({fld.constraint})")
            ok = False
    if not ok:
        return None
    try:
        b = make_drift(name, **params)
    except ValueError as exc:
        errors.append(f"[drift] {exc}")
        return None
    return _apply_mollify(b, sec, "drift", errors)


def _apply_mollify(b, sec, label, errors):
    if b is None or "mollify" not in sec:
        return b
    raw = sec["mollify"]
    try:
        level = int(raw)
        if level < 0:
            raise ValueError
    except ValueError:
        errors.append(f"[{label}] mollify: must be an integer >= 0, "
                      f"got {raw!r}")
        return None
    try:
        return MollifiedFamily(b).member(level)
    except ValueError as exc:
        errors.append(f"[{label}] mollify: {exc}")
        return None


def _build_sum(cp, errors):
    sec = cp["drift"]
    for key in sorted(set(sec) - {"name", "mollify", "parts", "coefs"}):
        errors.append(f"[drift] {key}: unknown key for drift 'sum'")
    try:
        n_parts = int(sec.get("parts", ""))
        if n_parts < 2:
            raise ValueError
    except ValueError:
        errors.append("[drift] parts: must be an integer >= 2, "
                      f"got {sec.get('parts')!r}")
        return None
    coefs = None
    if "coefs" in sec:
        try:
            coefs = _p_vector(sec["coefs"])
            if coefs.size != n_parts:
                raise ValueError
        except ValueError:
            errors.append(f"[drift] coefs: must be {n_parts} finite reals, "
                          f"got {sec['coefs']!r}")
            return None
    parts = []
    for k in range(1, n_parts + 1):
        label = f"drift.{k}"
        if not cp.has_section(label):
            errors.append(f"[{label}] section required (part {k} of the sum)")
            parts.append(None)
            continue
        psec = cp[label]
        pname = psec.get("name", "").strip()
        if pname not in _DRIFT_PARAMS:
            errors.append(f"[{label}] name: must be a non-composite registry "
                          f"drift, got {pname!r}")
            parts.append(None)
            continue
        fields = _DRIFT_PARAMS[pname]
        for key in sorted(set(psec) - set(fields) - {"name"}):
            errors.append(f"[{label}] {key}: unknown key for drift {pname!r}")
        params = {}
        bad = False
        for key, fld in fields.items():
            if key in psec:
                raw = psec[key]
                try:
                    v = fld.parse(raw)
                    if fld.check is not None and not fld.check(v):
                        raise ValueError
                except Exception:
                    errors.append(f"[{label}] {key}: {fld.constraint}, "
                                  f"got {raw!r}")
                    bad = True
                    continue
                params[key] = v
            elif fld.required:
                errors.append(f"[{label}] {key}: required ({fld.constraint})")
                bad = True
        if bad:
            parts.append(None)
        else:
            try:
                parts.append(make_drift(pname, **params))
            except ValueError as exc:
                errors.append(f"[{label}] {exc}")
                parts.append(None)
    if any(p is None for p in parts):
        return None
    try:
        b = make_drift("sum", parts=parts, coefs=None if coefs is None
                       else coefs.tolist())
    except ValueError as exc:
        errors.append(f"[drift] {exc}")
        return None
    return _apply_mollify(b, sec, "drift", errors)


def _cross_checks(kind, values, drift, errors, given):
    """Constraints that couple several fields or need the built drift.

    `given` maps each section to the raw keys present in the file, so a key
    that failed its own validation is not double-reported here.
    """
    if kind == "fbm-gen":
        nz = values.get("noise", {})
        present = given.get("noise", set())
        has_h = "H" in present
        has_seq = "hurst_seq" in present or "weights" in present
        if has_h == has_seq:
            errors.append("[noise] exactly one of H or hurst_seq+weights "
                          "must be given")
        if ("hurst_seq" in present) != ("weights" in present):
            errors.append("[noise] hurst_seq and weights must come together")
        if nz.get("hurst_seq") is not None and nz.get("weights") is not None:
            if len(nz["hurst_seq"]) != len(nz["weights"]):
                errors.append("[noise] weights: must match hurst_seq length")
            if nz.get("generator") not in (None, "circulant"):
                errors.append("[noise] generator: superposed paths fix the "
                              "generator; drop this key")
    if kind == "tail" and drift is not None:
        if drift.sup_norm > 1.0 + 1e-12:
            errors.append("[drift] sup norm: must be <= 1 for the tail "
                          f"experiment, got {drift.sup_norm}")
        t = values.get("tail", {})
        if t.get("r") is not None and t.get("u") is not None \
                and not t["r"] < t["u"]:
            errors.append("[tail] u: must exceed r")
        if t.get("h1") is not None and t.get("h2") is not None \
                and t["h1"].size != t["h2"].size:
            errors.append("[tail] h2: must match h1 length")
    if kind == "transport":
        tr = values.get("transport", {})
        if tr.get("x_lo") is not None and tr.get("x_hi") is not None \
                and not tr["x_lo"] < tr["x_hi"]:
            errors.append("[transport] x_hi: must exceed x_lo")
        if drift is not None and drift.dim != 1 and tr.get("oracle", True):
            errors.append("[transport] oracle: the upwind reference is "
                          "one-dimensional; use a d=1 drift or disable it")
        g = values.get("grid", {})
        if drift is not None and None not in (tr.get("x_lo"), tr.get("x_hi"),
                                              tr.get("nx"), g.get("n_steps"),
                                              g.get("horizon")) \
                and tr.get("oracle", True):
            h = (tr["x_hi"] - tr["x_lo"]) / (tr["nx"] - 1)
            cfl = (g["horizon"] / g["n_steps"]) * drift.sup_norm / h
            if cfl > 0.9:
                errors.append(f"[grid] n_steps: CFL number {cfl:.3f} exceeds "
                              "0.9 for the upwind oracle; refine the time "
                              "grid or coarsen space")
    if kind == "continuity":
        co = values.get("continuity", {})
        if co.get("x_lo") is not None and co.get("x_hi") is not None \
                and not co["x_lo"] < co["x_hi"]:
            errors.append("[continuity] x_hi: must exceed x_lo")
        if drift is not None and drift.dim != 1:
            errors.append("[drift] dim: continuity runs compare against a "
                          "one-dimensional oracle")
    if kind == "shuffle":
        sh = values.get("shuffle", {})
        if sh.get("m") is not None and sh.get("n") is not None \
                and sh["m"] + sh["n"] > 8:
            errors.append("[shuffle] m, n: m + n must stay <= 8 for the "
                          "identity check")
        if sh.get("theta") is not None and sh.get("t") is not None \
                and not sh["theta"] < sh["t"]:
            errors.append("[shuffle] t: must exceed theta")
    if kind == "malliavin-norm":
        mv = values.get("malliavin-norm", {})
        g = values.get("grid", {})
        if mv.get("n_thetas") is not None and g.get("n_steps") is not None:
            margin = max(1, g["n_steps"] // 8)
            if (g["n_steps"] - 2 * margin) // max(1, mv["n_thetas"] - 1) < 1:
                errors.append("[malliavin-norm] n_thetas: too many for this "
                              "time grid; increase [grid] n_steps")
        if drift is not None and mv.get("levels") is None \
                and drift.kind != "smooth":
            errors.append("[malliavin-norm] levels: required for a "
                          "non-smooth drift (mollification levels)")


def load_config(path: str, seed_override=None, out_override=None
                ) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="")
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError([f"config file: {exc}"]) from None

    errors = []
    if not cp.has_section("experiment") or "kind" not in cp["experiment"]:
        raise ConfigError(["[experiment] kind: required "
                           f"(one of {', '.join(KINDS)})"])
    kind = cp["experiment"]["kind"].strip()
    if kind not in KINDS:
        raise ConfigError([f"[experiment] kind: must be one of "
                           f"{', '.join(KINDS)}, got {kind!r}"])

    schema = _kind_schema(kind)
    values = {}
    drift = None
    for section, fields in schema.items():
        if fields is None:
            drift = _build_drift(cp, errors)
        else:
            _parse_section(cp, section, fields, errors, values)
    known = set(schema)
    if "drift" in known:
        known |= {s for s in cp.sections() if s.startswith("drift.")}
    for section in cp.sections():
        if section not in known:
            errors.append(f"[{section}] unknown section for kind {kind!r}")

    seed = seed_override
    if seed is None:
        seed = values.get("experiment", {}).get("seed")
    if seed is None:
        errors.append("[experiment] seed: required (or pass --seed)")
    out = out_override or values.get("experiment", {}).get("out")
    if not out:
        errors.append("[experiment] out: required (or pass --out)")

    given = {s: set(cp[s]) for s in cp.sections()}
    _cross_checks(kind, values, drift, errors, given)
    if errors:
        raise ConfigError(errors)

    raw = {s: dict(cp[s]) for s in cp.sections()}
    return ExperimentConfig(kind, int(seed), str(out), drift, values, raw)


# --- experiment handlers ------------------------------------------------------
# Each returns (files, info): files in a deterministic order, info for the
# manifest.  The parallel axis, when one exists, is split over a worker pool;
# every work unit derives its own generator seed, so workers share no RNG
# state and the outputs are independent of scheduling.


def _pool_map(fn, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _run_fbm_gen(cfg, outdir, threads):
    nz = cfg.values["noise"]
    g = cfg.values["grid"]
    fg = cfg.values["fbm-gen"]
    grid = TimeGrid(0.0, g["horizon"], g["n_steps"])
    if nz.get("hurst_seq") is not None:
        spec = fbm.SuperpositionSpec(tuple(nz["hurst_seq"]),
                                     tuple(nz["weights"]))
        gen = lambda s: fbm.superposed_path(spec, fg["d"], grid, s)
    else:
        ctor = _GENERATORS[nz["generator"]]
        gen = lambda s: ctor(nz["H"], fg["d"], grid, s)

    def work(i):
        path = gen(derive_seed(cfg.seed, i))
        name = f"path_{i:04d}.csv"
        with open(outdir / name, "w", encoding="utf-8") as fh:
            fbm.write_path_csv(path, fh)
        return name

    files = _pool_map(work, list(range(fg["n_paths"])), threads)
    return files, {"parallel_axis": "paths"}


def _run_ode_solve(cfg, outdir, threads):
    nz = cfg.values["noise"]
    g = cfg.values["grid"]
    x0 = cfg.values["ode-solve"]["x0"]
    grid = TimeGrid(0.0, g["horizon"], g["n_steps"])
    path = _GENERATORS[nz["generator"]](nz["H"], cfg.drift.dim, grid, cfg.seed)
    if x0.size != cfg.drift.dim:
        raise ValueError(f"x0 has dimension {x0.size}, drift wants "
                         f"{cfg.drift.dim}")
    traj = flow.solve_forward(cfg.drift, x0, 0.0, path)
    with open(outdir / "path.csv", "w", encoding="utf-8") as fh:
        fbm.write_path_csv(path, fh)
    flow.write_trajectory_csv(traj, outdir / "trajectory.csv")
    return ["path.csv", "trajectory.csv"], {"parallel_axis": None}


def _write_report(report, outdir):
    report.write_records_csv(outdir / "records.csv")
    report.write_summary_csv(outdir / "summary.csv")
    return ["records.csv", "summary.csv"]


def _run_uniqueness(cfg, outdir, threads):
    nz, g, u = (cfg.values[k] for k in ("noise", "grid", "uniqueness"))
    rep = analysis.uniqueness_gap(cfg.drift, nz["H"], u["x0"], u["N"],
                                  u["init_pairs"], u["tol"], seed=cfg.seed,
                                  n_steps=g["n_steps"], horizon=g["horizon"],
                                  max_iter=u["max_iter"])
    return _write_report(rep, outdir), {"parallel_axis": None}


def _run_moment(cfg, outdir, threads):
    nz, g, m = (cfg.values[k] for k in ("noise", "grid", "moment"))
    x0 = m["x0"]
    e1 = np.zeros(x0.size)
    e1[0] = 1.0
    pairs = [(x0, x0 + d * e1) for d in m["dists"]]
    rep = analysis.moment_estimate(cfg.drift, nz["H"], pairs, m["p"], m["N"],
                                   seed=cfg.seed, n_steps=g["n_steps"],
                                   horizon=g["horizon"])
    if len(pairs) >= 3:
        slope, (lo, hi) = analysis.holder_fit(rep)
        rep.summary.update({"holder_slope": slope, "holder_ci_lo": lo,
                            "holder_ci_hi": hi})
    return _write_report(rep, outdir), {"parallel_axis": None}


def _run_tail(cfg, outdir, threads):
    nz, t = cfg.values["noise"], cfg.values["tail"]
    rep = analysis.averaging_tail(cfg.drift, t["h1"], t["h2"], nz["H"],
                                  t["r"], t["u"], t["lambdas"], t["N"],
                                  seed=cfg.seed, n_steps=t["n_steps"])
    return _write_report(rep, outdir), {"parallel_axis": None}


def _run_girsanov(cfg, outdir, threads):
    nz, g = cfg.values["noise"], cfg.values["girsanov"]
    gd = cfg.values["grid"]
    grid = TimeGrid(0.0, gd["horizon"], gd["n_steps"])
    d = cfg.drift.dim

    def work(i):
        path = fbm.volterra_fbm(nz["H"], d, grid, derive_seed(cfg.seed, i))
        return fraccalc.girsanov_weight(cfg.drift, path, nz["H"])

    weights = _pool_map(work, list(range(g["N"])), threads)
    w = np.array([x.weight for x in weights])
    records = [{"replicate": i, "seed": derive_seed(cfg.seed, i),
                "weight": float(x.weight), "log_weight": float(x.log_weight)}
               for i, x in enumerate(weights)]
    mean = float(np.mean(w))
    summary = {"mean": mean, "N": g["N"]}
    if w.size >= 30:
        se = float(np.std(w, ddof=1) / math.sqrt(w.size))
        summary["se"] = se
        summary["z"] = (mean - 1.0) / se if se > 0 else 0.0
    params = {"H": nz["H"], "d": d, "T": gd["horizon"], "N": g["N"],
              "seed": cfg.seed, "n_steps": gd["n_steps"],
              "drift": cfg.drift.name}
    rep = analysis.McReport("girsanov", params, records, summary)
    return _write_report(rep, outdir), {"parallel_axis": "replicates"}


def _run_transport(cfg, outdir, threads):
    nz, g, tr = (cfg.values[k] for k in ("noise", "grid", "transport"))
    tgrid = TimeGrid(0.0, g["horizon"], g["n_steps"])
    h = (tr["x_hi"] - tr["x_lo"]) / (tr["nx"] - 1)
    xgrid = tpt.SpaceGrid((tr["x_lo"],), h, (tr["nx"],))
    u0 = tpt.bump_profile(tr["u0_center"], tr["u0_width"], tr["u0_amp"])
    path = fbm.circulant_fbm(nz["H"], cfg.drift.dim, tgrid, cfg.seed)
    sol = tpt.solve_transport(u0, cfg.drift, path, tgrid, xgrid,
                              tr["backward_steps"])
    tpt.write_gridfunction_csv(sol, outdir / "solution.csv")
    files = ["solution.csv"]
    summary = {"sol_min": float(sol.values.min()),
               "sol_max": float(sol.values.max()),
               "u0_min": float(sol.values[0].min()),
               "u0_max": float(sol.values[0].max())}
    if tr["oracle"]:
        b_star = tpt.transformed_drift(cfg.drift, path)
        ref = tpt.upwind_reference(u0, b_star, tgrid, xgrid)
        tpt.write_gridfunction_csv(ref, outdir / "reference.csv")
        files.append("reference.csv")
        num = float(np.abs(sol.values[-1] - ref.values[-1]).sum())
        den = float(np.abs(ref.values[-1]).sum())
        summary["l1_rel"] = num / den if den > 0 else math.inf
        summary["cfl"] = ref.meta["cfl"]
    with open(outdir / "summary.csv", "w", encoding="utf-8") as fh:
        fh.write(f"# experiment=transport\n# version={__version__}\n")
        fh.write("key,value\n")
        for key in sorted(summary):
            fh.write(f"{key},{_fmt_value(summary[key])}\n")
    files.append("summary.csv")
    return files, {"parallel_axis": None}


def _run_continuity(cfg, outdir, threads):
    nz, g, co = (cfg.values[k] for k in ("noise", "grid", "continuity"))
    tgrid = TimeGrid(0.0, g["horizon"], g["n_steps"])
    d = cfg.drift.dim
    path = fbm.circulant_fbm(nz["H"], d, tgrid, cfg.seed)
    density = tpt.bump_profile(co["density_center"], co["density_width"])
    ens = ceq.from_density(density, [co["x_lo"]], [co["x_hi"]],
                           [co["n_cells"]])
    pushed = ceq.push_forward(ens, cfg.drift, path, g["horizon"],
                              g["n_steps"])
    mass_exact = pushed.total_mass == ens.total_mass

    b_star = tpt.transformed_drift(cfg.drift, path)
    h = (co["x_hi"] - co["x_lo"]) / co["oracle_nx"]
    # cell centers; the time grid refines until the CFL guard is clear
    xgrid = tpt.SpaceGrid((co["x_lo"] + 0.5 * h,), h, (co["oracle_nx"],))
    nt = g["n_steps"]
    while g["horizon"] / nt * cfg.drift.sup_norm / h > 0.8:
        nt *= 2
    fv = ceq.fv_reference(density, b_star, TimeGrid(0.0, g["horizon"], nt),
                          xgrid)
    BT = path.values[-1, 0]
    xs = xgrid.points()
    rows = []
    rels = []
    for j, (c, wdt) in enumerate(co["tests"]):
        phi = tpt.bump_profile(c, wdt)
        pf = ceq.test_integral(pushed, phi)
        ref = float(h * ceq.pairwise_sum(fv.values[-1]
                                         * phi(xs + BT)))
        rows.append((j, pf, ref))
        rels.append(abs(pf - ref) / abs(ref) if ref != 0 else math.inf)
    ceq.write_comparison_csv(rows, outdir / "comparison.csv")
    summary = {"mass_bitwise_conserved": mass_exact,
               "total_mass": pushed.total_mass,
               "outflow": fv.meta["outflow"],
               "max_rel_err": max(rels)}
    with open(outdir / "summary.csv", "w", encoding="utf-8") as fh:
        fh.write(f"# experiment=continuity\n# version={__version__}\n")
        fh.write("key,value\n")
        for key in sorted(summary):
            fh.write(f"{key},{_fmt_value(summary[key])}\n")
    return ["comparison.csv", "summary.csv"], {"parallel_axis": None}


def _run_shuffle(cfg, outdir, threads):
    sh = cfg.values["shuffle"]
    m, n = sh["m"], sh["n"]
    rng = rng_for(cfg.seed)
    deg = sh["degree"]
    records = []
    worst = 0.0
    for case in range(sh["n_cases"]):
        fs = [tuple(int(c) for c in rng.integers(-3, 4, deg + 1))
              for _ in range(m)]
        gs = [tuple(int(c) for c in rng.integers(-3, 4, deg + 1))
              for _ in range(n)]
        lhs, rhs, err = analysis.shuffle_identity_check(fs, gs, sh["theta"],
                                                        sh["t"])
        worst = max(worst, err)
        records.append({"case": case, "seed": cfg.seed, "lhs": lhs,
                        "rhs": rhs, "abs_err": err})
    summary = {"max_abs_err": worst, "n_shuffles": math.comb(m + n, m),
               "within_1e-12": worst <= 1e-12}
    params = {"m": m, "n": n, "n_cases": sh["n_cases"], "degree": deg,
              "theta": sh["theta"], "t": sh["t"], "seed": cfg.seed}
    rep = analysis.McReport("shuffle", params, records, summary)
    return _write_report(rep, outdir), {"parallel_axis": None}


def _run_malliavin_norm(cfg, outdir, threads):
    nz, g, mv = (cfg.values[k] for k in ("noise", "grid", "malliavin-norm"))
    n_steps = g["n_steps"]
    grid = TimeGrid(0.0, g["horizon"], n_steps)
    margin = max(1, n_steps // 8)
    step = (n_steps - 2 * margin) // (mv["n_thetas"] - 1)
    idx = margin + step * np.arange(mv["n_thetas"])
    thetas = grid.nodes[idx]
    levels = mv["levels"]
    if levels is None:
        members = [(None, cfg.drift)]
    else:
        fam = MollifiedFamily(cfg.drift)
        members = [(lev, fam.member(lev)) for lev in levels]
    records = []
    base = None
    for lev, b in members:
        fld = analysis.malliavin_field(b, nz["H"], mv["x0"], thetas, mv["N"],
                                       seed=cfg.seed, n_steps=n_steps,
                                       horizon=g["horizon"])
        val, se = analysis.sobolev_slobodeckij_stats(fld, mv["beta"])
        if base is None:
            base = val
        records.append({"level": -1 if lev is None else lev, "seed": cfg.seed,
                        "value": val, "se": se, "ratio_to_first": val / base})
    summary = {"beta": mv["beta"], "n_thetas": mv["n_thetas"],
               "max_ratio": max(r["ratio_to_first"] for r in records)}
    params = {"H": nz["H"], "T": g["horizon"], "N": mv["N"],
              "seed": cfg.seed, "n_steps": n_steps, "drift": cfg.drift.name,
              "levels": "none" if levels is None
              else ",".join(str(x) for x in levels)}
    rep = analysis.McReport("malliavin-norm", params, records, summary)
    return _write_report(rep, outdir), {"parallel_axis": None}


_HANDLERS = {
    "fbm-gen": _run_fbm_gen,
    "ode-solve": _run_ode_solve,
    "uniqueness": _run_uniqueness,
    "moment": _run_moment,
    "tail": _run_tail,
    "girsanov": _run_girsanov,
    "transport": _run_transport,
    "continuity": _run_continuity,
    "shuffle": _run_shuffle,
    "malliavin-norm": _run_malliavin_norm,
}


def _write_manifest(cfg: ExperimentConfig, outdir: Path, files, info,
                    threads, wall):
    with open(outdir / "manifest.txt", "w", encoding="utf-8") as fh:
        fh.write("# run manifest\n")
        fh.write(f"version = {__version__}\n")
        fh.write(f"python = {platform.python_version()}\n")
        fh.write(f"numpy = {np.__version__}\n")
        fh.write(f"scipy = {scipy.__version__}\n")
        fh.write(f"kind = {cfg.kind}\n")
        fh.write(f"seed = {cfg.seed}\n")
        fh.write(f"threads = {threads}\n")
        fh.write(f"parallel_axis = {info.get('parallel_axis')}\n")
        fh.write(f"outputs = {';'.join(files)}\n")
        fh.write(f"wall_time_s = {wall:.3f}\n")
        fh.write("\n# config echo (sufficient to re-run with --seed "
                 f"{cfg.seed})\n")
        for section in sorted(cfg.raw):
            fh.write(f"[{section}]\n")
            for key in sorted(cfg.raw[section]):
                fh.write(f"{key} = {cfg.raw[section][key]}\n")


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> list:
    """Execute one validated config; returns the files written."""
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    start = time.monotonic()
    files, info = _HANDLERS[cfg.kind](cfg, outdir, threads)
    wall = time.monotonic() - start
    _write_manifest(cfg, outdir, files, info, threads, wall)
    return files + ["manifest.txt"]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fbmflow",
        description="deterministic experiment harness for rough-path "
                    "perturbed flows")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--threads", type=int, default=1)
    p_val = sub.add_parser("validate", help="check a config without running")
    p_val.add_argument("--config", required=True)
    sub.add_parser("list-drifts", help="show the drift registry")
    args = parser.parse_args(argv)

    if args.command == "list-drifts":
        for name in sorted(drift_registry()):
            if name == "sum":
                print("sum: parts=<count> coefs=<c1,..>; "
                      "sections [drift.1]..[drift.k]")
                continue
            keys = ", ".join(
                f"{k}={_fmt_default(f.default)}" if not f.required else k
                for k, f in _DRIFT_PARAMS[name].items())
            print(f"{name}: {keys}" if keys else name)
        return 0

    if args.command == "validate":
        try:
            cfg = load_config(args.config)
        except ConfigError as exc:
            for e in exc.errors:
                print(f"error: config: {e}", file=sys.stderr)
            return 2
        print(f"ok: {cfg.kind} config valid")
        return 0

    try:
        cfg = load_config(args.config, seed_override=args.seed,
                          out_override=args.out)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"error: config: {e}", file=sys.stderr)
        return 2
    if args.threads < 1:
        print("error: config: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        files = run_experiment(cfg, threads=args.threads)
    except Exception as exc:
        print(f"error: runtime: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(f"ok: wrote {', '.join(files)} in {cfg.out}")
    return 0


def _fmt_default(v):
    if isinstance(v, np.ndarray):
        return ",".join(repr(float(x)) for x in v)
    return v


if __name__ == "__main__":
    sys.exit(main())
