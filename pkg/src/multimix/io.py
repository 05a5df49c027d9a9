"""Reading and writing datasets, configurations, estimates and traces.

File conventions:

* counts: CSV with header ``y1,...,y{J+1}``, one row per observation;
* covariates: CSV with a header naming the columns (no intercept);
* labels: CSV with header ``label``, labels 1-based;
* estimates and summaries: JSON with explicit 1-based ``(k, j, p)`` indices;
* traces: long-format CSV with columns ``iteration,kind,k,j,p,value``.

Floats are written with ``repr`` so every file round-trips exactly.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
from dataclasses import fields
from pathlib import Path

import numpy as np

from .em import EMConfig
from .exceptions import InvalidInputError
from .mcmc import MCMCConfig, PriorConfig, SamplerTrace, default_alphas
from .model import MixtureParams
from .simulation import SimConfig

TRACE_HEADER = ["iteration", "kind", "k", "j", "p", "value"]

EM_KEYS = {
    "maxIter": ("max_iter", int),
    "emthreshold": ("threshold", float),
    "maxNR": ("max_nr", int),
    "tsplit": ("t_split", int),
    "msplit": ("m_split", int),
    "split": ("split", "bool"),
    "R0": ("r0", float),
}

MCMC_KEYS = {
    "tau": ("tau0", float),
    "nu2": ("nu2", float),
    "mcmc_cycles": ("cycles", int),
    "iter_per_cycle": ("iter_per_cycle", int),
    "nChains": ("n_chains", int),
    "dirPriorAlphas": ("alphas", "vector"),
    "warm_up": ("warm_up", int),
    "checkAR": ("check_ar", int),
    "ar_low": ("ar_low", float),
    "ar_up": ("ar_high", float),
    "burn": ("burn_cycles", int),
    "withRandom": ("with_random_permutation", "bool"),
}

SIM_KEYS = {f.name: f.name for f in fields(SimConfig) if f.name != "seed"}


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


# --------------------------------------------------------------------------
# tabular data
# --------------------------------------------------------------------------


def _read_table(path):
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc}") from exc
    rows = [r for r in rows if r]
    if not rows:
        raise InvalidInputError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    if any(len(r) != len(header) for r in body):
        raise InvalidInputError(f"{path}: ragged rows")
    return header, body


def _write_table(path, header, rows):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def read_counts(path) -> np.ndarray:
    """Count matrix from CSV (header row required)."""
    header, body = _read_table(path)
    try:
        arr = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        raise InvalidInputError(f"{path}: non-numeric count: {exc}") from exc
    if arr.size == 0:
        raise InvalidInputError(f"{path} has no data rows")
    if not np.all(arr == np.round(arr)):
        raise InvalidInputError(f"{path}: counts must be integers")
    return arr.astype(np.int64)


def write_counts(path, y) -> None:
    y = np.asarray(y, dtype=np.int64)
    _write_table(path, [f"y{j + 1}" for j in range(y.shape[1])],
                 [[str(v) for v in row] for row in y])


def read_covariates(path) -> tuple[list[str], np.ndarray]:
    """Covariate names and values (without intercept)."""
    header, body = _read_table(path)
    try:
        arr = np.array([[float(v) for v in r] for r in body], dtype=float)
    except ValueError as exc:
        raise InvalidInputError(f"{path}: non-numeric covariate: {exc}") from exc
    return header, arr.reshape(len(body), len(header))


def write_covariates(path, x, names=None) -> None:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    names = names or [f"x{p + 1}" for p in range(x.shape[1])]
    _write_table(path, names, [[_fmt(v) for v in row] for row in x])


def read_labels(path) -> np.ndarray:
    """1-based labels from file, returned 0-based."""
    header, body = _read_table(path)
    col = header.index("label") if "label" in header else 0
    try:
        lab = np.array([int(r[col]) for r in body], dtype=np.int64)
    except ValueError as exc:
        raise InvalidInputError(f"{path}: labels must be integers") from exc
    if lab.size and lab.min() < 1:
        raise InvalidInputError(f"{path}: labels are 1-based")
    return lab - 1


def write_labels(path, labels, extra: dict | None = None) -> None:
    """Write 0-based ``labels`` as 1-based, with optional extra columns."""
    labels = np.asarray(labels, dtype=np.int64)
    extra = extra or {}
    header = ["observation", "label", *extra]
    cols = [np.asarray(v) for v in extra.values()]
    rows = [[str(i + 1), str(lab + 1), *(_fmt(c[i]) for c in cols)]
            for i, lab in enumerate(labels)]
    _write_table(path, header, rows)


def write_matrix(path, mat, prefix: str) -> None:
    mat = np.asarray(mat, dtype=float)
    _write_table(path, [f"{prefix}{k + 1}" for k in range(mat.shape[1])],
                 [[_fmt(v) for v in row] for row in mat])


def read_matrix(path) -> np.ndarray:
    _, body = _read_table(path)
    return np.array([[float(v) for v in r] for r in body], dtype=float)


def write_json(path, obj) -> None:
    with Path(path).open("w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    try:
        with Path(path).open() as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot read {path}: {exc}") from exc


# --------------------------------------------------------------------------
# estimates
# --------------------------------------------------------------------------


def params_to_dict(params: MixtureParams) -> dict:
    """JSON-ready parameters with explicit 1-based indices."""
    K, J, P = params.beta.shape
    out = {
        "K": K, "J": J, "P": P,
        "pi": [{"k": k + 1, "value": float(params.pi[k])} for k in range(K)],
        "beta": [
            {"k": k + 1, "j": j + 1, "p": p + 1, "value": float(params.beta[k, j, p])}
            for k in range(K) for j in range(J) for p in range(P)
        ],
    }
    if params.theta is not None:
        out["theta"] = [
            {"k": k + 1, "j": j + 1, "value": float(params.theta[k, j])}
            for k in range(K) for j in range(J + 1)
        ]
    return out


def params_from_dict(d: dict) -> MixtureParams:
    try:
        K, J, P = int(d["K"]), int(d["J"]), int(d["P"])
        pi = np.zeros(K)
        for e in d["pi"]:
            pi[e["k"] - 1] = e["value"]
        beta = np.zeros((K, J, P))
        for e in d["beta"]:
            beta[e["k"] - 1, e["j"] - 1, e["p"] - 1] = e["value"]
        theta = None
        if "theta" in d:
            theta = np.zeros((K, J + 1))
            for e in d["theta"]:
                theta[e["k"] - 1, e["j"] - 1] = e["value"]
    except (KeyError, IndexError, TypeError) as exc:
        raise InvalidInputError(f"malformed parameter record: {exc}") from exc
    return MixtureParams(pi, beta, theta)


# --------------------------------------------------------------------------
# traces
# --------------------------------------------------------------------------


def write_trace(path, trace: SamplerTrace, iterations=None) -> None:
    """Long-format trace of weights, coefficients, K0 and log target.

    Indices are 1-based; ``k, j, p`` are blank where they do not apply.
    """
    iterations = trace.cycles if iterations is None else iterations
    T, K = trace.pi.shape
    _, _, J, P = trace.beta.shape
    rows = []
    for t in range(T):
        it = str(int(iterations[t]))
        for k in range(K):
            rows.append([it, "pi", str(k + 1), "", "", _fmt(trace.pi[t, k])])
        for k in range(K):
            for j in range(J):
                for p in range(P):
                    rows.append([it, "beta", str(k + 1), str(j + 1), str(p + 1),
                                 _fmt(trace.beta[t, k, j, p])])
        rows.append([it, "k0", "", "", "", str(int(trace.k0[t]))])
        rows.append([it, "log_target", "", "", "", _fmt(trace.log_target[t])])
    _write_table(path, TRACE_HEADER, rows)


def write_allocations(path, z, iterations) -> None:
    """One row per retained draw: iteration then 1-based z_1..z_n."""
    z = np.asarray(z, dtype=np.int64)
    header = ["iteration", *[f"z{i + 1}" for i in range(z.shape[1])]]
    _write_table(path, header, [[str(int(it)), *map(str, row + 1)]
                                for it, row in zip(iterations, z)])


def read_trace(trace_path, alloc_path) -> SamplerTrace:
    """Rebuild a :class:`SamplerTrace` from the two trace files."""
    header, body = _read_table(trace_path)
    if header != TRACE_HEADER:
        raise InvalidInputError(f"{trace_path}: expected header {TRACE_HEADER}")
    _, zbody = _read_table(alloc_path)
    iterations = np.array([int(r[0]) for r in zbody], dtype=np.int64)
    z = np.array([[int(v) for v in r[1:]] for r in zbody], dtype=np.int64) - 1
    index = {it: t for t, it in enumerate(iterations)}
    T = iterations.size
    K = J = P = 0
    for r in body:
        if r[1] == "beta":
            K, J, P = max(K, int(r[2])), max(J, int(r[3])), max(P, int(r[4]))
        elif r[1] == "pi":
            K = max(K, int(r[2]))
    pi = np.zeros((T, K))
    beta = np.zeros((T, K, J, P))
    k0 = np.zeros(T, dtype=np.int64)
    lt = np.zeros(T)
    try:
        for it, kind, k, j, p, value in body:
            t = index[int(it)]
            if kind == "pi":
                pi[t, int(k) - 1] = float(value)
            elif kind == "beta":
                beta[t, int(k) - 1, int(j) - 1, int(p) - 1] = float(value)
            elif kind == "k0":
                k0[t] = int(value)
            elif kind == "log_target":
                lt[t] = float(value)
            else:
                raise InvalidInputError(f"{trace_path}: unknown record kind {kind!r}")
    except (KeyError, ValueError) as exc:
        raise InvalidInputError(f"{trace_path}: malformed record: {exc}") from exc
    return SamplerTrace(z=z, pi=pi, beta=beta, log_target=lt, k0=k0, cycles=iterations,
                        mala_acceptance=float("nan"), swap_acceptance=float("nan"))


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


def _parse_value(raw: str, kind, key: str):
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if kind == "vector":
            return np.array([float(v) for v in raw.replace(",", " ").split()])
        if kind is int:
            f = float(raw)
            if f != int(f):
                raise ValueError(raw)
            return int(f)
        return kind(raw)
    except ValueError as exc:
        raise InvalidInputError(f"invalid value for {key}: {raw!r}") from exc


def load_config(path=None) -> dict:
    """Parse an INI-style configuration file.

    Sections ``em_parameters`` and ``mcmc_parameters`` accept the keys in
    :data:`EM_KEYS` and :data:`MCMC_KEYS`; section ``simulation`` accepts
    the :class:`SimConfig` field names. Unknown sections or keys raise
    :class:`InvalidInputError`.

    Returns a dict with ``em`` (EMConfig), ``mcmc`` (MCMCConfig), ``prior``
    (PriorConfig, alphas defaulting to the ladder for ``nChains``) and
    ``simulation`` (SimConfig).
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    if path is not None:
        try:
            with Path(path).open() as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise InvalidInputError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise InvalidInputError(f"malformed config {path}: {exc}") from exc
    allowed = {"em_parameters": EM_KEYS, "mcmc_parameters": MCMC_KEYS,
               "simulation": SIM_KEYS}
    values = {name: {} for name in allowed}
    for section in parser.sections():
        if section not in allowed:
            raise InvalidInputError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in allowed[section]:
                raise InvalidInputError(f"unknown key {key!r} in [{section}]")
            if section == "simulation":
                ftype = {f.name: f.type for f in fields(SimConfig)}[key]
                kind = int if "int" in str(ftype) else float
                values[section][key] = _parse_value(raw, kind, key)
            else:
                attr, kind = allowed[section][key]
                values[section][attr] = _parse_value(raw, kind, key)

    em = EMConfig(**values["em_parameters"]).validate()
    mcmc_vals = dict(values["mcmc_parameters"])
    nu2 = mcmc_vals.pop("nu2", 100.0)
    alphas = mcmc_vals.pop("alphas", None)
    mcmc = MCMCConfig(**mcmc_vals)
    if alphas is None:
        alphas = default_alphas(mcmc.n_chains)
    elif alphas.size != mcmc.n_chains:
        raise InvalidInputError(
            f"dirPriorAlphas has {alphas.size} entries but nChains is {mcmc.n_chains}"
        )
    prior = PriorConfig(nu2=nu2, alphas=alphas)
    sim = SimConfig(**values["simulation"]).validate()
    return {"em": em, "mcmc": mcmc, "prior": prior, "simulation": sim}


def config_snapshot(cfg: dict) -> dict:
    """JSON-ready view of a parsed configuration."""
    def plain(obj):
        out = {}
        for f in fields(obj):
            v = getattr(obj, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out
    return {name: plain(obj) for name, obj in cfg.items()}


def file_digest(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
