"""File formats: snapshot/panel CSV, result JSON, sim config, run manifest.

Snapshot CSV: header `user_id,balance`, balance as decimal integer
satoshi, UTF-8, LF line endings. Panel CSV: header
`user_id,s0,s1,ds,group`. All writes are atomic (temp file + rename).
"""

import csv
import dataclasses
import datetime as dt
import hashlib
import json
import math
import os
import re
import tempfile
from pathlib import Path

import numpy as np

from . import __version__ as _version
from .errors import ConfigError, MalformedInputError
from .panel import BalanceSnapshot, TransitionPanel, assign_groups
from .sim import DEFAULT_T0, InitialLaw, RegimeParams, Schedule, SimConfig

SNAPSHOT_HEADER = ["user_id", "balance"]
PANEL_HEADER = ["user_id", "s0", "s1", "ds", "group"]

_DATE_RE = re.compile(r"(\d{4}-\d{2}-\d{2})")


def atomic_write_text(path, text: str):
    """Write text to `path` via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _format_number(x) -> str:
    value = float(x)
    if value.is_integer() and abs(value) < 2**63:
        return str(int(value))
    return repr(value)


def write_csv(path, header, rows):
    """Write rows of already-formatted (or numeric) cells as CSV with LF endings."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(cell if isinstance(cell, str) else _format_number(cell) for cell in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dt.date):
        return obj.isoformat()
    if dataclasses.is_dataclass(obj):
        return dataclasses.asdict(obj)
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def _sanitize_nan(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _sanitize_nan(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize_nan(v) for v in obj]
    return obj


def json_text(obj) -> str:
    return json.dumps(_sanitize_nan(obj), indent=2, sort_keys=True, default=_json_default) + "\n"


def write_json(path, obj):
    atomic_write_text(path, json_text(obj))


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def date_from_filename(path) -> dt.date | None:
    """Extract an ISO date embedded in the file name, if any."""
    match = _DATE_RE.search(Path(path).stem)
    return dt.date.fromisoformat(match.group(1)) if match else None


def read_snapshot_csv(path, date: dt.date | None = None) -> BalanceSnapshot:
    """Load a snapshot CSV; the date comes from the argument or the file name."""
    if date is None:
        date = date_from_filename(path)
        if date is None:
            raise MalformedInputError(
                f"{path}: no snapshot date given and none found in the file name"
            )
    ids = []
    balances = []
    seen = set()
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != SNAPSHOT_HEADER:
            raise MalformedInputError(f"{path}:1: expected header {','.join(SNAPSHOT_HEADER)!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise MalformedInputError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            user, raw = row[0], row[1].strip()
            try:
                balance = int(raw)
            except ValueError:
                raise MalformedInputError(
                    f"{path}:{lineno}: balance must be a decimal integer, got {raw!r}"
                ) from None
            if balance < 0:
                raise MalformedInputError(f"{path}:{lineno}: negative balance {balance}")
            if user in seen:
                raise MalformedInputError(f"{path}:{lineno}: duplicate user_id {user!r}")
            seen.add(user)
            ids.append(user)
            balances.append(balance)
    return BalanceSnapshot(
        date=date, user_ids=np.array(ids, dtype=str), balances=np.array(balances, dtype=np.int64)
    )


def write_snapshot_csv(path, snapshot: BalanceSnapshot):
    rows = zip(snapshot.user_ids.tolist(), snapshot.balances.tolist())
    write_csv(path, SNAPSHOT_HEADER, ([u, b] for u, b in rows))


def write_panel_csv(path, panel: TransitionPanel):
    rows = zip(
        panel.user_ids.tolist(),
        panel.s0.tolist(),
        panel.s1.tolist(),
        panel.ds.tolist(),
        panel.group.tolist(),
    )
    write_csv(path, PANEL_HEADER, rows)


def read_panel_csv(path, t0: dt.date | None = None, dt_days: int | None = None) -> TransitionPanel:
    """Load a panel CSV. Group labels are validated against s0/ds."""
    ids = []
    s0 = []
    s1 = []
    groups = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != PANEL_HEADER:
            raise MalformedInputError(f"{path}:1: expected header {','.join(PANEL_HEADER)!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise MalformedInputError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            try:
                v0, v1, vds = float(row[1]), float(row[2]), float(row[3])
            except ValueError:
                raise MalformedInputError(f"{path}:{lineno}: non-numeric balance field") from None
            if vds != v1 - v0:
                raise MalformedInputError(f"{path}:{lineno}: ds does not equal s1 - s0")
            ids.append(row[0])
            s0.append(v0)
            s1.append(v1)
            groups.append(row[4])
    s0_arr = np.array(s0, dtype=np.float64)
    s1_arr = np.array(s1, dtype=np.float64)
    if s0_arr.size and np.all(s0_arr == np.floor(s0_arr)) and np.all(s1_arr == np.floor(s1_arr)):
        if np.all(np.abs(s0_arr) < 2**62) and np.all(np.abs(s1_arr) < 2**62):
            s0_arr = s0_arr.astype(np.int64)
            s1_arr = s1_arr.astype(np.int64)
    ds_arr = s1_arr - s0_arr
    expected = assign_groups(s0_arr, ds_arr)
    stored = np.array(groups, dtype=str) if groups else np.empty(0, dtype="<U1")
    if s0_arr.size and np.any(stored != expected):
        bad = int(np.flatnonzero(stored != expected)[0])
        raise MalformedInputError(
            f"{path}:{bad + 2}: group label {stored[bad]!r} inconsistent with s0/ds"
        )
    return TransitionPanel(
        t0=t0,
        dt_days=dt_days,
        user_ids=np.array(ids, dtype=str),
        s0=s0_arr,
        s1=s1_arr,
        ds=ds_arr,
        group=expected,
    )


def read_values_csv(path) -> np.ndarray:
    """Load positive values for tail fitting: a snapshot CSV or any CSV with a `balance` column."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise MalformedInputError(f"{path}: empty file")
        names = [h.strip() for h in header]
        if "balance" in names:
            col = names.index("balance")
        elif len(names) == 1:
            col = 0
            try:
                float(names[0])
            except ValueError:
                pass
            else:
                raise MalformedInputError(f"{path}:1: expected a header line")
        else:
            raise MalformedInputError(f"{path}:1: no `balance` column in header")
        values = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                values.append(float(row[col]))
            except (ValueError, IndexError):
                raise MalformedInputError(f"{path}:{lineno}: bad value row") from None
    return np.array(values, dtype=np.float64)


# ---------------------------------------------------------------------------
# simulation config files


_COMMON_KEYS = {
    "model",
    "n_users",
    "seed",
    "t0_date",
    "step_days",
    "horizon_days",
    "emit_days",
    "s0_law",
    "s0_m",
    "s0_v",
    "s0_alpha",
    "s0_xmin",
    "s0_value",
}
_GBM_KEYS = {"mu", "sigma"}
_POWER_KEYS = {"alpha_drift", "mu", "alpha_vol", "sigma"}
_TWO_REGIME_KEYS = {
    "s_star",
    "regime_mode",
    "poor_alpha_drift",
    "poor_mu",
    "poor_alpha_vol",
    "poor_sigma",
    "wealthy_alpha_drift",
    "wealthy_mu",
    "wealthy_alpha_vol",
    "wealthy_sigma",
}


@dataclasses.dataclass(frozen=True)
class ParsedSimConfig:
    """A validated simulate-command config: the model kind plus its inputs."""

    model: str
    emit_days: list
    sim: SimConfig | None = None
    gbm_kwargs: dict | None = None
    raw: dict | None = None


def _parse_scalar(key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: expected a number, got {raw!r}") from None


def _parse_value(key: str, raw: str):
    """Number, or `day:value,day:value,...` schedule."""
    if ":" not in raw:
        return _parse_scalar(key, raw)
    days = []
    values = []
    for part in raw.split(","):
        try:
            day_s, value_s = part.split(":")
            days.append(float(day_s))
            values.append(float(value_s))
        except ValueError:
            raise ConfigError(f"config key {key!r}: bad schedule entry {part!r}") from None
    return Schedule(days=tuple(days), values=tuple(values))


def _parse_int(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: expected an integer, got {raw!r}") from None


def _initial_law(kv: dict) -> InitialLaw:
    kind = kv.get("s0_law", "lognormal")
    if kind == "lognormal":
        if "s0_m" not in kv or "s0_v" not in kv:
            raise ConfigError("config keys s0_m and s0_v are required for s0_law = lognormal")
        return InitialLaw.lognormal(_parse_scalar("s0_m", kv["s0_m"]), _parse_scalar("s0_v", kv["s0_v"]))
    if kind == "pareto":
        if "s0_alpha" not in kv or "s0_xmin" not in kv:
            raise ConfigError("config keys s0_alpha and s0_xmin are required for s0_law = pareto")
        return InitialLaw.pareto(
            _parse_scalar("s0_alpha", kv["s0_alpha"]), _parse_scalar("s0_xmin", kv["s0_xmin"])
        )
    if kind == "point":
        if "s0_value" not in kv:
            raise ConfigError("config key s0_value is required for s0_law = point")
        return InitialLaw.point(_parse_scalar("s0_value", kv["s0_value"]))
    raise ConfigError(f"config key 's0_law': unknown law {kind!r}")


def _regime_params(kv: dict, prefix: str) -> RegimeParams:
    def get(name, default):
        key = f"{prefix}{name}"
        return _parse_value(key, kv[key]) if key in kv else default

    return RegimeParams(
        alpha_drift=get("alpha_drift", 1.0),
        mu=get("mu", 0.0),
        alpha_vol=get("alpha_vol", 1.0),
        sigma=get("sigma", 0.0),
    )


def parse_sim_config(path) -> ParsedSimConfig:
    """Parse the flat key = value config file for the simulate command."""
    kv = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, _, raw = body.partition("=")
            key = key.strip()
            raw = raw.strip()
            if key in kv:
                raise ConfigError(f"{path}:{lineno}: duplicate config key {key!r}")
            kv[key] = raw

    model = kv.get("model", "two_regime")
    if model == "gbm":
        allowed = _COMMON_KEYS | _GBM_KEYS
    elif model == "power":
        allowed = _COMMON_KEYS | _POWER_KEYS
    elif model == "two_regime":
        allowed = _COMMON_KEYS | _TWO_REGIME_KEYS
    else:
        raise ConfigError(f"config key 'model': unknown model {model!r}")
    for key in kv:
        if key not in allowed:
            raise ConfigError(f"unknown config key {key!r} for model {model!r}")
    for key in ("n_users", "horizon_days"):
        if key not in kv:
            raise ConfigError(f"missing required config key {key!r}")

    n_users = _parse_int("n_users", kv["n_users"])
    horizon = _parse_int("horizon_days", kv["horizon_days"])
    step = _parse_int("step_days", kv.get("step_days", "1"))
    seed = _parse_int("seed", kv.get("seed", "0"))
    t0 = DEFAULT_T0
    if "t0_date" in kv:
        try:
            t0 = dt.date.fromisoformat(kv["t0_date"])
        except ValueError:
            raise ConfigError(f"config key 't0_date': expected ISO date, got {kv['t0_date']!r}") from None
    if "emit_days" in kv:
        emit_days = [_parse_int("emit_days", part) for part in kv["emit_days"].split(",")]
    else:
        emit_days = [0, horizon]
    law = _initial_law(kv)

    if model == "gbm":
        return ParsedSimConfig(
            model=model,
            emit_days=emit_days,
            gbm_kwargs={
                "n_users": n_users,
                "s0_law": law,
                "mu": _parse_scalar("mu", kv.get("mu", "0")),
                "sigma": _parse_scalar("sigma", kv.get("sigma", "0")),
                "horizon_days": horizon,
                "seed": seed,
                "t0": t0,
            },
            raw=kv,
        )
    if model == "power":
        sim = SimConfig(
            n_users=n_users,
            s0_law=law,
            horizon_days=horizon,
            poor=_regime_params(kv, ""),
            step_days=step,
            seed=seed,
            t0=t0,
        )
        return ParsedSimConfig(model=model, emit_days=emit_days, sim=sim, raw=kv)
    if "s_star" not in kv:
        raise ConfigError("missing required config key 's_star' for model 'two_regime'")
    sim = SimConfig(
        n_users=n_users,
        s0_law=law,
        horizon_days=horizon,
        poor=_regime_params(kv, "poor_"),
        wealthy=_regime_params(kv, "wealthy_"),
        s_star=_parse_scalar("s_star", kv["s_star"]),
        step_days=step,
        seed=seed,
        regime_mode=kv.get("regime_mode", "current"),
        t0=t0,
    )
    return ParsedSimConfig(model=model, emit_days=emit_days, sim=sim, raw=kv)


# ---------------------------------------------------------------------------
# run manifests


@dataclasses.dataclass
class RunManifest:
    """Reproducibility record for one CLI run.

    The run id hashes the command, parameters, input digests, seed, and
    version; the wall-clock duration is recorded but excluded from the
    id. Output files produced by the run are listed with their digests.
    """

    command: str
    parameters: dict
    inputs: dict
    seed: int
    version: str = _version
    duration_s: float = 0.0
    outputs: dict = dataclasses.field(default_factory=dict)
    run_id: str = ""

    def finalize(self, duration_s: float, outputs: dict) -> "RunManifest":
        ident = {
            "command": self.command,
            "parameters": self.parameters,
            "inputs": self.inputs,
            "seed": self.seed,
            "version": self.version,
        }
        digest = hashlib.sha256(json_text(ident).encode("utf-8")).hexdigest()[:16]
        self.run_id = digest
        self.duration_s = duration_s
        self.outputs = outputs
        return self

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "parameters": self.parameters,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "seed": self.seed,
            "version": self.version,
            "duration_s": self.duration_s,
            "run_id": self.run_id,
        }
