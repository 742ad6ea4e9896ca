"""File formats: CMDP JSON, demonstrations JSON-lines, feature files, result dumps.

On disk, state-action arrays are nested ``[s][a]`` lists (transitions
``[s][a][s']``, constraints ``[i][s][a]``, features ``[s][a][j]``); in memory
they use the flat action-major layout.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .cmdp import Cmdp, from_grid, to_grid
from .irl import Demonstrations, RewardClass


class ValidationError(ValueError):
    pass


def read_json(path):
    """Parse a JSON file; syntax errors become :class:`ValidationError` with line and column."""
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _array(data, key, ndim):
    if key not in data:
        raise ValidationError(f"missing field {key!r}")
    try:
        arr = np.asarray(data[key], dtype=float)
    except (TypeError, ValueError):
        raise ValidationError(f"field {key!r} is not a numeric array") from None
    if arr.ndim != ndim:
        raise ValidationError(f"field {key!r} must be a {ndim}-d array, got {arr.ndim}-d")
    return arr


def sa_to_flat(arr):
    """``[s][a](...)`` array to action-major rows."""
    arr = np.asarray(arr, dtype=float)
    return np.ascontiguousarray(np.swapaxes(arr, 0, 1)).reshape(arr.shape[0] * arr.shape[1], *arr.shape[2:])


def flat_to_sa(flat, n, m):
    flat = np.asarray(flat)
    return np.swapaxes(flat.reshape(m, n, *flat.shape[1:]), 0, 1)


def cmdp_from_dict(data):
    try:
        n, m = int(data["n"]), int(data["m"])
        gamma = float(data["gamma"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"bad CMDP header: {exc}") from None
    P = _array(data, "P", 3)
    if P.shape != (n, m, n):
        raise ValidationError(f"P must be indexed [s][a][s'] with shape {(n, m, n)}, got {P.shape}")
    nu0 = _array(data, "nu0", 1)
    psi = b = None
    if data.get("Psi") is not None and len(data["Psi"]):
        raw = _array(data, "Psi", 3)
        if raw.shape[1:] != (n, m):
            raise ValidationError(f"Psi must be indexed [i][s][a] with shape (k, {n}, {m})")
        psi = np.stack([from_grid(c) for c in raw], axis=1)
        b = _array(data, "b", 1)
    r = None
    if data.get("r") is not None:
        rr = _array(data, "r", 2)
        if rr.shape != (n, m):
            raise ValidationError(f"r must be indexed [s][a] with shape {(n, m)}")
        r = from_grid(rr)
    try:
        return Cmdp(n=n, m=m, gamma=gamma, nu0=nu0, transition=sa_to_flat(P), psi=psi, b=b, reward=r)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


def cmdp_to_dict(cmdp):
    n, m = cmdp.n, cmdp.m
    out = {
        "n": n, "m": m, "gamma": cmdp.gamma,
        "nu0": cmdp.nu0.tolist(),
        "P": flat_to_sa(cmdp.transition, n, m).tolist(),
        "Psi": [to_grid(cmdp.psi[:, i], n, m).tolist() for i in range(cmdp.k)],
        "b": cmdp.b.tolist(),
    }
    if cmdp.reward is not None:
        out["r"] = to_grid(cmdp.reward, n, m).tolist()
    return out


def load_cmdp(path):
    return cmdp_from_dict(read_json(path))


def load_reward(path, n, m):
    """Reward file: either ``{"r": [[...]]}`` or a bare ``[s][a]`` array."""
    data = read_json(path)
    arr = np.asarray(data["r"] if isinstance(data, dict) else data, dtype=float)
    if arr.shape != (n, m):
        raise ValidationError(f"reward must be indexed [s][a] with shape {(n, m)}")
    return from_grid(arr)


def load_occupancy(path, n, m):
    data = read_json(path)
    arr = np.asarray(data["mu"] if isinstance(data, dict) else data, dtype=float)
    if arr.shape != (n, m):
        raise ValidationError(f"occupancy must be indexed [s][a] with shape {(n, m)}")
    return from_grid(arr)


def load_demos(path):
    """One trajectory per line as ``[[s, a], ...]``; blank lines are skipped."""
    trajs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                trajs.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: malformed JSON at line {lineno}, column {exc.colno}: {exc.msg}") from None
    try:
        return Demonstrations.from_trajectories(trajs)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


def save_demos(path, demos):
    with open(path, "w") as fh:
        for traj in demos.trajectories():
            fh.write(json.dumps(traj) + "\n")


def features_to_dict(phi, n, m, norm_kind="l1", radius=1.0):
    return {"features": flat_to_sa(phi, n, m).tolist(), "norm": norm_kind, "radius": radius}


def load_features(path, n, m):
    """Reward class file: ``{"features": [s][a][j], "norm": "l1"|"l2"|"unbounded", "radius": c}``."""
    data = read_json(path)
    phi = _array(data, "features", 3)
    if phi.shape[:2] != (n, m):
        raise ValidationError(f"features must be indexed [s][a][j] with leading shape {(n, m)}")
    try:
        return RewardClass(sa_to_flat(phi), data.get("norm", "l1"), float(data.get("radius", 1.0)))
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


def _grid(vec, n, m):
    return to_grid(vec, n, m).tolist()


def soft_solution_to_dict(sol, n, m):
    return {"value": sol.value.tolist(), "q": _grid(sol.qvalue, n, m), "policy": sol.policy.tolist(),
            "occupancy": _grid(sol.occupancy, n, m), "iterations": sol.iterations,
            "residual": sol.residual, "converged": sol.converged}


def constrained_solution_to_dict(sol, n, m):
    return {"occupancy": _grid(sol.occupancy, n, m), "dual": sol.dual.tolist(),
            "policy": sol.policy.tolist(), "duality_gap": sol.duality_gap,
            "iterations": sol.iterations, "dual_residual": sol.dual_residual,
            "converged": sol.converged}


def save_irl_result(path, result, n, m):
    """Write the result JSON and a ``<stem>.trace.csv`` sidecar; returns the sidecar path."""
    path = Path(path)
    write_json(path, {
        "weights": result.weights.tolist(),
        "reward": _grid(result.reward, n, m),
        "dual": result.dual.tolist(),
        "policy": result.policy.tolist(),
        "occupancy": _grid(result.occupancy, n, m),
    })
    trace_path = path.with_name(path.stem + ".trace.csv")
    with open(trace_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["episode", "ipm", "max_violation", "lagrangian"])
        for row in result.trace:
            writer.writerow([row.episode, f"{row.ipm:.12e}", f"{row.max_violation:.12e}", f"{row.lagrangian:.12e}"])
    return trace_path
