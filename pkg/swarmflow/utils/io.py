import os
import re
from typing import Dict

import ujson as json

from swarmflow.hydro.state import HydroState, Trajectory
from swarmflow.torus import ScalarField, VectorField, load_field, save_field

SNAPSHOT_DIR = "snapshots"
SNAPSHOT_PATTERN = re.compile(r"^rho_(\d{4})\.swfl$")
TIMES_FILE = "times.json"


def write_json(path: str, data: Dict):
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)


def read_json(path: str) -> Dict:
    with open(path) as f:
        return json.load(f)


def write_snapshots(trajectory: Trajectory, out_dir: str):
    """One density and one momentum file per output time, plus the list of times."""
    os.makedirs(out_dir, exist_ok=True)
    for (k, state) in enumerate(trajectory):
        save_field(state.rho, os.path.join(out_dir, f"rho_{k:04d}.swfl"))
        save_field(state.m, os.path.join(out_dir, f"m_{k:04d}.swfl"))
    write_json(os.path.join(out_dir, TIMES_FILE), dict(times=trajectory.times.tolist(), max_step=trajectory.max_step))


def read_snapshots(in_dir: str) -> Trajectory:
    times_file = os.path.join(in_dir, TIMES_FILE)
    if not os.path.exists(times_file):
        raise FileNotFoundError(f"No {TIMES_FILE} in {in_dir}")
    meta = read_json(times_file)
    indices = sorted(int(m.group(1)) for m in map(SNAPSHOT_PATTERN.match, os.listdir(in_dir)) if m)
    if len(indices) != len(meta["times"]):
        raise ValueError(f"{in_dir} holds {len(indices)} density snapshots for {len(meta['times'])} times")

    states = []
    for (k, t) in zip(indices, meta["times"]):
        rho = load_field(os.path.join(in_dir, f"rho_{k:04d}.swfl"))
        m = load_field(os.path.join(in_dir, f"m_{k:04d}.swfl"))
        if not isinstance(m, VectorField) or type(rho) is not ScalarField:
            raise ValueError(f"Snapshot {k} in {in_dir} has unexpected field ranks")
        states.append(HydroState(rho, m, t))
    return Trajectory(states, meta["max_step"])
