"""(sample x q7) IK existence maps and the joint-7 velocity-band corridor query."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kinematics import JointLimits
from .path_model import ParamGrid


@dataclass
class FeasibilityGrid:
    bits: np.ndarray  # (n+1, m) bool
    t0: float
    step: float  # q7 grid spacing
    path_id: str = ""

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape


def compute_feasibility(grid: ParamGrid, path_id: str = "") -> FeasibilityGrid:
    return FeasibilityGrid(bits=grid.present.copy(), t0=grid.t0, step=grid.step, path_id=path_id)


def corridor_band(limits: JointLimits, t0: float, step: float) -> int:
    return int(math.floor(limits.v_max[6] * t0 / step))


def _dilate(row: np.ndarray, w: int) -> np.ndarray:
    if w == 0:
        return row.copy()
    cs = np.concatenate([[0], np.cumsum(row, dtype=np.int64)])
    m = len(row)
    idx = np.arange(m)
    lo = np.maximum(idx - w, 0)
    hi = np.minimum(idx + w, m - 1) + 1
    return (cs[hi] - cs[lo]) > 0


def has_band_corridor(fg: FeasibilityGrid, band_w: int) -> bool:
    """True iff some j_0..j_n has every bits[i, j_i] set and |j_i - j_{i-1}| <= band_w."""
    if band_w < 0:
        raise ValueError("band_w must be non-negative")
    reach = fg.bits[0].copy()
    for row in fg.bits[1:]:
        if not reach.any():
            return False
        reach = _dilate(reach, band_w) & row
    return bool(reach.any())


def write_csv(fg: FeasibilityGrid, path: str | Path):
    with open(path, "w") as fh:
        fh.write(f"# path={fg.path_id} t0={fg.t0!r} step={fg.step!r}\n")
        for row in fg.bits:
            fh.write(",".join("1" if b else "0" for b in row))
            fh.write("\n")


def read_csv(path: str | Path) -> FeasibilityGrid:
    meta, rows = {}, []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    key, _, val = tok.partition("=")
                    meta[key] = val
                continue
            rows.append([c == "1" for c in line.split(",")])
    return FeasibilityGrid(bits=np.array(rows, dtype=bool), t0=float(meta.get("t0", "nan")),
                           step=float(meta.get("step", "nan")), path_id=meta.get("path", ""))


def write_pgm(fg: FeasibilityGrid, path: str | Path):
    """Binary PGM: one row per sample, one column per q7 value, 255 = feasible."""
    h, w = fg.bits.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.where(fg.bits, 255, 0).astype(np.uint8).tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    if tokens[0] != "P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(data[pos + 1:pos + 1 + w * h], dtype=np.uint8)
    return pixels.reshape(h, w) > 127
