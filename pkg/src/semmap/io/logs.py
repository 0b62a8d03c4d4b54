"""Acquisition log format (.log): the sensor recording driving map building.

    CAMERA cam0 fx fy cx cy width height near far
    DEPTH 1.50 cam0 depth/000001.png
    ODOM 1.50 x y z qx qy qz qw
    LASER 1.50 angle_min angle_max max_range r1 r2 ... rN

Records must be time-ordered; depth image paths are relative to the log
file and must exist when the log is loaded.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import FormatError
from ..projection import DepthImage, LaserConfig, PinholeIntrinsics
from ..transforms import RigidTransform3
from ._text import Diagnostics, fmt, parse_floats
from .images import read_depth_png


@dataclass(frozen=True)
class DepthRecord:
    stamp: float
    sensor_id: str
    path: str  # relative to the log file


@dataclass(frozen=True)
class OdomRecord:
    stamp: float
    pose: RigidTransform3


@dataclass(frozen=True)
class LaserRecord:
    stamp: float
    config: LaserConfig
    ranges: np.ndarray


@dataclass(frozen=True)
class AcquisitionLog:
    cameras: dict[str, PinholeIntrinsics]
    records: tuple  # DepthRecord | OdomRecord | LaserRecord, time-ordered
    base_dir: Path = Path(".")

    def depth_frames(self) -> list[DepthRecord]:
        return [r for r in self.records if isinstance(r, DepthRecord)]

    def odometry(self) -> list[OdomRecord]:
        return [r for r in self.records if isinstance(r, OdomRecord)]

    def lasers(self) -> list[LaserRecord]:
        return [r for r in self.records if isinstance(r, LaserRecord)]

    def load_depth(self, record: DepthRecord) -> DepthImage:
        return read_depth_png(self.base_dir / record.path)

    def nearest_odometry(self, stamp: float) -> OdomRecord | None:
        return _nearest(self.odometry(), stamp)

    def nearest_laser(self, stamp: float) -> LaserRecord | None:
        return _nearest(self.lasers(), stamp)


def _nearest(records, stamp: float):
    if not records:
        return None
    stamps = [r.stamp for r in records]
    i = bisect.bisect_left(stamps, stamp)
    best = None
    for j in (i - 1, i):
        if 0 <= j < len(records):
            if best is None or abs(records[j].stamp - stamp) < abs(best.stamp - stamp):
                best = records[j]
    return best


def read_log(path) -> AcquisitionLog:
    path = Path(path)
    diag = Diagnostics(str(path))
    cameras: dict[str, PinholeIntrinsics] = {}
    records = []
    last_stamp = -np.inf
    for i, raw in enumerate(path.read_text().splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        tokens = stripped.split()
        kind = tokens[0]
        if kind == "CAMERA":
            if len(tokens) != 10:
                diag.fail(i, f"CAMERA needs 10 fields, got {len(tokens)}")
            values = parse_floats(tokens[2:], 8, diag, i)
            try:
                cameras[tokens[1]] = PinholeIntrinsics(
                    fx=values[0], fy=values[1], cx=values[2], cy=values[3],
                    width=int(values[4]), height=int(values[5]),
                    near=values[6], far=values[7],
                )
            except Exception as err:
                diag.fail(i, f"bad intrinsics: {err}")
            continue
        if len(tokens) < 2:
            diag.fail(i, f"malformed record {stripped!r}")
        stamp = parse_floats(tokens[1:2], 1, diag, i)[0]
        if stamp < last_stamp:
            diag.fail(i, f"timestamp {stamp} decreases (previous {last_stamp})")
        last_stamp = stamp
        if kind == "DEPTH":
            if len(tokens) != 4:
                diag.fail(i, f"DEPTH needs 4 fields, got {len(tokens)}")
            sensor_id, rel = tokens[2], tokens[3]
            if sensor_id not in cameras:
                diag.fail(i, f"DEPTH references undeclared camera {sensor_id!r}")
            if not (path.parent / rel).exists():
                diag.fail(i, f"depth image {rel!r} does not exist")
            records.append(DepthRecord(stamp, sensor_id, rel))
        elif kind == "ODOM":
            values = parse_floats(tokens[2:], 7, diag, i)
            records.append(OdomRecord(stamp, RigidTransform3.from_xyzq(values)))
        elif kind == "LASER":
            if len(tokens) < 6:
                diag.fail(i, f"LASER needs angles, max range and beams")
            values = parse_floats(tokens[2:], len(tokens) - 2, diag, i)
            angle_min, angle_max, max_range = values[:3]
            ranges = np.array(values[3:])
            try:
                cfg = LaserConfig(
                    angle_min=angle_min, angle_max=angle_max,
                    n_beams=len(ranges), max_range=max_range,
                )
            except Exception as err:
                diag.fail(i, f"bad laser config: {err}")
            records.append(LaserRecord(stamp, cfg, ranges))
        else:
            diag.fail(i, f"unknown record {kind!r}")
    return AcquisitionLog(cameras=cameras, records=tuple(records), base_dir=path.parent)


def write_log(path, log: AcquisitionLog) -> None:
    path = Path(path)
    lines = []
    for sensor_id, k in log.cameras.items():
        lines.append(
            f"CAMERA {sensor_id} {fmt(k.fx)} {fmt(k.fy)} {fmt(k.cx)} {fmt(k.cy)} "
            f"{k.width} {k.height} {fmt(k.near)} {fmt(k.far)}"
        )
    for record in log.records:
        if isinstance(record, DepthRecord):
            lines.append(f"DEPTH {fmt(record.stamp)} {record.sensor_id} {record.path}")
        elif isinstance(record, OdomRecord):
            xyzq = " ".join(fmt(v) for v in record.pose.to_xyzq())
            lines.append(f"ODOM {fmt(record.stamp)} {xyzq}")
        elif isinstance(record, LaserRecord):
            cfg = record.config
            ranges = " ".join(fmt(v) for v in record.ranges)
            lines.append(
                f"LASER {fmt(record.stamp)} {fmt(cfg.angle_min)} {fmt(cfg.angle_max)} "
                f"{fmt(cfg.max_range)} {ranges}"
            )
    path.write_text("\n".join(lines) + ("\n" if lines else ""))
