"""File naming contract shared by the acquisition engine and the CLI stages.

Tiles:      {name}_t{T}_z{Z}_r{R}_c{C}_{CH}.tif
Stitched:   {name}_t{T}_{CH}_stitched.tif
Stabilized: {name}_t{T}_{CH}_stabilized.tif

`name` for ROI outputs is "{acquisition}_roi{K}".  Parsers are strict and name
the offending file, so batch commands can report all bad inputs at once.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .errors import ParameterError
from .imaging import Channel

_CH = "|".join(ch.value for ch in Channel)
_TILE_RE = re.compile(rf"^(?P<name>.+)_t(?P<t>\d+)_z(?P<z>\d+)_r(?P<r>\d+)_c(?P<c>\d+)_(?P<ch>{_CH})\.tif$")
_STITCHED_RE = re.compile(rf"^(?P<name>.+)_t(?P<t>\d+)_(?P<ch>{_CH})_stitched\.tif$")
_STABILIZED_RE = re.compile(rf"^(?P<name>.+)_t(?P<t>\d+)_(?P<ch>{_CH})_stabilized\.tif$")


def roi_name(acquisition: str, roi_id: int) -> str:
    return f"{acquisition}_roi{roi_id}"


def tile_filename(name: str, t: int, z: int, r: int, c: int, ch: Channel) -> str:
    return f"{name}_t{t}_z{z}_r{r}_c{c}_{Channel(ch).value}.tif"


def stitched_filename(name: str, t: int, ch: Channel) -> str:
    return f"{name}_t{t}_{Channel(ch).value}_stitched.tif"


def stabilized_filename(name: str, t: int, ch: Channel) -> str:
    return f"{name}_t{t}_{Channel(ch).value}_stabilized.tif"


@dataclass(frozen=True)
class TileName:
    name: str
    t: int
    z: int
    r: int
    c: int
    channel: Channel


@dataclass(frozen=True)
class StitchedName:
    name: str
    t: int
    channel: Channel


def parse_tile_filename(path: str | Path) -> TileName:
    base = Path(path).name
    m = _TILE_RE.match(base)
    if not m:
        raise ParameterError(f"{base!r} does not match the tile naming convention")
    return TileName(
        name=m["name"],
        t=int(m["t"]),
        z=int(m["z"]),
        r=int(m["r"]),
        c=int(m["c"]),
        channel=Channel(m["ch"]),
    )


def parse_stitched_filename(path: str | Path) -> StitchedName:
    base = Path(path).name
    m = _STITCHED_RE.match(base)
    if not m:
        raise ParameterError(f"{base!r} does not match the stitched naming convention")
    return StitchedName(name=m["name"], t=int(m["t"]), channel=Channel(m["ch"]))


def parse_stabilized_filename(path: str | Path) -> StitchedName:
    base = Path(path).name
    m = _STABILIZED_RE.match(base)
    if not m:
        raise ParameterError(f"{base!r} does not match the stabilized naming convention")
    return StitchedName(name=m["name"], t=int(m["t"]), channel=Channel(m["ch"]))
