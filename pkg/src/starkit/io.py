"""Sequence files and run configuration.

Sequence file, version 1 (one header line, then one line per frame)::

    sequence   = header NL { frame NL }      (the final NL is mandatory)
    header     = "STARSEQ" SP version SP "n=" int SP "fps=" float SP "width=" int
                 SP "height=" int SP "dim=" int SP "frames=" int
    frame      = "F" SP frame_index SP count { SP "|" SP instance }
    instance   = "id=" int SP "act=" ("0"|"1") SP "as=" float SP "ds=" float
                 SP "box=" float "," float "," float "," float
                 SP "rle=" int { "," int } SP "emb=" float { "," float }

``rle`` is the column-major run-length code of the mask, first run counting
zeros. Floats are written as Python's shortest round-trip ``repr``, so a
write/read cycle is bit-exact.

Run configuration is an INI document with one section per module config
(``[tracker]``, ``[map]``, ``[contrastive]``, ``[detection]``,
``[segmentation]``, ``[simulator]``, ``[corruption]``); keys are the
config field names. Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from .core import BBox, FrameRecord, InstanceRecord, SequenceMeta, VideoSequence, rle_decode, rle_encode
from .losses import ContrastiveConfig, DetectionLossConfig, SegLossConfig
from .metrics import MapConfig
from .simulator import CorruptionConfig, PenConfig
from .tracker import TrackerConfig

MAGIC = "STARSEQ"
VERSION = 1


class SequenceFormatError(ValueError):
    """Malformed sequence file. ``code`` is one of ``CODES``."""

    CODES = ("header", "version", "frame", "instance", "rle", "embedding", "truncated")

    def __init__(self, code: str, line: int, message: str):
        assert code in self.CODES
        self.code = code
        self.line = line
        super().__init__(f"[{code}] line {line}: {message}")


class ConfigError(ValueError):
    pass


def _f(x) -> str:
    return repr(float(x))


def format_sequence(seq: VideoSequence) -> str:
    m = seq.meta
    lines = [
        f"{MAGIC} {VERSION} n={m.n} fps={_f(m.fps)} width={m.width} height={m.height} "
        f"dim={m.embed_dim} frames={len(seq.frames)}"
    ]
    for fr in seq.frames:
        parts = [f"F {fr.frame_index} {len(fr.instances)}"]
        for inst in fr.instances:
            b = inst.bbox
            parts.append(
                f"id={inst.instance_id} act={inst.action} as={_f(inst.action_score)} "
                f"ds={_f(inst.det_score)} box={_f(b.x)},{_f(b.y)},{_f(b.w)},{_f(b.h)} "
                f"rle={','.join(map(str, rle_encode(inst.mask)))} "
                f"emb={','.join(_f(v) for v in inst.embedding)}"
            )
        lines.append(" | ".join(parts))
    return "\n".join(lines) + "\n"


def write_sequence(seq: VideoSequence, path: Union[str, Path]) -> None:
    Path(path).write_text(format_sequence(seq), encoding="utf-8")


def _header(line: str) -> Tuple[SequenceMeta, int]:
    tokens = line.split()
    if len(tokens) < 2 or tokens[0] != MAGIC:
        raise SequenceFormatError("header", 1, f"expected '{MAGIC} <version> ...'")
    try:
        version = int(tokens[1])
    except ValueError:
        raise SequenceFormatError("header", 1, f"bad version token {tokens[1]!r}") from None
    if version != VERSION:
        raise SequenceFormatError("version", 1, f"unsupported format version {version} (reader is {VERSION})")
    kv = {}
    for tok in tokens[2:]:
        key, sep, value = tok.partition("=")
        if not sep:
            raise SequenceFormatError("header", 1, f"expected key=value, got {tok!r}")
        kv[key] = value
    expected = ("n", "fps", "width", "height", "dim", "frames")
    if sorted(kv) != sorted(expected):
        raise SequenceFormatError("header", 1, f"header keys must be exactly {expected}")
    try:
        meta = SequenceMeta(int(kv["n"]), float(kv["fps"]), int(kv["width"]), int(kv["height"]), int(kv["dim"]))
        n_frames = int(kv["frames"])
    except ValueError as exc:
        raise SequenceFormatError("header", 1, str(exc)) from None
    if meta.width < 1 or meta.height < 1 or meta.embed_dim < 1 or n_frames < 0:
        raise SequenceFormatError("header", 1, "non-positive dimension")
    return meta, n_frames


def _instance(text: str, meta: SequenceMeta, lineno: int) -> InstanceRecord:
    fields = {}
    for tok in text.split():
        key, sep, value = tok.partition("=")
        if not sep:
            raise SequenceFormatError("instance", lineno, f"expected key=value, got {tok!r}")
        fields[key] = value
    keys = ("id", "act", "as", "ds", "box", "rle", "emb")
    if tuple(fields) != keys:
        raise SequenceFormatError("instance", lineno, f"instance fields must be {keys} in order")
    try:
        runs = [int(x) for x in fields["rle"].split(",")]
        mask = rle_decode(runs, meta.width, meta.height)
    except ValueError as exc:
        raise SequenceFormatError("rle", lineno, str(exc)) from None
    try:
        emb = np.array([float(x) for x in fields["emb"].split(",")])
    except ValueError as exc:
        raise SequenceFormatError("embedding", lineno, str(exc)) from None
    if emb.size != meta.embed_dim:
        raise SequenceFormatError("embedding", lineno, f"embedding has {emb.size} entries, header says {meta.embed_dim}")
    try:
        box = [float(x) for x in fields["box"].split(",")]
        if len(box) != 4:
            raise ValueError("box needs 4 numbers")
        return InstanceRecord(
            int(fields["id"]), mask, BBox(*box), emb, int(fields["act"]), float(fields["as"]), float(fields["ds"])
        )
    except ValueError as exc:
        raise SequenceFormatError("instance", lineno, str(exc)) from None


def parse_sequence(text: str) -> VideoSequence:
    lines = text.splitlines()
    if not lines:
        raise SequenceFormatError("truncated", 1, "empty file")
    if not text.endswith("\n"):
        # every line, the last included, ends with a newline; a missing one means a cut file
        raise SequenceFormatError("truncated", len(lines), "file does not end with a newline")
    meta, n_frames = _header(lines[0])
    frames: List[FrameRecord] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(" | ")
        head = parts[0].split()
        if len(head) != 3 or head[0] != "F":
            raise SequenceFormatError("frame", lineno, "expected 'F <index> <count>'")
        try:
            index, count = int(head[1]), int(head[2])
        except ValueError:
            raise SequenceFormatError("frame", lineno, "frame index and count must be integers") from None
        if count != len(parts) - 1:
            raise SequenceFormatError("frame", lineno, f"declared {count} instances, found {len(parts) - 1}")
        insts = [_instance(p, meta, lineno) for p in parts[1:]]
        try:
            frames.append(FrameRecord(index, insts))
        except ValueError as exc:
            raise SequenceFormatError("frame", lineno, str(exc)) from None
        if len(frames) > 1 and frames[-1].frame_index <= frames[-2].frame_index:
            raise SequenceFormatError("frame", lineno, "frame indices must be strictly increasing")
    if len(frames) != n_frames:
        raise SequenceFormatError(
            "truncated", len(lines) + 1, f"header declares {n_frames} frames, file has {len(frames)}"
        )
    return VideoSequence(meta, frames)


def read_sequence(path: Union[str, Path]) -> VideoSequence:
    return parse_sequence(Path(path).read_text(encoding="utf-8"))


# -- run configuration -------------------------------------------------------------------


@dataclass
class RunConfig:
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    map: MapConfig = field(default_factory=MapConfig)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    detection: DetectionLossConfig = field(default_factory=DetectionLossConfig)
    segmentation: SegLossConfig = field(default_factory=SegLossConfig)
    simulator: PenConfig = field(default_factory=PenConfig)
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)

    def override(self, section: str, **values) -> "RunConfig":
        """Copy with non-None ``values`` replacing fields of one section (CLI flags win over files)."""
        values = {k: v for k, v in values.items() if v is not None}
        if not values:
            return self
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **values)})


def _coerce(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"not a boolean: {raw!r}")
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(x) for x in raw.split(","))
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_run_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__unused__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    cfg = RunConfig()
    sections = {f.name for f in dataclasses.fields(RunConfig)}
    for section in parser.sections():
        if section not in sections:
            raise ConfigError(f"unknown section [{section}]")
        current = getattr(cfg, section)
        known = {f.name: getattr(current, f.name) for f in dataclasses.fields(current)}
        values: Dict[str, object] = {}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"unknown key {section}.{key}")
            values[key] = _coerce(raw, known[key], f"{section}.{key}")
        try:
            cfg = cfg.override(section, **values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}]: {exc}") from None
    return cfg


def read_run_config(path: Union[str, Path]) -> RunConfig:
    return parse_run_config(Path(path).read_text(encoding="utf-8"))


def format_run_config(cfg: RunConfig) -> str:
    """Every section and key with its current value; parses back to ``cfg``."""
    out = []
    for f in dataclasses.fields(cfg):
        section = getattr(cfg, f.name)
        out.append(f"[{f.name}]")
        for sf in dataclasses.fields(section):
            v = getattr(section, sf.name)
            if isinstance(v, tuple):
                v = ",".join(repr(float(x)) for x in v)
            out.append(f"{sf.name} = {v}")
        out.append("")
    return "\n".join(out)
