"""On-disk run artifacts: checkpoints and manifests.

A checkpoint is a structured text header (format version, config echo,
step/stage counters, generator states) terminated by an end_header line,
followed by raw little-endian float64 parameter blocks in declaration
order. A manifest records the resolved config echo plus content hashes of
every output, and doubles as a config file: re-running a command with
--config pointing at a manifest reproduces the run.
"""

from __future__ import annotations

import hashlib
import os
import time
from pathlib import Path

import numpy as np

from .config import MANIFEST_MAGIC, RunConfig, parse_config_text
from .model import Predictor, PredictorConfig

CHECKPOINT_MAGIC = "duetdiff-checkpoint v1"


def atomic_write_bytes(path, data):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ------------------------------------------------------------ rng states


def rng_state_text(rng):
    """PCG64 state as a parseable decimal tuple."""
    st = rng.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise ValueError(f"unsupported bit generator {st['bit_generator']!r}")
    inner = st["state"]
    return f"{inner['state']},{inner['inc']},{st['has_uint32']},{st['uinteger']}"


def rng_from_text(text):
    state, inc, has32, uint = (int(x) for x in text.split(","))
    bg = np.random.PCG64()
    bg.state = {
        "bit_generator": "PCG64",
        "state": {"state": state, "inc": inc},
        "has_uint32": has32,
        "uinteger": uint,
    }
    return np.random.Generator(bg)


# ----------------------------------------------------------- checkpoints


def save_checkpoint(path, model, runcfg, step, stage, sobol_index, opt_step, rng_states=None):
    lines = [CHECKPOINT_MAGIC]
    lines.append(f"config_hash={runcfg.digest()}")
    lines.append(f"step={step}")
    lines.append(f"stage={stage}")
    lines.append(f"sobol_index={sobol_index}")
    lines.append(f"opt_step={opt_step}")
    for name, text in sorted((rng_states or {}).items()):
        lines.append(f"rng.{name}={text}")
    for line in runcfg.echo().splitlines():
        lines.append(f"config.{line}")
    blobs = []
    for name, p in model.params.items():
        shape = "x".join(str(d) for d in p.data.shape)
        lines.append(f"param {name} {shape}")
        blobs.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    lines.append("end_header")
    payload = ("\n".join(lines) + "\n").encode("utf-8") + b"".join(blobs)
    atomic_write_bytes(path, payload)


def read_checkpoint(path):
    """Returns (header dict, {param name: float64 array})."""
    with open(path, "rb") as fh:
        raw = fh.read()
    marker = b"end_header\n"
    cut = raw.find(marker)
    if cut < 0:
        raise ValueError(f"{path}: not a checkpoint (missing end_header)")
    head_lines = raw[:cut].decode("utf-8").splitlines()
    body = raw[cut + len(marker) :]
    if not head_lines or head_lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(
            f"{path}: unsupported checkpoint format "
            f"(expected {CHECKPOINT_MAGIC!r}, got {head_lines[0] if head_lines else ''!r})"
        )
    header = {}
    params = {}
    offset = 0
    for line in head_lines[1:]:
        if line.startswith("param "):
            _, name, shape_text = line.split(" ", 2)
            shape = tuple(int(d) for d in shape_text.split("x"))
            size = int(np.prod(shape)) * 8
            chunk = body[offset : offset + size]
            if len(chunk) != size:
                raise ValueError(f"{path}: truncated parameter block for {name}")
            params[name] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
            offset += size
        else:
            key, _, rest = line.partition("=")
            header[key.strip()] = rest.strip()
    if offset != len(body):
        raise ValueError(
            f"{path}: {len(body) - offset} trailing bytes after parameter blocks"
        )
    return header, params


def config_from_header(header):
    lines = [f"{k[len('config.'):]} = {v}" for k, v in header.items() if k.startswith("config.")]
    return RunConfig(parse_config_text("\n".join(lines), source="<checkpoint>"))


def load_model(path):
    """Rebuild the predictor a checkpoint was saved from."""
    header, blocks = read_checkpoint(path)
    runcfg = config_from_header(header)
    cfg = PredictorConfig(
        dim=runcfg["model.dim"],
        layers=runcfg["model.layers"],
        heads=runcfg["model.heads"],
        ffn_mult=runcfg["model.ffn_mult"],
        max_dual_len=max(runcfg["data.seq_len"], runcfg["data.seq_len_stage2"]),
        single_stream=runcfg["model.single_stream"],
    )
    model = Predictor(cfg, seed=runcfg["seed"])
    missing = sorted(set(model.params) - set(blocks))
    extra = sorted(set(blocks) - set(model.params))
    if missing or extra:
        raise ValueError(
            f"{path}: parameter mismatch (missing: {missing}, unexpected: {extra})"
        )
    for name, p in model.params.items():
        if p.data.shape != blocks[name].shape:
            raise ValueError(
                f"{path}: shape mismatch for {name}: "
                f"checkpoint {blocks[name].shape}, model {p.data.shape}"
            )
        p.data[...] = blocks[name]
    return model, header


# ------------------------------------------------------------- manifests


def write_manifest(path, command, runcfg, outputs=None, extra=None):
    """Outputs are hashed by content; paths are stored relative to the manifest."""
    path = Path(path)
    lines = [MANIFEST_MAGIC]
    lines.append(f"command={command}")
    lines.append(f"created_unix={int(time.time())}")
    lines.append(f"config_hash={runcfg.digest()}")
    for key, v in (extra or {}).items():
        lines.append(f"{key}={v}")
    for name, out_path in sorted((outputs or {}).items()):
        out_path = Path(out_path)
        try:
            rel = out_path.relative_to(path.parent)
        except ValueError:
            rel = out_path
        lines.append(f"output.{name}={rel} sha256={sha256_file(out_path)}")
    for line in runcfg.echo().splitlines():
        lines.append(f"config.{line}")
    atomic_write_text(path, "\n".join(lines) + "\n")
    return path
