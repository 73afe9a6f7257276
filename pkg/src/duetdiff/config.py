"""Run configuration: flat key=value files, env and CLI overlays.

Precedence is defaults < config file < environment (DUETDIFF_*) < command
line. Unknown keys are rejected everywhere so typos fail loudly. The
resolved configuration has a canonical text echo whose sha256 identifies
the run; manifests embed the echo, which lets any command be re-run from
its own manifest file.
"""

from __future__ import annotations

import hashlib
import os

ENV_PREFIX = "DUETDIFF_"
MANIFEST_MAGIC = "duetdiff-manifest v1"

# execution environment, not run semantics: excluded from the echo and hash
# so artifacts written to different directories stay byte-identical
NONSEMANTIC_KEYS = ("out", "threads")


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (type, default). Registry order is the canonical echo order.
REGISTRY = {
    "seed": (int, 0),
    "out": (str, "out"),
    "threads": (int, 0),
    "data.songs": (int, 200),
    "data.seed": (int, 1234),
    "data.epsilon": (float, 0.0),
    "data.seq_len": (int, 64),
    "data.seq_len_stage2": (int, 256),
    "model.dim": (int, 128),
    "model.layers": (int, 4),
    "model.heads": (int, 4),
    "model.ffn_mult": (int, 2),
    "model.single_stream": (_bool, False),
    "schedule.kind": (str, "cosine"),
    "schedule.power_exponent": (float, 2.0),
    "lr.base": (float, 2e-3),
    "lr.warmup_steps": (int, 100),
    "lr.total_steps": (int, 0),
    "train.mode": (str, "mask"),
    "train.stage1_steps": (int, 500),
    "train.stage2_steps": (int, 60),
    "train.batch": (int, 16),
    "train.accum": (int, 1),
    "train.lambda": (float, 0.2),
    "train.clip_norm": (float, 1.0),
    "rtd.rho": (float, 0.15),
    "rtd.mode": (str, "argmax"),
    "rtd.temperature": (float, 1.0),
    "cond.dropout_p": (float, 0.5),
    "sample.steps": (int, 60),
    "sample.schedule": (str, "cosine"),
    "sample.top_k": (int, 100),
    "sample.top_p": (float, 0.9),
    "sample.temperature": (float, 1.0),
    "sample.mask_temperature": (float, 10.5),
    "sample.guidance": (float, 1.0),
    "eval.songs": (int, 50),
    "aug.p": (float, 0.7),
}


class RunConfig:
    """Resolved configuration; read-only mapping over the registry keys."""

    def __init__(self, values):
        unknown = sorted(set(values) - set(REGISTRY))
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        self._values = {k: values.get(k, d) for k, (_, d) in REGISTRY.items()}

    def __getitem__(self, key):
        if key not in REGISTRY:
            raise KeyError(f"unknown config key: {key}")
        return self._values[key]

    def items(self):
        return self._values.items()

    def replace(self, **overrides):
        values = dict(self._values)
        for flag, v in overrides.items():
            values[flag.replace("__", ".")] = v
        return RunConfig(values)

    def echo(self):
        lines = []
        for key in REGISTRY:
            if key in NONSEMANTIC_KEYS:
                continue
            v = self._values[key]
            if isinstance(v, float):
                lines.append(f"{key} = {v:.17g}")
            else:
                lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"

    def digest(self):
        return hashlib.sha256(self.echo().encode("utf-8")).hexdigest()


def parse_value(key, text):
    if key not in REGISTRY:
        raise ValueError(f"unknown config key: {key}")
    typ = REGISTRY[key][0]
    try:
        return typ(text.strip())
    except ValueError as exc:
        raise ValueError(f"config key {key}: cannot parse {text!r}") from exc


def parse_config_text(text, source="<config>"):
    """key = value lines; # comments and blank lines are skipped."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected key = value, got {raw!r}")
        key, _, rest = line.partition("=")
        key = key.strip()
        values[key] = parse_value(key, rest)
    return values


def parse_config_file(path):
    """A plain config file, or a manifest file (its config echo is reused)."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if text.startswith(MANIFEST_MAGIC):
        lines = []
        for raw in text.splitlines():
            if raw.startswith("config."):
                lines.append(raw[len("config.") :])
        return parse_config_text("\n".join(lines), source=str(path))
    return parse_config_text(text, source=str(path))


def env_overrides(environ=None):
    environ = os.environ if environ is None else environ
    by_env_name = {k.upper().replace(".", "_"): k for k in REGISTRY}
    values = {}
    for name, text in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        stem = name[len(ENV_PREFIX) :]
        if stem not in by_env_name:
            raise ValueError(f"unknown config key in environment: {name}")
        key = by_env_name[stem]
        values[key] = parse_value(key, text)
    return values


def resolve(config_path=None, cli_sets=(), environ=None, **direct):
    """Layer the four sources and return the resolved RunConfig.

    cli_sets is an iterable of "key=value" strings; direct keyword
    overrides use __ in place of . and apply last (dedicated CLI flags).
    """
    values = {}
    if config_path is not None:
        values.update(parse_config_file(config_path))
    values.update(env_overrides(environ))
    for item in cli_sets:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, _, rest = item.partition("=")
        key = key.strip()
        values[key] = parse_value(key, rest)
    for flag, v in direct.items():
        if v is None:
            continue
        key = flag.replace("__", ".")
        if key not in REGISTRY:
            raise ValueError(f"unknown config key: {key}")
        values[key] = REGISTRY[key][0](v) if isinstance(v, str) else v
    return RunConfig(values)
