"""Flat text config files for experiments.

Grammar (line oriented):

    # comment                      blank lines and #-lines are skipped
    [section]                      sections: experiment, env.<agent>,
                                   agent.<agent>, federation
    key = value                    bare values, no quotes, no inline comments

[experiment] keys: group, mode, epochs, runs, base_seed.
[env.X] keys mirror EnvConfig fields (kind: cartpole | mountaincar-mod).
[agent.X] keys mirror AgentHyperparams fields.
[federation] keys: transport (inprocess | network), blackboard (host:port),
shared_key (64 hex chars), turn_order (comma-separated agent names).

Unknown sections or keys are rejected. Every section is optional; missing
values fall back to the experiment defaults.
"""

from __future__ import annotations

import typing
from dataclasses import fields
from pathlib import Path

from .dqn import AgentHyperparams
from .envs import EnvConfig, EnvKind
from .experiments import ExperimentSpec, Group, Mode, TransportKind


class ConfigError(ValueError):
    pass


def parse_sections(text: str) -> dict[str, dict[str, str]]:
    sections: dict[str, dict[str, str]] = {}
    current: dict[str, str] | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name in sections:
                raise ConfigError(f"line {lineno}: duplicate section [{name}]")
            current = sections.setdefault(name, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        if current is None:
            raise ConfigError(f"line {lineno}: key outside any [section]")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key in current:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        current[key] = value
    return sections


def _build(cls, mapping: dict[str, str], special: dict[str, typing.Callable] = {}):
    hints = typing.get_type_hints(cls)
    valid = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in mapping.items():
        if key not in valid:
            raise ConfigError(f"unknown key {key!r} for {cls.__name__}")
        try:
            if key in special:
                kwargs[key] = special[key](value)
            elif hints[key] is int:
                kwargs[key] = int(value)
            elif hints[key] is float:
                kwargs[key] = float(value)
            else:
                kwargs[key] = value
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _parse_addr(value: str) -> tuple[str, int]:
    host, _, port = value.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigError(f"expected host:port, got {value!r}")
    return host, int(port)


def experiment_from_text(text: str) -> ExperimentSpec:
    sections = parse_sections(text)
    known = {"experiment", "federation"}

    exp = sections.pop("experiment", {})
    fed = sections.pop("federation", {})
    env_configs: dict[str, EnvConfig] = {}
    hyperparams: dict[str, AgentHyperparams] = {}
    for name, mapping in sections.items():
        kind, _, agent = name.partition(".")
        if kind == "env" and agent:
            env_configs[agent] = _build(EnvConfig, mapping, {"kind": EnvKind})
        elif kind == "agent" and agent:
            hyperparams[agent] = _build(AgentHyperparams, mapping)
        else:
            raise ConfigError(f"unknown section [{name}] (known: {sorted(known)}, "
                              f"env.<agent>, agent.<agent>)")

    try:
        group = Group(exp.get("group", "same"))
        mode = Mode(exp.get("mode", "coop"))
        transport = TransportKind(fed.get("transport", "inprocess"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    for key in exp:
        if key not in {"group", "mode", "epochs", "runs", "base_seed"}:
            raise ConfigError(f"unknown key {key!r} in [experiment]")
    for key in fed:
        if key not in {"transport", "blackboard", "shared_key", "turn_order"}:
            raise ConfigError(f"unknown key {key!r} in [federation]")

    kwargs: dict = dict(
        group=group, mode=mode,
        epochs=int(exp.get("epochs", 200)),
        runs=int(exp.get("runs", 10)),
        base_seed=int(exp.get("base_seed", 0)),
        transport=transport,
    )
    if env_configs:
        kwargs["env_configs"] = env_configs
    if hyperparams:
        kwargs["hyperparams"] = hyperparams
    if "blackboard" in fed:
        kwargs["blackboard_addr"] = _parse_addr(fed["blackboard"])
    if "shared_key" in fed:
        try:
            key = bytes.fromhex(fed["shared_key"])
        except ValueError:
            raise ConfigError("shared_key must be hex") from None
        kwargs["shared_key"] = key
    if "turn_order" in fed:
        kwargs["turn_order"] = tuple(t.strip() for t in fed["turn_order"].split(",") if t.strip())
    try:
        return ExperimentSpec(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_experiment(path: str | Path) -> ExperimentSpec:
    return experiment_from_text(Path(path).read_text(encoding="utf-8"))


def _fmt_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_env_config(cfg: EnvConfig) -> str:
    """EnvConfig as the flat key-value block used inside config files."""
    lines = [f"kind = {cfg.kind.value}"]
    for f in fields(EnvConfig):
        if f.name == "kind":
            continue
        lines.append(f"{f.name} = {_fmt_value(getattr(cfg, f.name))}")
    return "\n".join(lines)


def format_experiment(spec: ExperimentSpec) -> str:
    out = [
        "[experiment]",
        f"group = {spec.group.value}",
        f"mode = {spec.mode.value}",
        f"epochs = {spec.epochs}",
        f"runs = {spec.runs}",
        f"base_seed = {spec.base_seed}",
        "",
        "[federation]",
        f"transport = {spec.transport.value}",
        f"shared_key = {spec.shared_key.hex()}",
        f"turn_order = {','.join(spec.turn_order)}",
    ]
    if spec.blackboard_addr is not None:
        out.append(f"blackboard = {spec.blackboard_addr[0]}:{spec.blackboard_addr[1]}")
    if spec.env_configs:
        for name, cfg in spec.env_configs.items():
            out += ["", f"[env.{name}]", format_env_config(cfg)]
    for name, hp in spec.hyperparams.items():
        out += ["", f"[agent.{name}]"]
        out += [f"{f.name} = {_fmt_value(getattr(hp, f.name))}" for f in fields(AgentHyperparams)]
    return "\n".join(out) + "\n"
