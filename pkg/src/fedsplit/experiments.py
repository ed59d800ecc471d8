"""Experiment harness: seeded multi-run training, curve averaging,
polynomial smoothing, CSV/SVG emission, and cross-group comparison.

Five environment groups are shipped, all two-agent: agent A always trains
on the default cart-pole so its curves are comparable across groups, and
agent B's environment is progressively less similar:

    same          B identical to A
    similar       B with gravity 12.0
    diff-tall     B with gravity 12.0 and a doubled pole
    diff-fat      B with gravity 12.0, a shorter pole, doubled pole mass
    totally-diff  B on the mountain-car variant (no shared structure)

Modes: coop (both agents, global layer synced each epoch) and solo-a /
solo-b (one agent, same topology, global layer simply never synced).

Every random stream is derived from (base_seed + run index) via
seeding.mix_seed with a string label, so identical specs reproduce
raw.csv bit-for-bit, whichever transport carries the deltas.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .blackboard import BlackBoard
from .dqn import Agent, AgentHyperparams
from .envs import EnvConfig, EnvKind
from .federation import (
    FederatedAgent,
    FederationSession,
    InProcessBus,
    NetworkTransport,
    agent_sender_id,
    run_epoch,
)
from .nn import init_model, split_topology
from .seeding import mix_seed

# demo key for local experiments; real deployments distribute their own
# out of band via the config file
DEFAULT_SHARED_KEY = hashlib.blake2b(b"fedsplit demo shared key", digest_size=32).digest()

SMOOTH_DEGREE = 4
COMPARE_WINDOWS = ((20, 40), (40, 60), (60, 100))
ORDER_WINDOW = (20, 60)


class Group(Enum):
    SAME = "same"
    SIMILAR = "similar"
    DIFF_TALL = "diff-tall"
    DIFF_FAT = "diff-fat"
    TOTALLY_DIFF = "totally-diff"


class Mode(Enum):
    COOP = "coop"
    SOLO_A = "solo-a"
    SOLO_B = "solo-b"


class TransportKind(Enum):
    INPROCESS = "inprocess"
    NETWORK = "network"


def group_env_configs(group: Group) -> dict[str, EnvConfig]:
    base = EnvConfig()
    if group is Group.SAME:
        b = base
    elif group is Group.SIMILAR:
        b = EnvConfig(gravity=12.0)
    elif group is Group.DIFF_TALL:
        b = EnvConfig(gravity=12.0, pole_half_length=1.0)
    elif group is Group.DIFF_FAT:
        b = EnvConfig(gravity=12.0, pole_half_length=0.25, pole_mass=0.2)
    elif group is Group.TOTALLY_DIFF:
        b = EnvConfig(kind=EnvKind.MOUNTAINCAR_MOD)
    else:
        raise ValueError(group)
    return {"A": base, "B": b}


@dataclass
class ExperimentSpec:
    group: Group
    mode: Mode
    epochs: int = 200
    runs: int = 10
    base_seed: int = 0
    env_configs: dict[str, EnvConfig] | None = None  # None: group defaults
    hyperparams: dict[str, AgentHyperparams] = field(default_factory=dict)
    transport: TransportKind = TransportKind.INPROCESS
    blackboard_addr: tuple[str, int] | None = None
    shared_key: bytes = DEFAULT_SHARED_KEY
    turn_order: tuple[str, ...] = ("A", "B")

    def __post_init__(self) -> None:
        if self.runs < 1 or self.epochs < 1:
            raise ValueError("runs and epochs must be >= 1")
        if self.mode is Mode.COOP and len(self.turn_order) < 2:
            raise ValueError("coop mode needs at least two agents")

    def active_agents(self) -> tuple[str, ...]:
        if self.mode is Mode.COOP:
            return self.turn_order
        return ("A",) if self.mode is Mode.SOLO_A else ("B",)

    def resolved_env_configs(self) -> dict[str, EnvConfig]:
        return self.env_configs if self.env_configs is not None \
            else group_env_configs(self.group)

    def hp_for(self, name: str) -> AgentHyperparams:
        return self.hyperparams.get(name, AgentHyperparams())


def build_agent(spec: ExperimentSpec, run_seed: int, name: str) -> Agent:
    """Agent whose model comes from one cohort-wide seed: all agents (and
    the matching solo baselines) start from identical weights.  The sync
    protocol requires identical global weights at epoch 0; starting the
    local layers identical too means they diverge only through each agent's
    private training, and a peer's global delta is computed against a
    nearby representation instead of an unrelated random basis."""
    model = init_model(mix_seed(run_seed, "model"), split_topology(name), owner=name)
    return Agent(name, model, spec.hp_for(name),
                 buffer_seed=mix_seed(run_seed, f"buffer.{name}"),
                 action_seed=mix_seed(run_seed, f"action.{name}"))


def episode_seed(run_seed: int, agent_name: str, epoch: int) -> int:
    return mix_seed(run_seed, f"env.{agent_name}.{epoch}")


@dataclass
class Cohort:
    """All agents of one cooperative run, in turn order, wired to a live
    transport."""
    members: list[FederatedAgent]
    run_seed: int
    _closers: list = field(default_factory=list)

    def run_epoch(self, epoch: int) -> list[float]:
        return run_epoch(self.members, epoch,
                         lambda name, e: episode_seed(self.run_seed, name, e))

    def close(self) -> None:
        for closer in self._closers:
            closer()

    def __enter__(self) -> "Cohort":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def build_cohort(spec: ExperimentSpec, run_seed: int) -> Cohort:
    names = spec.turn_order
    env_cfgs = spec.resolved_env_configs()
    closers = []
    if spec.transport is TransportKind.INPROCESS:
        bus = InProcessBus()
        transports = {n: bus.attach(agent_sender_id(n)) for n in names}
    else:
        addr = spec.blackboard_addr
        if addr is None:
            bb = BlackBoard("127.0.0.1", 0, len(names)).start()
            closers.append(bb.shutdown)
            addr = bb.address
        transports = {n: NetworkTransport(addr, agent_sender_id(n)) for n in names}
        closers.extend(t.close for t in transports.values())

    members = []
    for name in names:
        agent = build_agent(spec, run_seed, name)
        session = FederationSession(
            agent_id=agent_sender_id(name), key=spec.shared_key,
            transport=transports[name], n_peers=len(names) - 1,
            global_layer_id=agent.model.global_layer().layer_id)
        members.append(FederatedAgent(agent, session, env_cfgs[name]))
    return Cohort(members, run_seed, closers)


def _run_coop(spec: ExperimentSpec, run_seed: int) -> np.ndarray:
    returns = np.zeros((len(spec.turn_order), spec.epochs))
    with build_cohort(spec, run_seed) as cohort:
        for epoch in range(spec.epochs):
            returns[:, epoch] = cohort.run_epoch(epoch)
    return returns


def _run_solo(spec: ExperimentSpec, run_seed: int, name: str) -> np.ndarray:
    agent = build_agent(spec, run_seed, name)
    cfg = spec.resolved_env_configs()[name]
    returns = np.zeros((1, spec.epochs))
    for epoch in range(spec.epochs):
        _, episode_return = agent.rollout(cfg, episode_seed(run_seed, name, epoch))
        agent.train_offline()
        returns[0, epoch] = episode_return
    return returns


@dataclass
class CurveSet:
    agents: tuple[str, ...]
    raw: np.ndarray  # (runs, n_agents, epochs); empty when loaded from mean.csv
    mean: np.ndarray  # (n_agents, epochs)
    smooth: np.ndarray  # (n_agents, epochs)

    @property
    def epochs(self) -> int:
        return self.mean.shape[1]


def make_curves(agents: tuple[str, ...], raw: np.ndarray) -> CurveSet:
    mean = raw.mean(axis=0)
    epochs = raw.shape[2]
    xs = np.arange(epochs, dtype=float)
    smooth = np.empty_like(mean)
    for i in range(mean.shape[0]):
        if epochs == 1:
            smooth[i] = mean[i]
        else:
            degree = min(SMOOTH_DEGREE, epochs - 1)
            coef = polyfit(list(zip(xs, mean[i])), degree)
            smooth[i] = evaluate_poly(coef, xs)
    return CurveSet(tuple(agents), raw, mean, smooth)


def run_experiment(spec: ExperimentSpec, out_dir: str | Path | None = None) -> CurveSet:
    """Execute ``spec.runs`` independent trainings (seeds base_seed+r) and
    aggregate the per-epoch episode returns. Deterministic given the spec."""
    agents = spec.active_agents()
    raw = np.zeros((spec.runs, len(agents), spec.epochs))
    for r in range(spec.runs):
        run_seed = spec.base_seed + r
        if spec.mode is Mode.COOP:
            raw[r] = _run_coop(spec, run_seed)
        else:
            raw[r] = _run_solo(spec, run_seed, agents[0])
    curves = make_curves(agents, raw)
    if out_dir is not None:
        emit(curves, out_dir)
    return curves


# --------------------------------------------------------------------------
# polynomial smoothing
# --------------------------------------------------------------------------

def polyfit(points, degree: int) -> np.ndarray:
    """Least-squares polynomial fit; returns degree+1 coefficients in
    ascending power order."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be (x, y) pairs")
    if len(pts) <= degree:
        raise ValueError(f"need more than {degree} points for degree {degree}")
    xs, ys = pts[:, 0], pts[:, 1]
    if np.ptp(xs) == 0.0:
        raise ValueError("degenerate fit: all x values equal")
    vander = np.vander(xs, degree + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(vander, ys, rcond=None)
    return coef


def evaluate_poly(coef: np.ndarray, xs: np.ndarray) -> np.ndarray:
    return np.polynomial.polynomial.polyval(xs, coef)


# --------------------------------------------------------------------------
# emission
# --------------------------------------------------------------------------

def _fmt(value: float) -> str:
    return repr(float(value))


def emit(curves: CurveSet, out_dir: str | Path) -> dict[str, Path]:
    """Write raw.csv, mean.csv and a self-contained SVG plot. Re-emitting
    identical curves produces byte-identical CSV files."""
    if curves.mean.size == 0 or curves.raw.shape[0] == 0:
        raise ValueError("nothing to emit: empty curve set")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    raw_path = out / "raw.csv"
    lines = ["run,agent,epoch,return"]
    runs, n_agents, epochs = curves.raw.shape
    for r in range(runs):
        for i in range(n_agents):
            for e in range(epochs):
                lines.append(f"{r},{curves.agents[i]},{e},{_fmt(curves.raw[r, i, e])}")
    raw_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    mean_path = out / "mean.csv"
    lines = ["agent,epoch,mean,smooth"]
    for i in range(n_agents):
        for e in range(epochs):
            lines.append(f"{curves.agents[i]},{e},"
                         f"{_fmt(curves.mean[i, e])},{_fmt(curves.smooth[i, e])}")
    mean_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    svg_path = out / "curves.svg"
    _plot_curves(curves, svg_path)
    return {"raw": raw_path, "mean": mean_path, "plot": svg_path}


def _plot_curves(curves: CurveSet, path: Path) -> None:
    from matplotlib.figure import Figure  # local: keep module import light

    fig = Figure(figsize=(8.0, 5.0))
    ax = fig.add_subplot(111)
    xs = np.arange(curves.epochs)
    for i, name in enumerate(curves.agents):
        (line,) = ax.plot(xs, curves.mean[i], alpha=0.35)
        ax.plot(xs, curves.smooth[i], linewidth=2.0, color=line.get_color(),
                label=f"agent {name}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("episode return (mean over runs)")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.savefig(path, format="svg", metadata={"Date": None})


def load_mean_csv(path: str | Path) -> CurveSet:
    """Rebuild a CurveSet (means and smooth only) from an emitted mean.csv."""
    rows = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if rows[0] != "agent,epoch,mean,smooth":
        raise ValueError(f"{path}: not a mean.csv file")
    per_agent: dict[str, list[tuple[int, float, float]]] = {}
    for row in rows[1:]:
        agent, epoch, mean, smooth = row.split(",")
        per_agent.setdefault(agent, []).append((int(epoch), float(mean), float(smooth)))
    agents = tuple(per_agent)
    epochs = len(next(iter(per_agent.values())))
    mean = np.zeros((len(agents), epochs))
    smooth = np.zeros((len(agents), epochs))
    for i, agent in enumerate(agents):
        entries = sorted(per_agent[agent])
        if len(entries) != epochs:
            raise ValueError(f"{path}: agents disagree on epoch domain")
        mean[i] = [m for _, m, _ in entries]
        smooth[i] = [s for _, _, s in entries]
    return CurveSet(agents, np.zeros((0, len(agents), epochs)), mean, smooth)


# --------------------------------------------------------------------------
# comparison
# --------------------------------------------------------------------------

def windowed_mean(curves: CurveSet, agent: str, lo: int, hi: int) -> float:
    """Mean of an agent's averaged return over epochs [lo, hi)."""
    if agent not in curves.agents:
        raise ValueError(f"agent {agent!r} not in curve set {curves.agents}")
    if not 0 <= lo < hi <= curves.epochs:
        raise ValueError(f"window [{lo},{hi}) outside epoch domain 0..{curves.epochs}")
    idx = curves.agents.index(agent)
    return float(curves.mean[idx, lo:hi].mean())


@dataclass
class CompareReport:
    agent: str
    labels: list[str]
    windows: tuple[tuple[int, int], ...]
    table: dict[str, dict[tuple[int, int], float]]
    order: list[str]  # descending by mean over ORDER_WINDOW
    order_means: dict[str, float]
    flags: list[str]

    def format(self) -> str:
        header = ["group".ljust(14)] + [f"[{lo},{hi})".rjust(10) for lo, hi in self.windows]
        header.append(f"[{ORDER_WINDOW[0]},{ORDER_WINDOW[1]})".rjust(10))
        out = ["  ".join(header)]
        for label in self.labels:
            cells = [label.ljust(14)]
            cells += [f"{self.table[label][w]:10.2f}" for w in self.windows]
            cells.append(f"{self.order_means[label]:10.2f}")
            out.append("  ".join(cells))
        out.append("ranking (agent %s, epochs %d-%d): %s"
                   % (self.agent, ORDER_WINDOW[0], ORDER_WINDOW[1] - 1,
                      " >= ".join(self.order)))
        for flag in self.flags:
            out.append(f"FLAG: {flag}")
        return "\n".join(out)


def compare_report(labeled: list[tuple[str, CurveSet]], agent: str = "A",
                   margin: float = 0.05) -> CompareReport:
    """Windowed-mean table over COMPARE_WINDOWS plus a ranking of the curve
    sets by the agent's mean over ORDER_WINDOW. When the labels include the
    canonical group names, ordering violations (with the multiplicative
    margin) are flagged."""
    if not labeled:
        raise ValueError("nothing to compare")
    epochs = labeled[0][1].epochs
    for label, curves in labeled:
        if curves.epochs != epochs:
            raise ValueError(f"{label}: epoch domain {curves.epochs} != {epochs}")
    windows = tuple(w for w in COMPARE_WINDOWS if w[1] <= epochs)
    if ORDER_WINDOW[1] > epochs:
        raise ValueError(f"need at least {ORDER_WINDOW[1]} epochs to rank groups")

    table = {label: {w: windowed_mean(curves, agent, *w) for w in windows}
             for label, curves in labeled}
    order_means = {label: windowed_mean(curves, agent, *ORDER_WINDOW)
                   for label, curves in labeled}
    order = sorted(order_means, key=order_means.__getitem__, reverse=True)
    flags = similarity_flags(order_means, margin)
    return CompareReport(agent, [l for l, _ in labeled], windows, table,
                         order, order_means, flags)


def similarity_flags(means: dict[str, float], margin: float = 0.05) -> list[str]:
    """Violations of the expected environment-similarity ordering among
    whatever canonical labels are present: same >= similar >= best of the
    diff groups, and every cooperative group >= solo-a, each by the
    multiplicative margin (a >= (1+margin)*b)."""
    def exceeds(a: str, b_value: float, b_desc: str) -> list[str]:
        if a not in means:
            return []
        if means[a] >= (1.0 + margin) * b_value:
            return []
        return [f"{a} ({means[a]:.2f}) not >= {b_desc} by {margin:.0%}"]

    flags: list[str] = []
    if "similar" in means:
        flags += exceeds("same", means["similar"], f"similar ({means['similar']:.2f})")
    diff_groups = [g for g in ("diff-tall", "diff-fat") if g in means]
    if diff_groups:
        best = max(means[g] for g in diff_groups)
        flags += exceeds("similar", best, f"max(diff) ({best:.2f})")
    if "solo-a" in means:
        for coop in ("same", "similar", "diff-tall", "diff-fat", "totally-diff"):
            flags += exceeds(coop, means["solo-a"], f"solo-a ({means['solo-a']:.2f})")
    return flags
