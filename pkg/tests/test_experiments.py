import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsplit.config import (
    ConfigError,
    experiment_from_text,
    format_env_config,
    format_experiment,
    parse_sections,
)
from fedsplit.dqn import AgentHyperparams
from fedsplit.envs import EnvConfig, EnvKind
from fedsplit.experiments import (
    CurveSet,
    ExperimentSpec,
    Group,
    Mode,
    TransportKind,
    compare_report,
    emit,
    evaluate_poly,
    group_env_configs,
    load_mean_csv,
    make_curves,
    polyfit,
    run_experiment,
    similarity_flags,
    windowed_mean,
)

FAST_HP = AgentHyperparams(train_steps_per_epoch=8)
FAST_HPS = {"A": FAST_HP, "B": FAST_HP}


def tiny_spec(group=Group.SAME, mode=Mode.COOP, **kw):
    defaults = dict(epochs=6, runs=2, hyperparams=FAST_HPS)
    defaults.update(kw)
    return ExperimentSpec(group, mode, **defaults)


# ---------------------------------------------------------------------------
# polyfit against brute-force normal equations
# ---------------------------------------------------------------------------

def normal_equations_fit(points, degree):
    """Independent least squares: A^T A c = A^T y assembled with math.fsum
    and solved by pure-python Gaussian elimination with partial pivoting."""
    n = degree + 1
    ata = [[math.fsum(x ** (i + j) for x, _ in points) for j in range(n)] for i in range(n)]
    aty = [math.fsum(y * x ** i for x, y in points) for i in range(n)]

    rows = [ata[i] + [aty[i]] for i in range(n)]
    for col in range(n):
        pivot = max(range(col, n), key=lambda r: abs(rows[r][col]))
        rows[col], rows[pivot] = rows[pivot], rows[col]
        for r in range(col + 1, n):
            factor = rows[r][col] / rows[col][col]
            for c in range(col, n + 1):
                rows[r][c] -= factor * rows[col][c]
    coef = [0.0] * n
    for i in range(n - 1, -1, -1):
        coef[i] = (rows[i][n] - math.fsum(rows[i][j] * coef[j] for j in range(i + 1, n))) / rows[i][i]
    return np.array(coef)


def test_polyfit_recovers_exact_line():
    points = [(x, 2.0 * x + 1.0) for x in (0.0, 1.0, 2.0, 5.0)]
    coef = polyfit(points, 1)
    assert np.allclose(coef, [1.0, 2.0], atol=1e-10)


def test_polyfit_interpolates_when_degree_is_points_minus_one():
    rng = np.random.default_rng(0)
    xs = np.array([0.0, 0.7, 1.3, 2.9])
    ys = rng.normal(size=4)
    coef = polyfit(list(zip(xs, ys)), 3)
    assert np.allclose(evaluate_poly(coef, xs), ys, atol=1e-9)


def test_polyfit_matches_normal_equations_oracle():
    rng = np.random.default_rng(42)
    for trial in range(50):
        n = int(rng.integers(8, 30))
        xs = rng.uniform(-1.0, 2.0, size=n)
        ys = rng.normal(scale=3.0, size=n)
        points = list(zip(xs, ys))
        mine = polyfit(points, 4)
        oracle = normal_equations_fit(points, 4)
        rel = np.abs(mine - oracle) / np.maximum(np.abs(oracle), 1e-12)
        assert rel.max() < 1e-8, f"trial {trial}: {rel.max()}"


def test_polyfit_rejects_degenerate_and_underdetermined():
    with pytest.raises(ValueError):
        polyfit([(1.0, 2.0), (1.0, 3.0), (1.0, 4.0)], 1)  # all x equal
    with pytest.raises(ValueError):
        polyfit([(0.0, 1.0), (1.0, 2.0)], 2)  # points must exceed degree


@settings(max_examples=25)
@given(degree=st.integers(0, 4), seed=st.integers(0, 10_000))
def test_polyfit_fitted_curve_never_beats_residual_of_oracle(degree, seed):
    rng = np.random.default_rng(seed)
    n = degree + 1 + int(rng.integers(1, 10))
    xs = np.sort(rng.uniform(0.0, 1.0, size=n))
    if np.ptp(xs) == 0.0:
        return
    ys = rng.normal(size=n)
    coef = polyfit(list(zip(xs, ys)), degree)
    resid = float(np.sum((evaluate_poly(coef, xs) - ys) ** 2))
    oracle = normal_equations_fit(list(zip(xs, ys)), degree)
    resid_oracle = float(np.sum((evaluate_poly(oracle, xs) - ys) ** 2))
    assert resid <= resid_oracle + 1e-9


# ---------------------------------------------------------------------------
# curves + emission
# ---------------------------------------------------------------------------

def test_group_env_configs_agent_a_is_always_canonical():
    for group in Group:
        cfgs = group_env_configs(group)
        assert cfgs["A"] == EnvConfig()
    assert group_env_configs(Group.SAME)["B"] == EnvConfig()
    assert group_env_configs(Group.SIMILAR)["B"].gravity == 12.0
    assert group_env_configs(Group.TOTALLY_DIFF)["B"].kind is EnvKind.MOUNTAINCAR_MOD


def test_mean_is_average_of_raw_over_runs():
    raw = np.arange(2 * 2 * 4, dtype=float).reshape(2, 2, 4)
    curves = make_curves(("A", "B"), raw)
    assert np.array_equal(curves.mean, raw.mean(axis=0))
    assert curves.smooth.shape == curves.mean.shape


def test_run_experiment_shapes_and_determinism(tmp_path):
    spec = tiny_spec()
    c1 = run_experiment(spec)
    c2 = run_experiment(spec)
    assert c1.raw.shape == (2, 2, 6)
    assert np.array_equal(c1.raw, c2.raw)


def test_solo_mode_uses_one_agent():
    spec = ExperimentSpec(Group.SAME, Mode.SOLO_A, epochs=4, runs=1, hyperparams=FAST_HPS)
    curves = run_experiment(spec)
    assert curves.agents == ("A",)
    assert curves.raw.shape == (1, 1, 4)
    spec_b = ExperimentSpec(Group.SIMILAR, Mode.SOLO_B, epochs=4, runs=1, hyperparams=FAST_HPS)
    assert run_experiment(spec_b).agents == ("B",)


def test_emit_schema_and_by_hand_reaggregation(tmp_path):
    curves = run_experiment(tiny_spec(), out_dir=tmp_path)
    with open(tmp_path / "raw.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 * 2 * 6  # runs x agents x epochs

    # independent aggregation: group by (agent, epoch) and average with fsum
    acc: dict[tuple[str, int], list[float]] = {}
    for row in rows:
        acc.setdefault((row["agent"], int(row["epoch"])), []).append(float(row["return"]))
    for (agent, epoch), values in acc.items():
        i = curves.agents.index(agent)
        assert len(values) == 2
        assert abs(math.fsum(values) / len(values) - curves.mean[i, epoch]) < 1e-12

    with open(tmp_path / "mean.csv", newline="") as fh:
        mean_rows = list(csv.DictReader(fh))
    assert len(mean_rows) == 2 * 6
    assert (tmp_path / "curves.svg").read_text()[:5] == "<?xml"


def test_emit_is_byte_deterministic(tmp_path):
    curves = run_experiment(tiny_spec())
    emit(curves, tmp_path / "one")
    emit(curves, tmp_path / "two")
    for name in ("raw.csv", "mean.csv"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()


def test_emit_rejects_empty_curves(tmp_path):
    empty = CurveSet(("A",), np.zeros((0, 1, 4)), np.zeros((1, 4)), np.zeros((1, 4)))
    with pytest.raises(ValueError):
        emit(empty, tmp_path)


def test_load_mean_csv_round_trips(tmp_path):
    curves = run_experiment(tiny_spec(), out_dir=tmp_path)
    loaded = load_mean_csv(tmp_path / "mean.csv")
    assert loaded.agents == curves.agents
    assert np.allclose(loaded.mean, curves.mean, atol=0.0)
    assert np.allclose(loaded.smooth, curves.smooth, atol=0.0)


# ---------------------------------------------------------------------------
# comparison
# ---------------------------------------------------------------------------

def fake_curves(level, epochs=100):
    mean = np.full((1, epochs), float(level))
    return CurveSet(("A",), np.zeros((1, 1, epochs)), mean, mean.copy())


def test_windowed_mean_and_domain_checks():
    curves = fake_curves(50.0)
    assert windowed_mean(curves, "A", 20, 60) == 50.0
    with pytest.raises(ValueError):
        windowed_mean(curves, "B", 20, 60)
    with pytest.raises(ValueError):
        windowed_mean(curves, "A", 90, 120)


def test_compare_report_orders_and_flags():
    labeled = [("same", fake_curves(120)), ("similar", fake_curves(100)),
               ("diff-tall", fake_curves(80)), ("diff-fat", fake_curves(70)),
               ("solo-a", fake_curves(60))]
    report = compare_report(labeled)
    assert report.order == ["same", "similar", "diff-tall", "diff-fat", "solo-a"]
    assert not report.flags
    text = report.format()
    assert "ranking" in text and "same" in text

    bad = compare_report([("same", fake_curves(100)), ("similar", fake_curves(100)),
                          ("solo-a", fake_curves(99))])
    assert any("same" in f for f in bad.flags)
    assert any("solo-a" in f for f in bad.flags)


def test_compare_report_rejects_mismatched_domains():
    with pytest.raises(ValueError):
        compare_report([("x", fake_curves(1.0, epochs=100)),
                        ("y", fake_curves(1.0, epochs=80))])


def test_similarity_flags_margin_semantics():
    means = {"same": 105.0, "similar": 100.0}
    assert similarity_flags(means, margin=0.05) == []
    means = {"same": 104.9, "similar": 100.0}
    assert len(similarity_flags(means, margin=0.05)) == 1


# ---------------------------------------------------------------------------
# config round trip
# ---------------------------------------------------------------------------

def test_parse_sections_grammar():
    text = """
    # a comment
    [experiment]
    group = same
    epochs = 10

    [env.A]
    gravity = 9.8
    """
    sections = parse_sections(text)
    assert sections["experiment"]["group"] == "same"
    assert sections["env.A"]["gravity"] == "9.8"


@pytest.mark.parametrize("bad", [
    "key_without_section = 1",
    "[experiment]\nnot a kv line",
    "[experiment]\nepochs = 5\nepochs = 6",
    "[unknown_section]\nx = 1",
    "[experiment]\nbogus = 1",
    "[env.A]\nbogus = 1",
])
def test_config_rejects_malformed_input(bad):
    with pytest.raises(ConfigError):
        experiment_from_text(bad)


def test_experiment_config_round_trip():
    spec = ExperimentSpec(
        Group.DIFF_TALL, Mode.COOP, epochs=42, runs=3, base_seed=7,
        env_configs={"A": EnvConfig(), "B": EnvConfig(gravity=12.0, pole_half_length=1.5)},
        hyperparams={"A": AgentHyperparams(lr=0.05), "B": AgentHyperparams(gamma=0.8)},
        transport=TransportKind.NETWORK,
        blackboard_addr=("127.0.0.1", 7700),
        shared_key=bytes(range(32)),
        turn_order=("A", "B"))
    text = format_experiment(spec)
    again = experiment_from_text(text)
    assert again == spec


def test_env_config_text_block_round_trips_through_parser():
    cfg = EnvConfig(kind=EnvKind.MOUNTAINCAR_MOD, gravity=11.0, max_steps=150)
    block = format_env_config(cfg)
    text = "[env.B]\n" + block + "\n[experiment]\ngroup = totally-diff\n"
    spec = experiment_from_text(text)
    assert spec.env_configs["B"] == cfg


def test_config_defaults_when_sections_missing():
    spec = experiment_from_text("[experiment]\ngroup = similar\n")
    assert spec.group is Group.SIMILAR
    assert spec.mode is Mode.COOP
    assert spec.runs == 10 and spec.epochs == 200
    assert spec.transport is TransportKind.INPROCESS
    assert spec.env_configs is None  # falls back to group defaults
