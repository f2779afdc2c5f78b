"""Experiment configuration, figure presets, orchestration and export.

A configuration expands into cells, one per combination of ``l``, filter
variant, covariance mode, selection mode and (for sweeps) grid value. All
cells share the model, the graph, the consensus step ``gamma`` and the
Monte-Carlo noise streams.
"""
from dataclasses import asdict, dataclass, field, replace
import csv
import hashlib
import io
import json
from pathlib import Path
import sys

import numpy as np

from .analysis import gamma_matrix, mse_from_cov, steady_state_attacked
from .attack import (
    AttackPlan,
    attack_context,
    bcd_design,
    byzantine_set,
    design_covariance,
    random_covariance,
)
from .errors import ConfigError
from .filtering import gamma_bound, steady_state_covariance
from .model import NetworkGraph, bench_model, stream
from .selection import init_schedule, parse_pattern
from .simulation import VARIANTS, Scenario, local_gains, run_network

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SIGMA_MODES = ("none", "random", "optimal")
S_MODES = ("schedule", "bcd")
SWEEPS = ("none", "byzantine", "trace")
PRESETS = ("fig2", "fig3", "fig5", "fig6", "fig7", "fig8", "fig9")
CSV_HEADER = ["k", "l", "variant", "sigma_mode", "s_mode", "mse_empirical", "mse_prime", "mse_analytic"]
STATE_DIM = 8


@dataclass(frozen=True)
class AttackConfig:
    enabled: bool = False
    B: int = 5
    k0: int = 30
    # None means eta = L
    eta: float = None
    sigma_modes: tuple = ("random",)
    s_modes: tuple = ("schedule",)


@dataclass(frozen=True)
class BCDConfig:
    T: int = 10


@dataclass(frozen=True)
class SweepConfig:
    """``byzantine`` sweeps the Byzantine count, ``trace`` sweeps ``tr(Sigma)/L``."""

    kind: str = "none"
    values: tuple = ()


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "custom"
    master_seed: int = 7
    L: int = 25
    edge_prob: float = 0.15
    l: tuple = (2, 4, 6, 8)
    tau: int = 1
    gamma: float = 0.9
    horizon: int = 150
    runs: int = 100
    variants: tuple = ("suboptimal",)
    selection: str = None
    attack: AttackConfig = field(default_factory=AttackConfig)
    bcd: BCDConfig = field(default_factory=BCDConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    out_dir: str = "out"

    def __post_init__(self):
        validate(self)

    @property
    def eta(self):
        return float(self.L) if self.attack.eta is None else float(self.attack.eta)


def _positive_int(cfg_value, name, minimum=1):
    if isinstance(cfg_value, bool) or not isinstance(cfg_value, (int, np.integer)) or cfg_value < minimum:
        raise ConfigError(name, f"must be an integer >= {minimum}, got {cfg_value!r}")


def _tokens(values, allowed, name):
    if not values:
        raise ConfigError(name, "must not be empty")
    for v in values:
        if v not in allowed:
            raise ConfigError(name, f"{v!r} is not one of {allowed}")


def validate(cfg):
    _positive_int(cfg.master_seed, "master_seed", 0)
    _positive_int(cfg.L, "L", 2)
    if not 0.0 < cfg.edge_prob <= 1.0:
        raise ConfigError("edge_prob", f"must lie in (0, 1], got {cfg.edge_prob}")
    if not cfg.l:
        raise ConfigError("l", "must list at least one value")
    for l in cfg.l:
        if isinstance(l, bool) or not isinstance(l, (int, np.integer)) or not 1 <= l <= STATE_DIM:
            raise ConfigError("l", f"each value must satisfy 1 <= l <= m={STATE_DIM}, got {l!r}")
    _positive_int(cfg.tau, "tau", 0)
    if not 0.0 < cfg.gamma <= 1.0:
        raise ConfigError("gamma", f"multiplier of gamma* must lie in (0, 1], got {cfg.gamma}")
    _positive_int(cfg.horizon, "horizon")
    _positive_int(cfg.runs, "runs")
    _tokens(cfg.variants, VARIANTS, "variant")
    if cfg.selection is not None:
        try:
            s = parse_pattern(cfg.selection)
        except ValueError as exc:
            raise ConfigError("selection", str(exc)) from None
        if s.size != STATE_DIM or any(int(s.sum()) != l for l in cfg.l):
            raise ConfigError("selection", f"pattern must have length {STATE_DIM} and l ones")
    a = cfg.attack
    _positive_int(a.B, "attack.B")
    if a.B > cfg.L:
        raise ConfigError("attack.B", f"must not exceed L={cfg.L}")
    _positive_int(a.k0, "attack.k0")
    if a.eta is not None and not a.eta > 0:
        raise ConfigError("attack.eta", "must be positive")
    _tokens(a.sigma_modes, SIGMA_MODES, "attack.sigma")
    _tokens(a.s_modes, S_MODES, "attack.selection")
    if a.enabled and a.k0 >= cfg.horizon:
        raise ConfigError("attack.k0", "attack must start before the horizon")
    _positive_int(cfg.bcd.T, "bcd.T")
    sw = cfg.sweep
    if sw.kind not in SWEEPS:
        raise ConfigError("sweep.kind", f"{sw.kind!r} is not one of {SWEEPS}")
    if sw.kind != "none":
        if not sw.values:
            raise ConfigError("sweep.values", "a sweep needs grid values")
        if not a.enabled:
            raise ConfigError("sweep.kind", "sweeps require attack.enabled = true")
    if sw.kind == "byzantine":
        for v in sw.values:
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or not 1 <= v <= cfg.L:
                raise ConfigError("sweep.values", f"Byzantine counts must lie in 1..L, got {v!r}")
    if sw.kind == "trace" and any(not v > 0 for v in sw.values):
        raise ConfigError("sweep.values", "trace values must be positive")


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _as_tuple(v):
    return tuple(v) if isinstance(v, (list, tuple)) else (v,)


_TOP = {"name", "master_seed", "L", "edge_prob", "l", "tau", "gamma", "horizon", "runs", "variant", "selection"}
_ATTACK = {"attack.enabled": "enabled", "attack.B": "B", "attack.k0": "k0", "attack.eta": "eta",
           "attack.sigma": "sigma_modes", "attack.selection": "s_modes"}


def config_from_mapping(flat):
    """Build a config from flat dotted keys such as ``attack.k0``."""
    top, atk, bcd, sweep, out_dir = {}, {}, {}, {}, None
    for key, v in flat.items():
        if key in _TOP:
            if key == "variant":
                top["variants"] = _as_tuple(v)
            elif key == "l":
                top["l"] = _as_tuple(v)
            else:
                top[key] = v
        elif key in _ATTACK:
            name = _ATTACK[key]
            atk[name] = _as_tuple(v) if name in ("sigma_modes", "s_modes") else v
        elif key == "bcd.T":
            bcd["T"] = v
        elif key == "sweep.kind":
            sweep["kind"] = v
        elif key == "sweep.values":
            sweep["values"] = _as_tuple(v)
        elif key == "output.dir":
            out_dir = str(v)
        else:
            raise ConfigError(key, "unknown configuration key")
    if out_dir is not None:
        top["out_dir"] = out_dir
    try:
        return ExperimentConfig(attack=AttackConfig(**atk), bcd=BCDConfig(**bcd), sweep=SweepConfig(**sweep), **top)
    except TypeError as exc:
        raise ConfigError("config", str(exc)) from None


def parse_config(text):
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config", f"malformed config: {exc}") from None
    return config_from_mapping(_flatten(data))


def load_config(path):
    return parse_config(Path(path).read_text(encoding="utf-8"))


def config_to_mapping(cfg):
    d = asdict(cfg)
    a, b, s = d.pop("attack"), d.pop("bcd"), d.pop("sweep")
    flat = {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}
    flat["variant"] = flat.pop("variants")
    flat["output.dir"] = flat.pop("out_dir")
    for key, name in _ATTACK.items():
        v = a[name]
        flat[key] = list(v) if isinstance(v, tuple) else v
    flat["bcd.T"] = b["T"]
    flat["sweep.kind"] = s["kind"]
    flat["sweep.values"] = list(s["values"])
    return flat


def preset(name):
    """Configuration reproducing one figure's sweep."""
    attack = AttackConfig(enabled=True, B=5, k0=30)
    base = ExperimentConfig(name=name, attack=attack)
    if name == "fig2":
        return replace(base, horizon=100, attack=AttackConfig(enabled=False, sigma_modes=("none",)))
    if name == "fig3":
        return replace(base, variants=("suboptimal", "full"))
    if name == "fig5":
        return replace(base, attack=replace(attack, s_modes=("schedule", "bcd")))
    if name in ("fig6", "fig7"):
        return replace(base, attack=replace(attack, sigma_modes=("random", "optimal")))
    if name == "fig8":
        # 1..10 Byzantine agents of 25, i.e. 4% to 40%
        return replace(base, attack=replace(attack, sigma_modes=("optimal",)),
                       sweep=SweepConfig("byzantine", tuple(range(1, 11))))
    if name == "fig9":
        return replace(base, sweep=SweepConfig("trace", (0.25, 0.5, 1.0, 2.0, 4.0)))
    raise ConfigError("preset", f"unknown preset {name!r}; expected one of {PRESETS}")


@dataclass(frozen=True)
class Setup:
    """Quantities shared by every cell of a configuration."""

    cfg: ExperimentConfig
    model: object
    graph: object
    P_inf: tuple
    gamma_star: float
    gamma: float
    freeze_iterations: int


def build_setup(cfg):
    model, graph = bench_model(cfg.master_seed, cfg.L, cfg.edge_prob)
    P_inf, iters = [], 0
    for obs in model.agents:
        P, it = steady_state_covariance(model.A, obs.H, obs.R, model.Q, full_output=True)
        P_inf.append(P)
        iters = max(iters, it)
    prof = gamma_bound(graph, P_inf, model.H, model.R, 1.0, A=model.A)
    # one gamma for all l, below gamma*(p_e) for every p_e <= 1
    return Setup(cfg, model, graph, tuple(P_inf), prof.gamma_star, cfg.gamma * prof.gamma_star, iters)


def schedules_for(setup, l):
    cfg = setup.cfg
    m = setup.model.m
    pattern = cfg.selection
    return tuple(
        init_schedule(m, l, cfg.tau, pattern=pattern, rng=None if pattern else stream(cfg.master_seed, 0, f"sched{i}"))
        for i in range(setup.model.L)
    )


@dataclass
class CellResult:
    l: int
    variant: str
    sigma_mode: str
    s_mode: str
    sweep_value: object
    run: object
    byzantine: tuple
    steady_empirical: float
    steady_prime: float
    steady_analytic: float
    bcd_history: list = None
    sigma_sha256: str = None
    patterns: tuple = None

    @property
    def freeze_step(self):
        return self.run.gains.freeze_step


def analytic_steady(setup, sc, gains):
    """Expected steady-state MSE with the frozen gains and the ``p_e``-scaled attack term."""
    md = setup.model
    K, C = gains.K[-1], gains.C[-1]
    F_hat = md.A[None] - K @ md.H
    sigma = sc.attack.sigma if sc.attack is not None else None
    P = steady_state_attacked(F_hat, K, md.R, md.Q, C, sigma, setup.graph, sc.p_e)
    return mse_from_cov(P)


def _sha(arr):
    return hashlib.sha256(np.ascontiguousarray(arr, dtype=float).tobytes()).hexdigest()


def attack_inputs(setup, sc):
    """Consensus gains and realized patterns at ``k0`` for a scenario whose attack is set."""
    gains = local_gains(sc)
    k0 = sc.attack.k0
    return gains.C[k0], gains.patterns[k0]


def design_attack(setup, sc, sigma_mode, s_mode, eta):
    """Attack plan for a cell; returns the plan and the BCD objective history."""
    cfg, md = setup.cfg, setup.model
    byz = sc.attack.byzantine
    L, m = md.L, md.m
    if sigma_mode == "random":
        sigma = random_covariance(byz, eta, m, L, stream(cfg.master_seed, 0, "sigma"))
    else:
        sigma = np.zeros((L * m, L * m))
    plan = replace(sc.attack, sigma=sigma)
    C0, s0 = attack_inputs(setup, replace(sc, attack=plan))
    if sigma_mode == "optimal":
        Gamma = gamma_matrix(C0, setup.graph, s0, plan.z)
        sigma = design_covariance(Gamma, eta, plan.z, m).sigma
        plan = AttackPlan(byz, sigma, eta, plan.k0, m)
    history = None
    if s_mode == "bcd":
        ctx = attack_context(C0, setup.graph, byz)
        l = sc.schedules[0].l
        res = bcd_design(ctx, plan.sigma, l, cfg.bcd.T, s0[list(byz)], exact=True)
        plan = AttackPlan(byz, plan.sigma, eta, plan.k0, m, patterns=tuple(map(tuple, res.patterns)))
        history = res.history
    return plan, history


def run_cell(setup, l, variant="suboptimal", sigma_mode="none", s_mode="schedule", B=None, eta=None,
             sweep_value=None):
    cfg, md = setup.cfg, setup.model
    scheds = schedules_for(setup, l)
    sc = Scenario(md, setup.graph, scheds, setup.gamma, cfg.horizon, variant=variant)
    byz, history, sha = (), None, None
    if cfg.attack.enabled:
        B = cfg.attack.B if B is None else B
        eta = cfg.eta if eta is None else eta
        byz = byzantine_set(setup.graph, B)
        Lm = md.L * md.m
        sc = replace(sc, attack=AttackPlan(byz, np.zeros((Lm, Lm)), eta, cfg.attack.k0, md.m))
        plan, history = design_attack(setup, sc, sigma_mode, s_mode, eta)
        sc = replace(sc, attack=plan)
        sha = _sha(plan.sigma)
    run = run_network(sc, cfg.runs, cfg.master_seed)
    start = cfg.horizon // 2
    return CellResult(
        l, variant, sigma_mode, s_mode, sweep_value, run, byz,
        run.steady("mse_empirical", start), run.steady("mse_prime", start),
        analytic_steady(setup, sc, run.gains), history, sha,
        sc.attack.patterns if sc.attack is not None else None,
    )


def cells(cfg):
    """Cell keys ``(l, variant, sigma_mode, s_mode, sweep_value)`` in output order."""
    sigma_modes = cfg.attack.sigma_modes if cfg.attack.enabled else ("none",)
    s_modes = cfg.attack.s_modes if cfg.attack.enabled else ("schedule",)
    grid = cfg.sweep.values if cfg.sweep.kind != "none" else (None,)
    return [
        (l, v, sm, so, g)
        for l in cfg.l for v in cfg.variants for sm in sigma_modes for so in s_modes for g in grid
    ]


@dataclass
class ScenarioOutput:
    config: ExperimentConfig
    setup: Setup
    cells: list
    manifest: dict


def run_scenario(cfg):
    setup = build_setup(cfg)
    out = []
    for l, variant, sm, so, g in cells(cfg):
        kw = {}
        if cfg.sweep.kind == "byzantine":
            kw["B"] = int(g)
        elif cfg.sweep.kind == "trace":
            kw["eta"] = float(g) * cfg.L
        out.append(run_cell(setup, l, variant, sm, so, sweep_value=g, **kw))
    return ScenarioOutput(cfg, setup, out, build_manifest(setup, out))


def build_manifest(setup, results):
    cfg = setup.cfg
    gstar = {str(l): setup.gamma_star / np.sqrt(l / setup.model.m) for l in sorted(set(cfg.l))}
    return {
        "name": cfg.name,
        "master_seed": cfg.master_seed,
        "config": config_to_mapping(cfg),
        "gamma": setup.gamma,
        "gamma_star_full_sharing": setup.gamma_star,
        "gamma_star": gstar,
        "gamma_within_bound": bool(all(setup.gamma <= g for g in gstar.values())),
        "riccati_iterations": setup.freeze_iterations,
        "graph_edges": [list(e) for e in setup.graph.edges()],
        "cells": [
            {
                "l": c.l, "variant": c.variant, "sigma_mode": c.sigma_mode, "s_mode": c.s_mode,
                "sweep_value": c.sweep_value, "byzantine": list(c.byzantine),
                "freeze_step": c.freeze_step, "sigma_sha256": c.sigma_sha256,
                "patterns": ["".join(map(str, p)) for p in c.patterns] if c.patterns else None,
                "bcd_history": c.bcd_history,
                "steady_empirical": c.steady_empirical, "steady_prime": c.steady_prime,
                "steady_analytic": c.steady_analytic,
            }
            for c in results
        ],
    }


def _fmt(x):
    return format(float(x), ".12g")


def csv_text(output):
    """CSV of a scenario: per-step rows, or one steady row per grid point for sweeps."""
    results = output.cells if isinstance(output, ScenarioOutput) else list(output)
    if not results:
        raise ValueError("cannot export an empty series bundle")
    sweep = output.config.sweep.kind if isinstance(output, ScenarioOutput) else "none"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if sweep == "none":
        w.writerow(CSV_HEADER)
        for c in results:
            r = c.run
            for k in range(len(r.mse_empirical)):
                w.writerow([k, c.l, c.variant, c.sigma_mode, c.s_mode,
                            _fmt(r.mse_empirical[k]), _fmt(r.mse_prime[k]), _fmt(r.mse_analytic[k])])
    else:
        w.writerow(CSV_HEADER + ["sweep", "sweep_value"])
        for c in results:
            k = len(c.run.mse_empirical) - 1
            w.writerow([k, c.l, c.variant, c.sigma_mode, c.s_mode, _fmt(c.steady_empirical),
                        _fmt(c.steady_prime), _fmt(c.steady_analytic), sweep, _fmt(c.sweep_value)])
    return buf.getvalue()


def export_csv(output, path):
    path = Path(path)
    path.write_text(csv_text(output), encoding="utf-8")
    return path


PLOT_TEMPLATE = '''"""Plot {name}.csv (generated; requires pandas and matplotlib)."""
import sys

import matplotlib.pyplot as plt
import pandas as pd

df = pd.read_csv(sys.argv[1] if len(sys.argv) > 1 else "{name}.csv")
x = "{x}"
fig, ax = plt.subplots()
for key, g in df.groupby(["l", "variant", "sigma_mode", "s_mode"]):
    ax.plot(g[x], g["mse_empirical"], label="l=%s %s %s %s" % key)
ax.set_xlabel("{xlabel}")
ax.set_ylabel("MSE")
ax.legend(fontsize="small")
fig.savefig("{name}.png", dpi=150)
'''


def write_outputs(output, out_dir):
    """Write ``<name>.csv``, ``<name>.manifest.json`` and a plotting script into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = output.config.name
    csv_path = export_csv(output, out / f"{name}.csv")
    manifest = dict(output.manifest, csv_sha256=hashlib.sha256(csv_path.read_bytes()).hexdigest())
    (out / f"{name}.manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    sweep = output.config.sweep.kind != "none"
    script = PLOT_TEMPLATE.format(name=name, x="sweep_value" if sweep else "k",
                                  xlabel=output.config.sweep.kind if sweep else "time index k")
    (out / f"plot_{name}.py").write_text(script, encoding="utf-8")
    return csv_path


# Serialized attacker state at k0 and the text artifact produced by the design.

def state_at_k0(cfg, l=None):
    """Everything the attacker needs at ``k0`` for the first (or given) ``l`` of ``cfg``."""
    setup = build_setup(cfg)
    md = setup.model
    l = cfg.l[0] if l is None else l
    byz = byzantine_set(setup.graph, cfg.attack.B)
    Lm = md.L * md.m
    sc = Scenario(md, setup.graph, schedules_for(setup, l), setup.gamma, cfg.horizon,
                  attack=AttackPlan(byz, np.zeros((Lm, Lm)), cfg.eta, cfg.attack.k0, md.m))
    C0, s0 = attack_inputs(setup, sc)
    sigma = random_covariance(byz, cfg.eta, md.m, md.L, stream(cfg.master_seed, 0, "sigma"))
    return {
        "m": md.m, "L": md.L, "l": l, "eta": cfg.eta, "k0": cfg.attack.k0, "T": cfg.bcd.T,
        "byzantine": list(byz),
        "E": setup.graph.E.astype(int).tolist(),
        "C": C0.tolist(),
        "patterns": ["".join(map(str, p)) for p in s0],
        "sigma": sigma.tolist(),
    }


def write_state(state, path):
    Path(path).write_text(json.dumps(state, sort_keys=True) + "\n", encoding="utf-8")


def read_state(path):
    try:
        state = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError("state", f"malformed state file: {exc}") from None
    missing = {"m", "L", "l", "eta", "T", "byzantine", "E", "C", "patterns", "sigma"} - set(state)
    if missing:
        raise ConfigError("state", f"missing fields {sorted(missing)}")
    return state


def design_from_state(state, mode):
    """Run the covariance design (``cov``), the BCD design (``select``) or both."""
    if mode not in ("cov", "select", "both"):
        raise ConfigError("mode", f"unknown mode {mode!r}")
    m, L = int(state["m"]), int(state["L"])
    graph = NetworkGraph(np.array(state["E"]))
    C = np.array(state["C"], dtype=float)
    s0 = np.array([parse_pattern(p) for p in state["patterns"]])
    byz = tuple(state["byzantine"])
    eta = float(state["eta"])
    z = np.zeros(L, dtype=int)
    z[list(byz)] = 1
    sigma = np.array(state["sigma"], dtype=float)
    out = {}
    if mode in ("cov", "both"):
        sigma = design_covariance(gamma_matrix(C, graph, s0, z), eta, z, m).sigma
        out["sigma"] = sigma
    if mode in ("select", "both"):
        ctx = attack_context(C, graph, byz)
        res = bcd_design(ctx, sigma, int(state["l"]), int(state["T"]), s0[list(byz)], exact=True)
        out["patterns"] = {j: "".join(map(str, p)) for j, p in zip(byz, res.patterns)}
    return out


def format_artifact(design):
    """Text artifact: ``sigma <rows> <cols>`` then row-major values, ``patterns <n> <m>`` then ``<agent> <bits>``."""
    lines = []
    if "sigma" in design:
        S = design["sigma"]
        lines.append(f"sigma {S.shape[0]} {S.shape[1]}")
        lines.extend(" ".join(format(v, ".17g") for v in row) for row in S)
    if "patterns" in design:
        pats = design["patterns"]
        m = len(next(iter(pats.values()))) if pats else 0
        lines.append(f"patterns {len(pats)} {m}")
        lines.extend(f"{j} {p}" for j, p in sorted(pats.items()))
    return "\n".join(lines) + "\n"


def parse_artifact(text):
    lines = text.splitlines()
    out, i = {}, 0
    while i < len(lines):
        head = lines[i].split()
        if head[0] == "sigma":
            r, c = int(head[1]), int(head[2])
            out["sigma"] = np.array([[float(v) for v in lines[i + 1 + k].split()] for k in range(r)]).reshape(r, c)
            i += 1 + r
        elif head[0] == "patterns":
            n = int(head[1])
            out["patterns"] = {int(a): p for a, p in (lines[i + 1 + k].split() for k in range(n))}
            i += 1 + n
        else:
            raise ValueError(f"unexpected artifact line {lines[i]!r}")
    return out


__all__ = [
    "AttackConfig", "BCDConfig", "SweepConfig", "ExperimentConfig", "PRESETS", "CSV_HEADER",
    "preset", "parse_config", "load_config", "run_scenario", "run_cell", "build_setup",
    "export_csv", "csv_text", "write_outputs", "state_at_k0", "design_from_state",
    "format_artifact", "parse_artifact"
]
