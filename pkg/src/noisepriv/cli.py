"""Command-line experiment runner.

Exit codes: 0 success, 2 configuration error, 3 precondition or state error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from . import config as cfgmod
from .config import ConfigError
from .consensus import (Graph, NoiseSchedule, Trace, load_trace, metropolis_weights,
                        random_connected_graph, run_paca, save_trace)
from .distributions import DomainSet, Kind, NoiseDistribution
from .errors import ArgumentError, StateError
from .estimation import (KnowledgeRegime, attack_full_knowledge, estimate_k, extract_info_set,
                         residuals)
from .privacy import (CSV_HEADER, PrivacyReport, Scenario, compare_noise_families,
                      delta_general, delta_monte_carlo, delta_upper_bound_k, delta_whole_line)

OUTPUT_DIR_ENV = "NOISEPRIV_OUTPUT_DIR"
EXIT_CONFIG = 2
EXIT_STATE = 3


# builders ---------------------------------------------------------------

def build_graph(cfg: dict, rng: np.random.Generator) -> Graph:
    kind, n = cfg["graph.kind"], cfgmod.graph_size(cfg)
    if kind == "random":
        return random_connected_graph(n, cfg["graph.p"], rng)
    if kind == "triangle":
        return Graph.triangle()
    if kind == "star":
        if cfg["graph.hub"] >= n:
            raise ConfigError(f"graph.hub: must be < graph.n={n}")
        return Graph.star(n, cfg["graph.hub"])
    if kind == "path":
        return Graph.path(n)
    if kind == "complete":
        return Graph.complete(n)
    try:
        return Graph.from_edges(n, cfg["graph.edges"])
    except ArgumentError as exc:
        raise ConfigError(f"graph.edges: {exc}") from exc


def build_schedule(cfg: dict) -> NoiseSchedule:
    return NoiseSchedule(cfg["schedule.kind"], cfg["schedule.sigma0"], cfg["schedule.rho"],
                         cfg["schedule.K"], cfg["schedule.family"])


def build_domain(cfg: dict) -> DomainSet:
    if cfg["domain.intervals"] is None:
        return DomainSet.whole_line()
    try:
        return DomainSet.from_intervals(cfg["domain.intervals"])
    except ArgumentError as exc:
        raise ConfigError(f"domain.intervals: {exc}") from exc


def build_noise(cfg: dict, family: str) -> NoiseDistribution:
    if cfg["noise.scale"] is not None:
        return NoiseDistribution(Kind(family), 0.0, cfg["noise.scale"])
    return NoiseDistribution.with_std(family, cfg["noise.sigma"] or 1.0)


def simulate_from_config(cfg: dict, digest: Optional[str] = None) -> Trace:
    """Graph, weights and x0 come from one seeded stream; the noise from a second."""
    graph_seq, noise_seq = np.random.SeedSequence(cfg["seed"]).spawn(2)
    rng = np.random.default_rng(graph_seq)
    g = build_graph(cfg, rng)
    schedule = build_schedule(cfg)
    if cfg["simulate.x0"] == "random":
        x0 = rng.uniform(0.0, 10.0, g.n)
    else:
        x0 = np.array(cfg["simulate.x0"], dtype=float)
        if x0.shape != (g.n,):
            raise ConfigError(f"simulate.x0: expected {g.n} values, got {x0.size}")
    T = cfg["simulate.T"] if cfg["simulate.T"] is not None else schedule.K + 500
    return run_paca(g, metropolis_weights(g), x0, schedule, T,
                    np.random.default_rng(noise_seq), seed=cfg["seed"], config_digest=digest)


def _observer(cfg: dict, g: Graph, target: int) -> int:
    j = cfg["adversary.observer"]
    if j is None:
        return min(g.neighbors(target))
    if j >= g.n:
        raise ConfigError(f"adversary.observer: node {j} outside 0..{g.n - 1}")
    return j


def _targets(cfg: dict, g: Graph, observer: Optional[int]) -> list[int]:
    t = cfg["adversary.target"]
    if t == "all":
        if observer is None:
            raise ConfigError("adversary.observer: required when adversary.target is all")
        return sorted(g.neighbors(observer))
    for v in t:
        if v >= g.n:
            raise ConfigError(f"adversary.target: node {v} outside 0..{g.n - 1}")
    return t


# output -----------------------------------------------------------------

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_csv(rows: list[dict], header=CSV_HEADER) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(row.get(h)) for h in header])
    return buf.getvalue()


def render_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


class Output:
    """Resolves the destination and writes the primary file plus its manifest."""

    def __init__(self, command: str, cfg: dict, digest: str, default_ext: str,
                 always_file: bool = False):
        self.command, self.cfg, self.digest = command, cfg, digest
        self.format = cfg["output.format"] or default_ext
        path = cfg["output.path"]
        out_dir = os.environ.get(OUTPUT_DIR_ENV)
        if path is None and (out_dir or always_file):
            name = "trace.jsonl" if command == "simulate" else f"{command}.{self.format}"
            path = str(Path(out_dir or ".") / name)
        elif path is not None and out_dir and not Path(path).is_absolute():
            path = str(Path(out_dir) / path)
        self.path = None if path is None else Path(path)
        self.files: list[str] = []

    def write_text(self, text: str) -> None:
        if self.path is None:
            sys.stdout.write(text)
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(text, encoding="utf-8")
        self.files.append(str(self.path))

    def add_file(self, path) -> None:
        self.files.append(str(path))

    def finish(self) -> None:
        if not self.files:
            return
        manifest = {
            "tool": "noisepriv",
            "version": __version__,
            "command": self.command,
            "seed": self.cfg["seed"],
            "config_digest": self.digest,
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "outputs": self.files,
        }
        Path(self.files[0] + ".manifest.json").write_text(render_json(manifest), encoding="utf-8")


# commands ---------------------------------------------------------------

def _mc_scenario(dist: NoiseDistribution, domain: DomainSet, x0: float) -> Scenario:
    g = Graph.triangle()
    sched = NoiseSchedule("independent", dist.std, 0.5, 0, dist.kind)
    return Scenario(g, metropolis_weights(g), sched, (x0, 0.0, 0.0), 0, 1, domain=domain)


def cmd_delta(cfg: dict, out: Output, args) -> int:
    domain = build_domain(cfg)
    x0s = cfg["privacy.x0"]
    if x0s is None:
        if not domain.is_whole_line:
            raise ConfigError("privacy.x0: required for a bounded domain")
        x0s = [None]
    rows = []
    for fam in cfg["noise.dist"]:
        dist = build_noise(cfg, fam)
        for eps in cfg["privacy.eps"]:
            for x0 in x0s:
                if x0 is not None and not domain.contains(x0):
                    raise ConfigError(f"privacy.x0: {x0} is outside the domain")
                rep = PrivacyReport(eps=eps, dist=dist.kind.value, sigma=dist.std, x0=x0,
                                    domain=domain.describe(), seed=cfg["seed"])
                if domain.is_whole_line:
                    rep.delta_closed = delta_whole_line(dist, eps)
                rep.delta_general = delta_general(dist, domain, 0.0 if x0 is None else x0, eps)
                if cfg["privacy.mc_n"]:
                    sc = _mc_scenario(dist, domain, 0.0 if x0 is None else x0)
                    rep.delta_mc, rep.mc_stderr = delta_monte_carlo(
                        sc, eps, cfg["privacy.mc_n"], seed=cfg["seed"],
                        workers=cfg["privacy.workers"])
                    rep.mc_n = cfg["privacy.mc_n"]
                rows.append(rep)
    _emit_reports(rows, out)
    return 0


def _emit_reports(rows: list[PrivacyReport], out: Output) -> None:
    if out.format == "json":
        out.write_text(render_json([r.to_dict() for r in rows]))
    else:
        out.write_text(render_csv([r.csv_row() for r in rows]))


def cmd_simulate(cfg: dict, out: Output, args) -> int:
    trace = simulate_from_config(cfg, out.digest)
    out.path.parent.mkdir(parents=True, exist_ok=True)
    save_trace(trace, out.path)
    out.add_file(out.path)
    resid = np.abs(trace.sum_residuals()).max() if trace.T else 0.0
    print(f"nodes={trace.n} edges={len(trace.graph.edges)} T={trace.T} xbar={trace.xbar!r}")
    print(f"final max deviation from xbar: {trace.max_deviation():.3e}")
    print(f"max sum-conservation residual: {resid:.3e}")
    print(f"trace written to {out.path}")
    return 0


def _load_or_simulate(cfg: dict, args, digest: str) -> Trace:
    if args.trace:
        try:
            return load_trace(args.trace)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"--trace: {exc}") from exc
    return simulate_from_config(cfg, digest)


def cmd_estimate(cfg: dict, out: Output, args) -> int:
    trace = _load_or_simulate(cfg, args, out.digest)
    if trace.schedule is None or trace.schedule.sigma0 == 0:
        raise StateError("precondition: estimation needs a trace with a noisy schedule")
    domain = build_domain(cfg)
    regime = KnowledgeRegime(cfg["adversary.regime"])
    records = []
    for i in _targets(cfg, trace.graph, cfg["adversary.observer"]):
        j = _observer(cfg, trace.graph, i)
        for k in cfg["adversary.k"]:
            if k > trace.T:
                raise ConfigError(f"adversary.k: {k} exceeds the trace horizon T={trace.T}")
            info = extract_info_set(trace, j, i, k)
            res = residuals(info, regime, trace.graph, trace.weights)
            for eps in cfg["privacy.eps"]:
                r = estimate_k(trace.schedule, info, res, domain, eps, regime)
                rec = r.to_record()
                rec.update(eps=eps, x_true=float(trace.x0[i]),
                           abs_error=abs(r.x_hat - float(trace.x0[i])))
                records.append(rec)
    _emit_records(records, out)
    return 0


def _emit_records(records: list[dict], out: Output) -> None:
    if out.format == "csv":
        header = list(records[0]) if records else ["target"]
        out.write_text(render_csv(records, header))
    else:
        out.write_text(render_json(records))


def cmd_attack(cfg: dict, out: Output, args) -> int:
    trace = _load_or_simulate(cfg, args, out.digest)
    g = trace.graph
    observer = cfg["adversary.observer"]
    records = []
    for i in _targets(cfg, g, observer):
        j = _observer(cfg, g, i)
        if j not in g.neighbors(i):
            raise StateError(f"precondition: observer {j} is not a neighbour of target {i}")
        r = attack_full_knowledge(trace, j, i)
        truth = float(trace.x0[i])
        rec = r.to_record()
        err = abs(r.x_hat - truth)
        # a perfect recovery is eps-accurate for every eps > 0
        rec.update(x_true=truth, abs_error=err, delta=1.0 if err <= 1e-9 else None)
        records.append(rec)
    _emit_records(records, out)
    return 0


def _sweep_scenario(cfg: dict, trace_graph: Graph, w, x0_vec, i: int, j: int, k: int,
                    x0_target: float) -> Scenario:
    x0 = list(x0_vec)
    x0[i] = x0_target
    return Scenario(trace_graph, w, build_schedule(cfg), tuple(x0), i, j, k,
                    KnowledgeRegime(cfg["adversary.regime"]), build_domain(cfg))


def cmd_sweep(cfg: dict, out: Output, args) -> int:
    graph_seq, _ = np.random.SeedSequence(cfg["seed"]).spawn(2)
    rng = np.random.default_rng(graph_seq)
    g = build_graph(cfg, rng)
    w = metropolis_weights(g)
    schedule = build_schedule(cfg)
    if schedule.sigma0 == 0:
        raise ConfigError("schedule.sigma0: must be > 0 for a disclosure sweep")
    domain = build_domain(cfg)
    dist0 = schedule.initial_distribution()
    x0s = cfg["privacy.x0"]
    if x0s is None:
        if not domain.is_whole_line:
            raise ConfigError("privacy.x0: required for a bounded domain")
        x0s = [0.0]
    observer = cfg["adversary.observer"]
    rows = []
    for i in _targets(cfg, g, observer):
        j = _observer(cfg, g, i)
        for k in cfg["adversary.k"]:
            for x0 in x0s:
                sc = _sweep_scenario(cfg, g, w, [0.0] * g.n, i, j, k, x0)
                for eps in cfg["privacy.eps"]:
                    rep = PrivacyReport(eps=eps, dist=dist0.kind.value, sigma=dist0.std, x0=x0,
                                        domain=domain.describe(), k=k,
                                        regime=sc.regime.value, seed=cfg["seed"])
                    if domain.is_whole_line and not sc.uses_residuals():
                        rep.delta_closed = delta_whole_line(dist0, eps)
                    rep.delta_general = delta_upper_bound_k(sc, eps)
                    if cfg["privacy.mc_n"]:
                        rep.delta_mc, rep.mc_stderr = delta_monte_carlo(
                            sc, eps, cfg["privacy.mc_n"], seed=cfg["seed"],
                            workers=cfg["privacy.workers"])
                        rep.mc_n = cfg["privacy.mc_n"]
                    rows.append(rep)
    _emit_reports(rows, out)
    return 0


def cmd_compare(cfg: dict, out: Output, args) -> int:
    rows = []
    for eps in cfg["privacy.eps"]:
        rows.extend(compare_noise_families(cfg["compare.sigma"], eps, cfg["compare.families"],
                                           mc_n=cfg["privacy.mc_n"], seed=cfg["seed"]))
    _emit_reports(rows, out)
    if cfg["output.plot"]:
        if out.path is None:
            raise ConfigError("output.plot: needs output.path (or the output directory variable)")
        svg = out.path.with_suffix(".svg")
        plot_delta_vs_eps(rows, svg)
        out.add_file(svg)
    return 0


def plot_delta_vs_eps(rows: list[PrivacyReport], path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed salt keeps generated element ids, and so the file bytes, reproducible
    matplotlib.rcParams["svg.hashsalt"] = "noisepriv"

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for fam in dict.fromkeys(r.dist for r in rows):
        pts = sorted((r.eps, r.delta_closed) for r in rows if r.dist == fam)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=fam)
    ax.set_xlabel("epsilon")
    ax.set_ylabel("disclosure probability")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


COMMANDS = {
    "delta": (cmd_delta, "csv", False),
    "simulate": (cmd_simulate, "json", True),
    "estimate": (cmd_estimate, "json", False),
    "attack": (cmd_attack, "json", False),
    "sweep": (cmd_sweep, "csv", False),
    "compare": (cmd_compare, "csv", False),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="YAML config file with dotted keys")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("-o", "--output", help="output path (default: stdout, or "
                        f"${OUTPUT_DIR_ENV}/<command>.<format> when that is set)")
    common.add_argument("--format", choices=("csv", "json"), help="output format")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (value parsed as YAML)")

    parser = argparse.ArgumentParser(prog="noisepriv", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name in ("estimate", "attack"):
            p.add_argument("--trace", help="trace file written by `simulate`")
    return parser


def _raw_config(args) -> dict:
    raw = cfgmod.flatten(cfgmod.load(args.config)) if args.config else {}
    import yaml

    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set {item!r}: expected KEY=VALUE")
        raw[key.strip()] = yaml.safe_load(value)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.output is not None:
        raw["output.path"] = args.output
    if args.format is not None:
        raw["output.format"] = args.format
    return raw


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    func, ext, always_file = COMMANDS[args.command]
    try:
        cfg = cfgmod.resolve(_raw_config(args))
        digest = cfgmod.digest(args.command, cfg)
        out = Output(args.command, cfg, digest, ext, always_file)
        code = func(cfg, out, args)
        out.finish()
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ArgumentError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STATE


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
