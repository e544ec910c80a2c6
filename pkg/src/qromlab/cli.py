"""Experiment runner: configs in, CSV rows and JSON summaries out.

Trials are independent and draw their randomness from counter-based
streams keyed by (master seed, trial index), so results do not depend on
scheduling order and a fixed seed reproduces every row exactly.  The
only nondeterministic outputs are the timing columns.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import pcc, zoo
from .algebra import GroupSpec
from .attack import full_attack, trial_rng
from .circuits import (
    averaged_fixed_distribution,
    random_ops,
    run_purified,
    total_variation,
    work_distribution,
)
from .errors import QromlabError, ReplayMismatchError
from .learner import learn
from .oracle import OracleSpec
from .protocol import Protocol, Query, run_concrete, validate
from .qstate import QuantumState

MODES = ("attack", "learner-only", "pcc-search", "oracle-equivalence")
ATTACK_COLUMNS = ("trial", "k_E", "k_A", "k_B", "L_size", "aborted",
                  "eq_find", "eq_simulatedm", "eq_agrees", "seconds")
LEARNER_COLUMNS = ("trial", "L_size", "aborted", "max_residual_weight", "seconds")
EQUIV_COLUMNS = ("trial", "tv_distance", "seconds")
REPLAY_TOL = 1e-9


class ConfigError(QromlabError):
    """Invalid experiment configuration; carries the itemized complaints."""

    def __init__(self, items):
        self.items = list(items)
        super().__init__("; ".join(self.items))


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def worker_count() -> int:
    env = os.environ.get("QROMLAB_THREADS")
    if env is not None:
        try:
            cap = int(env)
        except ValueError:
            raise ConfigError([f"QROMLAB_THREADS must be an integer, got {env!r}"])
        return max(1, cap)
    return min(8, os.cpu_count() or 1)


def _run_trials(fn, trials: int) -> list:
    workers = worker_count()
    if workers == 1:
        return [fn(t) for t in range(trials)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(trials)))


@dataclass
class ExperimentConfig:
    mode: str
    trials: int = 100
    seed: int = 0
    out_dir: str = "out"
    protocol: str | None = None
    protocol_json: dict | None = None
    group: tuple[int, ...] = (2,)
    n: int = 4
    eps: tuple[float, ...] = (0.05,)
    lam: float = 0.05
    cap: int | None = None
    guess_only: bool = False
    force_simulated_oracle: bool = False
    dump_relevant: bool = True
    delta: float = 0.1
    d: int = 2
    queries: int = 3

    _FIELDS = ("mode", "trials", "seed", "out_dir", "protocol", "protocol_json",
               "group", "n", "eps", "lam", "cap", "guess_only",
               "force_simulated_oracle", "dump_relevant", "delta", "d", "queries")

    @classmethod
    def from_json(cls, data: dict) -> "ExperimentConfig":
        unknown = sorted(set(data) - set(cls._FIELDS))
        if unknown:
            raise ConfigError([f"unknown config key {k!r}" for k in unknown])
        if "mode" not in data:
            raise ConfigError(["config needs a 'mode'"])
        kwargs = dict(data)
        if "eps" in kwargs and not isinstance(kwargs["eps"], (list, tuple)):
            kwargs["eps"] = [kwargs["eps"]]
        if "eps" in kwargs:
            kwargs["eps"] = tuple(float(e) for e in kwargs["eps"])
        if "group" in kwargs:
            kwargs["group"] = tuple(int(q) for q in kwargs["group"])
        return cls(**kwargs)

    def to_json(self) -> dict:
        data = asdict(self)
        data["eps"] = list(self.eps)
        data["group"] = list(self.group)
        return data

    def validate(self) -> list[str]:
        problems = []
        if self.mode not in MODES:
            problems.append(f"mode must be one of {', '.join(MODES)}; got {self.mode!r}")
        if not isinstance(self.trials, int) or self.trials < 1:
            problems.append(f"trials must be a positive integer, got {self.trials!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            problems.append(f"seed must be a nonnegative integer, got {self.seed!r}")
        if not self.out_dir:
            problems.append("out_dir must not be empty")
        if not self.group or any(q < 2 for q in self.group):
            problems.append(f"group factors must all be >= 2, got {list(self.group)}")
        if self.n < 1:
            problems.append(f"domain size must be >= 1, got {self.n}")
        if self.mode in ("attack", "learner-only"):
            if not self.eps:
                problems.append("eps grid must not be empty")
            for e in self.eps:
                if not 0 < e < 1:
                    problems.append(f"eps values must be in (0,1), got {e}")
            if not 0 < self.lam < 1:
                problems.append(f"lam must be in (0,1), got {self.lam}")
            if self.cap is not None and self.cap < 1:
                problems.append(f"cap must be >= 1, got {self.cap}")
            if self.protocol is None and self.protocol_json is None:
                problems.append(f"mode {self.mode} needs a protocol")
            else:
                try:
                    p = self.resolve_protocol()
                except QromlabError as exc:
                    problems.append(f"protocol does not resolve: {exc}")
                else:
                    report = validate(p)
                    problems.extend(f"protocol: {v}" for v in report.violations)
        if self.mode == "pcc-search":
            if not 0 < self.delta <= 1:
                problems.append(f"delta must be in (0,1], got {self.delta}")
            if self.d < 0:
                problems.append(f"d must be nonnegative, got {self.d}")
        if self.mode == "oracle-equivalence":
            if self.queries < 0:
                problems.append(f"queries must be nonnegative, got {self.queries}")
            if self.group_spec().order ** self.n > 4096:
                problems.append("oracle-equivalence enumerates all tables; "
                                f"|Y|^N = {self.group_spec().order ** self.n} is too large")
        return problems

    def group_spec(self) -> GroupSpec:
        return GroupSpec(tuple(self.group))

    def resolve_protocol(self) -> Protocol:
        if self.protocol_json is not None:
            return Protocol.from_json(self.protocol_json)
        if self.protocol is None:
            raise ConfigError(["no protocol configured"])
        path = Path(self.protocol)
        if path.suffix == ".json" or path.exists():
            if not path.exists():
                raise ConfigError([f"protocol file {self.protocol!r} does not exist"])
            return Protocol.from_json(json.loads(path.read_text()))
        builtins = zoo.standard_zoo(self.n, self.group_spec())
        if self.protocol in builtins:
            return builtins[self.protocol]
        known = ", ".join(sorted(builtins))
        raise ConfigError([f"unknown protocol {self.protocol!r}; builtins: {known}"])


def _default_cap(p: Protocol, eps: float, lam: float) -> int:
    return max(1, math.ceil(p.query_budget / (lam * eps)))


def _random_table(rng, p: Protocol) -> tuple:
    return tuple(int(v) for v in rng.integers(0, p.group.order, size=p.domain_size))


def _attack_trial(p: Protocol, cfg: ExperimentConfig, eps: float, trial: int):
    rng = trial_rng(cfg.seed, trial)
    table = _random_table(rng, p)
    start = time.perf_counter()
    out = full_attack(
        p, eps, cfg.lam, table,
        seed=rng,
        cap=cfg.cap,
        guess_only=cfg.guess_only,
        force_simulated_oracle=cfg.force_simulated_oracle,
        keep_states=cfg.dump_relevant and not cfg.guess_only,
    )
    return out, time.perf_counter() - start


def _attack_row(trial: int, out, seconds: float) -> list:
    return [trial, out.k_E, out.k_A, out.k_B, out.l_size, out.aborted,
            out.eq_find, out.eq_simulatedm, out.eq_agrees, seconds]


def _attack_dump(cfg: ExperimentConfig, p: Protocol, eps: float, trial: int, out) -> dict:
    dump = {
        "kind": "attack-trial",
        "trial": trial,
        "seed": cfg.seed,
        "eps": eps,
        "lam": cfg.lam,
        "protocol": p.to_json(),
        "transcript": list(out.transcript),
        "table": list(out.table),
        # the loosest lightness bound a classically pinned cell satisfies
        "delta": 1.0 - 1.0 / p.group.order,
        "d": p.query_budget,
        "outcome": out.to_json(),
    }
    if out.artifacts is not None:
        dump["simulated_state"] = out.artifacts["simulated_state"].dump()
    return dump


def _attack_sweep(cfg: ExperimentConfig, p: Protocol, eps: float, index: int,
                  out_dir: Path) -> dict:
    results = _run_trials(lambda t: _attack_trial(p, cfg, eps, t), cfg.trials)
    rows = [_attack_row(t, out, dt) for t, (out, dt) in enumerate(results)]
    csv_name = f"trials_eps{index}.csv"
    _write_csv(out_dir / csv_name, ATTACK_COLUMNS, rows)
    relevant = [t for t, (out, _) in enumerate(results) if out.conjecture_relevant]
    dumped = []
    if cfg.dump_relevant and relevant:
        dump_dir = out_dir / "dumps"
        dump_dir.mkdir(exist_ok=True)
        for t in relevant:
            out, _ = results[t]
            name = f"trial{t}_eps{index}.json"
            (dump_dir / name).write_text(
                json.dumps(_attack_dump(cfg, p, eps, t, out), sort_keys=True))
            dumped.append(name)
    n = len(rows)
    eq_sim = [r[7] for r in rows]
    eq_agr = [r[8] for r in rows]
    return {
        "eps": eps,
        "csv": csv_name,
        "success_rate": sum(out.success for out, _ in results) / n,
        "key_match_rate": sum(out.key_match for out, _ in results) / n,
        "mean_L": sum(r[4] for r in rows) / n,
        "abort_rate": sum(r[5] for r in rows) / n,
        "min_eq_find": min(r[6] for r in rows),
        "min_eq_simulatedm": None if any(math.isnan(v) for v in eq_sim) else min(eq_sim),
        "min_eq_agrees": None if any(math.isnan(v) for v in eq_agr) else min(eq_agr),
        "conjecture_relevant_trials": relevant,
        "dumped": dumped,
    }


def _learner_trial(p: Protocol, cfg: ExperimentConfig, eps: float, trial: int):
    rng = trial_rng(cfg.seed, trial)
    table = _random_table(rng, p)
    start = time.perf_counter()
    trace = run_concrete(p, table, seed=rng, honest=False)
    cap = cfg.cap if cfg.cap is not None else _default_cap(p, eps, cfg.lam)
    res = learn(p, trace.transcript, eps, table, cap=cap)
    return res, time.perf_counter() - start


def _learner_sweep(cfg: ExperimentConfig, p: Protocol, eps: float, index: int,
                   out_dir: Path) -> dict:
    results = _run_trials(lambda t: _learner_trial(p, cfg, eps, t), cfg.trials)
    rows = [[t, res.queries_made, res.aborted, res.max_residual_weight, dt]
            for t, (res, dt) in enumerate(results)]
    csv_name = f"trials_eps{index}.csv"
    _write_csv(out_dir / csv_name, LEARNER_COLUMNS, rows)
    n = len(rows)
    return {
        "eps": eps,
        "csv": csv_name,
        "mean_L": sum(r[1] for r in rows) / n,
        "abort_rate": sum(r[2] for r in rows) / n,
        "max_residual_weight": max(r[3] for r in rows),
    }


def _equivalence_trial(cfg: ExperimentConfig, trial: int):
    rng = trial_rng(cfg.seed, trial)
    spec = OracleSpec(cfg.n, cfg.group_spec())
    ops = random_ops(spec, rng, cfg.queries)
    start = time.perf_counter()
    purified = work_distribution(run_purified(spec, ops))
    averaged = averaged_fixed_distribution(spec, ops)
    tv = total_variation(purified, averaged)
    return tv, time.perf_counter() - start


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run one configured experiment, writing CSV rows and summary.json."""
    problems = cfg.validate()
    if problems:
        raise ConfigError(problems)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    summary: dict = {"mode": cfg.mode, "config": cfg.to_json()}

    if cfg.mode in ("attack", "learner-only"):
        p = cfg.resolve_protocol()
        summary["config"]["protocol_json"] = p.to_json()
        sweep_fn = _attack_sweep if cfg.mode == "attack" else _learner_sweep
        sweeps = [sweep_fn(cfg, p, eps, i, out_dir) for i, eps in enumerate(cfg.eps)]
        summary["sweeps"] = sweeps
        if len(sweeps) == 1:
            for key, value in sweeps[0].items():
                if key not in ("eps", "csv"):
                    summary[key] = value
    elif cfg.mode == "pcc-search":
        spec = OracleSpec(cfg.n, cfg.group_spec())
        res = pcc.search_counterexample(spec, cfg.delta, cfg.d, cfg.trials, cfg.seed)
        summary["counterexamples_found"] = 0 if res.hit is None else 1
        summary["trials_run"] = res.trials
        summary["goodstate_pairs"] = res.goodstate_pairs
        summary["min_margin"] = res.min_margin
        if res.hit is not None:
            dump_dir = out_dir / "dumps"
            dump_dir.mkdir(exist_ok=True)
            hit = dict(res.hit.to_json())
            hit["kind"] = "pcc-hit"
            hit["delta"] = cfg.delta
            hit["d"] = cfg.d
            (dump_dir / "pcc_hit.json").write_text(json.dumps(hit, sort_keys=True))
            summary["hit_dump"] = "pcc_hit.json"
    else:  # oracle-equivalence
        results = _run_trials(lambda t: _equivalence_trial(cfg, t), cfg.trials)
        rows = [[t, tv, dt] for t, (tv, dt) in enumerate(results)]
        _write_csv(out_dir / "trials.csv", EQUIV_COLUMNS, rows)
        summary["max_tv"] = max(r[1] for r in rows)
        summary["mean_tv"] = sum(r[1] for r in rows) / len(rows)

    summary["wall_time"] = time.perf_counter() - started
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def describe(name: str, n: int = 4, group=(2,)) -> str:
    """Human-readable account of a protocol's shape and model standing."""
    cfg = ExperimentConfig(mode="attack", protocol=name, n=n, group=tuple(group))
    p = cfg.resolve_protocol()
    lines = [f"{p.name}: domain size {p.domain_size}, "
             f"oracle range order {p.group.order} (factors {list(p.group.factors)})"]
    lines.append("registers:")
    for reg in p.registers:
        lines.append(f"  {reg.name:5s} dim {reg.dim:2d} role {reg.role}")
    def counted(k: int, singular: str, plural: str) -> str:
        return f"{k} {singular if k == 1 else plural}"

    for i, step in enumerate(p.rounds, start=1):
        queries = sum(1 for instr in step.program if isinstance(instr, Query))
        what = (f"round {i}: party {step.party}, "
                f"{counted(len(step.program), 'instruction', 'instructions')}, "
                f"{counted(queries, 'query', 'queries')}")
        if step.message:
            what += f", sends {step.message} ({step.message_kind})"
        lines.append(what)
    final_queries = sum(1 for instr in p.final_a_program if isinstance(instr, Query))
    lines.append(f"final map: {counted(len(p.final_a_program), 'instruction', 'instructions')}, "
                 f"{counted(final_queries, 'query', 'queries')}")
    lines.append(f"query budget d = {p.query_budget}; keys {p.key_reg_a}/{p.key_reg_b}")
    if p.alice_no_final_query:
        lines.append("final map stays off the oracle: the active attack applies")
    else:
        lines.append("warning: final map queries the oracle; outside the attack's hypothesis")
    if p.query_budget == 0:
        lines.append("note: no queries at all; any eavesdropper can simulate both ends")
    if name == "ka-from-toy-qpke":
        lines.append("reduction shape: (1) Alice runs key generation and announces the "
                     "public key; (2) Bob encrypts his key bit under it and sends the "
                     "ciphertext as the quantum message; (3) Alice decrypts with her "
                     "secret key")
    report = validate(p)
    for notice in report.notices:
        lines.append(f"model note: {notice}")
    return "\n".join(lines)


def _read_csv_row(path: Path, trial: int) -> dict:
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        for row in reader:
            if int(row["trial"]) == trial:
                return row
    raise QromlabError(f"trial {trial} not found in {path}")


def _close(recorded: str, recomputed, integer: bool = False) -> bool:
    if recorded == "":
        return recomputed is None
    if integer:
        return int(recorded) == int(recomputed)
    a = float(recorded)
    b = float(recomputed)
    if math.isnan(a) or math.isnan(b):
        return math.isnan(a) and math.isnan(b)
    return abs(a - b) <= REPLAY_TOL


def replay(trial: int, run_dir, sweep: int = 0) -> dict:
    """Re-derive one recorded trial and compare against the CSV row.

    Raises ReplayMismatchError when any recomputed quantity differs from
    the recorded one beyond 1e-9 (timing columns are not compared).  For
    attack trials with a dump on disk the dumped simulated state is
    cross-checked too.
    """
    run_dir = Path(run_dir)
    try:
        summary = json.loads((run_dir / "summary.json").read_text())
    except FileNotFoundError:
        raise QromlabError(f"{run_dir} has no summary.json; not an experiment directory")
    mode = summary["mode"]
    cfg = ExperimentConfig.from_json(summary["config"])

    if mode == "pcc-search":
        dump_path = run_dir / "dumps" / "pcc_hit.json"
        if not dump_path.exists():
            raise QromlabError("no hit was dumped; nothing to replay")
        dump = json.loads(dump_path.read_text())
        phi = QuantumState.load(dump["state_a"])
        psi = QuantumState.load(dump["state_b"])
        still_incompatible = not pcc.compatible(phi, psi)
        report_a = pcc.is_goodstate(phi, float(dump["delta"]), int(dump["d"]))
        report_b = pcc.is_goodstate(psi, float(dump["delta"]), int(dump["d"]))
        if not still_incompatible:
            raise ReplayMismatchError("dumped pair is no longer incompatible")
        if report_a.to_json() != dump["report_a"] or report_b.to_json() != dump["report_b"]:
            raise ReplayMismatchError("goodstate reports changed under replay")
        return {"mode": mode, "incompatible": True,
                "report_a": report_a.to_json(), "report_b": report_b.to_json()}

    if mode == "oracle-equivalence":
        row = _read_csv_row(run_dir / "trials.csv", trial)
        tv, _ = _equivalence_trial(cfg, trial)
        if not _close(row["tv_distance"], tv):
            raise ReplayMismatchError(
                f"tv_distance: recorded {row['tv_distance']}, recomputed {tv!r}")
        return {"mode": mode, "trial": trial, "tv_distance": tv}

    sweeps = summary["sweeps"]
    if not 0 <= sweep < len(sweeps):
        raise QromlabError(f"sweep index {sweep} out of range ({len(sweeps)} sweeps)")
    block = sweeps[sweep]
    eps = float(block["eps"])
    row = _read_csv_row(run_dir / block["csv"], trial)
    p = cfg.resolve_protocol()

    if mode == "learner-only":
        res, _ = _learner_trial(p, cfg, eps, trial)
        checks = {
            "L_size": _close(row["L_size"], res.queries_made, integer=True),
            "aborted": _close(row["aborted"], res.aborted, integer=True),
            "max_residual_weight": _close(row["max_residual_weight"], res.max_residual_weight),
        }
        recomputed = {"L_size": res.queries_made, "aborted": res.aborted,
                      "max_residual_weight": res.max_residual_weight}
    else:
        out, _ = _attack_trial(p, cfg, eps, trial)
        checks = {
            "k_E": _close(row["k_E"], out.k_E, integer=True),
            "k_A": _close(row["k_A"], out.k_A, integer=row["k_A"] != ""),
            "k_B": _close(row["k_B"], out.k_B, integer=True),
            "L_size": _close(row["L_size"], out.l_size, integer=True),
            "aborted": _close(row["aborted"], out.aborted, integer=True),
            "eq_find": _close(row["eq_find"], out.eq_find),
            "eq_simulatedm": _close(row["eq_simulatedm"], out.eq_simulatedm),
            "eq_agrees": _close(row["eq_agrees"], out.eq_agrees),
        }
        recomputed = out.to_json()
        dump_path = run_dir / "dumps" / f"trial{trial}_eps{sweep}.json"
        if dump_path.exists():
            dump = json.loads(dump_path.read_text())
            fresh = _attack_dump(cfg, p, eps, trial, out)
            if json.dumps(fresh, sort_keys=True) != json.dumps(dump, sort_keys=True):
                raise ReplayMismatchError("dump content differs from a fresh re-run")
            recomputed["dump_check"] = pcc.check_attack_dump(dump)

    bad = sorted(k for k, ok in checks.items() if not ok)
    if bad:
        raise ReplayMismatchError(
            "recomputed values differ for: " + ", ".join(bad))
    return {"mode": mode, "trial": trial, "recorded": dict(row), "recomputed": recomputed}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="qromlab",
        description="Desk-scale experiments on key agreement against a random oracle.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run_parser = sub.add_parser("run", help="run a configured experiment")
    run_parser.add_argument("--config", required=True, help="path to a JSON config")
    run_parser.add_argument("--out", help="override the configured out_dir")
    desc_parser = sub.add_parser("describe", help="print a protocol summary")
    desc_parser.add_argument("name", help="builtin protocol name or JSON path")
    desc_parser.add_argument("--n", type=int, default=4, help="oracle domain size")
    desc_parser.add_argument("--group", default="2",
                             help="comma-separated cyclic factors of the range")
    replay_parser = sub.add_parser("replay", help="re-derive one recorded trial")
    replay_parser.add_argument("trial", type=int)
    replay_parser.add_argument("run_dir")
    replay_parser.add_argument("--sweep", type=int, default=0)
    args = parser.parse_args(argv)

    try:
        if args.command == "run":
            try:
                raw = json.loads(Path(args.config).read_text())
            except FileNotFoundError:
                print(f"config error: no such file {args.config!r}", file=sys.stderr)
                return 2
            except json.JSONDecodeError as exc:
                print(f"config error: {args.config} is not valid JSON ({exc})",
                      file=sys.stderr)
                return 2
            cfg = ExperimentConfig.from_json(raw)
            if args.out:
                cfg.out_dir = args.out
            summary = run_experiment(cfg)
            print(json.dumps(summary, indent=2, sort_keys=True))
        elif args.command == "describe":
            group = tuple(int(q) for q in args.group.split(","))
            print(describe(args.name, n=args.n, group=group))
        else:
            report = replay(args.trial, args.run_dir, sweep=args.sweep)
            print(json.dumps(report, indent=2, sort_keys=True))
    except ConfigError as exc:
        for item in exc.items:
            print(f"config error: {item}", file=sys.stderr)
        return 2
    except QromlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
