"""Command-line surface: configuration, deterministic seeding, run records.

Every command snapshots its configuration and master seed into one
machine-readable record per trial (line-delimited JSON) plus an optional
CSV summary; two invocations with identical configurations produce
byte-identical records apart from the timestamp field.

Exit codes: 0 success, 1 usage error, 2 verification violation, 3 protocol
abort under --strict.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .devices import (
    NoisyHonestBehavior,
    behavior_from_record,
    chsh_honest_device,
    ghz_honest_device,
    random_partially_trusted,
)
from .entropy import measurement_split, schatten_ineq_check, uncertainty_check
from .errors import DirexError, InfeasibleError
from .postprocess import CrossFeedStage, cross_feed, expansion_schedule
from .protocols import (
    ProtocolConfig,
    exact_small_run,
    conditional_environment_states,
    monte_carlo,
)
from .qkd import KdConfig, key_rate_report, run_rkd
from .rates import certified_bound, limit_exponent, maximize_bound, small_pi
from .recon import bch_15_5, eir_run, hamming_code, interleaved, random_linear_code
from .seeding import numpy_rng, parse_master_seed, substream
from .xorgames import (
    SamplingSpec,
    ghz_anticommuter,
    load_game,
    named_constants,
    trust_coefficient_check,
)

DEFAULT_SEED = "d1" * 32
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VIOLATION = 2
EXIT_ABORT = 3


class RecordWriter:
    """Serialized appender for run records; one JSON line per record."""

    def __init__(self, path: str | None, fmt: str = "json"):
        self.path = path
        self.fmt = fmt
        self.records: list = []

    def append(self, record: dict):
        self.records.append(record)

    def flush(self):
        if not self.path:
            return
        os.makedirs(os.path.dirname(self.path) or ".", exist_ok=True)
        if self.fmt == "json":
            with open(self.path, "a") as f:
                for rec in self.records:
                    f.write(json.dumps(rec, sort_keys=True) + "\n")
        else:
            keys = sorted({k for rec in self.records for k in rec})
            new = not os.path.exists(self.path)
            with open(self.path, "a", newline="") as f:
                w = csv.DictWriter(f, fieldnames=keys)
                if new:
                    w.writeheader()
                for rec in self.records:
                    w.writerow({k: _csv_cell(rec.get(k)) for k in keys})

    def render_json(self) -> str:
        buf = io.StringIO()
        for rec in self.records:
            buf.write(json.dumps(rec, sort_keys=True) + "\n")
        return buf.getvalue()


def _csv_cell(v):
    if isinstance(v, (dict, list, tuple)):
        return json.dumps(v, sort_keys=True)
    return v


def base_record(args, command: str) -> dict:
    return {
        "tool_version": __version__,
        "command": command,
        "seed": args.seed,
        "timestamp": time.time(),
    }


def _out_path(args, name: str):
    if args.output:
        return args.output
    outdir = os.environ.get("DIREX_OUTPUT_DIR")
    if outdir:
        ext = "jsonl" if args.format == "json" else "csv"
        return os.path.join(outdir, f"{name}.{ext}")
    return None


def _resolve_constants(name_or_path: str):
    try:
        return named_constants(name_or_path)
    except KeyError:
        from .xorgames import analyze_game

        return analyze_game(load_game(name_or_path))


def cmd_rate(args) -> int:
    consts = _resolve_constants(args.game)
    epsilon = 2.0**args.epsilon_exp
    cutoff = 0.11 * consts.vG_lower
    if limit_exponent(args.eta / consts.vG_lower) <= 0:
        print(f"infeasible: error tolerance {args.eta} at or above the "
              f"positive-rate cutoff 0.11 * v = {cutoff:.4f} "
              f"(limit rate is nonpositive)", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.q is not None and args.kappa is not None:
            report = certified_bound(consts, args.N, args.q, args.eta,
                                     args.kappa, epsilon)
        else:
            report = maximize_bound(consts, args.N, args.eta, epsilon)
    except (ValueError, InfeasibleError) as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return EXIT_USAGE
    v = consts.vG_lower
    rows = [
        ("game", args.game),
        ("trust coefficient lower bound", v),
        ("limit rate pi(eta/v)", small_pi(args.eta / v)),
        ("positive-rate cutoff 0.11*v", 0.11 * v),
        ("T (per-round rate)", report.T_value),
        ("E (penalty coefficient)", report.E_value),
        ("q", report.params.q),
        ("kappa", report.params.kappa),
        ("epsilon", report.params.epsilon),
        ("N", report.params.N),
        ("certified min-entropy bound", report.bound),
    ]
    width = max(len(r[0]) for r in rows)
    for k, val in rows:
        print(f"{k:<{width}}  {val}")
    writer = RecordWriter(_out_path(args, "rate"), args.format)
    rec = base_record(args, "rate")
    rec.update(report.to_record())
    writer.append(rec)
    writer.flush()
    if not args.output and not os.environ.get("DIREX_OUTPUT_DIR"):
        print(writer.render_json(), end="")
    return EXIT_OK


def _behavior_from_args(args):
    if args.device_config:
        with open(args.device_config) as f:
            return behavior_from_record(json.load(f))
    if args.device == "honest":
        return ghz_honest_device() if args.game == "ghz" else chsh_honest_device()
    if args.device == "noisy":
        base = ghz_honest_device() if args.game == "ghz" else chsh_honest_device()
        return NoisyHonestBehavior(base=base, p=args.noise)
    raise ValueError(f"unknown device {args.device!r}")


def cmd_simulate(args) -> int:
    master = parse_master_seed(args.seed)
    game = load_game(args.game)
    consts = _resolve_constants(args.game)
    behavior = _behavior_from_args(args)
    config = ProtocolConfig(mode="R", N=args.N, q=args.q, eta=args.eta,
                            game=game, w_G=consts.wG)
    bound = None
    if args.device == "noisy":
        eta_prime = args.noise / 2.0
        if eta_prime < args.eta:
            bound = float(np.exp(-((args.eta - eta_prime) ** 2)
                                 * args.q * args.N / 3.0))
    stats = monte_carlo(config, behavior, args.trials, master,
                        completeness_bound=bound, workers=args.workers)
    print(f"trials {stats.trials}  aborts {stats.aborts}  "
          f"abort rate {stats.abort_rate:.4f}  "
          f"wilson [{stats.wilson_low:.4f}, {stats.wilson_high:.4f}]")
    if bound is not None:
        print(f"completeness bound {bound:.4f}  exceeded: {stats.bound_exceeded}")
    writer = RecordWriter(_out_path(args, "simulate"), args.format)
    for r in stats.records:
        rec = base_record(args, "simulate")
        rec.update({"trial": r.trial, "success": r.success,
                    "failures": r.failures, "games": r.games,
                    "seed_bits": r.seed_bits, "N": args.N, "q": args.q,
                    "eta": args.eta, "device": args.device})
        writer.append(rec)
    summary = base_record(args, "simulate-summary")
    summary.update(stats.to_record())
    writer.append(summary)
    writer.flush()
    if stats.bound_exceeded:
        return EXIT_VIOLATION
    if args.strict and stats.aborts > 0:
        return EXIT_ABORT
    return EXIT_OK


def cmd_trust(args) -> int:
    game = load_game(args.game)
    consts = _resolve_constants(args.game)
    anti = ghz_anticommuter() if game.n == 3 else None
    if anti is None:
        from .xorgames import anticommuter_family

        anti = next(iter(anticommuter_family(game.n)))
    spec = SamplingSpec(grid_points=args.grid, random_samples=args.samples,
                        multistarts=args.multistarts, seed=args.check_seed)
    res = trust_coefficient_check(game, args.c, anti, spec, qG=consts.qG)
    print(f"coefficient {args.c}: {'pass' if res.passed else 'FAIL'}  "
          f"max violation {res.max_violation:.3e}  samples {res.samples_used}")
    if res.analytic_failures >= 0:
        print(f"analytic entry checks: {res.analytic_failures} failures")
    writer = RecordWriter(_out_path(args, "trust"), args.format)
    rec = base_record(args, "trust")
    rec.update({"game": args.game, "c": args.c, "passed": res.passed,
                "max_violation": res.max_violation,
                "samples": res.samples_used,
                "witness": [[z.real, z.imag] for z in res.witness]})
    writer.append(rec)
    writer.flush()
    return EXIT_OK if res.passed else EXIT_VIOLATION


def cmd_qkd(args) -> int:
    master = parse_master_seed(args.seed)
    game = load_game(args.game)
    consts = _resolve_constants(args.game)
    code = hamming_code(args.N)
    lam = code.supported_lambda() - 1e-9
    cfg = KdConfig(game=game, constants=consts, N=args.N, q=args.q,
                   eta=args.eta, lam=lam, lam_prime=min(lam + 1e-5, 0.49999),
                   code=code, kappa=args.kappa, epsilon_exp=args.epsilon_exp)
    behavior = _behavior_from_args(args)
    outcome = run_rkd(cfg, behavior, substream(master, "kd-seed", 0),
                      numpy_rng(master, "kd-device", 0),
                      shared_randomness=substream(master, "kd-shared", 0))
    if outcome.success:
        rep = key_rate_report(outcome)
        print(f"success; keys match: {outcome.keys_match}  "
              f"leaked {outcome.leaked_bits} bits  "
              f"certified {rep['certified_bits']:.0f} bits")
    else:
        print(f"aborted at: {outcome.abort_reason}")
    writer = RecordWriter(_out_path(args, "qkd"), args.format)
    rec = base_record(args, "qkd")
    rec.update({"game": args.game, "N": args.N, "q": args.q, "eta": args.eta,
                "success": outcome.success, "keys_match": outcome.keys_match,
                "leaked_bits": outcome.leaked_bits,
                "certified_bits": outcome.certified_bits,
                "disagreements": outcome.disagreements,
                "seed_bits": outcome.seed_bits_used})
    writer.append(rec)
    writer.flush()
    if not outcome.success and args.strict:
        return EXIT_ABORT
    return EXIT_OK


def cmd_expand(args) -> int:
    master = parse_master_seed(args.seed)
    game = load_game(args.game)
    consts = _resolve_constants(args.game)
    behavior = _behavior_from_args(args)
    plan = expansion_schedule(args.seed_bits, args.omega, args.desk_cap)
    print("schedule (uncapped targets alongside desk caps):")
    for i, st in enumerate(plan.stages):
        print(f"  stage {i}: seed 2^{st['seed_bits_log2']:.2f} bits, "
              f"N {st['N']} (uncapped {st['N_uncapped']}), q {st['q']:.3g}")
    stages = [CrossFeedStage(N=n, q=args.q, eta=args.eta, kappa=args.kappa,
                             epsilon_exp=args.epsilon_exp, m_out=m)
              for n, m in zip(args.stage_rounds, args.stage_bits)]
    try:
        res = cross_feed(game, consts, behavior, behavior, stages, master)
    except DirexError as e:
        print(f"composition failed: {e}", file=sys.stderr)
        return EXIT_ABORT
    led = res.ledger.to_record()
    print(f"final output: {len(res.final_bits)} bits; "
          f"ledger soundness {led['total_soundness']}")
    if args.emit == "hex":
        packed = np.packbits(res.final_bits)
        print(packed.tobytes().hex())
    writer = RecordWriter(_out_path(args, "expand"), args.format)
    rec = base_record(args, "expand")
    rec.update({"stages": len(res.stages), "final_bits": len(res.final_bits),
                "ledger": led,
                "stage_summaries": [
                    {"stage": s.stage, "device": s.device_id,
                     "out_bits": len(s.output_bits), "bound": s.report.bound,
                     "seed_from_previous": s.seed_from_previous,
                     "seed_topped_up": s.seed_topped_up}
                    for s in res.stages]})
    writer.append(rec)
    writer.flush()
    return EXIT_OK


def cmd_recon(args) -> int:
    master = parse_master_seed(args.seed)
    rng = numpy_rng(master, "recon-instance")
    if args.regime == "unique":
        base = bch_15_5()
        code = base if args.N == 15 else interleaved(base, args.N // 15)
        lam = 0.5 - base.unique_radius / base.length
    else:
        code = random_linear_code(args.N, max(args.N - 6, 1), rng, list_cap=64)
        lam = args.lam
    errors = int(args.error_fraction * args.N)
    shared = substream(master, "recon-hash")
    successes = 0
    for t in range(args.trials):
        x = rng.integers(0, 2, args.N).astype(np.uint8)
        e = np.zeros(args.N, dtype=np.uint8)
        pos = rng.choice(args.N, errors, replace=False)
        e[pos] = 1
        res = eir_run(x, x ^ e, code, lam, 2.0**-args.eps_exp, shared=shared)
        if not res.aborted and np.array_equal(res.estimate, x):
            successes += 1
    print(f"{successes}/{args.trials} recovered "
          f"(code {code.name}, leak {code.n_checks} bits/run)")
    writer = RecordWriter(_out_path(args, "recon"), args.format)
    rec = base_record(args, "recon")
    rec.update({"regime": args.regime, "N": args.N, "trials": args.trials,
                "errors": errors, "successes": successes,
                "code": code.name, "leak_bits": int(code.n_checks)})
    writer.append(rec)
    writer.flush()
    return EXIT_OK


def cmd_verify(args) -> int:
    master = parse_master_seed(args.seed)
    rng = numpy_rng(master, f"verify-{args.suite}")
    violations = 0
    checked = 0
    if args.suite in ("uncertainty", "all"):
        for _ in range(args.instances):
            dw = int(rng.integers(1, 5))
            dv = int(rng.integers(1, 9))
            z = rng.normal(size=(2 * dw, dv)) + 1j * rng.normal(size=(2 * dw, dv))
            z /= np.linalg.norm(z)
            inst = measurement_split(z)
            for eps in (0.1, 0.5, 1.0):
                checked += 1
                if not uncertainty_check(inst, eps).holds:
                    violations += 1
    if args.suite in ("schatten", "all"):
        for _ in range(args.instances):
            a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
            b = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
            for p in (2.0, 2.5, 4.0):
                checked += 1
                if not schatten_ineq_check(a, b, p).holds:
                    violations += 1
    if args.suite in ("multishot", "all"):
        for _ in range(args.instances):
            v = float(rng.uniform(0.1, 1.0))
            h = float(rng.uniform(0.0, 1.0 - v))
            beh = random_partially_trusted(rng, v, h, env_dim=2)
            q = float(rng.uniform(0.05, 0.5))
            kappa = float(rng.uniform(0.2, 2.0))
            r = float(rng.uniform(0.05, 1.0)) / (q * kappa)
            n_rounds = int(rng.integers(1, 4))
            checked += 1
            if not exact_small_run(n_rounds, beh, q, kappa, r).holds:
                violations += 1
    if args.suite in ("partial-trust", "all"):
        for _ in range(args.instances):
            v = float(rng.uniform(0.1, 1.0))
            h = float(rng.uniform(0.0, 1.0 - v))
            beh = random_partially_trusted(rng, v, h,
                                           env_dim=int(rng.integers(1, 5)))
            cs = conditional_environment_states(beh)
            rho = cs["H"] + cs["T"]
            diffs = (
                cs["P"] - (h / 2) * rho - v * cs["0"],
                (1 - h / 2) * rho - v * cs["1"] - cs["P"],
                cs["F"] - (h / 2) * rho - v * cs["1"],
                (1 - h / 2) * rho - v * cs["0"] - cs["F"],
            )
            for m in diffs:
                checked += 1
                lo = float(np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0])
                if lo < -1e-9:
                    violations += 1
    print(f"suite {args.suite}: {checked} checks, {violations} violations")
    writer = RecordWriter(_out_path(args, "verify"), args.format)
    rec = base_record(args, "verify")
    rec.update({"suite": args.suite, "instances": args.instances,
                "checked": checked, "violations": violations})
    writer.append(rec)
    writer.flush()
    return EXIT_OK if violations == 0 else EXIT_VIOLATION


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="direx",
        description="untrusted-device randomness expansion toolkit")
    p.add_argument("--seed", default=DEFAULT_SEED,
                   help="256-bit hex master seed")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--output", default=None, help="record output path")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--strict", action="store_true",
                   help="exit 3 on protocol abort")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("rate", help="certified rate report")
    r.add_argument("--game", default="ghz")
    r.add_argument("--eta", type=float, required=True)
    r.add_argument("--N", type=int, default=10**6)
    r.add_argument("--q", type=float, default=None)
    r.add_argument("--kappa", type=float, default=None)
    r.add_argument("--epsilon-exp", type=float, default=-20.0,
                   help="epsilon = 2**value")
    r.set_defaults(func=cmd_rate)

    s = sub.add_parser("simulate", help="Monte Carlo protocol runs")
    s.add_argument("--game", default="ghz")
    s.add_argument("--device", default="honest", choices=("honest", "noisy"))
    s.add_argument("--device-config", default=None)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--N", type=int, required=True)
    s.add_argument("--q", type=float, required=True)
    s.add_argument("--eta", type=float, required=True)
    s.add_argument("--trials", type=int, default=10)
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("trust", help="trust-coefficient certification")
    t.add_argument("--game", default="ghz")
    t.add_argument("--c", type=float, required=True)
    t.add_argument("--grid", type=int, default=64)
    t.add_argument("--samples", type=int, default=10_000)
    t.add_argument("--multistarts", type=int, default=20)
    t.add_argument("--check-seed", type=int, default=0)
    t.set_defaults(func=cmd_trust)

    k = sub.add_parser("qkd", help="key distribution run")
    k.add_argument("--game", default="ghz")
    k.add_argument("--device", default="honest", choices=("honest", "noisy"))
    k.add_argument("--device-config", default=None)
    k.add_argument("--noise", type=float, default=0.0)
    k.add_argument("--N", type=int, required=True)
    k.add_argument("--q", type=float, required=True)
    k.add_argument("--eta", type=float, default=0.001)
    k.add_argument("--kappa", type=float, default=2.64)
    k.add_argument("--epsilon-exp", type=float, default=2.0)
    k.set_defaults(func=cmd_qkd)

    e = sub.add_parser("expand", help="cross-feeding composition")
    e.add_argument("--game", default="ghz")
    e.add_argument("--device", default="honest", choices=("honest", "noisy"))
    e.add_argument("--device-config", default=None)
    e.add_argument("--noise", type=float, default=0.0)
    e.add_argument("--seed-bits", type=int, default=16)
    e.add_argument("--omega", type=float, default=0.25)
    e.add_argument("--desk-cap", type=int, default=100_000)
    e.add_argument("--stage-rounds", type=int, nargs="+",
                   default=[10000, 11000, 25000])
    e.add_argument("--stage-bits", type=int, nargs="+",
                   default=[64, 256, 4096])
    e.add_argument("--q", type=float, default=0.5)
    e.add_argument("--eta", type=float, default=0.002)
    e.add_argument("--kappa", type=float, default=2.6)
    e.add_argument("--epsilon-exp", type=float, default=20.0)
    e.add_argument("--emit", choices=("none", "hex"), default="none")
    e.set_defaults(func=cmd_expand)

    c = sub.add_parser("recon", help="information reconciliation trials")
    c.add_argument("--regime", choices=("unique", "list"), default="unique")
    c.add_argument("--N", type=int, default=15)
    c.add_argument("--lam", type=float, default=0.1)
    c.add_argument("--error-fraction", type=float, default=0.15)
    c.add_argument("--eps-exp", type=float, default=10.0)
    c.add_argument("--trials", type=int, default=1000)
    c.set_defaults(func=cmd_recon)

    v = sub.add_parser("verify", help="inequality verification sweeps")
    v.add_argument("--suite",
                   choices=("uncertainty", "schatten", "multishot",
                            "partial-trust", "all"),
                   default="all")
    v.add_argument("--instances", type=int, default=200)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (DirexError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
