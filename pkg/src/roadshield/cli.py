"""Command-line front end: validate -> preanalyze -> synth-shield -> learn ->
verify -> simulate -> render.

Exit codes (stable, also listed in the README):

  0   success / property holds
  2   usage error (bad flags, empty trace set)
  3   scenario or automaton validation error
  4   pre-analysis: sensor-error probability above tolerance
  5   pre-analysis: no safe path exists
  6   pre-analysis: no safe and goal-reaching path exists
  7   shield synthesis: no safe action at the initial state
  8   state-space budget exceeded
  9   verification failed (property does not hold)
  10  state key outside the strategy domain
  11  numeric/overflow error
  1   unexpected internal error

The pre-analysis command hard-codes the methodology's order: the sensor-error
probability gates everything (a shield synthesized over garbage perception is
not worth having), then safe-path existence, then goal reachability.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import (AutomatonError, BudgetExceededError, EmptyShieldError,
                     FixedPointRangeError, NumericError, RoadshieldError,
                     ScenarioError, StrategyDomainError)
from .manifest import RunManifest
from .scenario import load_scenario, with_granularity

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_SENSOR_ERROR = 4
EXIT_NO_SAFE_PATH = 5
EXIT_NO_REACHABLE_PATH = 6
EXIT_EMPTY_SHIELD = 7
EXIT_BUDGET = 8
EXIT_VERIFY_FAILED = 9
EXIT_DOMAIN = 10
EXIT_NUMERIC = 11


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get("ROADSHIELD_OUT", "roadshield-out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args):
    sc = load_scenario(args.scenario)
    if getattr(args, "granularity", None):
        sc = with_granularity(sc, _parse_granularity(args.granularity))
    return sc


def _parse_granularity(text: str) -> float:
    if "/" in text:
        num, den = text.split("/")
        return float(num) / float(den)
    return float(text)


def _common_params(args, names) -> dict:
    return {n: getattr(args, n.replace("-", "_")) for n in names}


def cmd_validate(args) -> int:
    sc = _load(args)
    print(f"scenario '{sc.name}': OK")
    print(f"  horizon: {sc.n_decisions} decisions "
          f"({sc.timing.maxt} time units, C1={sc.timing.c1}, C2={sc.timing.c2})")
    print(f"  actions: {sc.mact} "
          f"(jerk {sc.actions.jerk_values} x turn {sc.actions.turn_values})")
    print(f"  obstacles: {len(sc.static_obstacles)} static, "
          f"{len(sc.moving_obstacles)} moving")
    print(f"  scale: base {sc.scale.base}, exponent {sc.scale.exponent}")
    return EXIT_OK


def cmd_preanalyze(args) -> int:
    from . import smc, synth

    sc = _load(args)
    out = _out_dir(args)
    report: dict = {}
    manifest = RunManifest(command="preanalyze",
                           parameters=_common_params(args, [
                               "samples", "seed", "tolerance", "qa_variable",
                               "budget"]) | {
                               "thd": args.thd if args.thd is not None else sc.thresholds.thd,
                               "granularity": sc.integration.granularity})
    manifest.add_input("scenario", args.scenario)

    monitor = smc.sensor_error_monitor(sc, var=args.qa_variable, thd=args.thd)
    est = smc.estimate_probability(sc, None, monitor, n=args.samples,
                                   seed=args.seed, jobs=args.jobs)
    report["qa"] = {"p_hat": est.p_hat, "low": est.low, "high": est.high,
                    "n": est.n, "successes": est.successes}
    print(f"Q_a sensor-error probability ({args.qa_variable}): "
          f"{est.p_hat:.4f}  [{est.low:.4f}, {est.high:.4f}] @95%")
    if est.p_hat > args.tolerance:
        print("FAIL: perceived state drifts too far from the ground truth.")
        print("      First suspects: the scale exponent (quantization too "
              "coarse) or the sensing period C1 (frames too sparse).")
        print("      Skipping safe-path and reachability checks; their "
              "verdicts would not transfer to the real dynamics.")
        _write_report(out, report, manifest)
        return EXIT_SENSOR_ERROR

    qb = synth.check_safe_existence(sc, budget=args.budget)
    report["qb"] = {"holds": qb.holds, "states_explored": qb.states_explored}
    print(f"Q_b safe path exists: {qb.holds} "
          f"({qb.states_explored} states explored)")
    if not qb.holds:
        print("FAIL: no safe path exists; learning cannot help. Consider "
              "shorter decision periods, different actions, or a longer horizon.")
        _write_report(out, report, manifest)
        return EXIT_NO_SAFE_PATH

    qc = synth.check_reachable_existence(sc, budget=args.budget)
    report["qc"] = {"holds": qc.holds, "states_explored": qc.states_explored}
    print(f"Q_c safe goal-reaching path exists: {qc.holds}")
    if not qc.holds:
        print("FAIL: the goal is not safely reachable (blocked scenario); "
              "learning is not needed.")
        _write_report(out, report, manifest)
        return EXIT_NO_REACHABLE_PATH

    print("pre-analysis: all clear")
    _write_report(out, report, manifest)
    return EXIT_OK


def _write_report(out: Path, report: dict, manifest: RunManifest):
    path = out / "preanalysis.json"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
    manifest.add_output("report", path)
    manifest.write(out)


def cmd_synth_shield(args) -> int:
    from . import strategies, synth

    sc = _load(args)
    out = _out_dir(args)
    shield = synth.synthesize_shield(sc, budget=args.budget)
    path = out / "shield.txt"
    strategies.save_strategy(shield, path)
    pairs = sum(len(v) for v in shield.table.values())
    print(f"shield: {len(shield)} states, {pairs} permitted pairs -> {path}")
    manifest = RunManifest(command="synth-shield",
                           parameters=_common_params(args, ["budget"]) |
                           {"granularity": sc.integration.granularity})
    manifest.add_input("scenario", args.scenario)
    manifest.add_output("shield", path)
    manifest.write(out)
    return EXIT_OK


def cmd_learn(args) -> int:
    from . import learn as L
    from . import reward as R
    from . import strategies

    sc = _load(args)
    out = _out_dir(args)
    shield = strategies.load_strategy(args.shield) if args.shield else None
    if shield is not None and not isinstance(shield, strategies.PermissiveStrategy):
        print("error: --shield must point to a permissive strategy", file=sys.stderr)
        return EXIT_USAGE
    automaton = R.load_automaton(args.automaton) if args.automaton else None
    cfg = L.LearnConfig(episodes=args.episodes, alpha=args.alpha,
                        gamma=args.gamma, reward_source=args.reward,
                        shield=shield, seed=args.seed)
    q, stats = L.q_learn(sc, automaton, cfg)
    policy = L.extract_policy(q, shield)
    ppath = out / "policy.txt"
    strategies.save_strategy(policy, ppath)
    spath = out / "learning-stats.csv"
    with open(spath, "w", encoding="utf-8") as fh:
        fh.write(L.stats_to_csv(stats))
    goals = sum(1 for s in stats if s.reached_goal)
    viol = sum(s.violations for s in stats)
    print(f"learning: {len(stats)} episodes, {goals} reached goal, "
          f"{viol} safety violations")
    print(f"policy -> {ppath}")
    manifest = RunManifest(command="learn",
                           parameters=_common_params(args, [
                               "episodes", "reward", "seed", "alpha", "gamma"]) |
                           {"granularity": sc.integration.granularity})
    manifest.add_input("scenario", args.scenario)
    if args.shield:
        manifest.add_input("shield", args.shield)
    if args.automaton:
        manifest.add_input("automaton", args.automaton)
    manifest.add_output("policy", ppath)
    manifest.add_output("stats", spath)
    manifest.write(out)
    return EXIT_OK


def cmd_verify(args) -> int:
    from . import reward as R
    from . import smc, strategies, synth

    sc = _load(args)
    out = _out_dir(args)
    manifest = RunManifest(command="verify",
                           parameters=_common_params(args, ["budget"]) |
                           {"granularity": sc.integration.granularity})
    manifest.add_input("scenario", args.scenario)

    if args.ra_query:
        automaton = (R.load_automaton(args.automaton) if args.automaton
                     else R.default_automaton())
        weights = None
        if args.weights:
            try:
                w = [float(x) for x in args.weights.split(",")]
                weights = R.RewardWeights(*w)
            except (ValueError, TypeError):
                print("error: --weights must be w1,w2,w3", file=sys.stderr)
                return EXIT_USAGE
        verdict = R.verify_reward_automaton(sc, automaton, args.ra_query,
                                            weights=weights, budget=args.budget)
        label = args.ra_query
    else:
        if not args.strategy or not args.property:
            print("error: verify needs --strategy and --property "
                  "(or --ra-query)", file=sys.stderr)
            return EXIT_USAGE
        strat = strategies.load_strategy(args.strategy)
        manifest.add_input("strategy", args.strategy)
        try:
            prop = synth.parse_property(args.property)
        except ValueError as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_USAGE
        verdict = synth.verify_under(sc, strat, prop, budget=args.budget)
        label = args.property

    print(f"verify {label}: {'HOLDS' if verdict.holds else 'FAILS'} "
          f"({verdict.states_explored} states explored)")
    if verdict.description:
        print(f"  {verdict.description}")
    manifest.parameters["query"] = label
    manifest.parameters["holds"] = verdict.holds
    if verdict.trace_actions:
        # write the witness/counterexample as a replayable trace
        trace = _verdict_trace(sc, verdict)
        tpath = out / "verify-trace.csv"
        smc.write_traces([trace], tpath)
        manifest.add_output("trace", tpath)
        print(f"  trace -> {tpath}")
    manifest.write(out)
    return EXIT_OK if verdict.holds else EXIT_VERIFY_FAILED


def _verdict_trace(sc, verdict):
    from .smc import trace_from_actions

    return trace_from_actions(sc, verdict.trace_actions)


def cmd_simulate(args) -> int:
    from . import reward as R
    from . import smc, strategies

    sc = _load(args)
    out = _out_dir(args)
    strat = strategies.load_strategy(args.strategy) if args.strategy else None
    automaton = R.load_automaton(args.automaton) if args.automaton else None
    traces = smc.simulate(sc, strat, args.count, args.seed,
                          automaton=automaton, jobs=args.jobs)
    tpath = out / "traces.csv"
    smc.write_traces(traces, tpath)
    below = sum(1 for t in traces if t.min_true_distance < 3 * sc.td)
    goals = sum(1 for t in traces if t.reached_goal)
    collisions = sum(1 for t in traces if t.collided)
    print(f"simulate: {len(traces)} rollouts -> {tpath}")
    print(f"  reached goal: {goals}; collided: {collisions}; "
          f"below 3*TD: {below}")
    manifest = RunManifest(command="simulate",
                           parameters=_common_params(args, ["count", "seed"]) |
                           {"granularity": sc.integration.granularity})
    manifest.add_input("scenario", args.scenario)
    if args.strategy:
        manifest.add_input("strategy", args.strategy)
    if args.automaton:
        manifest.add_input("automaton", args.automaton)
    manifest.add_output("traces", tpath)
    manifest.write(out)
    return EXIT_OK


def cmd_render(args) -> int:
    from . import render as RD
    from . import smc

    sc = _load(args)
    out = _out_dir(args)
    traces = smc.read_traces_csv(args.traces)
    if not traces:
        print("error: trace file contains no traces", file=sys.stderr)
        return EXIT_USAGE
    tpath = out / "trajectories.svg"
    with open(tpath, "w", encoding="utf-8") as fh:
        fh.write(RD.trajectory_svg(sc, traces))
    dpath = out / "distance.svg"
    with open(dpath, "w", encoding="utf-8") as fh:
        fh.write(RD.distance_svg(sc, traces))
    print(f"render: {tpath} and {dpath}")
    manifest = RunManifest(command="render", parameters={})
    manifest.add_input("scenario", args.scenario)
    manifest.add_input("traces", args.traces)
    manifest.add_output("trajectories", tpath)
    manifest.add_output("distance", dpath)
    manifest.write(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roadshield",
                                description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, granularity=True):
        sp.add_argument("--scenario", required=True, help="scenario YAML file")
        sp.add_argument("--out", default=None,
                        help="output directory (default $ROADSHIELD_OUT or ./roadshield-out)")
        if granularity:
            sp.add_argument("--granularity", default=None,
                            help="override integration granularity G (float or '1/N')")

    sp = sub.add_parser("validate", help="parse and validate a scenario")
    common(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("preanalyze",
                        help="sensor-error probability, safe-path and "
                             "reachability existence")
    common(sp)
    sp.add_argument("--samples", type=int, default=200, help="rollouts for the sensor check")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--thd", type=float, default=None,
                    help="sensor-error threshold (default: scenario THD)")
    sp.add_argument("--tolerance", type=float, default=0.05,
                    help="max acceptable sensor-error probability")
    sp.add_argument("--qa-variable", default="x",
                    choices=["x", "y", "v", "acc", "head"])
    sp.add_argument("--budget", type=int, default=5_000_000)
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_preanalyze)

    sp = sub.add_parser("synth-shield", help="synthesize the maximally "
                                             "permissive safety shield")
    common(sp)
    sp.add_argument("--budget", type=int, default=5_000_000)
    sp.set_defaults(func=cmd_synth_shield)

    sp = sub.add_parser("learn", help="tabular Q-learning, optionally shielded")
    common(sp)
    sp.add_argument("--episodes", type=int, required=True)
    sp.add_argument("--reward", choices=["function", "automaton"],
                    default="automaton")
    sp.add_argument("--automaton", default=None, help="reward automaton YAML")
    sp.add_argument("--shield", default=None, help="shield strategy file")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--alpha", type=float, default=0.5)
    sp.add_argument("--gamma", type=float, default=0.95)
    sp.set_defaults(func=cmd_learn)

    sp = sub.add_parser("verify", help="verify a strategy or a reward automaton")
    common(sp)
    sp.add_argument("--strategy", default=None, help="strategy file to verify")
    sp.add_argument("--property", default=None,
                    help="kind:predicate, e.g. always:safe or eventually_all:goal")
    sp.add_argument("--ra-query", default=None, choices=["QE", "QF", "QG", "QH"],
                    help="reward-automaton validation query")
    sp.add_argument("--automaton", default=None, help="reward automaton YAML")
    sp.add_argument("--weights", default=None, help="w1,w2,w3 for QH")
    sp.add_argument("--budget", type=int, default=5_000_000)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("simulate", help="Monte-Carlo rollouts to CSV")
    common(sp)
    sp.add_argument("--count", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--strategy", default=None)
    sp.add_argument("--automaton", default=None)
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("render", help="render traces to SVG")
    common(sp, granularity=False)
    sp.add_argument("--traces", required=True, help="trace CSV from simulate")
    sp.set_defaults(func=cmd_render)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except ScenarioError as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except AutomatonError as e:
        print(f"automaton error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except EmptyShieldError as e:
        print(f"shield synthesis failed: {e}", file=sys.stderr)
        return EXIT_EMPTY_SHIELD
    except BudgetExceededError as e:
        print(f"budget exceeded: {e}", file=sys.stderr)
        return EXIT_BUDGET
    except StrategyDomainError as e:
        print(f"strategy domain error: {e}", file=sys.stderr)
        return EXIT_DOMAIN
    except (FixedPointRangeError, NumericError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except RoadshieldError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
