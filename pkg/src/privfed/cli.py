"""Command-line experiment runner and audit verifier.

Subcommands:
  run           execute one configured pipeline and write its report
  sweep         utility table across privacy settings (columns: no-dp, eps=...)
  attack        engineered overfit membership-inference study
  govern-train  train the governance controller on the violation-prone scenario
  verify-audit  standalone audit verification (chain + proof + policy only)
  report        re-render a table from a saved records file

Exit codes: run distinguishes success (0), budget exhaustion (4), and round
failure (5); config validation problems exit 2 after listing every violated
field. verify-audit exits 0 compliant, 1 non-compliant, 2 invalid or
tampered, 3 unparseable input (reporting the first malformed line).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .compliance import (
    AuditChain,
    ComplianceProof,
    PolicySpec,
    Verdict,
    verify_proof,
)
from .config import ExperimentConfig, config_hash, load_config
from .dp import NoiseScale
from .errors import ChainFormatError, ConfigValidationError
from .experiment import (
    ExperimentReport,
    emit_report,
    parse_record_lines,
    render_table,
    run_experiment,
    run_sweep,
)
from .governance import (
    GovernanceEnv,
    RewardWeights,
    ScenarioConfig,
    run_policy,
    static_baseline_policy,
    train_controller,
)
from .seeding import derive_seed

STATUS_EXIT = {"completed": 0, "budget-exhausted": 4, "round-failure": 5}

FORMATS = {"table": ("table",), "records": ("records",), "both": ("records", "table")}


def _load_config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.out is not None:
        config = replace(config, output_dir=args.out)
    elif os.environ.get("PRIVFED_OUT") and not args.config:
        config = replace(config, output_dir=os.environ["PRIVFED_OUT"])
    config.validate()
    return config


def _out_dir(args, config: ExperimentConfig | None = None) -> Path:
    if args.out:
        return Path(args.out)
    if config is not None:
        return Path(config.output_dir)
    return Path(os.environ.get("PRIVFED_OUT", "out"))


def cmd_run(args) -> int:
    config = _load_config(args)
    report = run_experiment(config, _out_dir(args, config), FORMATS[args.format])
    print(f"config {config_hash(config)[:16]} status={report.status} "
          f"rounds={len(report.rounds)} out={_out_dir(args, config)}")
    return STATUS_EXIT.get(report.status, 0)


def cmd_sweep(args) -> int:
    config = _load_config(args)
    grid = tuple(token.strip() for token in args.grid.split(","))
    report = run_sweep(config, grid, args.seeds, _out_dir(args, config),
                       FORMATS[args.format])
    sys.stdout.write(render_table(report))
    return STATUS_EXIT.get(report.status, 0)


def cmd_attack(args) -> int:
    """Overfit study: no-DP vs strong-DP advantage, plus calibration."""
    from .attacks import overfit_study, untrained_study, leakage_signal

    base_seed = args.seed if args.seed is not None else 0
    strong = NoiseScale(args.strong_sigma, 1.0)
    rows = []
    for pair in range(args.pairs):
        seed = derive_seed(base_seed, "attack-pair", pair)
        plain = overfit_study(seed)
        noised = overfit_study(seed, dp_scale=strong)
        rows.append((plain, noised))
    calibration = [untrained_study(derive_seed(base_seed, "attack-cal", s))
                   for s in range(args.pairs)]

    report = ExperimentReport(config_hash="attack-study", seed=base_seed,
                              status="completed")
    for i, (plain, noised) in enumerate(rows):
        for label, res in (("overfit-no-dp", plain), ("overfit-strong-dp", noised)):
            report.attack_results.append({
                "scenario": f"{label}-{i}",
                "attack_accuracy": res.attack_accuracy,
                "advantage": res.advantage,
                "auc": res.auc,
                "num_queries": res.num_queries,
                "leakage": leakage_signal(res),
            })
    mean_plain = float(np.mean([p.advantage for p, _ in rows]))
    mean_noised = float(np.mean([n.advantage for _, n in rows]))
    mean_cal = float(np.mean([c.advantage for c in calibration]))
    out = _out_dir(args)
    emit_report(report, out, FORMATS[args.format])
    print(f"no-dp mean advantage      {mean_plain:+.3f}")
    print(f"strong-dp mean advantage  {mean_noised:+.3f}")
    print(f"untrained calibration     {mean_cal:+.3f}")
    reduction = 1.0 - (mean_noised / mean_plain) if mean_plain > 0 else 0.0
    print(f"advantage reduction       {reduction:.0%}")
    return 0


def cmd_govern_train(args) -> int:
    config = _load_config(args)
    weights = RewardWeights(config.governance_alpha, config.governance_beta,
                            config.governance_gamma)
    episodes = args.episodes or config.governance_episodes
    env = GovernanceEnv(ScenarioConfig(), weights,
                        seed=derive_seed(config.seed, "governance"))
    training = train_controller(env, episodes, derive_seed(config.seed, "controller"))
    trained = run_policy(env, training.policy, episodes=3)
    baseline = run_policy(env, static_baseline_policy(), episodes=3)

    report = ExperimentReport(config_hash=config_hash(config), seed=config.seed,
                              status="completed")
    report.governance_curve = training.curve
    report.governance_summary = {
        "trained_violations": trained["violations"],
        "baseline_violations": baseline["violations"],
        "trained_leakage": trained["mean_leakage"],
        "baseline_leakage": baseline["mean_leakage"],
        "trained_reward": trained["mean_reward"],
        "baseline_reward": baseline["mean_reward"],
    }
    out = _out_dir(args, config)
    emit_report(report, out, FORMATS[args.format])
    g = report.governance_summary
    print(f"episodes={episodes} "
          f"violations {g['trained_violations']} vs {g['baseline_violations']} "
          f"leakage {g['trained_leakage']:.3f} vs {g['baseline_leakage']:.3f}")
    return 0


def cmd_verify_audit(args) -> int:
    """Standalone verification: reads only the chain, proof, and policy files."""
    try:
        policy = PolicySpec.read(args.policy)
        chain = AuditChain.read(args.chain)
        proof = ComplianceProof.read(args.proof)
    except ChainFormatError as exc:
        print(f"parse failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"cannot read input: {exc}", file=sys.stderr)
        return 3
    except UnicodeDecodeError as exc:
        print(f"parse failure: undecodable bytes ({exc})", file=sys.stderr)
        return 3
    if not chain.verify():
        print("verdict: invalid (audit chain fails hash verification)")
        return 2
    verdict = verify_proof(proof, chain.head_hash, policy)
    print(f"verdict: {verdict.value} "
          f"(claim={proof.claim} institution={proof.institution_id} "
          f"aggregate={proof.aggregate})")
    return {Verdict.COMPLIANT: 0, Verdict.NON_COMPLIANT: 1, Verdict.INVALID: 2}[verdict]


def cmd_report(args) -> int:
    lines = Path(args.records).read_text(encoding="utf-8").split("\n")
    report = ExperimentReport.from_records(parse_record_lines(lines))
    text = render_table(report)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="privfed",
        description="deterministic privacy-preserving federated learning simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_format=True):
        p.add_argument("--config", type=str, default=None, help="config file path")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", type=str, default=None, help="output directory")
        if with_format:
            p.add_argument("--format", choices=sorted(FORMATS), default="both")

    p_run = sub.add_parser("run", help="execute one configured pipeline")
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="utility sweep over privacy settings")
    common(p_sweep)
    p_sweep.add_argument("--grid", type=str, default="inf,4,2",
                         help="comma list of epsilon settings; inf = no DP")
    p_sweep.add_argument("--seeds", type=int, default=5)
    p_sweep.set_defaults(func=cmd_sweep)

    p_attack = sub.add_parser("attack", help="overfit membership-inference study")
    common(p_attack)
    p_attack.add_argument("--pairs", type=int, default=10)
    p_attack.add_argument("--strong-sigma", type=float, default=1.2)
    p_attack.set_defaults(func=cmd_attack)

    p_gov = sub.add_parser("govern-train", help="train the governance controller")
    common(p_gov)
    p_gov.add_argument("--episodes", type=int, default=None)
    p_gov.set_defaults(func=cmd_govern_train)

    p_verify = sub.add_parser("verify-audit", help="verify chain + proof + policy")
    p_verify.add_argument("--chain", required=True)
    p_verify.add_argument("--proof", required=True)
    p_verify.add_argument("--policy", required=True)
    p_verify.set_defaults(func=cmd_verify_audit)

    p_report = sub.add_parser("report", help="re-render a saved records file")
    p_report.add_argument("--records", required=True)
    p_report.add_argument("--out", type=str, default=None)
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigValidationError as exc:
        print("config validation failed:", file=sys.stderr)
        for error in exc.errors:
            print(f"  {error}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
