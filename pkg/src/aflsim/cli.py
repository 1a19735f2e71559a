"""Command-line entry point.

Exit codes: 0 ok, 1 config or usage error, 2 data or checkpoint error,
3 runtime failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import fl, metrics, nn, orchestrator
from .agent import DDPGAgent
from .config import ConfigError, SimConfig, load_config
from .data import IdxError

log = logging.getLogger("aflsim")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class DataError(Exception):
    """Missing or inconsistent data or checkpoint files."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (defaults are used when omitted)")
    p.add_argument("--seed", type=int, help="master seed, overrides the config value")
    p.add_argument("--output-dir", help="where results go; falls back to config, $AFLSIM_OUTPUT_DIR, ./runs")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-episode progress")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aflsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train the selection agent")
    _add_common(p)

    p = sub.add_parser("test", help="roll out a trained agent without exploration")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint directory written by train")

    p = sub.add_parser("baseline", help="fixed-selection comparator runs")
    _add_common(p)
    p.add_argument("--mode", choices=orchestrator.SCHEMES, required=True)
    p.add_argument("--preselect", help='selection mask such as "1,1,1,1,0" (default: every non-bad vehicle)')

    p = sub.add_parser("sweep-beta", help="fixed-selection runs over several aggregation proportions")
    _add_common(p)
    p.add_argument("--values", required=True, help="comma-separated beta values")
    p.add_argument("--mode", choices=("dafl", "afl"), default="dafl")
    p.add_argument("--preselect")

    p = sub.add_parser("validate-config", help="check a config file and report every violated rule")
    p.add_argument("--config", required=True)

    sub.add_parser("default-config", help="print the default config as JSON")
    return parser


# -- helpers -------------------------------------------------------------------

def _load(args) -> tuple[SimConfig, Optional[bytes]]:
    if args.config is None:
        cfg, raw = SimConfig(), None
    else:
        cfg = load_config(args.config)
        raw = Path(args.config).read_bytes()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg.check(), raw


def resolve_output_dir(flag: Optional[str], cfg: SimConfig) -> Path:
    for candidate in (flag, cfg.output_dir, os.environ.get("AFLSIM_OUTPUT_DIR")):
        if candidate:
            return Path(candidate)
    return Path("runs")


def _prepare_output(args, cfg: SimConfig, raw: Optional[bytes]) -> Path:
    out = resolve_output_dir(args.output_dir, cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_bytes(raw if raw is not None else cfg.to_json().encode())
    return out


def parse_mask(text: Optional[str], cfg: SimConfig) -> list[int]:
    K = cfg.env.K
    if text is None:
        bad = set(cfg.data.bad_node.indices)
        return [0 if i in bad else 1 for i in range(K)]
    try:
        mask = [int(x) for x in text.split(",")]
    except ValueError:
        raise ConfigError(f"--preselect must be comma-separated 0/1 values, got {text!r}") from None
    if len(mask) != K or any(x not in (0, 1) for x in mask):
        raise ConfigError(f"--preselect needs {K} entries of 0 or 1, got {text!r}")
    if not any(mask):
        raise ConfigError("--preselect must select at least one vehicle")
    return mask


def parse_values(text: str) -> list[float]:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"--values must be comma-separated numbers, got {text!r}") from None
    if not values:
        raise ConfigError("--values is empty")
    return values


def _write_run(out: Path, prefix: str, records, cfg: SimConfig, extra: dict) -> dict:
    metrics.emit_metrics(records, out / f"{prefix}_metrics.csv", cfg.env.K)
    return metrics.write_summary(records, out / f"{prefix}_summary.json", extra)


# -- commands --------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg, raw = _load(args)
    out = _prepare_output(args, cfg, raw)
    sim = orchestrator.Simulation(cfg, cfg.seed)
    agent, records = orchestrator.train(cfg, cfg.seed, progress=args.verbose, sim=sim)
    ckpt = out / "checkpoint"
    agent.save(ckpt / "agent")
    fl.save_global(sim.last_model, cfg.fl.model_spec, ckpt / "global", seed=cfg.seed)
    (ckpt / "config.json").write_text(cfg.to_json())
    _write_run(out, "train", records, cfg, {"seed": cfg.seed, "command": "train"})
    log.info("wrote %s", out)
    return EXIT_OK


def _load_checkpoint(directory: Path, cfg: SimConfig) -> DDPGAgent:
    agent_dir = directory / "agent"
    if not (agent_dir / "agent_config.json").is_file():
        raise DataError(f"{directory} is not a checkpoint (no agent/agent_config.json)")
    try:
        agent = DDPGAgent.load(agent_dir)
    except nn.LayoutMismatch as exc:
        raise DataError(str(exc)) from exc
    for name in ("actor_spec", "critic_spec"):
        if getattr(agent.cfg, name) != getattr(cfg.agent, name):
            raise DataError(f"checkpoint {name} does not match the config "
                            f"(checkpoint input {getattr(agent.cfg, name).input_dim}, "
                            f"config input {getattr(cfg.agent, name).input_dim})")
    return agent


def cmd_test(args) -> int:
    ckpt = Path(args.checkpoint)
    if args.config is None and (ckpt / "config.json").is_file():
        args.config = str(ckpt / "config.json")
    cfg, raw = _load(args)
    agent = _load_checkpoint(ckpt, cfg)
    out = _prepare_output(args, cfg, raw)
    sim = orchestrator.Simulation(cfg, cfg.seed)
    records = orchestrator.test(agent, cfg, cfg.seed, sim=sim)
    fl.save_global(sim.last_model, cfg.fl.model_spec, out / "checkpoint" / "test_global", seed=cfg.seed)
    _write_run(out, "test", records, cfg, {"seed": cfg.seed, "command": "test", "checkpoint": str(ckpt)})
    return EXIT_OK


def cmd_baseline(args) -> int:
    cfg, raw = _load(args)
    mask = parse_mask(args.preselect, cfg)
    out = _prepare_output(args, cfg, raw)
    sim = orchestrator.Simulation(cfg, cfg.seed)
    records = orchestrator.run_fixed_selection(cfg, cfg.seed, mask, args.mode, sim=sim)
    fl.save_global(sim.last_model, cfg.fl.model_spec, out / "checkpoint" / f"baseline_{args.mode}",
                   seed=cfg.seed, mode=args.mode)
    _write_run(out, f"baseline_{args.mode}", records, cfg,
               {"seed": cfg.seed, "command": "baseline", "mode": args.mode, "preselect": mask})
    return EXIT_OK


def cmd_sweep_beta(args) -> int:
    cfg, raw = _load(args)
    values = parse_values(args.values)
    mask = parse_mask(args.preselect, cfg)
    for beta in values:
        if not 0 < beta < 1:
            raise ConfigError(f"beta values must lie in (0, 1), got {beta}")
    out = _prepare_output(args, cfg, raw)
    results = {}
    for beta in values:
        variant = dataclasses.replace(cfg, fl=dataclasses.replace(cfg.fl, beta=beta))
        sim = orchestrator.Simulation(variant, cfg.seed)
        records = orchestrator.run_fixed_selection(variant, cfg.seed, mask, args.mode, sim=sim)
        tag = f"beta_{beta:g}"
        fl.save_global(sim.last_model, cfg.fl.model_spec, out / "checkpoint" / tag, seed=cfg.seed, beta=beta)
        summary = _write_run(out, f"sweep_{tag}", records, variant,
                             {"seed": cfg.seed, "beta": beta, "mode": args.mode, "preselect": mask})
        results[f"{beta:g}"] = summary["final_accuracy"]
        log.info("beta %g final accuracy %.4f", beta, summary["final_accuracy"])
    (out / "sweep_summary.json").write_text(json.dumps(
        {"mode": args.mode, "seed": cfg.seed, "final_accuracy": results}, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_validate_config(args) -> int:
    cfg = load_config(args.config)
    problems = cfg.validate()
    if problems:
        for p in problems:
            print(f"invalid: {p}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{args.config}: ok")
    return EXIT_OK


def cmd_default_config(args) -> int:
    sys.stdout.write(SimConfig().to_json())
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "test": cmd_test,
    "baseline": cmd_baseline,
    "sweep-beta": cmd_sweep_beta,
    "validate-config": cmd_validate_config,
    "default-config": cmd_default_config,
}


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, IdxError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:   # noqa: BLE001 - last-resort mapping to the runtime exit code
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
