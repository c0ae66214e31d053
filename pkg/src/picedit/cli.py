"""Command-line entry point.

Subcommands: invert, edit, evaluate, ablate, sweep, toy-verify.
Exit codes: 0 success, 1 validation/configuration, 2 numerical failure,
3 model unavailable.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import PicEditError
from .pipeline import RunConfig, cmd_ablate, cmd_edit, cmd_evaluate, cmd_invert, cmd_sweep


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON or YAML config file; flags override it")
    p.add_argument("--backbone")
    p.add_argument("--variant")
    p.add_argument("--integration")
    p.add_argument("--gamma", type=float)
    p.add_argument("--tau", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--guidance-scale", type=float, dest="guidance_scale")
    p.add_argument("--seed", type=int)
    p.add_argument("--task")
    p.add_argument("--src-prompt", dest="src_prompt")
    p.add_argument("--tgt-prompt", dest="tgt_prompt")
    p.add_argument("--input")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--force", action="store_const", const=True, default=None)


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    base = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {
        k: getattr(args, k, None)
        for k in (
            "backbone", "variant", "integration", "gamma", "tau", "beta", "steps",
            "guidance_scale", "seed", "task", "src_prompt", "tgt_prompt", "input",
            "output_dir", "cache_dir", "force",
        )
    }
    return base.with_overrides(**overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="picedit",
        description="Training-free text-driven image editing with corrected DDIM sampling",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, doc in (
        ("invert", "invert a source image into a trajectory cache"),
        ("edit", "run one edit end to end"),
        ("ablate", "run the four sampler variants against one shared cache"),
        ("sweep", "sweep the correction weight over its grid"),
    ):
        p = sub.add_parser(name, help=doc)
        _add_run_flags(p)

    p_eval = sub.add_parser("evaluate", help="score directories of source/translated pairs")
    p_eval.add_argument("--source-dir", required=True)
    p_eval.add_argument("--translated-dir", required=True)
    p_eval.add_argument("--target-prompt", required=True)
    p_eval.add_argument("--output-dir", default="outputs")
    p_eval.add_argument("--task", default="task")

    p_toy = sub.add_parser("toy-verify", help="run the invariant suite on the analytic oracle")
    p_toy.add_argument("--seed", type=int, default=0)
    p_toy.add_argument("--num-seeds", type=int, default=30)
    p_toy.add_argument("--json-out")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "invert":
            cache_dir = cmd_invert(_config_from_args(args))
            print(cache_dir)
        elif args.command == "edit":
            manifest = cmd_edit(_config_from_args(args))
            print(manifest["output_image"])
        elif args.command == "ablate":
            report = cmd_ablate(_config_from_args(args))
            for variant, ledger in report["variants"].items():
                print(f"{variant:<8s} {ledger}")
            if "background_ordering_ok" in report:
                print(f"background ordering ok: {report['background_ordering_ok']}")
        elif args.command == "sweep":
            report = cmd_sweep(_config_from_args(args))
            print(report["contact_sheet"])
        elif args.command == "evaluate":
            report = cmd_evaluate(
                source_dir=args.source_dir,
                translated_dir=args.translated_dir,
                target_prompt=args.target_prompt,
                output_dir=args.output_dir,
                task=args.task,
            )
            print(report.summary_line())
            if not report.per_image:
                print("warning: no paired images found", file=sys.stderr)
        elif args.command == "toy-verify":
            from .toy import run_invariant_suite

            report = run_invariant_suite(seed=args.seed, num_seeds=args.num_seeds)
            for check in report["checks"]:
                status = "PASS" if check["passed"] else "FAIL"
                extra = "" if check["measured"] is None else f"  measured={check['measured']}"
                print(f"[{status}] {check['name']}{extra}")
            if args.json_out:
                with open(args.json_out, "w") as f:
                    json.dump(report, f, indent=2, default=str)
            if not report["ok"]:
                return 2
        return 0
    except PicEditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
