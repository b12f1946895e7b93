import argparse

from onsetnet.diagnostics import GRADCHECK_TOLERANCE, SCOPES, run_gradchecks
from onsetnet.errors import NumericError


def register(subparsers):
    parser = subparsers.add_parser("gradcheck", help="解析的な勾配を中心差分と比較する")
    parser.add_argument("--scope", choices=SCOPES, default="all")
    # 故障注入 (テスト用)
    parser.add_argument("--corrupt", help=argparse.SUPPRESS)
    parser.set_defaults(handler=run)


def run(args, config, env) -> int:
    errors = run_gradchecks(config.seed, args.scope, args.corrupt)
    failed = [name for name, err in errors.items() if err >= GRADCHECK_TOLERANCE]
    for name, err in errors.items():
        status = "FAIL" if name in failed else "ok"
        print(f"{name:<20} {err:.3e}  {status}")
    if failed:
        raise NumericError(f"gradient check failed for {', '.join(failed)} (tolerance {GRADCHECK_TOLERANCE:g})")
    return 0
