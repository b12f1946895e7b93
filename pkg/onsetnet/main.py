import argparse
import logging
import sys
from typing import List, Optional

from onsetnet import __version__
from onsetnet.commands import baseline, evaluate, gradcheck, splits, synth, train
from onsetnet.core.config import flatten_config, get_env, load_run_config
from onsetnet.core.logging import setup_logging
from onsetnet.deps import config_overrides
from onsetnet.errors import OnsetNetError
from onsetnet.schemas import RunConfig

logger = logging.getLogger(__name__)

COMMANDS = [synth, train, evaluate, baseline, gradcheck, splits]


def config_epilog() -> str:
    """--help に載せる設定キーとデフォルト値の一覧"""
    lines = ["config keys (defaults); set with --config FILE or --set key=value:"]
    lines.extend(f"  {key} = {value}" for key, value in flatten_config(RunConfig()).items())
    lines.append("")
    lines.append("exit codes: 0 ok, 1 unexpected, 2 config, 3 data, 4 numeric, 5 I/O, 6 checkpoint version")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="onsetnet",
        description="Visual note onset detection with a multi-stream 3D CNN",
        epilog=config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="key=value 形式の設定ファイル、または run_manifest.json")
    parser.add_argument("--seed", type=int, help="乱数シード (64 bit 符号なし)")
    parser.add_argument("--data", help="データセットのマニフェスト (paths.data)")
    parser.add_argument("--out", help="出力ディレクトリ (paths.out)")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="設定キーを上書きする (複数可)")
    parser.add_argument("-v", "--verbose", action="store_true", help="DEBUG ログを出す")

    # コマンドを追加
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def parse_args(sys_args: Optional[List[str]]) -> argparse.Namespace:
    return build_parser().parse_args(sys_args)


def main(sys_args: Optional[List[str]] = None) -> int:
    """コマンドを実行し、終了コードを返す"""
    args = parse_args(sys_args)
    try:
        env = get_env()
        setup_logging("DEBUG" if args.verbose else env.log_level.upper())
        config = load_run_config(args.config, config_overrides(args))
        return args.handler(args, config, env)
    except OnsetNetError as exc:
        print(f"error: {exc.detail}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:
        logger.exception("unexpected failure")
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
