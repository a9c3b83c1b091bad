#!/usr/bin/env python3
"""
Dig-DEC 估计到决策实验台 - 主程序
子命令 run / digdec / verify
"""

import argparse
import logging
import os
import sys
from datetime import datetime
from pathlib import Path
from typing import List, Optional

# 添加仓库根目录到Python路径
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from agent_manager import AgentManager  # noqa: E402
from src.bench import (  # noqa: E402
    DEFAULT_DIGDEC_INSTANCES,
    DIGDEC_INSTANCES,
    ExperimentConfig,
    cmd_digdec,
    cmd_run,
    load_global_config,
    parse_seeds,
)
from src.divergences import DIVERGENCE_MODES  # noqa: E402
from src.errors import ConfigError, DigDecError  # noqa: E402
from src.saddle_solver import SaddleConfig  # noqa: E402
from src.verify import cmd_verify, format_report  # noqa: E402

OUTPUT_ENV = "DIGDEC_OUTPUT_DIR"


def default_output_dir() -> Path:
    """$DIGDEC_OUTPUT_DIR，未设置时为 output/<timestamp>"""
    if os.environ.get(OUTPUT_ENV):
        return Path(os.environ[OUTPUT_ENV])
    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    return Path("output") / timestamp


def _float_list(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma separated list of numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Dig-DEC 估计到决策实验台')
    parser.add_argument('--verbose', action='store_true', help='输出 DEBUG 日志')
    parser.add_argument('--quiet', action='store_true', help='只输出 WARNING 及以上日志')
    sub = parser.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', help='多种子运行智能体并输出遗憾曲线 CSV')
    run.add_argument('--config', required=True, help='实验文档路径 (config/experiments/*.yaml)')
    run.add_argument('--out', help=f'输出目录 (默认: ${OUTPUT_ENV} 或 output/<timestamp>)')
    run.add_argument('--seeds', help='种子列表，如 1,2,3 或 1-20')
    run.add_argument('--eta', type=float, help='覆盖所有智能体的 η')
    run.add_argument('--mode', choices=DIVERGENCE_MODES, help='覆盖所有智能体的散度模式')
    run.add_argument('--oracle', choices=('on', 'off'), help='是否计算 Est 诊断')
    run.add_argument('--T', type=int, help='覆盖轮数')
    run.add_argument('--workers', type=int, help='并行进程数 (默认: 1)')

    digdec = sub.add_parser('digdec', help='估计 dig-dec 与 o-dec')
    digdec.add_argument('--instances', default=','.join(DEFAULT_DIGDEC_INSTANCES),
                        help=f'实例列表，可选: {", ".join(DIGDEC_INSTANCES)}')
    digdec.add_argument('--eta', type=_float_list, default=[0.5, 1.0, 2.0], help='η 列表 (默认: 0.5,1,2)')
    digdec.add_argument('--mode', choices=DIVERGENCE_MODES + ('both',), default='both',
                        help='散度模式 (默认: av 和 sq)')
    digdec.add_argument('--resolution', type=float, default=0.05, help='ρ 网格分辨率 (默认: 0.05)')
    digdec.add_argument('--no-nested', action='store_true', help='跳过三层网格复核列')
    digdec.add_argument('--out', help=f'输出目录 (默认: ${OUTPUT_ENV} 或 output/<timestamp>)')

    verify = sub.add_parser('verify', help='运行全部验收检查')
    verify.add_argument('--quick', action='store_true', help='缩小规模的快速检查')
    verify.add_argument('--criteria', help='只运行指定编号，如 1,5,9')
    verify.add_argument('--out', help=f'输出目录 (默认: ${OUTPUT_ENV} 或 output/<timestamp>)')
    return parser


def configure_logging(verbose: bool, quiet: bool):
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    elif quiet:
        logging.getLogger().setLevel(logging.WARNING)


def run_command(args) -> int:
    global_config = load_global_config()
    overrides = {
        "seeds": parse_seeds(args.seeds) if args.seeds else None,
        "eta": args.eta,
        "mode": args.mode,
        "oracle": None if args.oracle is None else args.oracle == "on",
        "T": args.T,
        "workers": args.workers,
        "output_dir": str(args.out or default_output_dir()),
    }
    config = ExperimentConfig.from_file(args.config, overrides, global_config)
    manager = AgentManager(defaults=global_config)
    agent_configs = [manager.build_config(name, config.eta, config.mode) for name in config.agents]

    print(f"🚀 实验 {config.name}: 环境={config.environment}, T={config.T}, 种子={config.seeds}")
    result = cmd_run(config, agent_configs)
    print(f"\n🎉 运行完成！")
    print(f"📁 结果保存在: {result.output_dir}")
    for run in result.runs:
        print(f"   - {Path(run.path).name}: 伪遗憾={run.pseudo_regret:.6g}")
    print(f"   - {result.aggregate_path.name}")
    if result.summary_path is not None:
        print(f"   - {result.summary_path.name}")
    return 0


def digdec_command(args) -> int:
    output_dir = Path(args.out or default_output_dir())
    instances = [x.strip() for x in args.instances.split(",") if x.strip()]
    modes = ["av", "sq"] if args.mode == "both" else [args.mode]
    solver = SaddleConfig.from_dict(load_global_config().get("solver"))
    print(f"🚀 估计 dig-dec: 实例={instances}, η={args.eta}, 模式={modes}")
    frame = cmd_digdec(instances, args.eta, modes, output_dir, solver, args.resolution, not args.no_nested)
    print(frame.to_string(index=False))
    print(f"\n📁 结果保存在: {output_dir / 'digdec.csv'}")
    if not frame["bound_ok"].all():
        print("❌ 存在 dig-dec > o-dec + η 的行")
        return 1
    return 0


def verify_command(args) -> int:
    output_dir = Path(args.out or default_output_dir())
    criteria: Optional[List[str]] = [c.strip() for c in args.criteria.split(",")] if args.criteria else None
    print(f"🚀 运行验收检查{'（快速）' if args.quick else ''}...")
    results = cmd_verify(quick=args.quick, output_dir=output_dir, criteria=criteria)
    print(format_report(results))
    print(f"\n📁 结果保存在: {output_dir / 'verify.csv'}")
    failed = [r.criterion for r in results if not r.passed]
    if failed:
        print(f"❌ 未通过: {', '.join(failed)}")
        return 1
    print("✅ 全部通过")
    return 0


COMMANDS = {"run": run_command, "digdec": digdec_command, "verify": verify_command}


def main(argv: Optional[List[str]] = None) -> int:
    """主程序入口"""
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"❌ 配置错误: {e}")
        return 2
    except DigDecError as e:
        print(f"❌ 运行失败: {e}")
        return 1
    except ValueError as e:
        print(f"❌ 参数错误: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
