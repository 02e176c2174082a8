#!/usr/bin/env python3
"""
Local check runner for AlphaDoc

    python run_tests.py                  # full suite
    python run_tests.py --fast           # skip slow property and integration runs
    python run_tests.py --pipeline       # CLI end-to-end runs only
    python run_tests.py --update-golden  # rewrite tests/fixtures/golden, then run the golden tests
    python run_tests.py --all            # lint, type check, suite with coverage
"""

import argparse
import os
import subprocess
import sys
from pathlib import Path
from typing import List

ROOT = Path(__file__).resolve().parent
GOLDEN_SUITES = ['tests/test_miner.py', 'tests/test_panel.py', 'tests/test_report.py']


def run_step(cmd: List[str], description: str) -> bool:
    print(f"\n🔄 {description}: {' '.join(cmd)}")
    result = subprocess.run(cmd, cwd=ROOT)
    if result.returncode == 0:
        print(f"✅ {description} passed")
        return True
    print(f"❌ {description} failed (exit {result.returncode})")
    return False


def pytest_command(args) -> List[str]:
    cmd = [sys.executable, '-m', 'pytest']
    if args.update_golden:
        cmd += GOLDEN_SUITES + ['-k', 'golden', '--update-golden']
    else:
        cmd.append('tests/')
    if args.fast:
        cmd += ['-m', 'not slow and not integration']
    elif args.pipeline:
        cmd += ['-m', 'integration']
    if args.verbose:
        cmd.append('-v')
    if args.coverage:
        cmd += ['--cov=alphadoc', '--cov-report=term-missing', '--cov-fail-under=80']
    return cmd


def main() -> int:
    parser = argparse.ArgumentParser(description='Run the AlphaDoc checks')
    selection = parser.add_mutually_exclusive_group()
    selection.add_argument('--fast', action='store_true', help='Skip slow and integration tests')
    selection.add_argument('--pipeline', action='store_true', help='Only the CLI integration runs')
    selection.add_argument('--update-golden', action='store_true',
                           help='Re-record golden files from the current output')
    parser.add_argument('--coverage', action='store_true', help='Report coverage of the alphadoc package')
    parser.add_argument('--lint', action='store_true', help='Run flake8 and black --check')
    parser.add_argument('--type-check', action='store_true', help='Run mypy')
    parser.add_argument('--all', action='store_true', help='Lint, type check and covered test run')
    parser.add_argument('--verbose', '-v', action='store_true')
    args = parser.parse_args()

    if args.all:
        args.lint = args.type_check = args.coverage = True

    os.environ.setdefault('MPLBACKEND', 'Agg')
    ok = True
    if args.lint:
        ok &= run_step([sys.executable, '-m', 'flake8', 'alphadoc', 'tests', '--max-line-length=110'], 'flake8')
        ok &= run_step([sys.executable, '-m', 'black', '--check', 'alphadoc', 'tests'], 'black')
    if args.type_check:
        ok &= run_step([sys.executable, '-m', 'mypy', 'alphadoc'], 'mypy')
    ok &= run_step(pytest_command(args), 'Golden update' if args.update_golden else 'Tests')

    print('\n🎉 All checks passed' if ok else '\n💥 Some checks failed')
    return 0 if ok else 1


if __name__ == '__main__':
    sys.exit(main())
