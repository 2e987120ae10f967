#!/usr/bin/env python3
"""
Sparse Input Localizer - Run Script
Run a localizer command or the test suite inside the project's virtual environment.
"""

import argparse
import os
import subprocess
import sys
from pathlib import Path
from typing import List


class Colors:
    """ANSI color codes for terminal output"""
    BLUE = '\033[94m'
    GREEN = '\033[92m'
    YELLOW = '\033[93m'
    RED = '\033[91m'
    BOLD = '\033[1m'
    RESET = '\033[0m'


class LocalizerRunner:
    def __init__(self):
        self.root_dir = Path(__file__).parent
        self.package_dir = self.root_dir / "localizer"

    def print_error(self, message: str):
        print(f"{Colors.RED}❌ {message}{Colors.RESET}", file=sys.stderr)

    def print_warning(self, message: str):
        print(f"{Colors.YELLOW}⚠️  {message}{Colors.RESET}", file=sys.stderr)

    def python(self) -> str:
        """Interpreter of the project venv, or the current one when no venv exists"""
        venv_python = self.root_dir / "venv" / "bin" / "python"
        if not venv_python.exists():
            venv_python = self.root_dir / "venv" / "Scripts" / "python.exe"  # Windows
        if venv_python.exists():
            return str(venv_python)
        self.print_warning("Virtual environment not found; using the current interpreter (run ./setup.sh)")
        return sys.executable

    def run_command(self, argv: List[str]) -> int:
        return subprocess.call([self.python(), "main.py", *argv], cwd=self.package_dir)

    def run_tests(self, argv: List[str], slow: bool) -> int:
        env = os.environ.copy()
        if slow:
            env["LOCALIZER_RUN_SLOW"] = "1"
        return subprocess.call([self.python(), "-m", "pytest", *argv], cwd=self.package_dir, env=env)


def main() -> int:
    """Main entry point"""
    parser = argparse.ArgumentParser(
        description="Sparse Input Localizer - Run Script",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python run.py analyze --system sys.json --active-set 0   # Any localizer command
  python run.py --test                                     # Run the fast tests
  python run.py --test --slow                              # Include the statistical campaigns
  python run.py --test -- -k group_lasso                   # Extra pytest arguments
        """
    )
    parser.add_argument('--test', action='store_true', help='Run the test suite instead of a command')
    parser.add_argument('--slow', action='store_true', help='With --test: include slow campaigns')

    runner = LocalizerRunner()
    argv = sys.argv[1:]
    # commands (and their --help) go straight to the localizer
    if argv and not argv[0].startswith("-"):
        return runner.run_command(argv)

    args, rest = parser.parse_known_args(argv)
    if rest and rest[0] == "--":
        rest = rest[1:]

    if args.test:
        return runner.run_tests(rest, args.slow)
    if not rest:
        runner.print_error("No command given")
        parser.print_help()
        return 2
    return runner.run_command(rest)


if __name__ == "__main__":
    sys.exit(main())
