import argparse
import importlib.metadata
import sys
from typing import Any, List, Optional, Tuple

import colorama
from packaging.requirements import Requirement

import proposalloc
from proposalloc.exceptions import ComputationError
from proposalloc.exceptions import ConfigError
from proposalloc.exceptions import MissingInput
from proposalloc.exceptions import ProposalLocException

EXIT_CODES = f"""exit codes:
  0  success
  {ConfigError.exit_code}  invalid configuration or arguments ({ConfigError.code})
  {MissingInput.exit_code}  missing input or upstream artifact ({MissingInput.code})
  {ComputationError.exit_code}  computation error (EMPTY_POOL, DIMENSION_MISMATCH, ...)
"""


def list_deps_and_versions() -> List[Tuple[str, str]]:
    requires = importlib.metadata.requires("proposalloc") or []
    deps = [Requirement(r).name for r in requires if "extra ==" not in r]
    return [(dep, importlib.metadata.version(dep)) for dep in deps]


def dep_versions() -> str:
    try:
        return ", ".join(
            "{}: {}".format(*dependency) for dependency in list_deps_and_versions()
        )
    except importlib.metadata.PackageNotFoundError:
        return "not installed"


def main(argv: Optional[List[str]] = None) -> Any:
    entry_points = importlib.metadata.entry_points()
    commands = entry_points.select(group="proposalloc.commands")

    parser = argparse.ArgumentParser(
        prog="proposalloc",
        epilog=EXIT_CODES,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )

    parser.add_argument(
        "-v",
        "--version",
        action="version",
        version=f"%(prog)s version {proposalloc.__version__} ({dep_versions()})",
    )
    parser.add_argument(
        "--no-color",
        default=False,
        required=False,
        action="store_true",
        help="disable colored output",
    )
    parser.add_argument(
        "command",
        choices=commands.names,
    )
    parser.add_argument(
        "args",
        help=argparse.SUPPRESS,
        nargs=argparse.REMAINDER,
    )

    args = parser.parse_args(sys.argv[1:] if argv is None else argv)

    try:
        command = commands[args.command].load()

        command(args.args)
    except ProposalLocException as exc:
        detail = exc.args[0] if exc.args else ""
        message = f"{exc.__class__.__name__} [{exc.code}]: {detail}"
        pre_style, post_style = "", ""
        if not args.no_color:
            colorama.init()
            pre_style, post_style = colorama.Fore.RED, colorama.Style.RESET_ALL
        print(f"{pre_style}{message}{post_style}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
