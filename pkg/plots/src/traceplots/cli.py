"""Command line entry: render figures from spec files.

Exit codes: 0 ok, 1 bad spec or input.
"""

from __future__ import annotations

import argparse
import sys

from .figures import (
    EmptySelectionError,
    FigureSpec,
    FigureSpecError,
    SchemaMismatchError,
    render,
)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="traceplots",
        description="Render experiment CSV outputs to figures",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("render")
    p.add_argument("--spec", required=True, help="JSON figure specification")
    args = parser.parse_args(argv)

    try:
        spec = FigureSpec.load(args.spec)
        out = render(spec)
    except (FigureSpecError, SchemaMismatchError, EmptySelectionError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
