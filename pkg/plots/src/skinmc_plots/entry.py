"""Console entry points, one per figure kind."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .figures import FigureSpec, render
from .reading import SchemaError


def _run(kind: str, argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog=f"skinmc-plot-{kind}",
        description=f"Render a {kind} figure from skinmc CSV output.",
    )
    parser.add_argument("--in", dest="inputs", nargs="+", required=True,
                        type=Path, help="input CSV path(s)")
    parser.add_argument("--out", required=True, type=Path,
                        help="output image path (png/svg/pdf)")
    parser.add_argument("--title", default=None)
    args = parser.parse_args(argv)
    try:
        render(FigureSpec(kind=kind, inputs=tuple(args.inputs),
                          output=args.out, title=args.title))
    except SchemaError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


def heatmap_main(argv=None) -> int:
    return _run("heatmap", argv)


def scaling_main(argv=None) -> int:
    return _run("scaling", argv)


def loglog_main(argv=None) -> int:
    return _run("loglog", argv)


def collapse_main(argv=None) -> int:
    return _run("collapse", argv)


def momentum_main(argv=None) -> int:
    return _run("momentum", argv)


if __name__ == "__main__":
    sys.exit(_run(sys.argv[1], sys.argv[2:]))
