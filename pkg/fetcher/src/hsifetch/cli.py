"""fetch-hsi: download a benchmark dataset and emit a container directory.

Exit codes: 0 ok, 2 usage, 3 download failure, 4 checksum mismatch,
5 conversion/validation failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from .convert import ConvertError, convert
from .fetch import ChecksumError, DownloadError, fetch
from .recipes import RECIPES


def main(argv=None):
    parser = argparse.ArgumentParser(prog="fetch-hsi")
    parser.add_argument("--dataset", required=True, choices=sorted(RECIPES))
    parser.add_argument("--out", required=True, help="container output directory")
    parser.add_argument("--cache", default=os.path.expanduser("~/.cache/hsifetch"),
                        help="raw-file cache directory")
    args = parser.parse_args(argv)
    recipe = RECIPES[args.dataset]
    try:
        cube_path, labels_path = fetch(recipe, args.cache)
        convert(cube_path, labels_path, recipe, args.out)
    except DownloadError as err:
        print(f"download failed: {err}", file=sys.stderr)
        return 3
    except ChecksumError as err:
        print(f"checksum mismatch: {err}", file=sys.stderr)
        return 4
    except ConvertError as err:
        print(f"conversion failed: {err}", file=sys.stderr)
        return 5
    print(f"wrote container for {recipe.name} to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
