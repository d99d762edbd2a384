"""Safe movie recommendation on the bundled MovieLens-style mini table.

Each test user is a black box: recommending a movie rated below 4 counts as a
violation. The script runs the bundled config and prints per-target results.

    python demos/movielens_mini.py
"""

from importlib import resources
from pathlib import Path

from safebocp import experiments as ex
from safebocp.cli import summary_table
from safebocp.config import parse_config


def main():
    path = Path(str(resources.files("safebocp") / "configs" / "movielens_mini.toml"))
    result = ex.run_sweep(parse_config(path))
    print(summary_table(result))
    skipped = sum(r.status == "skipped" for r in result.records)
    print(f"\n{len(result.records)} trials, {skipped} skipped (no movie rated 4)")


if __name__ == "__main__":
    main()
