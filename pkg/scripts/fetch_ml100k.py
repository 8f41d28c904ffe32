"""Fetch the MovieLens-100K ratings into data/ml-100k/u.data.

GroupLens is not always reachable from sandboxed machines, so this pulls the
recbole wheel from the configured package index and extracts its copy of the
100,000 ratings (a one-line header followed by the u.data layout).
"""
import argparse
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

MEMBER = "recbole/dataset_example/ml-100k/ml-100k.inter"


def extract(wheel: Path, out: Path) -> int:
    with zipfile.ZipFile(wheel) as zf:
        lines = zf.read(MEMBER).decode("utf-8").splitlines()[1:]
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return len(lines)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "data" / "ml-100k" / "u.data"))
    parser.add_argument("--wheel", help="use an already downloaded recbole wheel")
    args = parser.parse_args()
    if args.wheel:
        wheel = Path(args.wheel)
    else:
        tmp = Path(tempfile.mkdtemp())
        subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "-d", str(tmp), "recbole==1.2.1"],
                       check=True)
        wheel = next(tmp.glob("recbole-*.whl"))
    n = extract(wheel, Path(args.out))
    print(f"wrote {n} ratings to {args.out}")


if __name__ == "__main__":
    main()
