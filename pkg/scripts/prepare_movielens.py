"""Rebuild the MovieLens-100k ``u.data``/``u.item``/``u.user`` files.

The GroupLens download is not reachable from every build machine. The
``recbole`` wheel ships the same 100,000 ratings as atomic files in the
original row order; this script converts them back to the published format.

    python scripts/prepare_movielens.py [--wheel PATH] [--out DIR]
"""

import argparse
import glob
import os
import subprocess
import sys
import tempfile
import zipfile

GENRES = [
    "unknown", "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime", "Documentary", "Drama",
    "Fantasy", "Film-Noir", "Horror", "Musical", "Mystery", "Romance", "Sci-Fi", "Thriller", "War", "Western",
]
PREFIX = "recbole/dataset_example/ml-100k/ml-100k"


def _rows(z, kind):
    lines = z.read(f"{PREFIX}.{kind}").decode("latin-1").splitlines()
    return [line.split("\t") for line in lines[1:] if line]


def convert(wheel, out):
    os.makedirs(out, exist_ok=True)
    with zipfile.ZipFile(wheel) as z:
        with open(os.path.join(out, "u.data"), "w", newline="\n") as fh:
            for user, item, rating, ts in _rows(z, "inter"):
                fh.write(f"{user}\t{item}\t{int(float(rating))}\t{int(float(ts))}\n")
        with open(os.path.join(out, "u.user"), "w", newline="\n") as fh:
            for uid, age, gender, occ, zipcode in _rows(z, "user"):
                fh.write(f"{uid}|{age}|{gender}|{occ}|{zipcode}\n")
        with open(os.path.join(out, "u.item"), "w", newline="\n", encoding="latin-1") as fh:
            for row in _rows(z, "item"):
                item, title, year = row[0], row[1], row[2]
                tags = set(row[3].split()) if len(row) > 3 else {"unknown"}
                flags = "|".join("1" if g in tags else "0" for g in GENRES)
                date = f"01-Jan-{year}" if year else ""
                fh.write(f"{item}|{title}|{date}|||{flags}\n")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--wheel")
    ap.add_argument("--out", default=os.path.join(os.environ.get("METASURROGATE_DATA_DIR", "data"), "ml-100k"))
    args = ap.parse_args()
    wheel = args.wheel
    if wheel is None:
        tmp = tempfile.mkdtemp()
        subprocess.check_call([sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", tmp, "recbole==1.2.1"])
        wheel = glob.glob(os.path.join(tmp, "recbole-*.whl"))[0]
    convert(wheel, args.out)
    print(f"wrote MovieLens-100k files to {args.out}")


if __name__ == "__main__":
    main()
