"""MovieLens-100k as a distribution of per-user rating functions.

Users are split 70/10/20 into train/valid/test pools. All statistics used for
featurisation (timestamp and age normalisation, occupation vocabulary, movie
embedding ids) come from the training pool only.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from metasurrogate.errors import DataError, DegenerateError

NUM_GENRES = 19
SHARED_MOVIE_ID = 0
OTHER_OCCUPATION = "other"


@dataclass(frozen=True)
class Rating:
    user: int
    item: int
    rating: float
    timestamp: int


@dataclass
class RatingTask:
    user_id: int
    features: np.ndarray  # (n, d); last column is the movie embedding id
    ratings: np.ndarray

    def __post_init__(self):
        if len(self.ratings) < 2:
            raise DegenerateError(f"user {self.user_id} has fewer than 2 ratings")
        if not np.all(np.isfinite(self.features)):
            raise ValueError(f"non-finite features for user {self.user_id}")

    def __len__(self):
        return len(self.ratings)


@dataclass
class Vocab:
    ts_mean: float
    ts_std: float
    age_mean: float
    age_std: float
    age_median: float
    occupations: list
    movie_ids: dict  # item id -> embedding index (0 is the shared low-resource slot)

    @property
    def num_movie_ids(self) -> int:
        return 1 + len(self.movie_ids)

    @property
    def feature_dim(self) -> int:
        # genres, timestamp, age, sex (2), occupation one-hot, movie id column
        return NUM_GENRES + 1 + 1 + 2 + len(self.occupations) + 1


@dataclass
class MovieLensData:
    ratings: list
    genres: dict  # item -> (19,) 0/1 array
    users: dict  # user -> (age or None, gender, occupation)
    train_users: list
    valid_users: list
    test_users: list
    by_user: dict = field(default_factory=dict)

    @property
    def num_items(self) -> int:
        return len(self.genres)


def data_root() -> Path:
    return Path(os.environ.get("METASURROGATE_DATA_DIR", "data"))


def _open_lines(path: Path):
    if not path.exists():
        raise DataError(f"missing file: {path}")
    return path.read_text(encoding="latin-1").splitlines()


def parse_ratings(path) -> list:
    out = []
    for lineno, line in enumerate(_open_lines(Path(path)), start=1):
        parts = line.split("\t")
        try:
            if len(parts) != 4:
                raise ValueError(f"expected 4 tab-separated fields, got {len(parts)}")
            user, item, rating, ts = (int(p) for p in parts)
            if not 1 <= rating <= 5:
                raise ValueError(f"rating {rating} outside 1..5")
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: malformed rating line {line!r} ({exc})") from None
        out.append(Rating(user, item, float(rating), ts))
    return out


def parse_items(path) -> dict:
    genres = {}
    for lineno, line in enumerate(_open_lines(Path(path)), start=1):
        parts = line.split("|")
        if len(parts) < 5 + NUM_GENRES:
            raise DataError(f"{path}:{lineno}: expected {5 + NUM_GENRES} fields, got {len(parts)}")
        try:
            genres[int(parts[0])] = np.array([int(f) for f in parts[-NUM_GENRES:]], dtype=np.float64)
        except ValueError:
            raise DataError(f"{path}:{lineno}: malformed item line") from None
    return genres


def parse_users(path) -> dict:
    users = {}
    for lineno, line in enumerate(_open_lines(Path(path)), start=1):
        parts = line.split("|")
        if len(parts) != 5:
            raise DataError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
        try:
            uid = int(parts[0])
        except ValueError:
            raise DataError(f"{path}:{lineno}: bad user id {parts[0]!r}") from None
        age = int(parts[1]) if parts[1].strip().isdigit() else None
        users[uid] = (age, parts[2].strip(), parts[3].strip())
    return users


def split_users(user_ids, seed: int, fractions=(0.7, 0.1, 0.2)):
    ids = np.array(sorted(user_ids))
    perm = np.random.default_rng(seed).permutation(len(ids))
    n_train = int(round(fractions[0] * len(ids)))
    n_valid = int(round(fractions[1] * len(ids)))
    shuffled = ids[perm].tolist()
    return shuffled[:n_train], shuffled[n_train : n_train + n_valid], shuffled[n_train + n_valid :]


def movielens_ingest(path, seed: int = 0) -> MovieLensData:
    """Parse a MovieLens-100k directory and split users into pools."""
    root = Path(path)
    if root.is_file():
        root = root.parent
    ratings = parse_ratings(root / "u.data")
    items_path, users_path = root / "u.item", root / "u.user"
    genres = parse_items(items_path) if items_path.exists() else {}
    users = parse_users(users_path) if users_path.exists() else {}
    by_user: dict = {}
    for r in ratings:
        by_user.setdefault(r.user, []).append(r)
    train, valid, test = split_users(by_user.keys(), seed)
    return MovieLensData(ratings, genres, users, train, valid, test, by_user)


def build_vocab(data: MovieLensData) -> Vocab:
    train = set(data.train_users)
    ts = np.array([r.timestamp for r in data.ratings if r.user in train], dtype=np.float64)
    ages = np.array([data.users[u][0] for u in data.train_users if u in data.users and data.users[u][0] is not None], dtype=np.float64)
    if len(ages) == 0:
        ages = np.array([0.0])
    occupations = sorted({data.users[u][2] for u in data.train_users if u in data.users} | {OTHER_OCCUPATION})
    counts: dict = {}
    for r in data.ratings:
        if r.user in train:
            counts[r.item] = counts.get(r.item, 0) + 1
    frequent = sorted(item for item, c in counts.items() if c > 1)
    return Vocab(
        ts_mean=float(ts.mean()),
        ts_std=float(ts.std()) or 1.0,
        age_mean=float(ages.mean()),
        age_std=float(ages.std()) or 1.0,
        age_median=float(np.median(ages)),
        occupations=occupations,
        movie_ids={item: i + 1 for i, item in enumerate(frequent)},
    )


def movielens_featurize(row: Rating, vocab: Vocab, data: MovieLensData) -> np.ndarray:
    genre = data.genres.get(row.item, np.zeros(NUM_GENRES))
    ts = (row.timestamp - vocab.ts_mean) / vocab.ts_std
    age, gender, occupation = data.users.get(row.user, (None, "", OTHER_OCCUPATION))
    age = vocab.age_median if age is None else age
    sex = [1.0, 0.0] if gender == "M" else [0.0, 1.0] if gender == "F" else [0.0, 0.0]
    occ = np.zeros(len(vocab.occupations))
    occ[vocab.occupations.index(occupation if occupation in vocab.occupations else OTHER_OCCUPATION)] = 1.0
    movie = vocab.movie_ids.get(row.item, SHARED_MOVIE_ID)
    return np.concatenate([genre, [ts, (age - vocab.age_mean) / vocab.age_std], sex, occ, [float(movie)]])


def user_task(user: int, data: MovieLensData, vocab: Vocab) -> RatingTask:
    rows = data.by_user[user]
    feats = np.array([movielens_featurize(r, vocab, data) for r in rows])
    return RatingTask(user, feats, np.array([r.rating for r in rows]))


def pool_tasks(users, data: MovieLensData, vocab: Vocab) -> list:
    return [user_task(u, data, vocab) for u in users if len(data.by_user.get(u, ())) >= 2]


@dataclass
class RatingTaskSource:
    """Training-time source: one random user from ``tasks`` per draw, subsampled to ``max_points``."""

    tasks: list
    max_points: int = 200
    input_dim: int = 0
    output_dim: int = 1

    def __post_init__(self):
        if not self.tasks:
            raise DegenerateError("empty rating task pool")
        self.input_dim = self.tasks[0].features.shape[1]

    def sample_task(self, rng: np.random.Generator):
        task = self.tasks[int(rng.integers(len(self.tasks)))]
        idx = rng.permutation(len(task))[: self.max_points]
        return task.features[idx], task.ratings[idx].reshape(-1, 1)

    def describe(self) -> dict:
        return {"kind": "movielens", "num_users": len(self.tasks), "max_points": self.max_points}


def load_default(seed: int = 0, root: Optional[Path] = None):
    """Ingest, build vocabulary and featurise all three pools."""
    data = movielens_ingest((root or data_root()) / "ml-100k", seed=seed)
    vocab = build_vocab(data)
    return data, vocab, {
        "train": pool_tasks(data.train_users, data, vocab),
        "valid": pool_tasks(data.valid_users, data, vocab),
        "test": pool_tasks(data.test_users, data, vocab),
    }
