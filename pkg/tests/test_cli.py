import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import pytest

from metasurrogate.cli.checkpoint import FORMAT_VERSION, MAGIC, checkpoint_load, checkpoint_save, encode
from metasurrogate.cli.config import load_config, validate
from metasurrogate.cli.main import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, exit_code, main
from metasurrogate.cli.pipelines import FAILED_MARKER, replicate_rng
from metasurrogate.cli.report import mean_std, write_report
from metasurrogate.errors import CheckpointError, ConfigError, DataError, NumericError
from metasurrogate.neural_process import NPConfig, init_params

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN_DIGEST = "b309ac598fcbc17ad4d9ef9d721e679759b993cfcff3e1bccbbbcd412d6dffe9"

TINY_MODEL = """
[model]
encoder_sizes = [8]
latent_dim = 3
latent_head_sizes = [8]
decoder_sizes = [8]
max_context_size = 10
"""


def tiny_cfg(**kw):
    base = dict(encoder_sizes=(8,), latent_dim=3, latent_head_sizes=(8,), decoder_sizes=(8,), max_context_size=10)
    return NPConfig(1, 1, **{**base, **kw})


def write(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


def strip_wall(path: Path) -> list:
    out = []
    for line in path.read_text().splitlines():
        rec = json.loads(line)
        rec.pop("wall_ms", None)
        out.append(rec)
    return out


# ---------------------------------------------------------------- checkpoints


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        cfg = tiny_cfg()
        params = init_params(cfg, np.random.default_rng(0))
        checkpoint_save(params, cfg, tmp_path / "m.ckpt", {"iters": 3})
        ck = checkpoint_load(tmp_path / "m.ckpt", cfg)
        assert ck.config == cfg and ck.metadata == {"iters": 3} and ck.format_version == FORMAT_VERSION
        assert set(ck.params) == set(params)
        assert all(np.array_equal(ck.params[k], params[k]) for k in params)

    def test_truncated_file_is_checksum_error(self, tmp_path):
        cfg = tiny_cfg()
        path = checkpoint_save(init_params(cfg, np.random.default_rng(0)), cfg, tmp_path / "m.ckpt")
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(CheckpointError, match="checksum"):
            checkpoint_load(path)

    def test_flipped_byte_is_checksum_error(self, tmp_path):
        cfg = tiny_cfg()
        data = bytearray(encode(init_params(cfg, np.random.default_rng(0)), cfg))
        data[len(data) // 2] ^= 0xFF
        (tmp_path / "m.ckpt").write_bytes(bytes(data))
        with pytest.raises(CheckpointError, match="checksum"):
            checkpoint_load(tmp_path / "m.ckpt")

    def test_config_mismatch_names_field(self, tmp_path):
        a = tiny_cfg()
        path = checkpoint_save(init_params(a, np.random.default_rng(0)), a, tmp_path / "m.ckpt")
        with pytest.raises(CheckpointError, match="latent_dim"):
            checkpoint_load(path, tiny_cfg(latent_dim=4))

    def test_format_version_mismatch(self, tmp_path):
        cfg = tiny_cfg()
        body = encode(init_params(cfg, np.random.default_rng(0)), cfg)[:-32]
        body = body.replace(f"format_version {FORMAT_VERSION}\n".encode(), b"format_version 99\n", 1)
        (tmp_path / "m.ckpt").write_bytes(body + hashlib.sha256(body).digest())
        with pytest.raises(CheckpointError, match="format_version"):
            checkpoint_load(tmp_path / "m.ckpt")

    def test_golden_fixture_loads(self):
        ck = checkpoint_load(FIXTURES / "golden_v1.ckpt")
        assert ck.format_version == 1 and ck.params.digest() == GOLDEN_DIGEST
        assert ck.config.latent_dim == 2 and ck.params.num_values() == 90

    def test_readable_with_struct_only(self):
        data = (FIXTURES / "golden_v1.ckpt").read_bytes()
        lines = data.split(b"\n", 3)
        assert lines[0] == MAGIC
        n = int(lines[2].split()[1])
        manifest = json.loads(lines[3][:n])
        payload = lines[3][n:-32]
        ck = checkpoint_load(FIXTURES / "golden_v1.ckpt")
        for entry in manifest["arrays"]:
            count = int(np.prod(entry["shape"]))
            vals = struct.unpack_from(f"<{count}d", payload, entry["offset"])
            assert list(vals) == ck.params[entry["name"]].ravel().tolist()


# ---------------------------------------------------------------- config


class TestConfig:
    def test_unknown_key_names_path(self):
        with pytest.raises(ConfigError, match=r"loop\.planner\.horizn"):
            validate({"kind": "mbrl", "seed": 0, "output_dir": "o", "loop": {"planner": {"horizn": 3}}})
        with pytest.raises(ConfigError, match=r"model\.latnt_dim"):
            validate({"kind": "bo", "seed": 0, "output_dir": "o", "model": {"latnt_dim": 3}})

    def test_seed_mandatory(self):
        with pytest.raises(ConfigError, match="seed"):
            validate({"kind": "bo", "output_dir": "o"})

    def test_type_errors(self):
        with pytest.raises(ConfigError, match=r"train\.iters"):
            validate({"kind": "bo", "seed": 0, "output_dir": "o", "train": {"iters": "many"}})
        with pytest.raises(ConfigError, match=r"loop\.budgets"):
            validate({"kind": "bandit", "seed": 0, "output_dir": "o", "loop": {"budgets": [1.5]},
                      "source": {"data_dir": str(FIXTURES)}})

    def test_missing_checkpoint_path(self, tmp_path):
        with pytest.raises(ConfigError, match=r"model\.checkpoint"):
            validate({"kind": "bo", "seed": 0, "output_dir": "o", "model": {"checkpoint": "nope.ckpt"}}, tmp_path)

    def test_wrong_source_for_kind(self):
        with pytest.raises(ConfigError, match=r"source\.kind"):
            validate({"kind": "bo", "seed": 0, "output_dir": "o", "source": {"kind": "cartpole"}})

    def test_paths_relative_to_config(self, tmp_path):
        cfg = load_config(write(tmp_path / "c.toml", 'kind = "bo"\nseed = 1\noutput_dir = "runs/a"\n'))
        assert cfg.output_dir == tmp_path / "runs/a"

    def test_cli_config_error_exit_code(self, tmp_path, capsys):
        path = write(tmp_path / "c.toml", 'kind = "bo"\nseed = 1\noutput_dir = "o"\nbogus = 2\n')
        assert main(["run", str(path)]) == EXIT_CONFIG
        assert "bogus" in capsys.readouterr().err

    def test_exit_code_mapping(self):
        assert exit_code(DataError("x")) == EXIT_DATA
        assert exit_code(CheckpointError("x")) == EXIT_DATA
        assert exit_code(NumericError("x")) == EXIT_NUMERIC
        assert exit_code(RuntimeError("x")) == 1


# ---------------------------------------------------------------- report


def write_records(path: Path, recs):
    path.write_text("".join(json.dumps(r) + "\n" for r in recs))


def read_csv(path: Path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestReport:
    def test_single_run_mean_equals_run(self, tmp_path):
        vals = [0.9, 0.4, 0.1]
        write_records(tmp_path / "np__rep0.jsonl", [{"iter": i, "scaled_min": v} for i, v in enumerate(vals)])
        write_report(tmp_path)
        rows = read_csv(tmp_path / "series" / "np.csv")
        assert [float(r["mean"]) for r in rows] == vals and all(float(r["std"]) == 0.0 for r in rows)

    def test_two_runs_hand_computed(self, tmp_path):
        write_records(tmp_path / "gp__rep0.jsonl", [{"iter": 0, "scaled_min": 1.0}, {"iter": 1, "scaled_min": 0.5}])
        write_records(tmp_path / "gp__rep1.jsonl", [{"iter": 0, "scaled_min": 0.0}, {"iter": 1, "scaled_min": 0.25}])
        write_report(tmp_path)
        rows = read_csv(tmp_path / "series" / "gp.csv")
        assert float(rows[0]["mean"]) == 0.5 and float(rows[0]["std"]) == pytest.approx(np.sqrt(0.5))
        assert float(rows[1]["mean"]) == 0.375 and float(rows[1]["std"]) == pytest.approx(np.sqrt(0.03125))
        summary = read_csv(tmp_path / "summary.csv")
        assert summary == [{"method": "gp", "metric": "scaled_min", "key": "iter", "value": "1", "mean": "0.375",
                            "std": str(np.sqrt(0.03125)), "n": "2"}]

    def test_budget_rows(self, tmp_path):
        write_records(tmp_path / "random__rep0.jsonl",
                      [{"iter": i, "budget": b, "rmse": 1.0 - b} for i, b in enumerate([0.2, 0.5, 0.8])])
        write_report(tmp_path)
        assert [r["value"] for r in read_csv(tmp_path / "summary.csv")] == ["0.2", "0.5", "0.8"]

    def test_rfc4180_line_endings(self, tmp_path):
        write_records(tmp_path / "np__rep0.jsonl", [{"iter": 0, "rmse": 1.0}])
        write_report(tmp_path)
        assert (tmp_path / "summary.csv").read_bytes().count(b"\r\n") == 2

    def test_empty_dir(self, tmp_path, capsys):
        with pytest.raises(DataError):
            write_report(tmp_path)
        assert main(["report", str(tmp_path)]) == EXIT_DATA

    def test_mean_std(self):
        assert mean_std([2.0]) == (2.0, 0.0)
        assert mean_std([1.0, 3.0]) == (2.0, pytest.approx(np.sqrt(2.0)))


# ---------------------------------------------------------------- pipelines

BO = (
    """
kind = "bo"
seed = 7
output_dir = "out"
replicates = 2
"""
    + TINY_MODEL
    + """
[train]
iters = 10
batch = 4

[loop]
n_iters = 6
num_functions = 2
grid_size = 15
"""
)

PRETRAIN = (
    """
kind = "pretrain"
seed = 4
output_dir = "out"
[source]
kind = "functions"
num_points = 20
"""
    + TINY_MODEL
    + """
[train]
iters = 15
batch = 3
"""
)

MBRL = """
kind = "mbrl"
seed = 2
output_dir = "out"
replicates = 2
[model]
encoder_sizes = [8]
latent_dim = 3
latent_head_sizes = [8]
decoder_sizes = [8]
max_context_size = 20
[source]
num_tasks = 2
rollouts_per_task = 1
rollout_length = 15
points_per_draw = 15
[train]
iters = 4
max_extra_targets = 10
[loop]
episodes = 2
max_context = 20
[loop.planner]
horizon = 3
population = 8
elites = 2
iterations = 2
"""

TWO_LEVEL = """
kind = "two-level"
seed = 5
output_dir = "out"
replicates = 2
[source]
num_tasks = 6
num_positions = 12
[loop]
budget = 20
inner_steps = 3
"""


def movielens_dir(root: Path) -> Path:
    """20 users x 12 ratings over 10 movies, genres and demographics in the ml-100k layout."""
    d = root / "ml-100k"
    d.mkdir(parents=True)
    rng = np.random.default_rng(0)
    rows = []
    for u in range(1, 21):
        for i, item in enumerate(rng.permutation(10)[:10].tolist() + [1, 2]):
            rows.append(f"{u}\t{item + 1}\t{int(rng.integers(1, 6))}\t{880000000 + 100 * len(rows)}")
    # duplicates inflate counts; keep the first 12 distinct (user, item) pairs per user
    (d / "u.data").write_text("\n".join(rows) + "\n")
    items = [f"{i}|M{i} (1995)|01-Jan-1995||http://x|" + "|".join("1" if g == i % 19 else "0" for g in range(19))
             for i in range(1, 11)]
    (d / "u.item").write_text("\n".join(items) + "\n")
    occ = ["writer", "other", "technician", "artist"]
    users = [f"{u}|{20 + u}|{'MF'[u % 2]}|{occ[u % 4]}|00000" for u in range(1, 21)]
    (d / "u.user").write_text("\n".join(users) + "\n")
    return root


def bandit_toml(data_root: Path, budgets="[0.2, 0.5, 0.8]") -> str:
    return f"""
kind = "bandit"
seed = 3
output_dir = "out"
[model]
encoder_sizes = [8]
latent_dim = 3
latent_head_sizes = [8]
decoder_sizes = [8]
embedding_dim = 2
max_context_size = 10
[train]
iters = 5
batch = 2
[source]
data_dir = "{data_root}"
[loop]
budgets = {budgets}
S = 2
"""


def run_twice(tmp_path: Path, text: str):
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        d.mkdir(parents=True)
        assert main(["run", str(write(d / "c.toml", text))]) == 0
        outs.append(d / "out")
    return outs


def assert_same_outputs(a: Path, b: Path):
    files = sorted(p.name for p in a.glob("*.jsonl"))
    assert files and files == sorted(p.name for p in b.glob("*.jsonl"))
    for name in files:
        assert strip_wall(a / name) == strip_wall(b / name)
    if (a / "model.ckpt").exists():
        assert (a / "model.ckpt").read_bytes() == (b / "model.ckpt").read_bytes()
    assert (a / "summary.csv").read_bytes() == (b / "summary.csv").read_bytes()


class TestPipelines:
    def test_bo_record_count_and_determinism(self, tmp_path):
        a, b = run_twice(tmp_path, BO)
        assert_same_outputs(a, b)
        for method in ("np", "gp", "random"):
            for k in range(2):
                recs = strip_wall(a / f"{method}__rep{k}.jsonl")
                assert len(recs) == 6 * 2
                assert all(r["replicate"] == k and r["seed"] == 7 for r in recs)
        assert not (a / FAILED_MARKER).exists()

    def test_pretrain_checkpoints_byte_identical(self, tmp_path):
        a, b = run_twice(tmp_path, PRETRAIN)
        assert (a / "model.ckpt").read_bytes() == (b / "model.ckpt").read_bytes()
        ck = checkpoint_load(a / "model.ckpt")
        assert ck.metadata["iters"] == 15 and ck.metadata["seed"] == 4
        assert len((a / "train.jsonl").read_text().splitlines()) == 15

    def test_bo_from_checkpoint_matches_training_run(self, tmp_path):
        (tmp_path / "t").mkdir()
        a = run_twice(tmp_path / "t", BO)[0]
        text = BO.replace("[train]\niters = 10", f'checkpoint = "{a / "model.ckpt"}"\n[train]\niters = 10')
        d = tmp_path / "c"
        d.mkdir()
        assert main(["run", str(write(d / "c.toml", text))]) == 0
        assert strip_wall(d / "out" / "np__rep1.jsonl") == strip_wall(a / "np__rep1.jsonl")

    def test_mbrl_determinism(self, tmp_path):
        a, b = run_twice(tmp_path, MBRL)
        assert_same_outputs(a, b)
        recs = strip_wall(a / "np__rep0.jsonl")
        assert [r["iter"] for r in recs] == [0, 1] and all("episode_reward" in r for r in recs)
        assert "normalizer" in checkpoint_load(a / "model.ckpt").metadata

    def test_two_level_determinism(self, tmp_path):
        a, b = run_twice(tmp_path, TWO_LEVEL)
        assert_same_outputs(a, b)
        assert len(strip_wall(a / "flat__rep1.jsonl")) == 20

    def test_bandit_three_rows_per_acquisition(self, tmp_path):
        root = movielens_dir(tmp_path / "data")
        a, b = run_twice(tmp_path, bandit_toml(root))
        assert_same_outputs(a, b)
        rows = read_csv(a / "summary.csv")
        for acq in ("random", "info_gain"):
            mine = [r for r in rows if r["method"] == acq]
            assert [r["value"] for r in mine] == ["0.2", "0.5", "0.8"] and all(r["metric"] == "rmse" for r in mine)

    def test_data_dir_from_environment(self, tmp_path, monkeypatch):
        root = movielens_dir(tmp_path / "data")
        monkeypatch.setenv("METASURROGATE_DATA_DIR", str(root))
        text = bandit_toml(root).replace(f'data_dir = "{root}"', "")
        assert main(["run", str(write(tmp_path / "c.toml", text))]) == 0
        monkeypatch.setenv("METASURROGATE_DATA_DIR", str(tmp_path / "nowhere"))
        assert main(["run", str(tmp_path / "c.toml")]) == EXIT_CONFIG

    def test_failure_leaves_marker_and_partial_outputs(self, tmp_path):
        root = movielens_dir(tmp_path / "data")
        # a 0.95 budget leaves no held-out ratings for 12-rating users
        path = write(tmp_path / "c.toml", bandit_toml(root, "[0.95]"))
        assert main(["run", str(path)]) == 1
        out = tmp_path / "out"
        assert "DegenerateError" in (out / FAILED_MARKER).read_text()
        assert (out / "model.ckpt").exists()
        # a later good run clears the marker
        write(path, bandit_toml(root))
        assert main(["run", str(path)]) == 0 and not (out / FAILED_MARKER).exists()

    def test_inspect(self, capsys):
        assert main(["inspect", str(FIXTURES / "golden_v1.ckpt")]) == 0
        info = json.loads(capsys.readouterr().out)
        assert info["digest"] == GOLDEN_DIGEST and info["format_version"] == 1

    def test_replicate_streams_differ(self):
        assert replicate_rng(0, 0).random() != replicate_rng(0, 1).random()
        assert replicate_rng(0, 1).random() == replicate_rng(0, 1).random()
