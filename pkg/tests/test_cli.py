import json
import pathlib

import pytest

from util import write_manifest
from xmrag.adapter import save_adapter_params
from xmrag.cli import main
from xmrag.evaluation import PlantSpec, plant_corpus

DATA = pathlib.Path(__file__).parent / "data"


def run(capsys, argv):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture
def planted_dir(tmp_path):
    plant_corpus(PlantSpec(num_queries=1, n=3, N=8, d_t=12, seed=4), tmp_path)
    qdir = tmp_path / "q000"
    params_path = tmp_path / "adapter.bin"
    suite = plant_corpus(PlantSpec(num_queries=1, n=3, N=8, d_t=12, seed=4))
    save_adapter_params(params_path, suite.params)
    raw = suite.queries[0].query.raw
    truth = suite.queries[0].truth_id
    return qdir, params_path, raw, truth


class TestIndexCommand:
    def test_empty_manifest(self, capsys, tmp_path):
        manifest = write_manifest(tmp_path, [])
        code, out, _ = run(capsys, ["index", str(manifest)])
        assert code == 0
        assert json.loads(out) == {"records": 0, "tokens": 0}

    def test_duplicate_id_exit_code(self, capsys, tmp_path):
        manifest = write_manifest(tmp_path, [("img1", "a"), ("img1", "b")])
        code, _, err = run(capsys, ["index", str(manifest)])
        assert code == 2
        assert "duplicate" in err

    def test_summary_matches_golden(self, capsys, tmp_path):
        manifest = write_manifest(tmp_path, [("img1", "a red bird"), ("img2", "blue sky")])
        code, out, _ = run(capsys, ["index", str(manifest)])
        assert code == 0
        golden = json.loads((DATA / "index_summary_golden.json").read_text())
        assert json.loads(out) == golden

    def test_out_file(self, capsys, tmp_path):
        manifest = write_manifest(tmp_path, [("img1", "hello world")])
        summary_path = tmp_path / "summary.json"
        code, out, _ = run(capsys, ["index", str(manifest), "--out", str(summary_path)])
        assert code == 0
        assert json.loads(summary_path.read_text()) == json.loads(out)


class TestDecomposeCommand:
    def test_rule_based(self, capsys):
        code, out, _ = run(capsys, ["decompose", "red bird, blue sky and tall tree"])
        assert code == 0
        assert json.loads(out)["subqueries"] == ["red bird", "blue sky", "tall tree"]

    def test_llm_replay(self, capsys, tmp_path):
        replay = tmp_path / "replay.json"
        replay.write_text(json.dumps({"a cat sits": "Entity: cat, mat"}))
        code, out, _ = run(capsys, ["decompose", "a cat sits", "--llm",
                                    "--llm-replay", str(replay)])
        assert code == 0
        assert json.loads(out)["subqueries"] == ["cat", "mat"]

    def test_llm_replay_miss_is_service_error(self, capsys, tmp_path):
        replay = tmp_path / "replay.json"
        replay.write_text("{}")
        code, _, err = run(capsys, ["decompose", "unknown", "--llm",
                                    "--llm-replay", str(replay)])
        assert code == 3
        assert "service error" in err

    def test_empty_query_is_data_error(self, capsys):
        code, _, _ = run(capsys, ["decompose", "   "])
        assert code == 2


class TestRetrieveCommand:
    def test_planted_retrieval_report(self, capsys, planted_dir):
        qdir, params_path, raw, truth = planted_dir
        argv = ["retrieve", raw,
                "--manifest", str(qdir / "manifest.jsonl"),
                "--params", str(params_path),
                "--embeddings", str(qdir / "subqueries.xmrg"),
                "--offline"]
        code, out, _ = run(capsys, argv)
        assert code == 0
        report = json.loads(out)
        assert [e["id"] for e in report["entries"]] == [truth]
        assert report["entries"][0]["s"] == [1, 1, 1]
        assert report["counters"]["dense_forwards"] <= report["counters"]["N_tilde"] * 3

    def test_offline_stdout_is_byte_identical(self, capsys, planted_dir):
        qdir, params_path, raw, _ = planted_dir
        argv = ["retrieve", raw,
                "--manifest", str(qdir / "manifest.jsonl"),
                "--params", str(params_path),
                "--embeddings", str(qdir / "subqueries.xmrg"),
                "--offline"]
        _, out1, _ = run(capsys, argv)
        _, out2, _ = run(capsys, argv)
        assert out1 == out2

    def test_beta_above_bound_warns(self, capsys, planted_dir):
        qdir, params_path, raw, _ = planted_dir
        code, _, err = run(capsys, ["retrieve", raw,
                                    "--manifest", str(qdir / "manifest.jsonl"),
                                    "--beta", "0.9", "--offline"])
        assert code == 0
        assert "beta_max" in err

    def test_no_lexical_match_exit_zero(self, capsys, planted_dir):
        qdir, _, _, _ = planted_dir
        code, out, err = run(capsys, ["retrieve", "unheard of phrase",
                                      "--manifest", str(qdir / "manifest.jsonl"),
                                      "--offline"])
        assert code == 0
        assert json.loads(out)["entries"] == []
        assert "no lexical match" in err

    def test_missing_manifest_is_data_error(self, capsys):
        code, _, _ = run(capsys, ["retrieve", "anything", "--manifest", "/nope.jsonl"])
        assert code == 2

    def test_config_file_provides_defaults(self, capsys, planted_dir, tmp_path):
        qdir, params_path, raw, truth = planted_dir
        config = tmp_path / "config.json"
        config.write_text(json.dumps({
            "manifest": str(qdir / "manifest.jsonl"),
            "params": str(params_path),
            "offline": True,
        }))
        code, out, _ = run(capsys, ["retrieve", raw, "--config", str(config),
                                    "--embeddings", str(qdir / "subqueries.xmrg")])
        assert code == 0
        assert [e["id"] for e in json.loads(out)["entries"]] == [truth]


class TestGenerateCommand:
    def test_offline_prints_prompt(self, capsys, planted_dir):
        qdir, params_path, raw, _ = planted_dir
        code, out, _ = run(capsys, ["generate", raw,
                                    "--manifest", str(qdir / "manifest.jsonl"),
                                    "--params", str(params_path),
                                    "--embeddings", str(qdir / "subqueries.xmrg"),
                                    "--offline"])
        assert code == 0
        assert "Use only [" in out
        assert "[the 1st retrieved image]" in out

    def test_replay_writes_image_and_provenance(self, capsys, planted_dir, tmp_path):
        qdir, params_path, raw, truth = planted_dir
        fake = tmp_path / "fake.png"
        fake.write_bytes(b"\x89PNGfake")
        out_image = tmp_path / "gen.png"
        prov = tmp_path / "prov.json"
        code, out, _ = run(capsys, ["generate", raw,
                                    "--manifest", str(qdir / "manifest.jsonl"),
                                    "--replay-image", str(fake),
                                    "--out-image", str(out_image),
                                    "--provenance", str(prov)])
        assert code == 0
        assert out_image.read_bytes() == b"\x89PNGfake"
        record = json.loads(prov.read_text())
        assert record["image_ids"] == [truth]
        assert "Use only [" in record["prompt"]

    def test_no_satisfied_entries_distinct_exit(self, capsys, planted_dir):
        qdir, _, _, _ = planted_dir
        code, _, _ = run(capsys, ["generate", "nothing matches here",
                                  "--manifest", str(qdir / "manifest.jsonl"),
                                  "--offline"])
        assert code == 2


class TestEvalCommand:
    def test_planted_recall_report(self, capsys):
        argv = ["eval", "--metric", "recall", "--num-queries", "5",
                "--subqueries", "3", "--corpus-size", "8", "--dim", "12", "--seed", "1"]
        code, out, _ = run(capsys, argv)
        assert code == 0
        report = json.loads(out)
        assert report["metric"] == "recall_at_1"
        assert report["mean"] == 1.0

    def test_seed_repeat_identical_bytes(self, capsys):
        argv = ["eval", "--metric", "coverage", "--instances", "10", "--seed", "3"]
        _, out1, _ = run(capsys, argv)
        _, out2, _ = run(capsys, argv)
        assert out1 == out2


class TestBenchCommand:
    def test_deterministic_stdout_and_csv(self, capsys, tmp_path):
        csv_path = tmp_path / "bench.csv"
        argv = ["bench", "--sizes", "300", "--queries", "4", "--csv", str(csv_path)]
        code, out1, _ = run(capsys, argv)
        assert code == 0
        assert csv_path.exists()
        payload = json.loads(out1)
        assert payload["forward_counters"]["dense_forwards_N300"] == 300 * 4
        _, out2, _ = run(capsys, argv)
        assert out1 == out2

    def test_counter_keys_present(self, capsys):
        code, out, _ = run(capsys, ["bench", "--sizes", "200", "--queries", "2"])
        assert code == 0
        counters = json.loads(out)["forward_counters"]
        assert counters["sparse_forwards_N200"] == 0
        assert counters["dense_forwards_N200"] == 200 * 4


class TestExitCodes:
    def test_usage_error(self, capsys):
        assert run(capsys, ["retrieve"])[0] == 1
        assert run(capsys, ["nosuchcommand"])[0] == 1

    def test_help_is_success(self, capsys):
        assert run(capsys, ["--help"])[0] == 0
