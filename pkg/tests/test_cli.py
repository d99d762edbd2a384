import json

import pytest

from safebocp import cli
from safebocp import experiments as ex
from safebocp.gp import NumericalError

TINY = """
replications = 2
[controller]
alpha = 0.3
[synthetic]
grid_size = 200
T = 10
"""


@pytest.fixture
def tiny(tmp_path):
    p = tmp_path / "tiny.toml"
    p.write_text(TINY)
    return p


class TestRun:
    def test_run_writes_results(self, tiny, tmp_path, capsys):
        out = tmp_path / "res"
        assert cli.main(["run", "--config", str(tiny), "--out", str(out)]) == cli.EXIT_OK
        text = capsys.readouterr().out
        assert "PASS" in text and "d-safe-bocp" in text
        assert (out / ex.MANIFEST_FILE).is_file()

    def test_overrides_echoed_in_manifest(self, tiny, tmp_path):
        out = tmp_path / "res"
        cli.main(["run", "--config", str(tiny), "--out", str(out), "--seed", "7", "--replications", "1"])
        manifest = json.loads((out / ex.MANIFEST_FILE).read_text())
        assert manifest["base_seed"] == 7 and manifest["replications"] == 1
        assert manifest["config"]["out"] == str(out)

    def test_sweep_baseline_without_guarantee(self, tmp_path, capsys):
        cfg = tmp_path / "so.toml"
        cfg.write_text(TINY + '\n[sweep]\nalgorithm = ["safeopt"]\nregime = ["well", "mis"]\n')
        assert cli.main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "r")]) == cli.EXIT_OK
        assert "safeopt" in capsys.readouterr().out

    def test_failed_trial_exit_code(self, tiny, tmp_path, monkeypatch):
        def boom(*a, **k):
            raise NumericalError("singular")
        monkeypatch.setattr(ex, "extend", boom)
        assert cli.main(["run", "--config", str(tiny), "--out", str(tmp_path / "r")]) == cli.EXIT_GUARANTEE

    def test_guarantee_violation_exit_code(self, tiny, tmp_path, monkeypatch):
        real = ex.aggregate

        def broken(*a, **k):
            agg = real(*a, **k)
            agg.guarantee_ok = False
            return agg
        monkeypatch.setattr(ex, "aggregate", broken)
        assert cli.main(["run", "--config", str(tiny), "--out", str(tmp_path / "r")]) == cli.EXIT_GUARANTEE


class TestErrors:
    def test_missing_config(self, tmp_path):
        assert cli.main(["run", "--config", str(tmp_path / "nope.toml")]) == cli.EXIT_USAGE

    def test_invalid_config(self, tmp_path, capsys):
        p = tmp_path / "bad.toml"
        p.write_text("[controller]\nalpha = 0.0\n")
        assert cli.main(["run", "--config", str(p)]) == cli.EXIT_USAGE
        assert "(0, 1]" in capsys.readouterr().err

    def test_unwritable_out(self, tiny, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert cli.main(["run", "--config", str(tiny), "--out", str(blocker / "sub")]) == cli.EXIT_IO

    def test_bad_subcommand(self):
        with pytest.raises(SystemExit) as info:
            cli.main(["frobnicate"])
        assert info.value.code == 2


class TestInspect:
    def test_config(self, tiny, capsys):
        assert cli.main(["inspect", str(tiny)]) == cli.EXIT_OK
        data = json.loads(capsys.readouterr().out)
        assert data["synthetic"]["grid_size"] == 200 and data["controller"]["eta"] == 2.0

    def test_results_and_replay(self, tiny, tmp_path, capsys):
        out = tmp_path / "res"
        cli.main(["run", "--config", str(tiny), "--out", str(out)])
        capsys.readouterr()
        assert cli.main(["inspect", str(out)]) == cli.EXIT_OK
        assert json.loads(capsys.readouterr().out)["summary"]["n_trials"] == 2
        assert cli.main(["inspect", str(out), "--replay", "1"]) == cli.EXIT_OK
        assert "identical" in capsys.readouterr().out


class TestFetchData:
    def test_fetch_and_mismatch(self, tmp_path):
        import hashlib
        import zipfile

        archive = tmp_path / "ml-100k.zip"
        with zipfile.ZipFile(archive, "w") as zf:
            zf.writestr("ml-100k/u.data", "1\t1\t4\t0\n")
        digest = hashlib.md5(archive.read_bytes()).hexdigest()
        url = archive.as_uri()
        dest = tmp_path / "cache"
        args = ["fetch-data", "--dest", str(dest), "--url", url]
        assert cli.main(args + ["--md5", digest]) == cli.EXIT_OK
        assert cli.main(args) == cli.EXIT_OK
        assert cli.main(["fetch-data", "--dest", str(tmp_path / "c2"), "--url", url, "--md5", "0" * 32]) == cli.EXIT_IO

    def test_offline(self, tmp_path):
        args = ["fetch-data", "--dest", str(tmp_path), "--url", "file:///nonexistent.zip", "--md5", "0" * 32]
        assert cli.main(args) == cli.EXIT_IO
