from __future__ import annotations

import csv
import io
from pathlib import Path

import pytest

from icexperts.cli import build_parser, main
from icexperts.sim import RegretTrace, TRACE_COLUMNS, write_script

DATA = Path(__file__).parent / "data"


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


class TestCli:
    def test_noise_check(self, capsys):
        code, out, err = run(capsys, "noise-check", "--model", "laplace", "--grid-min", "-2", "--grid-max", "2",
                             "--step", "0.5")
        assert code == 0
        rows = list(csv.reader(io.StringIO(out)))
        assert rows[0] == ["z", "nu", "nu_prime", "hazard"]
        assert len(rows) == 10
        assert "holds" in err

    def test_help_lists_flags(self, capsys):
        for cmd in ("simulate", "nfl", "audit-ic", "noise-check", "opt"):
            code, out, _ = run(capsys, cmd, "--help")
            assert code == 0 and "--" in out
        text = build_parser().format_help()
        assert all(c in text for c in ("simulate", "nfl", "audit-ic", "noise-check", "opt"))

    def test_unknown_flag(self, capsys):
        code, _, err = run(capsys, "simulate", "--bogus")
        assert code == 2 and "bogus" in err

    def test_data_error(self, capsys, tmp_path):
        code, _, err = run(capsys, "nfl", "--data", str(tmp_path / "absent.csv"), "--outdir", str(tmp_path))
        assert code == 3 and "data error" in err

    def test_config_error(self, capsys, tmp_path):
        (tmp_path / "c.ini").write_text("colour = red\n")
        code, _, err = run(capsys, "nfl", "--synthetic", "--config", str(tmp_path / "c.ini"),
                           "--outdir", str(tmp_path))
        assert code == 4 and "colour" in err
        code, _, _ = run(capsys, "noise-check", "--model", "cauchy")
        assert code == 4

    def test_simulate_stdout(self, capsys):
        code, out, err = run(capsys, "simulate", "--algo", "ftpl", "--noise", "gaussian", "--eta", "10",
                             "--T", "40", "--K", "5", "--m", "2")
        assert code == 0
        rows = list(csv.reader(io.StringIO(out)))
        assert tuple(rows[0]) == TRACE_COLUMNS and len(rows) == 41
        assert "alpha-regret" in err

    def test_simulate_files(self, capsys, tmp_path):
        write_script(tmp_path / "s.csv", [[0.2, 0.9, 0.5]] * 12, [1] * 12)
        code, _, _ = run(capsys, "simulate", "--algo", "odg", "--utility", "submodular", "--m", "2",
                         "--script", str(tmp_path / "s.csv"), "--seeds", "2", "--policy", "best-response",
                         "--strategic", "0", "--audit-every", "4", "--out", str(tmp_path / "o"),
                         "--audit-out", str(tmp_path / "a.csv"))
        assert code == 0
        tr = RegretTrace.read_csv(tmp_path / "o" / "trace_odg_seed1.csv")
        assert tr.T == 12 and tr.seed == 1
        assert len((tmp_path / "a.csv").read_text().splitlines()) == 1 + 2 * 3

    def test_opt(self, capsys, tmp_path):
        write_script(tmp_path / "s.csv", [[0.8, 0.5]], [1])
        code, out, _ = run(capsys, "opt", "--script", str(tmp_path / "s.csv"), "--m", "1")
        assert code == 0 and out.startswith("set=0 total=0.95999")
        code, out, _ = run(capsys, "opt", "--K", "6", "--T", "20", "--m", "2")
        assert code == 0 and out.startswith("set=")

    @pytest.mark.parametrize("algo", ["wsu", "meta-wsu", "ftpl", "odg"])
    def test_audit_ic(self, capsys, algo):
        code, out, err = run(capsys, "audit-ic", "--algo", algo, "--K", "4", "--m", "2" if algo != "wsu" else "1",
                             "--history", "5", "--experts", "0,1", "--mc-samples", "2000", "--step", "0.01")
        assert code == 0
        assert len(out.strip().splitlines()) == 3
        assert "max deviation" in err

    def test_audit_bad_expert(self, capsys):
        code, _, _ = run(capsys, "audit-ic", "--algo", "wsu", "--K", "3", "--experts", "7")
        assert code == 3

    def test_nfl_synthetic(self, capsys, tmp_path):
        code, out, err = run(capsys, "nfl", "--synthetic", "--K", "6", "--groups", "1", "--runs", "1",
                             "--outdir", str(tmp_path))
        assert code == 0
        assert (tmp_path / "band_ftpl_K6.csv").exists() and (tmp_path / "metadata_K6.json").exists()
        assert "ftpl: average regret" in err

    def test_nfl_data(self, capsys, tmp_path):
        code, _, _ = run(capsys, "nfl", "--data", str(DATA / "tiny.csv"), "--K", "2", "--m", "1",
                         "--groups", "1", "--runs", "2", "--outdir", str(tmp_path))
        assert code == 0
        assert (tmp_path / "groups_K2.csv").read_text().startswith("algo,group,t,mean")
