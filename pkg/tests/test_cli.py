"""Command-line behavior: spec parsing, exit codes, output routing."""

from pathlib import Path

import pytest

from conftest import make_config
from uavnet import __version__
from uavnet.cli import (
    EXIT_INFEASIBLE,
    EXIT_IO,
    EXIT_OK,
    EXIT_USAGE,
    _resolve_out,
    main,
    parse_scheme_spec,
    parse_seed_spec,
)
from uavnet.orchestrator import SCHEMES
from uavnet.reporting import MANIFEST_NAME, execute_run
from uavnet.scenario import save_scenario, serialize_scenario


@pytest.fixture(scope="module")
def cli_tree(tmp_path_factory):
    """A saved scenario plus one completed run for plotdata to consume."""
    root = tmp_path_factory.mktemp("cli")
    scenario = root / "tiny.cfg"
    save_scenario(make_config(), scenario)
    out = root / "done"
    execute_run(scenario, ["traj_2d"], [0], out)
    return scenario, out


class TestSeedSpec:
    def test_single_and_list(self):
        assert parse_seed_spec("0") == [0]
        assert parse_seed_spec(" 2 , 4 ") == [2, 4]

    def test_ranges_are_inclusive(self):
        assert parse_seed_spec("1..3,9") == [1, 2, 3, 9]
        assert parse_seed_spec("3..3") == [3]

    def test_descending_range_rejected(self):
        with pytest.raises(ValueError, match="descending"):
            parse_seed_spec("5..2")

    def test_empty_entry_rejected(self):
        with pytest.raises(ValueError, match="empty seed entry"):
            parse_seed_spec("1,,2")

    def test_non_integer_rejected(self):
        with pytest.raises(ValueError):
            parse_seed_spec("a")


class TestSchemeSpec:
    def test_all_expands_to_every_scheme(self):
        assert parse_scheme_spec("all") == list(SCHEMES)

    def test_explicit_list_with_spaces(self):
        assert parse_scheme_spec("proposed , traj_2d") == ["proposed", "traj_2d"]

    def test_unknown_scheme_rejected(self):
        with pytest.raises(ValueError, match="unknown scheme"):
            parse_scheme_spec("genie")

    def test_blank_spec_rejected(self):
        with pytest.raises(ValueError, match="no schemes"):
            parse_scheme_spec(",")


class TestResolveOut:
    def test_absolute_path_kept(self, monkeypatch):
        monkeypatch.setenv("UAVNET_OUT_ROOT", "/somewhere/else")
        assert _resolve_out("/abs/out") == Path("/abs/out")

    def test_relative_joined_under_env_root(self, monkeypatch, tmp_path):
        monkeypatch.setenv("UAVNET_OUT_ROOT", str(tmp_path))
        assert _resolve_out("runs/a") == tmp_path / "runs" / "a"

    def test_relative_without_env_stays_relative(self, monkeypatch):
        monkeypatch.delenv("UAVNET_OUT_ROOT", raising=False)
        assert _resolve_out("runs/a") == Path("runs/a")


class TestTopLevel:
    def test_version_flag(self, capsys):
        assert main(["--version"]) == EXIT_OK
        assert __version__ in capsys.readouterr().out

    def test_no_subcommand_is_usage_error(self, capsys):
        assert main([]) == EXIT_USAGE

    def test_unknown_flag_is_usage_error(self, capsys):
        assert main(["run", "--bogus"]) == EXIT_USAGE


class TestValidate:
    def test_valid_scenario(self, cli_tree, capsys):
        scenario, _ = cli_tree
        assert main(["validate", "--scenario", str(scenario)]) == EXIT_OK
        out = capsys.readouterr().out
        assert "scenario OK" in out
        assert "users=6" in out
        assert "tau=3 c_max=2" in out
        assert "3..15" in out  # default outage budget grid

    def test_missing_file_exits_io(self, tmp_path, capsys):
        missing = tmp_path / "nope.cfg"
        assert main(["validate", "--scenario", str(missing)]) == EXIT_IO
        assert str(missing) in capsys.readouterr().err

    def test_malformed_text_exits_infeasible(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("total_nonsense = 5\n", encoding="utf-8")
        assert main(["validate", "--scenario", str(bad)]) == EXIT_INFEASIBLE
        assert "invalid scenario" in capsys.readouterr().err

    def test_invalid_value_exits_infeasible(self, tmp_path, capsys):
        text = serialize_scenario(make_config())
        assert "n_users = 6" in text
        bad = tmp_path / "bad.cfg"
        bad.write_text(text.replace("n_users = 6", "n_users = 0"),
                       encoding="utf-8")
        assert main(["validate", "--scenario", str(bad)]) == EXIT_INFEASIBLE
        assert "n_users" in capsys.readouterr().err


class TestRun:
    def test_single_combo(self, cli_tree, tmp_path, capsys):
        scenario, _ = cli_tree
        out = tmp_path / "run1"
        code = main(["run", "--scenario", str(scenario),
                     "--schemes", "traj_2d", "--seeds", "0",
                     "--out", str(out)])
        assert code == EXIT_OK
        assert "wrote 1 scheme x seed result set(s)" in capsys.readouterr().out
        assert (out / MANIFEST_NAME).is_file()
        assert (out / "traj_2d-seed0000" / "metrics.json").is_file()

    def test_seed_range_expands(self, cli_tree, tmp_path, capsys):
        scenario, _ = cli_tree
        out = tmp_path / "run2"
        code = main(["run", "--scenario", str(scenario),
                     "--schemes", "traj_2d", "--seeds", "4..5",
                     "--out", str(out)])
        assert code == EXIT_OK
        assert "wrote 2 scheme x seed result set(s)" in capsys.readouterr().out
        assert (out / "traj_2d-seed0004").is_dir()
        assert (out / "traj_2d-seed0005").is_dir()

    def test_out_root_env_routes_relative_paths(self, cli_tree, tmp_path,
                                                monkeypatch, capsys):
        scenario, _ = cli_tree
        monkeypatch.setenv("UAVNET_OUT_ROOT", str(tmp_path))
        code = main(["run", "--scenario", str(scenario),
                     "--schemes", "traj_2d", "--seeds", "0",
                     "--out", "nested/run"])
        assert code == EXIT_OK
        assert (tmp_path / "nested" / "run" / MANIFEST_NAME).is_file()

    def test_bad_seed_spec_is_usage_error(self, cli_tree, tmp_path, capsys):
        scenario, _ = cli_tree
        code = main(["run", "--scenario", str(scenario),
                     "--seeds", "5..2", "--out", str(tmp_path / "x")])
        assert code == EXIT_USAGE
        assert "descending" in capsys.readouterr().err

    def test_unknown_scheme_is_usage_error(self, cli_tree, tmp_path, capsys):
        scenario, _ = cli_tree
        code = main(["run", "--scenario", str(scenario),
                     "--schemes", "genie", "--out", str(tmp_path / "x")])
        assert code == EXIT_USAGE
        assert "unknown scheme" in capsys.readouterr().err

    def test_missing_scenario_exits_io(self, tmp_path, capsys):
        code = main(["run", "--scenario", str(tmp_path / "ghost.cfg"),
                     "--out", str(tmp_path / "x")])
        assert code == EXIT_IO

    def test_unreachable_qos_exits_infeasible(self, tmp_path, capsys):
        # overrides bypass the capacity derivation, so drop them here
        scenario = tmp_path / "greedy.cfg"
        save_scenario(make_config(qos_bits=1e30, tau_slots=None,
                                  c_max_users=None), scenario)
        code = main(["run", "--scenario", str(scenario),
                     "--schemes", "traj_2d", "--seeds", "0",
                     "--out", str(tmp_path / "x")])
        assert code == EXIT_INFEASIBLE
        assert "infeasible" in capsys.readouterr().err


class TestPlotdata:
    def test_no_sweeps_prints_written_paths(self, cli_tree, tmp_path, capsys):
        _, run_dir = cli_tree
        out = tmp_path / "figs"
        code = main(["plotdata", "--run", str(run_dir),
                     "--out", str(out), "--no-sweeps"])
        assert code == EXIT_OK
        printed = [Path(line) for line in
                   capsys.readouterr().out.strip().splitlines()]
        assert len(printed) == 6
        assert all(p.parent == out and p.is_file() for p in printed)

    def test_narrow_sweep_flags(self, cli_tree, tmp_path, capsys):
        _, run_dir = cli_tree
        out = tmp_path / "figs"
        code = main(["plotdata", "--run", str(run_dir), "--out", str(out),
                     "--power-dbm", "10", "--budgets", "3"])
        assert code == EXIT_OK
        names = {Path(line).name for line in
                 capsys.readouterr().out.strip().splitlines()}
        assert "outage_vs_slots.csv" in names
        assert "minrate_vs_power.csv" in names

    def test_missing_run_dir_exits_io(self, tmp_path, capsys):
        ghost = tmp_path / "ghost"
        assert main(["plotdata", "--run", str(ghost)]) == EXIT_IO
        assert "run directory not found" in capsys.readouterr().err

    def test_incomplete_run_dir_exits_io(self, tmp_path, capsys):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert main(["plotdata", "--run", str(empty)]) == EXIT_IO
        assert MANIFEST_NAME in capsys.readouterr().err
