import math
import textwrap

import numpy as np
import pytest

from ncdmm import io
from ncdmm.cli import main
from ncdmm.config import parse_config
from ncdmm.errors import ConfigError, GeometryError, NcdmmError
from ncdmm.gfdm import WeightKind
from ncdmm.pointcloud import add_virtual_nodes, generate_pseudo_cartesian_cloud


def write(tmp_path, name, body):
    p = tmp_path / name
    p.write_text(textwrap.dedent(body).lstrip())
    return p


THREE_BY_THREE = """
    [cloud]
    boundary = 0 0, 20 0, 20 20, 0 20
    spacing = 10
    [connectivity]
    radius = 14.2
"""

EQUILIBRIUM = """
    [cloud]
    boundary = 0 0, 20 0, 20 20, 0 20
    spacing = 10
    [connectivity]
    radius = 15
    [initial]
    p = 16
    sw = 0.3
    [schedule]
    end_time = 6
    report_times = 0 2 6
"""


def snap(node, xy, p, sw):
    return io.Snapshot(np.asarray(node), np.asarray(xy, dtype=float), np.asarray(p, float), np.asarray(sw, float))


class TestCloudFiles:
    def test_round_trip(self, tmp_path):
        cloud = add_virtual_nodes(generate_pseudo_cartesian_cloud([(0, 0), (37, 0), (37, 23.3), (0, 23.3)], 7.1))
        path = tmp_path / "c.txt"
        io.write_cloud(cloud, path)
        back = io.read_cloud(path, thickness=cloud.thickness)
        assert back.xy.tobytes() == cloud.xy.tobytes()
        np.testing.assert_array_equal(back.kinds, cloud.kinds)
        np.testing.assert_array_equal(back.parents, cloud.parents)
        np.testing.assert_array_equal(back.normals[cloud.n_real :], cloud.normals[cloud.n_real :])
        assert [list(l) for l in back.boundary] == [list(l) for l in cloud.boundary]

    def test_bad_ids(self, tmp_path):
        path = write(tmp_path, "c.txt", "0 B 0 0\n2 B 1 0\n")
        write(tmp_path, "c.txt.loops", "0 1\n")
        with pytest.raises(GeometryError, match="0..n-1"):
            io.read_cloud(path)

    def test_bad_row(self, tmp_path):
        path = write(tmp_path, "c.txt", "0 B 0\n")
        with pytest.raises(GeometryError, match=":1:"):
            io.read_cloud(path)


class TestCompare:
    def test_identical(self):
        a = snap([0, 1, 2], [(0, 0), (1, 0), (0, 1)], [10, 11, 12], [0.2, 0.3, 0.4])
        rep = io.compare(a, a)
        assert (rep.error_p, rep.error_sw, rep.n_p) == (0.0, 0.0, 3)

    def test_constant_offset(self):
        a = snap([0, 1, 2], [(0, 0), (1, 0), (0, 1)], [10, 11, 12], [0.2, 0.3, 0.4])
        b = snap([0, 1, 2], [(0, 0), (1, 0), (0, 1)], [10.1, 11.1, 12.1], [0.2, 0.3, 0.4])
        rep = io.compare(a, b)
        assert rep.error_p == pytest.approx(0.1)
        assert rep.error_sw == 0.0

    def test_two_nodes(self):
        a = snap([0, 1], [(0, 0), (5, 0)], [10.0, 10.0], [0.2, 0.2])
        b = snap([0, 1], [(0, 0), (5, 0)], [10.3, 10.4], [0.2, 0.2])
        assert io.compare(a, b).error_p == pytest.approx(math.sqrt(0.25 / 2), abs=1e-4)

    def test_matching_ignores_order(self):
        a = snap([0, 1], [(0, 0), (5, 0)], [10.0, 11.0], [0.2, 0.4])
        b = snap([0, 1], [(5, 0), (0, 0)], [11.0, 10.0], [0.4, 0.2])
        assert io.compare(a, b).error_p == 0.0

    def test_unmatched_node(self):
        a = snap([0, 7], [(0, 0), (5, 0)], [10.0, 10.0], [0.2, 0.2])
        b = snap([0, 1], [(0, 0), (6, 0)], [10.0, 10.0], [0.2, 0.2])
        with pytest.raises(NcdmmError, match=r"\[7\]"):
            io.compare(a, b)
        assert io.compare(a, b, tolerance=1.5).n_p == 2

    def test_snapshot_file_format(self, tmp_path):
        path = tmp_path / "s.txt"
        io.write_snapshot(path, [(0.0, 1.0), (2.0, 3.0)], [15.0, 1 / 3], [0.2, 0.7])
        lines = path.read_text().splitlines()
        assert lines[0] == "# node x y p Sw"
        assert lines[1].split()[0] == "0"
        s = io.read_snapshot(path)
        assert s.p[1] == 1 / 3


class TestConfig:
    def test_defaults(self, tmp_path):
        cfg = parse_config(write(tmp_path, "a.ini", THREE_BY_THREE))
        assert cfg.weight is WeightKind.INVERSE_CUBIC
        assert cfg.cv.weighting == "empirical" and cfg.cv.G == 1e6
        assert cfg.newton.max_newton_iters == 50
        assert (cfg.newton.dt_max, cfg.newton.dt_min) == (2.0, 0.001)
        assert cfg.boundary == ((0, 0), (20, 0), (20, 20), (0, 20))

    def test_invalid_weight(self, tmp_path):
        body = THREE_BY_THREE + "    [discretization]\n    weight = w3\n"
        with pytest.raises(ConfigError) as exc:
            parse_config(write(tmp_path, "a.ini", body))
        assert exc.value.key == "discretization.weight"
        assert exc.value.line == 7

    def test_two_wells(self, tmp_path):
        body = THREE_BY_THREE + """
    [well.I1]
    x = 0
    y = 0
    kind = injector
    value = 60
    [well.P1]
    node = 8
    kind = producer
    value = 60
"""
        cfg = parse_config(write(tmp_path, "a.ini", body))
        assert [(w.name, w.kind, w.control, w.value) for w in cfg.wells] == [
            ("I1", "injector", "rate", 60.0),
            ("P1", "producer", "rate", 60.0),
        ]

    @pytest.mark.parametrize(
        "extra,key",
        [
            ("[rock]\nporosity = 0.2\n", "rock.porosity"),
            ("[magic]\nx = 1\n", "magic"),
            ("[solver]\ndt_min = 5\n", "solver"),
            ("[well.W]\nkind = producer\n", "well.W.value"),
            ("[bc.L]\nregion = 0 0 0 20\ntype = dirichlet\n", "bc.L.p"),
        ],
    )
    def test_errors_name_the_key(self, tmp_path, extra, key):
        path = tmp_path / "a.ini"
        path.write_text(textwrap.dedent(THREE_BY_THREE) + extra)
        with pytest.raises(ConfigError) as exc:
            parse_config(path)
        assert exc.value.key.lower() == key.lower()

    def test_missing_spacing(self, tmp_path):
        with pytest.raises(ConfigError, match="spacing"):
            parse_config(write(tmp_path, "a.ini", "[cloud]\nboundary = 0 0, 1 0, 1 1\n[connectivity]\nradius = 1\n"))


class TestCli:
    def test_cv_three_by_three(self, tmp_path):
        cfg = write(tmp_path, "a.ini", THREE_BY_THREE)
        assert main(["cv", "--config", str(cfg), "--out-dir", str(tmp_path / "out")]) == 0
        data = np.loadtxt(tmp_path / "out" / "cv.txt")
        assert sorted(np.round(data[:, 2], 6)) == [25.0] * 4 + [50.0] * 4 + [100.0]
        report = (tmp_path / "out" / "cv_report.txt").read_text()
        err = float(report.split()[1])
        assert err < 1e-8
        for name in ("transmissibility.txt", "stencils.txt"):
            assert (tmp_path / "out" / name).stat().st_size > 0

    def test_gen_cloud(self, tmp_path):
        cfg = write(tmp_path, "a.ini", THREE_BY_THREE)
        out = tmp_path / "cloud.txt"
        assert main(["gen-cloud", "--config", str(cfg), "--out", str(out), "--with-virtual"]) == 0
        cloud = io.read_cloud(out)
        assert cloud.n_real == 9 and cloud.n_virtual > 0

    @pytest.fixture
    def equilibrium_run(self, tmp_path):
        cfg = write(tmp_path, "eq.ini", EQUILIBRIUM)
        out = tmp_path / "run"
        assert main(["run", "--config", str(cfg), "--out-dir", str(out)]) == 0
        return out

    def test_run_equilibrium(self, equilibrium_run):
        snaps = [io.read_snapshot(equilibrium_run / f"snapshot_{t}.txt") for t in (0, 2, 6)]
        for s in snaps:
            np.testing.assert_array_equal(s.p, 16.0)
            np.testing.assert_array_equal(s.sw, 0.3)
        assert (equilibrium_run / "wells.txt").exists()
        steps = np.loadtxt(equilibrium_run / "steps.txt", ndmin=2)
        assert np.all(steps[:, 1] == 2.0)

    def test_compare_self(self, equilibrium_run, tmp_path, capsys):
        s = str(equilibrium_run / "snapshot_6.txt")
        out = tmp_path / "cmp.txt"
        assert main(["compare", "--candidate", s, "--reference", s, "--out", str(out)]) == 0
        text = out.read_text().split()
        assert float(text[1]) == 0.0 and float(text[3]) == 0.0 and int(text[5]) == 9
        assert "error_p" in capsys.readouterr().out

    def test_run_is_deterministic(self, equilibrium_run, tmp_path):
        cfg = tmp_path / "eq.ini"
        again = tmp_path / "again"
        assert main(["run", "--config", str(cfg), "--out-dir", str(again)]) == 0
        for name in ("snapshot_6.txt", "steps.txt", "wells.txt", "cv.txt"):
            assert (again / name).read_bytes() == (equilibrium_run / name).read_bytes()

    @pytest.mark.parametrize(
        "argv",
        [
            ["cv", "--config", "{tmp}/missing.ini", "--out-dir", "{tmp}/o"],
            ["run", "--config", "{tmp}/bad.ini", "--out-dir", "{tmp}/o"],
            ["compare", "--candidate", "{tmp}/nope.txt", "--reference", "{tmp}/nope.txt"],
        ],
    )
    def test_error_exit(self, tmp_path, capsys, argv):
        write(tmp_path, "bad.ini", THREE_BY_THREE + "    [discretization]\n    weight = w3\n")
        code = main([a.format(tmp=tmp_path) for a in argv])
        err = capsys.readouterr().err.strip().splitlines()
        assert code == 1
        assert len(err) == 1 and err[0].startswith("error: ")

    def test_run_needs_end_time(self, tmp_path, capsys):
        cfg = write(tmp_path, "a.ini", THREE_BY_THREE)
        assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 1
        assert "end_time" in capsys.readouterr().err
