import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bvmem import io as bio
from bvmem.baseline import _as_draw
from bvmem.evaluation import DensityGrid, default_axis
from bvmem.postprocess import identify
from oracles import random_triple


def write_csv(path, text):
    path.write_text(text)
    return path


class TestLoadSeries:
    def test_annualize_constant(self, tmp_path):
        f = write_csv(tmp_path / "s.csv", "date,rv\n2001-01-02,0.01\n2001-01-03,0.02\n")
        x = np.asarray(bio.load_series(f, ["rv"], annualize=True))
        assert x[0, 0] == pytest.approx(math.sqrt(252), rel=1e-15)
        assert x[0, 0] == pytest.approx(15.8745, abs=1e-4)
        assert bio.ANNUALIZATION == 100 * math.sqrt(252)

    def test_identity_without_annualize(self, tmp_path):
        f = write_csv(tmp_path / "s.csv", "date,a,b\nd1,0.5,1.5\nd2,2.0,0.25\n")
        np.testing.assert_array_equal(np.asarray(bio.load_series(f)), [[0.5, 1.5], [2.0, 0.25]])

    def test_column_selection_and_order(self, tmp_path):
        f = write_csv(tmp_path / "s.csv", "date,a,b,c\nd1,1,2,3\nd2,4,5,6\n")
        np.testing.assert_array_equal(np.asarray(bio.load_series(f, ["c", "a"])), [[3, 1], [6, 4]])

    def test_zero_rejected_with_row(self, tmp_path):
        f = write_csv(tmp_path / "s.csv", "date,a,b\nd1,1,2\nd2,0,5\nd3,1,\nd4,1,1\n")
        with pytest.raises(bio.DataError, match=r"\[2, 3\]"):
            bio.load_series(f)

    def test_unselected_column_may_be_bad(self, tmp_path):
        f = write_csv(tmp_path / "s.csv", "date,a,b\nd1,1,-2\nd2,3,0\n")
        assert np.asarray(bio.load_series(f, ["a"])).shape == (2, 1)

    def test_missing_column_is_config_error(self, tmp_path):
        f = write_csv(tmp_path / "s.csv", "date,a\nd1,1\nd2,2\n")
        with pytest.raises(bio.ConfigError):
            bio.load_series(f, ["rk"])

    def test_comments_skipped(self, tmp_path):
        f = write_csv(tmp_path / "s.csv", "# produced by a test\ndate,a\nd1,1\nd2,2\n")
        assert np.asarray(bio.load_series(f)).shape == (2, 1)

    def test_series_round_trip_17_digits(self, tmp_path, rng):
        x = rng.lognormal(0, 1, (30, 3))
        bio.write_series(tmp_path / "x.csv", x, comment="seed 1")
        np.testing.assert_array_equal(np.asarray(bio.load_series(tmp_path / "x.csv")), x)


@given(st.floats(min_value=1e-300, max_value=1e300, allow_nan=False))
def test_float_format_round_trips(v):
    assert float(bio.FLOAT_FMT % v) == v


class TestArchive:
    def draws(self, n=6):
        out = []
        for seed in range(n):
            raw, _ = random_triple(seed, d=2)
            out.append(identify(raw, 1e-6))
        return out

    def test_bit_exact_round_trip(self, tmp_path):
        draws = self.draws()
        bio.write_archive(tmp_path / "a.bin", draws, {"model": "dpm", "seed": 3})
        header, back = bio.read_archive(tmp_path / "a.bin")
        assert header["model"] == "dpm" and header["n_draws"] == len(draws)
        for a, b in zip(draws, back):
            assert np.array_equal(bio.draw_to_record(a), bio.draw_to_record(b))
            assert a.truncation == b.truncation

    def test_mixed_sizes(self, tmp_path):
        draws = self.draws(3) + [_as_draw(self.draws(1)[0].eta, np.eye(2) * 0.2, np.ones(2))]
        bio.write_archive(tmp_path / "a.bin", draws, {})
        _, back = bio.read_archive(tmp_path / "a.bin")
        assert [d.weights.shape[0] for d in back] == [d.weights.shape[0] for d in draws]

    def test_rejects_foreign_file(self, tmp_path):
        (tmp_path / "x.bin").write_bytes(b"not an archive")
        with pytest.raises(bio.ArchiveError):
            bio.read_archive(tmp_path / "x.bin")

    def test_rejects_truncated(self, tmp_path):
        bio.write_archive(tmp_path / "a.bin", self.draws(2), {})
        blob = (tmp_path / "a.bin").read_bytes()
        (tmp_path / "b.bin").write_bytes(blob[:-10])
        with pytest.raises(bio.ArchiveError):
            bio.read_archive(tmp_path / "b.bin")

    def test_record_length_checked(self):
        rec = bio.draw_to_record(self.draws(1)[0])
        with pytest.raises(bio.ArchiveError):
            bio.record_to_draw(np.append(rec, 0.0))


class TestTables:
    def test_grid_file(self, tmp_path):
        ax = default_axis(20)
        grid = DensityGrid("g", (ax,), np.linspace(0, 1, 20) / 3)
        bio.write_grid(tmp_path / "g.csv", grid)
        header, rows = bio.read_table(tmp_path / "g.csv")
        assert header == ["e", "density"]
        back = np.array(rows, dtype=float)
        np.testing.assert_array_equal(back[:, 0], ax)
        np.testing.assert_array_equal(back[:, 1], grid.values)

    def test_joint_grid_file(self, tmp_path):
        a = default_axis(4)
        grid = DensityGrid("j", (a, a[:3]), np.arange(12.0).reshape(4, 3))
        bio.write_grid(tmp_path / "j.csv", grid)
        header, rows = bio.read_table(tmp_path / "j.csv")
        assert header == ["e1", "e2", "density"] and len(rows) == 12
        assert float(rows[5][2]) == grid.values[1, 2]


class TestConfig:
    def write(self, tmp_path, text):
        p = tmp_path / "run.ini"
        p.write_text(text)
        return p

    def test_parse_and_resolve(self, tmp_path):
        p = self.write(tmp_path, "[run]\nseed = 4\n[data]\npath = s.csv\ncolumns = a, b\n"
                                 "[sampler]\niterations = 50\nburn_in = 10\nnw_degrees = 14\n")
        cfg = bio.load_config(p, "fit-dpm")
        assert cfg.seed == 4 and cfg.sampler.seed == 4
        assert cfg.data_path == tmp_path / "s.csv"
        assert cfg.columns == ["a", "b"]
        assert cfg.sampler.iterations == 50
        assert cfg.sampler.nw_hyper.degrees == 14.0

    def test_cli_seed_wins(self, tmp_path):
        p = self.write(tmp_path, "[run]\nseed = 4\n")
        assert bio.load_config(p, "simulate", seed=9).seed == 9

    @pytest.mark.parametrize("text, mode", [
        ("[run]\n", "simulate"),
        ("[run]\nseed = 1\n", "fit-dpm"),
        ("[run]\nseed = 1\n[data]\npath = s.csv\n", "fit-dpm"),
        ("[run]\nseed = 1\n[data]\npath = s.csv\ncolumns = a\n[sampler]\nbogus = 1\n", "fit-dpm"),
        ("[run]\nseed = 1\n[data]\npath = s.csv\ncolumns = a\n[sampler]\niterations = ten\n", "fit-dpm"),
        ("[run]\nseed = 1\n[data]\npath = s.csv\ncolumns = a\n[sampler]\nburn_in = 40000\n", "fit-dpm"),
        ("[run]\nseed = 1\n[data]\npath = s.csv\ncolumns = a\n", "evaluate"),
    ])
    def test_rejected(self, tmp_path, text, mode):
        with pytest.raises(bio.ConfigError):
            bio.load_config(self.write(tmp_path, text), mode)

    def test_hash_ignores_seed_only(self, tmp_path):
        base = "[data]\npath = s.csv\ncolumns = a\n[sampler]\niterations = 50\nburn_in = 10\n"
        h1 = bio.config_hash(bio.load_config(self.write(tmp_path, "[run]\nseed = 1\n" + base), "fit-dpm"))
        h2 = bio.config_hash(bio.load_config(self.write(tmp_path, "[run]\nseed = 2\n" + base), "fit-dpm"))
        h3 = bio.config_hash(bio.load_config(self.write(tmp_path, "[run]\nseed = 1\n" + base.replace("50", "60")),
                                             "fit-dpm"))
        assert h1 == h2 != h3
