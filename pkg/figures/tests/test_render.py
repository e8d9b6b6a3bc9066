"""Figure rendering: modes, determinism, CSV validation, CLI contract.

Fixtures under ``data/`` were produced by the toolkit CLI (``sweep`` and
``spectrum`` subcommands) plus a conventional-beamformer weighting matrix
on a 10-degree grid; they are committed so these tests need only this
package.
"""

import hashlib
import os
import pathlib
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from doaplots import PlotError, PlotSpec, load_rows, render
from doaplots.cli import main
from doaplots.render import axis_label

DATA = pathlib.Path(__file__).parent / "data"
SWEEP = str(DATA / "sweep_snr.csv")
SPECTRUM = str(DATA / "spectrum.csv")
WEIGHTS = str(DATA / "weights_cbf.csv")


def sha(path):
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def svg_text(path):
    return pathlib.Path(path).read_text(encoding="utf-8")


class TestPlotSpec:
    def test_missing_column_named(self, tmp_path):
        spec = PlotSpec((SWEEP,), "bogus_col", "rmspe_rad", str(tmp_path / "f.png"))
        with pytest.raises(PlotError, match="bogus_col"):
            load_rows(spec)

    def test_empty_csv_rejected(self, tmp_path):
        p = tmp_path / "empty.csv"
        p.write_text("snr_db,method,rmspe_rad\n")
        spec = PlotSpec((str(p),), "snr_db", "rmspe_rad", str(tmp_path / "f.png"))
        with pytest.raises(PlotError, match="empty input"):
            load_rows(spec)

    def test_headerless_csv_rejected(self, tmp_path):
        p = tmp_path / "none.csv"
        p.write_text("")
        spec = PlotSpec((str(p),), "x", "y", str(tmp_path / "f.png"))
        with pytest.raises(PlotError, match="empty input"):
            load_rows(spec)

    def test_heatmap_needs_value(self, tmp_path):
        with pytest.raises(PlotError, match="value"):
            PlotSpec((WEIGHTS,), "col_deg", "row_deg", str(tmp_path / "f.png"),
                     mode="heatmap")

    def test_output_extension_checked(self):
        with pytest.raises(PlotError, match="png or .svg"):
            PlotSpec((SWEEP,), "snr_db", "rmspe_rad", "fig.pdf")

    def test_mismatched_headers_rejected(self, tmp_path):
        other = tmp_path / "other.csv"
        other.write_text("a,b\n1,2\n")
        spec = PlotSpec((SWEEP, str(other)), "snr_db", "rmspe_rad",
                        str(tmp_path / "f.png"))
        with pytest.raises(PlotError, match="header"):
            load_rows(spec)

    def test_multiple_csvs_concatenate(self, tmp_path):
        spec = PlotSpec((SWEEP, SWEEP), "snr_db", "rmspe_rad",
                        str(tmp_path / "f.png"))
        rows = load_rows(spec)
        assert len(rows) == 2 * 15

    def test_non_numeric_value_named(self, tmp_path):
        spec = PlotSpec((SWEEP,), "method", "rmspe_rad", str(tmp_path / "f.png"))
        with pytest.raises(PlotError, match="method"):
            from doaplots.plotspec import numeric

            numeric(load_rows(spec), "method")


class TestLineMode:
    def test_one_line_per_method(self, tmp_path):
        out = str(tmp_path / "sweep.png")
        png, svg = render(
            PlotSpec((SWEEP,), "snr_db", "rmspe_rad", out, group="method")
        )
        assert os.path.exists(png) and os.path.exists(svg)
        text = svg_text(svg)
        # legend carries one entry per method, in first-appearance order
        for method in ("cbf", "mvdr", "music"):
            assert method in text

    def test_single_method_three_points(self, tmp_path):
        p = tmp_path / "three.csv"
        p.write_text("snr_db,method,rmspe_rad\n0,cbf,0.5\n5,cbf,0.3\n10,cbf,0.2\n")
        png, svg = render(
            PlotSpec((str(p),), "snr_db", "rmspe_rad",
                     str(tmp_path / "f.png"), group="method")
        )
        root = ET.fromstring(svg_text(svg))
        ns = {"svg": "http://www.w3.org/2000/svg"}
        # exactly one plotted polyline (markers render as separate uses)
        lines = [
            el
            for el in root.iter("{http://www.w3.org/2000/svg}path")
            if "line2d" in (el.get("id") or "").lower()
        ]
        # matplotlib tags line paths inside groups named line2d_*
        groups = [
            g for g in root.iter("{http://www.w3.org/2000/svg}g")
            if (g.get("id") or "").startswith("line2d")
        ]
        assert len(groups) >= 1

    def test_axes_labeled_with_units(self, tmp_path):
        png, svg = render(
            PlotSpec((SWEEP,), "snr_db", "rmspe_rad",
                     str(tmp_path / "f.png"), group="method")
        )
        assert axis_label("snr_db") == "SNR (dB)"
        assert axis_label("rmspe_rad") == "RMSPE (rad)"

    def test_log_y(self, tmp_path):
        png, svg = render(
            PlotSpec((SWEEP,), "snr_db", "rmspe_rad",
                     str(tmp_path / "f.png"), group="method", log_y=True)
        )
        assert os.path.exists(png)

    def test_spectrum_overlay(self, tmp_path):
        png, svg = render(
            PlotSpec((SPECTRUM,), "grid_deg", "p",
                     str(tmp_path / "spec.png"), group="method")
        )
        assert os.path.exists(png) and os.path.exists(svg)


class TestHeatmapMode:
    def test_weights_render(self, tmp_path):
        png, svg = render(
            PlotSpec((WEIGHTS,), "col_deg", "row_deg",
                     str(tmp_path / "w.png"), value="energy", mode="heatmap")
        )
        assert os.path.exists(png) and os.path.exists(svg)

    def test_fixture_diagonal_is_row_max(self):
        rows = load_rows(
            PlotSpec((WEIGHTS,), "col_deg", "row_deg", "x.png",
                     value="energy", mode="heatmap")
        )
        by_row = {}
        for r in rows:
            by_row.setdefault(float(r["row_deg"]), {})[float(r["col_deg"])] = float(
                r["energy"]
            )
        for row_deg, cols in by_row.items():
            assert cols[row_deg] == pytest.approx(max(cols.values()), abs=1e-12)

    def test_incomplete_grid_rejected(self, tmp_path):
        p = tmp_path / "sparse.csv"
        p.write_text("row_deg,col_deg,energy\n0,0,1\n0,10,0.5\n10,0,0.5\n")
        with pytest.raises(PlotError, match="complete"):
            render(
                PlotSpec((str(p),), "col_deg", "row_deg",
                         str(tmp_path / "f.png"), value="energy", mode="heatmap")
            )


class TestDeterminism:
    def test_rerender_byte_identical(self, tmp_path):
        hashes = []
        for run in range(2):
            out = str(tmp_path / f"run{run}.png")
            png, svg = render(
                PlotSpec((SWEEP,), "snr_db", "rmspe_rad", out, group="method")
            )
            hashes.append((sha(png), sha(svg)))
        assert hashes[0] == hashes[1]

    def test_no_timestamp_in_svg(self, tmp_path):
        _, svg = render(
            PlotSpec((SWEEP,), "snr_db", "rmspe_rad",
                     str(tmp_path / "f.png"), group="method")
        )
        text = svg_text(svg)
        assert "dc:date" not in text

    def test_heatmap_rerender_byte_identical(self, tmp_path):
        hashes = []
        for run in range(2):
            out = str(tmp_path / f"w{run}.svg")
            png, svg = render(
                PlotSpec((WEIGHTS,), "col_deg", "row_deg", out,
                         value="energy", mode="heatmap")
            )
            hashes.append((sha(png), sha(svg)))
        assert hashes[0] == hashes[1]


class TestCli:
    def test_end_to_end(self, tmp_path):
        out = str(tmp_path / "fig.png")
        rc = main(["--csv", SWEEP, "--x", "snr_db", "--y", "rmspe_rad",
                   "--group", "method", "--out", out])
        assert rc == 0
        assert os.path.exists(out)
        assert os.path.exists(str(tmp_path / "fig.svg"))

    def test_error_line_for_missing_column(self, tmp_path, capsys):
        rc = main(["--csv", SWEEP, "--x", "nope", "--y", "rmspe_rad",
                   "--out", str(tmp_path / "f.png")])
        assert rc == 1
        err = capsys.readouterr().err
        assert "error:plot:" in err and "nope" in err

    def test_subprocess_entry(self, tmp_path):
        out = str(tmp_path / "fig.svg")
        proc = subprocess.run(
            [sys.executable, "-m", "doaplots.cli", "--csv", WEIGHTS,
             "--mode", "heatmap", "--x", "col_deg", "--y", "row_deg",
             "--value", "energy", "--out", out],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert os.path.exists(out)
