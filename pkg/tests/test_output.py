import csv
import math
import xml.etree.ElementTree as ET

import numpy as np
from hypothesis import given, strategies as st

from cplnet.output import fmt, line_chart, write_csv, write_matrix_csv


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_text_round_trips(x):
    assert float(fmt(x)) == x


def test_special_values():
    assert [fmt(v) for v in (math.inf, -math.inf, math.nan, None, True, np.bool_(False), np.int64(3))] == [
        "inf", "-inf", "nan", "", "true", "false", "3",
    ]
    assert fmt(np.float64(0.1)) == "0.10000000000000001"


def test_csv_is_rfc4180(tmp_path):
    p = write_csv(tmp_path / "a.csv", ["name", "value"], [('a,"b"', 1.5), ("plain", None)])
    raw = p.read_bytes()
    assert raw == b'name,value\r\n"a,""b""",1.5\r\nplain,\r\n'
    with p.open(newline="") as fh:
        assert list(csv.reader(fh))[1] == ['a,"b"', "1.5"]


def test_matrix_csv(tmp_path):
    p = write_matrix_csv(tmp_path / "m.csv", np.array([[1.0, -2.0], [0.0, 3.0]]), ["i1", "v1"])
    assert p.read_text().splitlines() == [",i1,v1", "i1,1,-2", "v1,0,3"]


def test_svg_viewport_and_series(tmp_path):
    t = np.linspace(0, 1, 20000)
    p = line_chart(tmp_path / "c.svg", [("a", t, np.sin(t)), ("b", t, np.cos(t))], title="x<y")
    root = ET.parse(p).getroot()
    assert root.get("width") == "960" and root.get("height") == "540"
    assert root.get("viewBox") == "0 0 960 540"
    lines = root.findall("{http://www.w3.org/2000/svg}polyline")
    assert len(lines) == 2
    assert all(len(pl.get("points").split()) <= 4000 for pl in lines)
    assert "href" not in p.read_text()


def test_svg_thinning_keeps_extremes(tmp_path):
    y = np.zeros(10001)
    y[5003] = 7.0
    p = line_chart(tmp_path / "s.svg", [("y", np.arange(y.size), y)], max_points=100)
    pts = ET.parse(p).getroot().find("{http://www.w3.org/2000/svg}polyline").get("points").split()
    ys = [float(q.split(",")[1]) for q in pts]
    # the spike maps to the top of the plot area
    assert min(ys) == 40.0


def test_svg_degenerate_input(tmp_path):
    p = line_chart(tmp_path / "d.svg", [("flat", [1.0], [2.0]), ("nan", [np.nan], [np.nan])])
    ET.parse(p)
