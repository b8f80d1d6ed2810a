import json
import math
import struct
from pathlib import Path
from xml.etree import ElementTree

import numpy as np
import pytest

from signstruct.analysis import SweepRow, SweepTable
from signstruct.io import (
    MAGIC,
    StateFileError,
    read_csv,
    read_states,
    svg_line_chart,
    write_csv,
    write_entropy_csv,
    write_overlap_csv,
    write_states,
    write_sweep_csv,
)

GOLDEN = Path(__file__).parent / "golden"


@pytest.mark.parametrize("count", [1, 3])
@pytest.mark.parametrize("complex_", [False, True])
def test_state_roundtrip_bit_exact(tmp_path, rng, count, complex_):
    dim = math.comb(8, 4)
    V = rng.standard_normal((dim, count))
    if complex_:
        V = V + 1j * rng.standard_normal((dim, count))
    V[0, 0] = -0.0
    V[1, 0] = np.nextafter(0.0, 1.0)
    path = tmp_path / "s.sgnc"
    write_states(path, V, 8, 4)
    W, n, n_up = read_states(path)
    assert (n, n_up) == (8, 4)
    assert W.shape == (dim, count)
    assert W.real.tobytes() == np.real(V).astype(float).tobytes()
    if complex_:
        assert W.imag.tobytes() == V.imag.tobytes()


def test_state_header_layout(tmp_path):
    path = tmp_path / "s.sgnc"
    write_states(path, np.array([0.6, -0.8]), 2, 1)
    raw = path.read_bytes()
    assert raw[:4] == b"SGNC" == MAGIC
    assert struct.unpack("<IIII", raw[4:20]) == (1, 2, 1, 1)
    assert struct.unpack("<4d", raw[20:]) == (0.6, 0.0, -0.8, 0.0)


def test_state_file_errors(tmp_path):
    path = tmp_path / "s.sgnc"
    write_states(path, np.ones(6) / math.sqrt(6), 4, 2)
    raw = path.read_bytes()
    (tmp_path / "magic").write_bytes(b"XXXX" + raw[4:])
    (tmp_path / "short").write_bytes(raw[:-8])
    (tmp_path / "head").write_bytes(raw[:10])
    (tmp_path / "ver").write_bytes(raw[:4] + struct.pack("<I", 9) + raw[8:])
    for name in ("magic", "short", "head", "ver"):
        with pytest.raises(StateFileError):
            read_states(tmp_path / name)


def _table():
    return SweepTable([
        SweepRow(6, "open", 0.5, "mpr", 1.0, 0.0, -2.25, 1, 0.0),
        SweepRow(6, "open", 0.6, "torlai", math.nan, math.nan, math.nan, 0, error="unsupported"),
    ])


def test_csv_headers_golden(tmp_path):
    golden = (GOLDEN / "csv_headers.txt").read_text().splitlines()
    write_sweep_csv(tmp_path / "a.csv", _table())
    write_entropy_csv(tmp_path / "b.csv", [(6, "pbc", 1.0, "contiguous_half", "raw", 1.5)])
    write_overlap_csv(tmp_path / "c.csv", [(10, "obc", 0.1, "i", 0.9)])
    got = [(tmp_path / f).read_text().splitlines()[0] for f in ("a.csv", "b.csv", "c.csv")]
    assert got == golden


def test_sweep_csv_rows_and_meta(tmp_path):
    path = tmp_path / "sweep.csv"
    write_sweep_csv(path, _table(), {"command": "sweep"})
    header, rows = read_csv(path)
    assert rows[0] == ["6", "obc", "0.5", "mpr", "1.0", "0.0", "-2.25", "1"]
    assert rows[1][4] == "nan" and rows[1][7] == "0"
    meta = json.loads(Path(str(path) + ".meta.json").read_text())
    assert meta["schema_version"] == 1 and meta["command"] == "sweep"


def test_csv_float_roundtrip(tmp_path):
    x = 0.1 + 0.2
    write_csv(tmp_path / "x.csv", ("v",), [(x,)])
    assert float(read_csv(tmp_path / "x.csv")[1][0][0]) == x


def test_csv_row_width_checked(tmp_path):
    with pytest.raises(ValueError):
        write_csv(tmp_path / "x.csv", ("a", "b"), [(1,)])


def test_svg_is_wellformed():
    svg = svg_line_chart({"N=6": ([0, 0.5, 1], [1, 0.9, float("nan")]), "N=8": ([0, 1], [1, 0.5])},
                         title="a < b")
    root = ElementTree.fromstring(svg)
    assert root.tag.endswith("svg")
    lines = root.findall("{http://www.w3.org/2000/svg}polyline")
    assert len(lines) == 2
    assert len(lines[0].get("points").split()) == 2
    assert "N=8" in svg and "a &lt; b" in svg
    with pytest.raises(ValueError):
        svg_line_chart({"x": ([0], [float("nan")])})
