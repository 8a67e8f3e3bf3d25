import numpy as np
import pytest

from onestep.report import Report, format_value, loads, parse_float, read_report


def test_format_values():
    assert format_value(0.1) == "0.1"
    assert format_value(np.float64(1 / 3)) == repr(1 / 3)
    assert format_value(float("nan")) == "NA"
    assert format_value(None) == "NA"
    assert format_value(True) == "true"
    assert format_value(np.int64(3)) == "3"
    assert format_value((0.1, 2)) == "0.1;2"
    with pytest.raises(ValueError):
        format_value("two\nlines")


def test_round_trip(tmp_path):
    rep = Report("weights")
    rep.add_values("summary", {"status": "optimal", "ess": 12.5, "hint": None})
    rep.add_table("balance", ["term", "tasmd"], [("age", 0.01), ("bmi^2", 1 / 3)])
    rep.add_table("empty", ["a"], [])
    rep.write(tmp_path / "r.txt")
    text = (tmp_path / "r.txt").read_text()
    assert text.startswith("# onestep-report 1\n# command: weights\n[summary]\nstatus = optimal\n")
    back = read_report(tmp_path / "r.txt")
    assert back.command == "weights"
    assert back["summary"].values == {"status": "optimal", "ess": "12.5", "hint": "NA"}
    assert back["balance"].column("term") == ["age", "bmi^2"]
    assert parse_float(back["balance"].rows[1][1]) == 1 / 3
    assert back["empty"].rows == []
    assert back.dumps() == text


def test_bad_input():
    with pytest.raises(ValueError):
        loads("hello\n")
    with pytest.raises(ValueError):
        loads("# onestep-report 99\n# command: x\n")
    rep = Report("x")
    rep.add_values("a", {})
    with pytest.raises(ValueError):
        rep.add_values("a", {})
    with pytest.raises(ValueError):
        rep.add_table("t", ["a", "b"], [(1,)])
