import json
import math
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from pwenv import cli
from pwenv.pipeline import scenario_hash

from conftest import write_scenario
from test_emcompiler import brute_quality_table

SVG = "{http://www.w3.org/2000/svg}"


def run(*argv):
    return cli.main([str(a) for a in argv])


def parse_svg(path):
    return ET.parse(path).getroot()


def classes(el):
    return set(el.get("class", "").split())


# --- simulate ------------------------------------------------------------------

def test_simulate_empty_objectives(tmp_path, office_data):
    office_data["objectives"] = []
    scen = write_scenario(tmp_path / "s.json", office_data)
    assert run("simulate", scen, "--out", tmp_path / "o", "--rays", 720) == 0
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["objectives"] == [] and report["command_count"] == 0
    assert report["scenario_hash"] == scenario_hash(scen)


def test_simulate_office(tmp_path, office_data, capsys):
    scen = write_scenario(tmp_path / "s.json", office_data)
    out = tmp_path / "o"
    assert run("simulate", scen, "--out", out) == 0
    report = json.loads((out / "report.json").read_text())
    names = [e["name"] for e in report["objectives"]]
    assert len(names) == 4 == len(set(names))
    assert all(e["status"] == "SATISFIED" for e in report["objectives"])
    by_kind = {e["objective"]["kind"]: e for e in report["objectives"]}
    eve = office_data["devices"][3]["position"]
    secure = by_kind["SECURE_LINK"]["path"]
    pts = [_node_pos(office_data, n) for n in secure["nodes"]]
    for p, q in zip(pts, pts[1:]):
        assert _seg_dist(eve, p, q) > 1.0
    assert by_kind["BLOCK"]["absorbed_tiles"]
    for kind in ("LINK_OPTIMIZE", "SECURE_LINK", "POWER_TRANSFER"):
        e = by_kind[kind]
        assert e["realized"]
        assert (out / e["pdp_csv"]).read_text().startswith("delay_s,power_w\n")
        assert e["received"]["coherent_dbm"] is not None
    assert "aligned_coherent_dbm" in by_kind["LINK_OPTIMIZE"]["received"]
    assert report["command_count"] == len(report["commands"])
    lines = (out / "frames.jsonl").read_text().splitlines()
    assert lines and all(json.loads(l)["frame"]["type"] in ("SET", "ACK") for l in lines)
    assert all(d["acks_complete"] for d in report["dissemination"])
    assert "SATISFIED" in capsys.readouterr().out


def _node_pos(data, node):
    if isinstance(node, str):
        return next(d["position"] for d in data["devices"] if d["id"] == node)
    raise AssertionError("tile nodes are not expected on this path")


def _seg_dist(p, a, b):
    p, a, b = map(np.asarray, (p, a, b))
    u = np.clip(np.dot(p - a, b - a) / np.dot(b - a, b - a), 0, 1)
    return float(np.linalg.norm(p - (a + u * (b - a))))


def test_simulate_unreachable_is_isolated(tmp_path, office_data):
    # seal the sensor inside an uncoated box
    office_data["walls"] += [
        {"id": 10, "a": [8.5, 1.5], "b": [9.5, 1.5], "coated": False},
        {"id": 11, "a": [9.5, 1.5], "b": [9.5, 2.5], "coated": False},
        {"id": 12, "a": [9.5, 2.5], "b": [8.5, 2.5], "coated": False},
        {"id": 13, "a": [8.5, 2.5], "b": [8.5, 1.5], "coated": False},
    ]
    scen = write_scenario(tmp_path / "s.json", office_data)
    assert run("simulate", scen, "--out", tmp_path / "o", "--rays", 720) == 2
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    status = {e["objective"]["kind"]: e["status"] for e in report["objectives"]}
    assert status == {"LINK_OPTIMIZE": "SATISFIED", "SECURE_LINK": "SATISFIED",
                      "POWER_TRANSFER": "NO_PATH", "BLOCK": "SATISFIED"}


@pytest.mark.parametrize("mutate", [
    lambda d: d["walls"].append({"id": 0, "a": [1, 1], "b": [2, 2]}),
    lambda d: d["objectives"].append({"kind": "LINK_OPTIMIZE", "src": "AP", "dst": "nobody"}),
    lambda d: d.update(bogus=1),
])
def test_simulate_input_errors_leave_no_files(tmp_path, office_data, mutate, capsys):
    mutate(office_data)
    scen = write_scenario(tmp_path / "s.json", office_data)
    assert run("simulate", scen, "--out", tmp_path / "o") == 1
    assert not (tmp_path / "o").exists()
    assert "error:" in capsys.readouterr().err


def test_simulate_malformed_json(tmp_path):
    scen = tmp_path / "s.json"
    scen.write_text("{", encoding="utf-8")
    assert run("simulate", scen, "--out", tmp_path / "o") == 1


def test_simulate_is_deterministic(tmp_path, office_data):
    scen = write_scenario(tmp_path / "s.json", office_data)
    outs = []
    for name in ("a", "b"):
        assert run("simulate", scen, "--out", tmp_path / name, "--rays", 1800, "--seed", 4) == 0
        report = json.loads((tmp_path / name / "report.json").read_text())
        report.pop("wall_clock_s")
        outs.append((json.dumps(report, sort_keys=True), (tmp_path / name / "scene.svg").read_bytes(),
                     (tmp_path / name / "frames.jsonl").read_bytes()))
    assert outs[0] == outs[1]


def test_route_writes_paths_only(tmp_path, office_data):
    scen = write_scenario(tmp_path / "s.json", office_data)
    assert run("route", scen, "--out", tmp_path / "o") == 0
    report = json.loads((tmp_path / "o" / "route.json").read_text())
    assert all("received" not in e for e in report["objectives"])
    assert not (tmp_path / "o" / "report.json").exists()


def test_table_flag_persists_compiled_entries(tmp_path, office_data):
    scen = write_scenario(tmp_path / "s.json", office_data)
    table = tmp_path / "table.json"
    assert run("route", scen, "--out", tmp_path / "o", "--table", table) == 0
    entries = json.loads(table.read_text())["entries"]
    assert entries
    assert run("route", scen, "--out", tmp_path / "o2", "--table", table) == 0
    assert json.loads(table.read_text())["entries"] == entries


# --- compile -------------------------------------------------------------------

def test_compile_absorb(tmp_path, capsys):
    table = tmp_path / "t.json"
    assert run("compile", "--kind", "absorb", "--table", table) == 0
    entry = json.loads(table.read_text())["entries"][0]
    assert entry["bits"][:8] == "0" * 8 and entry["quality"] == 1.0
    assert "quality=1" in capsys.readouterr().out


def test_compile_broadside(tmp_path):
    table = tmp_path / "t.json"
    assert run("compile", "--kind", "steer", "--in", 0, "--out", 0, "--table", table) == 0
    assert json.loads(table.read_text())["entries"][0]["bits"] == "1" * 8 + "0" * 8


def test_compile_matches_exhaustive(tmp_path, capsys):
    _, q = brute_quality_table(8, 0.0, math.radians(30))
    assert run("compile", "--kind", "steer", "--in", 0, "--out", 30, "--columns", 8) == 0
    quality = float(capsys.readouterr().out.split("quality=")[1].split()[0])
    assert quality == pytest.approx(q.max(), rel=1e-5)


def test_compile_keeps_better_entry(tmp_path, capsys):
    table = tmp_path / "t.json"
    run("compile", "--kind", "steer", "--in", 0, "--out", 30, "--table", table)
    first = json.loads(table.read_text())
    run("compile", "--kind", "steer", "--in", 0, "--out", 30, "--table", table, "--budget", 64)
    assert json.loads(table.read_text()) == first


def test_compile_rejects_small_budget():
    assert run("compile", "--kind", "steer", "--in", 0, "--out", 30, "--budget", 5) == 1


# --- render --------------------------------------------------------------------

def test_render_empty_scenario(tmp_path):
    scen = write_scenario(tmp_path / "s.json", {"walls": [], "devices": []})
    assert run("simulate", scen, "--out", tmp_path / "o") == 0
    svg = parse_svg(tmp_path / "o" / "scene.svg")
    groups = [c for c in svg if c.tag == SVG + "g"]
    assert [classes(g) for g in groups] == [{"legend"}]
    assert {"canvas"} in [classes(c) for c in svg if c.tag == SVG + "rect"]


def test_render_single_path(tmp_path):
    data = {"tile_size": 1.0, "interior_point": [0, 1],
            "walls": [{"id": 0, "a": [-2, 0], "b": [2, 0]}],
            "devices": [{"id": "a", "position": [-1, 1], "role": "TX"},
                        {"id": "b", "position": [1, 1], "role": "RX"}]}
    scen = write_scenario(tmp_path / "s.json", data)
    report = {"scenario_hash": scenario_hash(scen), "tile_states": {"1": "STEER"},
              "objectives": [{"name": "LINK_OPTIMIZE:a->b", "status": "SATISFIED",
                              "objective": {"kind": "LINK_OPTIMIZE", "src": "a", "dst": "b"},
                              "path": {"nodes": ["a", 1, "b"]}}]}
    rep = tmp_path / "r.json"
    rep.write_text(json.dumps(report))
    assert run("render", scen, rep) == 0
    svg = parse_svg(tmp_path / "r.svg")
    polylines = list(svg.iter(SVG + "polyline"))
    assert len(polylines) == 1
    assert len(polylines[0].get("points").split()) >= 3
    tiles = [t for t in svg.iter(SVG + "line") if "tile" in classes(t)]
    assert {t.get("data-id"): t.get("stroke") for t in tiles} == {
        "0": "#7f7f7f", "1": "#2ca02c", "2": "#7f7f7f", "3": "#7f7f7f"}


def test_render_office_colors_match_legend(tmp_path, office_data):
    scen = write_scenario(tmp_path / "s.json", office_data)
    assert run("simulate", scen, "--out", tmp_path / "o", "--rays", 720) == 0
    rep = tmp_path / "o" / "report.json"
    assert run("render", scen, rep, "--out", tmp_path / "again.svg") == 0
    assert (tmp_path / "again.svg").read_bytes() == (tmp_path / "o" / "scene.svg").read_bytes()
    svg = parse_svg(tmp_path / "again.svg")
    legend = {next(c for c in classes(el) if c.startswith("kind-")): el.get("stroke")
              for el in svg.iter(SVG + "line") if "legend-path" in classes(el)}
    fn_legend = {next(c for c in classes(el) if c.startswith("fn-")): el.get("fill")
                 for el in svg.iter(SVG + "rect") if "legend-fn" in classes(el)}
    polylines = list(svg.iter(SVG + "polyline"))
    assert len(polylines) == 3  # BLOCK has no air path
    for pl in polylines:
        kind = next(c for c in classes(pl) if c.startswith("kind-"))
        assert pl.get("stroke") == legend[kind]
    report = json.loads(rep.read_text())
    for tile in svg.iter(SVG + "line"):
        if "tile" in classes(tile):
            fn = next(c for c in classes(tile) if c.startswith("fn-"))
            assert tile.get("stroke") == fn_legend[fn]
            assert fn == "fn-" + report["tile_states"].get(tile.get("data-id"), "SPECULAR").lower()
    devices = [c for c in svg.iter(SVG + "circle") if "device" in classes(c)]
    assert len(devices) == len(office_data["devices"])


def test_render_hash_mismatch(tmp_path, office_data, capsys):
    scen = write_scenario(tmp_path / "s.json", office_data)
    assert run("route", scen, "--out", tmp_path / "o") == 0
    office_data["devices"][1]["position"] = [7, 6]
    other = write_scenario(tmp_path / "t.json", office_data)
    assert run("render", other, tmp_path / "o" / "route.json") == 1
    assert "different scenario" in capsys.readouterr().err


# --- report ---------------------------------------------------------------------

def test_report_pretty_print(tmp_path, office_data, capsys):
    scen = write_scenario(tmp_path / "s.json", office_data)
    run("simulate", scen, "--out", tmp_path / "o", "--rays", 720)
    capsys.readouterr()
    assert run("report", tmp_path / "o" / "report.json") == 0
    text = capsys.readouterr().out
    assert text.count("SATISFIED") == 4 and "acks complete" in text


def test_report_missing_file(tmp_path):
    assert run("report", tmp_path / "nope.json") == 1


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "pwenv", "compile", "--kind", "absorb", "--columns", "4"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and "bits=00000000" in proc.stdout
