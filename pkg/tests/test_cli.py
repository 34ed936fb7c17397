import json

import pytest

from feedinv.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_invariants_example(capsys):
    code, out, _ = run(capsys, "invariants", "--system", "u", "--at", "u=1,y=0,y1=2", "--no-ledger")
    assert code == 0
    rows = dict(line.split()[:2] for line in out.splitlines() if line.startswith("J"))
    assert float(rows["J"]) == -1 and float(rows["J_u"]) == -2 and float(rows["J_y1"]) == 1


def test_invariants_singular_point(capsys):
    code, _, err = run(capsys, "invariants", "--system", "u", "--at", "u=1,y=0,y1=0", "--no-ledger")
    assert code == 2 and "singular point" in err


def test_invariants_json_and_ledger(capsys, tmp_path):
    path = tmp_path / "inv.json"
    code, out, _ = run(capsys, "invariants", "--system", "u + y1^3", "--at", "u=1,y=0,y1=1",
                       "--json", str(path), "--ledger-trials", "1")
    assert code == 0 and "formula ledger" in out
    doc = json.loads(path.read_text())
    assert {"system", "catalog", "points", "ledger", "config"} <= set(doc)
    assert doc["catalog"]["K"]["provenance"] == "structure-coefficient"


def test_apply(capsys):
    code, out, _ = run(capsys, "apply", "--system", "u", "--Y", "2*y", "--U", "u")
    assert code == 0 and out.strip() == "u/2"


def test_orbit_dim(capsys):
    code, out, _ = run(capsys, "orbit-dim", "--system", "u + u^3 + y*y1 + y1^3", "--order", "3",
                       "--at", "u=1,y=0.3,y1=1.1")
    assert code == 0 and out.strip() == "15"


def test_parse_error_is_usage(capsys):
    code, _, err = run(capsys, "apply", "--system", "u +", "--Y", "y")
    assert code == 1 and "offset" in err


def test_bad_domain_is_usage(capsys):
    code, _, _ = run(capsys, "classify", "--system", "u", "--domain", "u=0:1:1,y=0:1:2,y1=1:2:2")
    assert code == 1


def test_unknown_command_is_usage(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1


def test_equiv_inconclusive_requires_decision(capsys):
    dom = "u=0.5:1.5:4,y=-1:1:4,y1=0.5:1.5:4"
    code, out, _ = run(capsys, "equiv", "--system-f", "u", "--system-g", "u", "--domain", dom)
    assert code == 0 and "inconclusive" in out
    code, _, _ = run(capsys, "equiv", "--system-f", "u", "--system-g", "u", "--domain", dom,
                     "--require-decision")
    assert code == 4


def test_equiv_constructed_pair(capsys, tmp_path):
    from feedinv.corpus import random_regular_system
    from feedinv.pseudogroup import apply_feedback, random_feedback

    F = random_regular_system(0)
    G = apply_feedback(F, random_feedback(0, box=((0.5, 1.5), (-1, 1)), strength=0.5))
    path = tmp_path / "v.json"
    code, _, _ = run(capsys, "equiv", "--system-f", str(F), "--system-g", str(G),
                     "--domain", "u=0.5:1.5:8,y=-1:1:8,y1=0.5:1.5:8", "--json", str(path), "--threads", "2")
    assert code == 0
    doc = json.loads(path.read_text())
    assert doc["verdict"] == "equivalent" and doc["config"]["threads"] == 2


def test_recover_identity(capsys):
    F = "u + y1^3 + u*y1^2 + sin(y)*y1"
    code, out, _ = run(capsys, "recover", "--system-f", F, "--system-g", F,
                       "--at", "u=1,y=0.2,y1=0.9", "--json", "-")
    assert code == 0
    r = json.loads(out)["results"][0]
    assert r["U"] == pytest.approx(1) and r["dY"] == pytest.approx(1) and r["ddY"] == pytest.approx(0, abs=1e-10)


def test_signature_csv(capsys, tmp_path):
    path = tmp_path / "s.csv"
    code, out, _ = run(capsys, "signature", "--system", "u + y1^3 + u*y1^2 + sin(y)",
                       "--domain", "u=0.5:1.5:3,y=-1:1:3,y1=0.5:1.5:3", "--csv", str(path))
    assert code == 0
    assert path.read_text().startswith("u,y,y1,j,j1,j3,j11,j13,j33,k,l")


def test_config_file_and_flag_precedence(capsys, tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text('[apply]\nsystem = "u"\nY = "2*y"\nU = "u"\n')
    code, out, _ = run(capsys, "apply", "--config", str(cfg))
    assert code == 0 and out.strip() == "u/2"
    code, out, _ = run(capsys, "apply", "--config", str(cfg), "--Y", "3*y")
    assert out.strip() == "u/3"


def test_selftest_subset(capsys):
    code, out, _ = run(capsys, "selftest", "--criteria", "2,3")
    assert code == 0
    assert out.count("[PASS]") == 2


def test_recover_with_symmetry_is_singular(capsys):
    # no y-dependence: every y-translation is a solution, so the Jacobian is singular
    F = "u + y1^3 + u*y1^2"
    code, _, err = run(capsys, "recover", "--system-f", F, "--system-g", F, "--at", "u=1,y=0.2,y1=0.9")
    assert code == 2 and "singular" in err
