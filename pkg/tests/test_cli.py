import json
import subprocess
import sys
import textwrap

import numpy as np
import pytest

from reluid.cli import CommandConfig, CommandError, main
from reluid.equivalence import EquivalenceWitness, apply_transform
from reluid.network import from_document, load, save
from reluid.oracle import catalog_documents, comparative, make_teacher


@pytest.fixture
def files(tmp_path):
    out = {}
    for name, doc in catalog_documents().items():
        path = tmp_path / name
        path.write_text(json.dumps(doc))
        out[name.removesuffix(".json")] = str(path)
    return out


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    cap = capsys.readouterr()
    return code, cap.out, cap.err


class TestConfig:
    def test_valid(self):
        CommandConfig("check", tolerances={"rank": 1e-10}, budget=1)

    @pytest.mark.parametrize("tol", [0.0, -1e-3])
    def test_bad_tolerance(self, tol):
        with pytest.raises(CommandError):
            CommandConfig("check", tolerances={"rank": tol})

    def test_bad_budget(self):
        with pytest.raises(CommandError):
            CommandConfig("recover", budget=0)


class TestEval:
    def test_ex4_point(self, capsys, files, tmp_path):
        pts = tmp_path / "p.txt"
        pts.write_text("0.5\n2.0\n")
        code, out, _ = run(capsys, "eval", files["ex4"], pts)
        assert code == 0
        np.testing.assert_allclose([float(v) for v in out.split()], [-0.5, 0.0])

    def test_json_points(self, capsys, files, tmp_path):
        pts = tmp_path / "p.json"
        pts.write_text("[[1.0, 2.0], [3.0, 1.0]]")
        code, out, _ = run(capsys, "eval", files["comparative"], pts)
        assert code == 0
        np.testing.assert_allclose([float(v) for v in out.split()], [5.0, 2.0])

    def test_empty(self, capsys, files, tmp_path):
        pts = tmp_path / "empty.txt"
        pts.write_text("")
        code, out, _ = run(capsys, "eval", files["ex4"], pts)
        assert code == 0 and out.strip() == ""

    def test_dimension_mismatch(self, capsys, files, tmp_path):
        pts = tmp_path / "p.txt"
        pts.write_text("1 2 3\n")
        code, _, err = run(capsys, "eval", files["ex4"], pts)
        assert code == 1 and "dimension" in err

    def test_bad_net(self, capsys, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        pts = tmp_path / "p.txt"
        pts.write_text("1\n")
        assert run(capsys, "eval", bad, pts)[0] == 1


class TestCheck:
    def test_comparative_passes(self, capsys, files):
        code, out, _ = run(capsys, "check", files["comparative"], "--box", -10, 10)
        assert code == 0 and "overall: pass" in out

    def test_ex1(self, capsys, files):
        code, out, _ = run(capsys, "check", files["ex1"])
        assert code == 1 and "P.a fail k=1" in out

    def test_ex4(self, capsys, files):
        code, out, _ = run(capsys, "check", files["ex4"])
        assert code == 1 and "P.d fail k=2" in out

    def test_ex2_box(self, capsys, files):
        code, out, _ = run(capsys, "check", files["ex2"], "--box", 1, 5)
        assert code == 1 and "P.b fail k=1" in out

    def test_json_report(self, capsys, files, tmp_path):
        dest = tmp_path / "r.json"
        code, _, _ = run(capsys, "check", files["ex1"], "--out", dest, "--seed", 3)
        doc = json.loads(dest.read_text())
        assert code == 1 and doc["status"] == "fail" and doc["seed"] == 3

    def test_bad_tolerance(self, capsys, files):
        assert run(capsys, "check", files["ex1"], "--tol-rank", 0)[0] == 1


class TestEquiv:
    def test_transform(self, capsys, files, tmp_path):
        p = comparative()
        w = EquivalenceWitness(perms=[[0], [1, 0], [0, 1], [0, 1]],
                                scales=[[1.0], [2.0, 0.5], [1.0, 3.0], [1.0, 1.0]])
        q_path = tmp_path / "q.json"
        save(apply_transform(p, w), q_path)
        dest = tmp_path / "w.json"
        code, out, _ = run(capsys, "equiv", files["comparative"], q_path, "--out", dest)
        assert code == 0 and "equivalent" in out
        assert EquivalenceWitness.loads(dest.read_text()).perms[1].tolist() == [1, 0]

    @pytest.mark.parametrize("pair", [("ex2", "ex2_a2"), ("ex1", "ex1_variant"),
                                      ("ex4", "ex4_variant")])
    def test_non_equivalent(self, capsys, files, pair):
        code, out, _ = run(capsys, "equiv", files[pair[0]], files[pair[1]])
        assert code == 1 and "not equivalent" in out


def test_normalize(capsys, files, tmp_path):
    dest, wpath = tmp_path / "n.json", tmp_path / "w.json"
    code, _, _ = run(capsys, "normalize", files["comparative"], "--out", dest,
                     "--witness-out", wpath)
    assert code == 0
    p = load(dest)
    for k in (1, 2):
        np.testing.assert_allclose(np.linalg.norm(p.weight(k), axis=1), 1.0, atol=1e-12)
    w = EquivalenceWitness.loads(wpath.read_text())
    np.testing.assert_allclose(apply_transform(comparative(), w).weight(0), p.weight(0))


class TestRecover:
    def test_comparative(self, capsys, files, tmp_path):
        dest = tmp_path / "rec.json"
        code, _, err = run(capsys, "recover", files["comparative"], "--box", -10, 10,
                           "--out", dest)
        assert code == 0
        assert "seed: 0" in err and "equivalent to teacher" in err
        doc = json.loads(dest.read_text())
        assert doc["equivalent_to_teacher"] and doc["config"]["seed"] == 0
        net = tmp_path / "net.json"
        net.write_text(json.dumps(doc["network"]))
        assert run(capsys, "equiv", net, files["comparative"], "--tol", 1e-5)[0] == 0

    def test_ex3(self, capsys, files):
        code, _, err = run(capsys, "recover", files["ex3"], "--box", -10, 10)
        assert code == 1 and "P.c" in err

    def test_budget(self, capsys, files):
        code, _, err = run(capsys, "recover", files["comparative"], "--budget", 10)
        assert code == 2 and "budget exhausted" in err

    def test_needs_source(self, capsys):
        assert run(capsys, "recover", "--arch", "2-2-1")[0] == 1

    def test_arch_mismatch(self, capsys, files):
        assert run(capsys, "recover", files["comparative"], "--arch", "3-2-1")[0] == 1

    def test_subprocess_oracle(self, capsys, tmp_path):
        p = make_teacher("2-2-1", 5, "normalized-gaussian")
        net = tmp_path / "t.json"
        save(p, net)
        script = tmp_path / "oracle.py"
        script.write_text(textwrap.dedent(f"""
            import sys
            from reluid.network import load, forward
            p = load({str(net)!r})
            for line in sys.stdin:
                x = [float(v) for v in line.split()]
                print(" ".join(repr(float(v)) for v in forward(p, x)), flush=True)
        """))
        dest = tmp_path / "rec.json"
        cmd = f"{sys.executable} {script}"
        code, _, _ = run(capsys, "recover", "--oracle-cmd", cmd, "--arch", "2-2-1",
                         "--box", -10, 10, "--parallel", 2, "--out", dest)
        assert code == 0
        rec = from_document(json.loads(dest.read_text())["network"])
        net2 = tmp_path / "r.json"
        save(rec, net2)
        assert run(capsys, "equiv", net, net2, "--tol", 1e-5)[0] == 0


class TestDemo:
    def test_comparative_table(self, capsys):
        code, out, _ = run(capsys, "demo", "comparative")
        assert code == 0
        rows = {"".join(line.split()) for line in out.splitlines()}
        for row in ["11(0,1)1", "10(1,-1)-1", "01(-1,2)2", "00(0,0)0"]:
            assert row in rows

    def test_ex3(self, capsys):
        code, out, _ = run(capsys, "demo", "ex3", "--a", 1, "--a", 2)
        assert code == 0 and "not equivalent" in out

    @pytest.mark.parametrize("sid", ["ex1", "ex2", "ex4"])
    def test_other_examples(self, capsys, sid):
        assert run(capsys, "demo", sid)[0] == 0

    def test_unknown(self, capsys):
        assert run(capsys, "demo", "ex9")[0] == 1


def test_risk(capsys, files):
    code, out, _ = run(capsys, "risk", files["ex2"], files["ex2_a2"], "--n", 2000, "--box", 1, 5)
    assert code == 0 and float(out.split()[1]) <= 1e-20


def test_console_script(files):
    proc = subprocess.run([sys.executable, "-m", "reluid.cli", "check", files["ex1"]],
                          capture_output=True, text=True)
    assert proc.returncode == 1 and "P.a fail k=1" in proc.stdout
