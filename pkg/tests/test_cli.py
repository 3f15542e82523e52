import csv
import hashlib
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from fedmix.cli import main
from fedmix.training import read_round_logs


def _write(path, text):
    path.write_text(text)
    return str(path)


def _hash(path):
    h = hashlib.sha256()
    for p in sorted(Path(path).iterdir()):
        h.update(p.name.encode() + p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = _write(root / "gen.cfg", f"# small hard-cluster federation\nT = 6\nM = 2\nd = 3\nseed = 5\nlabel_mode = hard_cluster\nmax_size = 150\noutput_dir = {root / 'data'}\n")
    assert main(["generate", "--config", cfg]) == 0
    return root


def _train(root, name, body):
    cfg = _write(root / f"{name}.cfg", f"data = {root / 'data'}\noutput_dir = {root / name}\nK = 4\nJ = 2\nbatch_size = 16\nlearning_rate = 0.5\nseed = 3\n" + body)
    assert main(["train", "--config", cfg]) == 0
    return root / name


def test_generate_writes_files(dataset):
    names = {p.name for p in (dataset / "data").iterdir()}
    assert {"manifest.txt", "truth_theta.csv", "truth_pi.csv", "client_0.csv", "client_5.csv"} <= names


def test_generate_is_deterministic(dataset, tmp_path):
    cfg = _write(tmp_path / "g.cfg", f"T = 6\nM = 2\nd = 3\nseed = 5\nlabel_mode = hard_cluster\nmax_size = 150\noutput_dir = {tmp_path / 'again'}\n")
    assert main(["generate", "--config", cfg]) == 0
    assert _hash(tmp_path / "again") == _hash(dataset / "data")


def test_unknown_key_names_key(tmp_path, capsys):
    cfg = _write(tmp_path / "bad.cfg", "T = 3\nflavour = strawberry\n")
    assert main(["generate", "--config", cfg]) != 0
    assert "flavour" in capsys.readouterr().err


def test_bad_value_names_line(tmp_path, capsys):
    cfg = _write(tmp_path / "bad.cfg", "T = three\n")
    assert main(["generate", "--config", cfg]) != 0
    assert "bad.cfg:1" in capsys.readouterr().err


def test_train_outputs_parse(dataset):
    out = _train(dataset, "em", "algorithm = fedem\nM = 2\n")
    logs = read_round_logs(out / "rounds.csv")
    assert len(logs) == 4
    assert np.loadtxt(out / "theta_final.csv", delimiter=",").shape == (2, 3)
    pis = np.loadtxt(out / "pi_final.csv", delimiter=",")
    np.testing.assert_allclose(pis.sum(axis=1), 1.0)
    with open(out / "recovery.csv") as fh:
        row = next(csv.DictReader(fh))
    assert 0 <= float(row["theta_distance"]) <= 2 and 0 <= float(row["cluster_accuracy"]) <= 1


def test_single_component_fedem_matches_fedavg(dataset):
    a = _train(dataset, "em1", "algorithm = fedem\nM = 1\n")
    b = _train(dataset, "avg", "algorithm = fedavg\n")
    assert (a / "rounds.csv").read_bytes() == (b / "rounds.csv").read_bytes()
    assert (a / "theta_final.csv").read_bytes() == (b / "theta_final.csv").read_bytes()


def test_dfedem_identity_consensus(dataset):
    out = _train(dataset, "dec", "algorithm = dfedem\nM = 2\ntopology = identity\n")
    dist = [r.consensus_dist for r in read_round_logs(out / "rounds.csv")]
    assert all(v > 0 for v in dist)
    assert (out / "theta_per_client.csv").read_text().splitlines()[0].startswith("client,component,")


def test_train_is_byte_deterministic(dataset):
    a = _train(dataset, "r1", "algorithm = dfedem\nM = 2\ntopology = erdos_renyi\np_edge = 0.6\n")
    b = _train(dataset, "r2", "algorithm = dfedem\nM = 2\ntopology = erdos_renyi\np_edge = 0.6\n")
    assert _hash(a) == _hash(b)


def test_inconsistent_config_rejected(dataset, capsys):
    cfg = _write(dataset / "x.cfg", f"algorithm = fedem\ntopology = ring\nK = 1\ndata = {dataset / 'data'}\noutput_dir = {dataset / 'x'}\n")
    assert main(["train", "--config", cfg]) != 0
    assert "topology" in capsys.readouterr().err


def test_inline_synthetic_data(tmp_path):
    cfg = _write(tmp_path / "t.cfg", f"algorithm = local\nK = 2\nsynthetic.T = 3\nsynthetic.d = 2\nsynthetic.max_size = 80\noutput_dir = {tmp_path / 'o'}\n")
    assert main(["train", "--config", cfg]) == 0
    assert np.loadtxt(tmp_path / "o" / "theta_final.csv", delimiter=",").shape == (3, 2)


def test_personalize(dataset):
    em = _train(dataset, "forp", "algorithm = fedem\nM = 2\n")
    cfg = _write(dataset / "p.cfg", f"theta = {em / 'theta_final.csv'}\nclients = {dataset / 'data'}\noutput_dir = {dataset / 'pers'}\n")
    assert main(["personalize", "--config", cfg]) == 0
    with open(dataset / "pers" / "sweep.csv") as fh:
        sweep = [(float(r["fraction"]), float(r["accuracy"])) for r in csv.DictReader(fh)]
    assert [f for f, _ in sweep] == [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
    rows = list(csv.DictReader((dataset / "pers" / "personalized.csv").read_text().splitlines()))
    assert len(rows) == 6 and set(rows[0]) == {"client", "pi_1", "pi_2", "accuracy"}


def test_personalize_fraction_zero_is_uniform(dataset, tmp_path):
    em = _train(dataset, "forp0", "algorithm = fedem\nM = 2\n")
    cfg = _write(tmp_path / "p.cfg", f"output_dir = {tmp_path / 'o'}\nfractions = 0\n")
    assert main(["personalize", "--config", cfg, "--theta", str(em / "theta_final.csv"), "--clients", str(dataset / "data")]) == 0
    from fedmix.em import ComponentBank
    from fedmix.metrics import mixture_accuracy
    from fedmix.synth import load_federation

    fed, _ = load_federation(dataset / "data")
    bank = ComponentBank(np.loadtxt(em / "theta_final.csv", delimiter=","), fed.loss, fed.dim)
    expected = mixture_accuracy(bank, np.full((6, 2), 0.5), fed).weighted_accuracy
    assert float((tmp_path / "o" / "sweep.csv").read_text().splitlines()[1].split(",")[1]) == pytest.approx(expected, abs=1e-15)


def test_missing_theta_named(dataset, tmp_path, capsys):
    cfg = _write(tmp_path / "p.cfg", f"theta = {tmp_path / 'nope.csv'}\nclients = {dataset / 'data'}\noutput_dir = {tmp_path / 'o'}\n")
    assert main(["personalize", "--config", cfg]) != 0
    assert "nope.csv" in capsys.readouterr().err


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "fedmix.cli", "train", "--config", str(tmp_path / "missing.cfg")], capture_output=True, text=True)
    assert r.returncode == 1 and "missing.cfg" in r.stderr
