import os

import numpy as np
import pytest

from dcc import cli
from dcc.dataio import load_labels, read_binary_matrix, save_labels
from dcc.synthetic import lifted_gaussians

FAST = """\
hidden = 16
d = 3
k = 5
per_layer_epochs = 3
finetune_epochs = 3
pretrain_batch = 32
period = 2
epoch_cap = 12
"""


def write_csv(path, values):
    np.savetxt(path, values, delimiter=",", fmt="%.17g")
    return str(path)


@pytest.fixture
def dataset(tmp_path):
    m = lifted_gaussians(n_points=120, n_dims=8, separation=15, seed=2)
    data = write_csv(tmp_path / "data.csv", m.values)
    labels = str(tmp_path / "labels.txt")
    save_labels(labels, m.labels)
    config = tmp_path / "fast.cfg"
    config.write_text(FAST)
    return data, labels, str(config)


def run(*argv):
    return cli.main([str(a) for a in argv])


def read(path):
    with open(path, "rb") as f:
        return f.read()


def test_build_graph_two_points(tmp_path, capsys):
    data = write_csv(tmp_path / "two.csv", [[0.0, 1.0], [1.0, 0.0]])
    assert run("build-graph", "--data", data, "--k", 1, "--out", tmp_path / "g") == 0
    assert "edges 1" in capsys.readouterr().out.splitlines()
    first = read(tmp_path / "g" / cli.GRAPH_FILE)
    assert run("build-graph", "--data", data, "--k", 1, "--out", tmp_path / "g") == 0
    assert read(tmp_path / "g" / cli.GRAPH_FILE) == first


def test_build_graph_connected_with_positive_degrees(dataset, tmp_path, capsys):
    data, _, _ = dataset
    assert run("build-graph", "--data", data, "--out", tmp_path) == 0
    out = capsys.readouterr().out
    degree_line = next(l for l in out.splitlines() if l.startswith("degree"))
    assert int(degree_line.split()[2]) >= 1
    from dcc.graph import load_graph, n_components
    g = load_graph(str(tmp_path / cli.GRAPH_FILE))
    assert n_components(g.n_nodes, g.edges) == 1


def test_missing_data_is_io_error(tmp_path, capsys):
    code = run("pretrain", "--data", tmp_path / "nope.csv", "--out", tmp_path)
    assert code != 0
    assert capsys.readouterr().err.startswith("dcc-error: io-error:")


def test_bad_flag_value_is_reported(tmp_path, capsys):
    assert run("cluster", "--data", "x.csv", "--k", 0, "--out", tmp_path) == 1
    assert "dcc-error: invalid-argument:" in capsys.readouterr().err


def test_pretrain_same_seed_same_bytes(dataset, tmp_path, capsys):
    data, _, config = dataset
    for name in ("a", "b"):
        assert run("pretrain", "--config", config, "--data", data, "--out", tmp_path / name) == 0
    assert read(tmp_path / "a" / cli.SDAE_FILE) == read(tmp_path / "b" / cli.SDAE_FILE)
    assert "reconstruction_mse" in capsys.readouterr().out


def test_cluster_outputs_and_determinism(dataset, tmp_path):
    data, labels, config = dataset
    for name in ("a", "b"):
        assert run("cluster", "--config", config, "--data", data, "--labels", labels,
                   "--out", tmp_path / name) == 0
    for f in (cli.LABELS_FILE, cli.EMBEDDING_FILE, cli.RUN_LOG, cli.SUMMARY_FILE, cli.PRETRAIN_LOG,
              cli.STATE_FILE):
        assert read(tmp_path / "a" / f) == read(tmp_path / "b" / f), f
    z = read_binary_matrix(str(tmp_path / "a" / cli.EMBEDDING_FILE))
    assert z.shape == (120, 3)
    pred = load_labels(str(tmp_path / "a" / cli.LABELS_FILE))
    assert len(pred) == 120
    summary = (tmp_path / "a" / cli.SUMMARY_FILE).read_text()
    assert f"num_clusters {pred.max() + 1}" in summary
    assert "ami " in summary


def test_epoch_cap_reason_in_summary(dataset, tmp_path):
    data, _, config = dataset
    assert run("cluster", "--config", config, "--data", data, "--epoch-cap", 3, "--out", tmp_path) == 0
    assert "termination_reason epoch-cap" in (tmp_path / cli.SUMMARY_FILE).read_text()


def test_rcc_mode(dataset, tmp_path):
    data, labels, config = dataset
    assert run("cluster", "--config", config, "--data", data, "--mode", "rcc", "--epoch-cap", 300,
               "--out", tmp_path) == 0
    assert not (tmp_path / cli.SDAE_FILE).exists()
    z = read_binary_matrix(str(tmp_path / cli.EMBEDDING_FILE))
    assert z.shape == (120, 8)
    assert len(load_labels(str(tmp_path / cli.LABELS_FILE))) == 120


def test_cluster_reuses_checkpoint_and_graph(dataset, tmp_path):
    data, _, config = dataset
    assert run("cluster", "--config", config, "--data", data, "--out", tmp_path / "a") == 0
    assert run("cluster", "--config", config, "--data", data, "--out", tmp_path / "b",
               "--checkpoint", tmp_path / "a" / cli.SDAE_FILE, "--graph", tmp_path / "a" / cli.GRAPH_FILE) == 0
    assert read(tmp_path / "a" / cli.LABELS_FILE) == read(tmp_path / "b" / cli.LABELS_FILE)


def test_evaluate_identical(tmp_path, capsys):
    p = str(tmp_path / "l.txt")
    save_labels(p, [0, 0, 1, 2, 2, 2])
    assert run("evaluate", "--pred", p, "--labels", p, "--out", tmp_path) == 0
    assert capsys.readouterr().out.splitlines()[1] == "1.000\t1.000\t1.000"
    assert (tmp_path / cli.EVAL_FILE).read_text() == "AMI\tNMI\tACC\n1.000\t1.000\t1.000\n"


def test_evaluate_shuffled_truth_near_zero(tmp_path, rng):
    truth = np.repeat(np.arange(5), 200)
    save_labels(str(tmp_path / "t.txt"), truth)
    save_labels(str(tmp_path / "p.txt"), rng.permutation(truth))
    assert run("evaluate", "--pred", tmp_path / "p.txt", "--labels", tmp_path / "t.txt", "--out", tmp_path) == 0
    ami = float((tmp_path / cli.EVAL_FILE).read_text().splitlines()[1].split()[0])
    assert abs(ami) < 0.02


def test_evaluate_length_mismatch(tmp_path, capsys):
    save_labels(str(tmp_path / "a.txt"), [0, 1, 1])
    save_labels(str(tmp_path / "b.txt"), [0, 1])
    assert run("evaluate", "--pred", tmp_path / "a.txt", "--labels", tmp_path / "b.txt", "--out", tmp_path) == 1
    assert capsys.readouterr().err.startswith("dcc-error: ")


def test_export_plotdata_empty_dir(tmp_path, capsys):
    assert run("export-plotdata", "--out", tmp_path) == 1
    assert "missing-log" in capsys.readouterr().err


def test_export_plotdata_after_run(dataset, tmp_path):
    data, _, config = dataset
    assert run("cluster", "--config", config, "--data", data, "--epoch-cap", 20, "--out", tmp_path) == 0
    assert run("export-plotdata", "--out", tmp_path) == 0
    pca = np.loadtxt(tmp_path / "plot_pca.csv", delimiter=",", skiprows=1)
    assert pca.shape == (120, 3)
    mu = np.loadtxt(tmp_path / "plot_mu.csv", delimiter=",", skiprows=1)
    assert np.all(np.diff(mu[:, 1]) <= 0) and np.all(np.diff(mu[:, 2]) <= 0)
    for name in ("plot_loss.csv", "plot_clusters.csv", "plot_pretrain.csv"):
        assert os.path.getsize(tmp_path / name) > 0


def test_config_precedence(tmp_path):
    cfg_file = tmp_path / "c.cfg"
    cfg_file.write_text("k = 7\nd = 4  # embedding\nseed = 9\n")
    args = cli.build_parser().parse_args(["cluster", "--config", str(cfg_file), "--k", "3"])
    cfg = cli.resolve_config(args)
    assert (cfg.k, cfg.d, cfg.seed, cfg.period) == (3, 4, 9, 20)


def test_config_unknown_key(tmp_path, capsys):
    cfg_file = tmp_path / "c.cfg"
    cfg_file.write_text("neighbours = 7\n")
    assert run("build-graph", "--config", cfg_file, "--data", "x.csv") == 1
    assert "unknown key" in capsys.readouterr().err


def test_defaults_match_reference_configuration():
    cfg = cli.RunConfig()
    assert (cfg.d, cfg.k, cfg.period, cfg.edges_per_batch, cfg.lr, cfg.momentum) == (10, 10, 20, 128, 0.001, 0.99)
    assert (cfg.per_layer_epochs, cfg.finetune_epochs, cfg.pretrain_batch, cfg.dropout) == (200, 400, 256, 0.2)
