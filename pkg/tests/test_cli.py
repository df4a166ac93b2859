"""End-to-end checks of the command line front end.

Commands run in-process through cli.main so exit codes and stdio are
observable without spawning subprocesses.
"""

from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from coverobs.cli import main
from coverobs.coverage import load_cover, solve
from coverobs.gains import ControllerGains, save_controller, synthesize, save_design
from coverobs.netgraph import NetworkPair, load_pair, save_pair, similarity
from coverobs.plant import BlockPlant, save_plant

from test_simloop import two_node_setup


def _write_two_node(tmp_path):
    pair, plant, gains, assignment, design = two_node_setup()
    paths = {
        "pair": tmp_path / "pair.json",
        "plant": tmp_path / "plant.json",
        "cover": tmp_path / "cover.json",
        "controller": tmp_path / "k.json",
        "design": tmp_path / "design.json",
    }
    save_pair(pair, paths["pair"])
    save_plant(plant, paths["plant"])
    from coverobs.coverage import save_cover

    save_cover(assignment, paths["cover"])
    save_controller(gains, paths["controller"])
    save_design(design, paths["design"])
    return plant, paths


# ----------------------------------------------------------------------- net

def test_net_gen_star_prints_similarity_and_embeds_hash(tmp_path, capsys):
    out = tmp_path / "pair.json"
    assert main(["net", "gen", "-n", "9", "--star", "--out", str(out)]) == 0
    assert "S_pc=1.0000" in capsys.readouterr().out
    doc = json.loads(out.read_text())
    manifest = json.loads((tmp_path / "pair.json.manifest.json").read_text())
    assert doc["manifest_hash"] == manifest["hash"]
    assert load_pair(out).n == 9


def test_net_gen_same_seed_same_bytes(tmp_path):
    # the manifest covers the output path, so reproducibility is defined
    # for identical invocations, not merely identical seeds
    out = tmp_path / "a.json"
    args = ["net", "gen", "-n", "12", "--similarity", "0.8", "--seed", "5",
            "--out", str(out)]
    assert main(args) == 0
    first = out.read_bytes()
    assert main(args) == 0
    assert out.read_bytes() == first


def test_net_gen_hits_similarity_target(tmp_path):
    out = tmp_path / "pair.json"
    assert main([
        "net", "gen", "-n", "30", "--similarity", "0.85",
        "--seed", "7", "--out", str(out),
    ]) == 0
    assert abs(similarity(load_pair(out)) - 0.85) <= 0.05 + 1e-12


def test_net_info_reports_counts(tmp_path, capsys):
    out = tmp_path / "pair.json"
    main(["net", "gen", "-n", "9", "--star", "--out", str(out)])
    capsys.readouterr()
    assert main(["net", "info", str(out)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["nodes"] == 9
    assert doc["comm_edges"] == 8
    assert doc["similarity"] == 1.0


# --------------------------------------------------------------------- cover

def test_cover_solve_star_lists_eight_sets(tmp_path, capsys):
    pair_file = tmp_path / "pair.json"
    cover_file = tmp_path / "cover.json"
    main(["net", "gen", "-n", "9", "--star", "--out", str(pair_file)])
    capsys.readouterr()
    assert main([
        "cover", "solve", "--pair", str(pair_file),
        "--out", str(cover_file), "--block-order", "2",
    ]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["sets"] == 8
    for key in ("max_dim", "min_dim", "mean_dim", "mean_reduction"):
        assert key in doc
    assert load_cover(cover_file).n == 9


def test_cover_solve_rejects_garbage_with_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{this is not json")
    rc = main(["cover", "solve", "--pair", str(bad), "--out", str(tmp_path / "c.json")])
    assert rc == 2
    assert "error" in capsys.readouterr().err


def test_missing_input_file_is_exit_2(tmp_path, capsys):
    rc = main(["net", "info", str(tmp_path / "absent.json")])
    assert rc == 2
    assert "missing" in capsys.readouterr().err


def test_unknown_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == 2


def test_cover_audit_small_graph_clean(tmp_path, capsys):
    pair_file = tmp_path / "pair.json"
    main(["net", "gen", "-n", "6", "--star", "--out", str(pair_file)])
    capsys.readouterr()
    assert main(["cover", "audit", "--pair", str(pair_file)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["pareto_local"] is True
    assert doc["counterexample"] is None


def test_cover_audit_refuses_large_graphs(tmp_path, capsys):
    pair_file = tmp_path / "pair.json"
    main(["net", "gen", "-n", "14", "--star", "--out", str(pair_file)])
    capsys.readouterr()
    rc = main(["cover", "audit", "--pair", str(pair_file)])
    assert rc == 2
    assert "exceeds 12" in capsys.readouterr().err


def test_cover_stats_accepts_saved_cover(tmp_path, capsys):
    pair_file = tmp_path / "pair.json"
    cover_file = tmp_path / "cover.json"
    main(["net", "gen", "-n", "9", "--star", "--out", str(pair_file)])
    main(["cover", "solve", "--pair", str(pair_file), "--out", str(cover_file)])
    capsys.readouterr()
    assert main([
        "cover", "stats", "--pair", str(pair_file),
        "--cover", str(cover_file), "--block-order", "2",
    ]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["block_order"] == 2
    assert doc["max_dim"] % 2 == 0


# --------------------------------------------------------------------- gains

def test_gains_synth_writes_design_with_hash(tmp_path, capsys):
    _, paths = _write_two_node(tmp_path)
    out = tmp_path / "design_cli.json"
    rc = main([
        "gains", "synth", "--pair", str(paths["pair"]),
        "--cover", str(paths["cover"]), "--plant", str(paths["plant"]),
        "--controller", str(paths["controller"]),
        "--theta", "3", "--policy", "fixed", "--gamma", "40",
        "--poles=-4,-9", "--out", str(out),
    ])
    assert rc == 0
    assert "certified=" in capsys.readouterr().out
    doc = json.loads(out.read_text())
    assert doc["weight_transform"] == "congruence"
    manifest = json.loads((tmp_path / "design_cli.json.manifest.json").read_text())
    assert doc["manifest_hash"] == manifest["hash"]
    assert manifest["config"]["theta"] == 3.0


def test_gains_synth_paper_gamma_warns_when_stiff(tmp_path, capsys):
    _, paths = _write_two_node(tmp_path)
    out = tmp_path / "d15.json"
    rc = main([
        "gains", "synth", "--pair", str(paths["pair"]),
        "--cover", str(paths["cover"]), "--plant", str(paths["plant"]),
        "--theta", "15", "--paper-gamma", "--poles=-4,-9", "--out", str(out),
    ])
    assert rc == 0
    assert "stiffness" in capsys.readouterr().err


def test_gains_synth_fixed_without_gamma_is_input_error(tmp_path, capsys):
    _, paths = _write_two_node(tmp_path)
    rc = main([
        "gains", "synth", "--pair", str(paths["pair"]),
        "--cover", str(paths["cover"]), "--plant", str(paths["plant"]),
        "--theta", "3", "--policy", "fixed",
        "--out", str(tmp_path / "d.json"),
    ])
    assert rc == 2
    assert "--gamma" in capsys.readouterr().err


# ----------------------------------------------------------------------- sim

def test_sim_run_emits_csv_with_hash_header(tmp_path, capsys):
    plant, paths = _write_two_node(tmp_path)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "horizon": 2.0, "step": 0.001, "record_points": 201,
        "seed": 3, "force": True,
    }))
    out = tmp_path / "result.csv"
    rc = main([
        "sim", "run", "--pair", str(paths["pair"]),
        "--cover", str(paths["cover"]), "--plant", str(paths["plant"]),
        "--design", str(paths["design"]),
        "--controller", str(paths["controller"]),
        "--config", str(cfg), "--out", str(out),
    ])
    assert rc == 0
    lines = out.read_text().splitlines()
    manifest = json.loads((tmp_path / "result.csv.manifest.json").read_text())
    assert lines[0] == f"# manifest_hash={manifest['hash']}"
    header = lines[1].split(",")
    assert header == ["t"] + [f"x{k}" for k in range(1, plant.state_dim + 1)] + [
        "err_norm", "sat_flag"
    ]
    body = list(csv.reader(lines[2:]))
    assert len(body) == 201
    assert float(body[0][0]) == 0.0
    assert float(body[-1][0]) == 2.0
    assert manifest["config"]["sat_level"] == 10.0


def test_sim_run_unknown_config_key_is_exit_2(tmp_path, capsys):
    _, paths = _write_two_node(tmp_path)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"horizons": 2.0}))
    rc = main([
        "sim", "run", "--pair", str(paths["pair"]),
        "--cover", str(paths["cover"]), "--plant", str(paths["plant"]),
        "--design", str(paths["design"]), "--config", str(cfg),
        "--out", str(tmp_path / "r.csv"),
    ])
    assert rc == 2
    assert "unknown keys" in capsys.readouterr().err


def test_sim_run_divergence_is_exit_1(tmp_path, capsys):
    # open-loop unstable second node plus a useless gamma: the blow-up
    # guard inside the integrator must surface as a numeric failure
    pair = NetworkPair.from_edges(2, [[2, 1]], [(1, 2)])
    assignment = solve(pair)
    plant = BlockPlant(
        N=2, n=2, m=1, p=1,
        A_blocks={
            (1, 1): np.array([[0.0, 1.0], [-2.0, -3.0]]),
            (2, 2): np.array([[0.0, 1.0], [3.0, 0.0]]),
            (1, 2): np.array([[0.0, 0.0], [0.2, 0.0]]),
        },
        B_blocks={1: np.array([[0.0], [1.0]]), 2: np.array([[0.0], [1.0]])},
        C_blocks={1: np.array([[1.0, 0.0]]), 2: np.array([[1.0, 0.0]])},
    )
    gains = ControllerGains(K_blocks={
        (1, 1): np.array([[-1.0, -1.0]]),
        (2, 2): np.array([[-4.0, -4.0]]),
        (1, 2): np.array([[0.2, 0.0]]),
    })
    design = synthesize(
        plant, assignment, pair, 2.0, gains,
        gamma=1e-4, policy="fixed", poles=(-4.0, -9.0),
    )
    from coverobs.coverage import save_cover

    save_pair(pair, tmp_path / "p.json")
    save_plant(plant, tmp_path / "pl.json")
    save_cover(assignment, tmp_path / "c.json")
    save_controller(gains, tmp_path / "k.json")
    save_design(design, tmp_path / "d.json")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"horizon": 40.0, "seed": 2, "force": True}))
    rc = main([
        "sim", "run", "--pair", str(tmp_path / "p.json"),
        "--cover", str(tmp_path / "c.json"), "--plant", str(tmp_path / "pl.json"),
        "--design", str(tmp_path / "d.json"),
        "--controller", str(tmp_path / "k.json"),
        "--config", str(cfg), "--out", str(tmp_path / "r.csv"),
    ])
    assert rc == 1
    assert "diverged" in capsys.readouterr().err


def test_sim_sweep_csv_rows_decrease(tmp_path, capsys, recovery_benchmark):
    pair, assignment, plant, gains = recovery_benchmark
    from coverobs.coverage import save_cover

    save_pair(pair, tmp_path / "p.json")
    save_plant(plant, tmp_path / "pl.json")
    save_cover(assignment, tmp_path / "c.json")
    save_controller(gains, tmp_path / "k.json")
    out = tmp_path / "sweep.csv"
    rc = main([
        "sim", "sweep", "--pair", str(tmp_path / "p.json"),
        "--cover", str(tmp_path / "c.json"),
        "--plant", str(tmp_path / "pl.json"),
        "--controller", str(tmp_path / "k.json"),
        "--thetas", "2,8", "--repeats", "1", "--seed", "0",
        "--policy", "fixed", "--gamma", "500", "--poles=-8,-16",
        "--observer-init", "0", "--force", "--out", str(out),
    ])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# manifest_hash=")
    assert lines[1] == "theta,mean_gap,min_gap,max_gap"
    rows = [[float(v) for v in line.split(",")] for line in lines[2:]]
    assert len(rows) == 2
    assert rows[0][1] > rows[1][1] > 0.0


def test_sim_report_emits_radii(tmp_path, capsys):
    _, paths = _write_two_node(tmp_path)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"horizon": 6.0, "seed": 3}))
    out = tmp_path / "report.json"
    rc = main([
        "sim", "report", "--pair", str(paths["pair"]),
        "--cover", str(paths["cover"]), "--plant", str(paths["plant"]),
        "--design", str(paths["design"]),
        "--controller", str(paths["controller"]),
        "--config", str(cfg), "--out", str(out),
    ])
    assert rc == 0
    doc = json.loads(out.read_text())
    for key in ("c_theta", "omega_e_radius", "omega_x_radius",
                "within_omega_x", "I_x", "manifest_hash"):
        assert key in doc
    assert doc["c_theta"] > 0.0


# ------------------------------------------------------------------ pipeline

def test_pipeline_links_every_artifact_to_one_manifest(tmp_path, capsys):
    outdir = tmp_path / "run"
    rc = main([
        "pipeline", "-n", "9", "--star", "--coupling-scale", "2.5e8",
        "--theta", "6", "--poles=-4,-9", "--horizon", "3",
        "--repeats", "1", "--outdir", str(outdir),
    ])
    assert rc == 0
    digest = json.loads((outdir / "manifest.json").read_text())["hash"]
    for name in ("pair.json", "cover.json", "plant.json", "design.json"):
        assert json.loads((outdir / name).read_text())["manifest_hash"] == digest
    for name in ("result.csv", "sweep.csv"):
        first = (outdir / name).read_text().splitlines()[0]
        assert first == f"# manifest_hash={digest}"


def test_pipeline_names_failing_stage(tmp_path, capsys):
    rc = main([
        "pipeline", "-n", "5", "--star",
        "--controller", str(tmp_path / "nope.json"),
        "--outdir", str(tmp_path / "run"),
    ])
    assert rc == 2
    assert "stage gains" in capsys.readouterr().err


def test_sweep_bytes_identical_across_thread_counts(tmp_path, monkeypatch):
    _, paths = _write_two_node(tmp_path)
    outputs = []
    for workers, name in (("1", "s1.csv"), ("4", "s4.csv")):
        monkeypatch.setenv("COVEROBS_THREADS", workers)
        out = tmp_path / name
        rc = main([
            "sim", "sweep", "--pair", str(paths["pair"]),
            "--cover", str(paths["cover"]), "--plant", str(paths["plant"]),
            "--controller", str(paths["controller"]),
            "--thetas", "2,3", "--repeats", "2", "--seed", "13",
            "--policy", "fixed", "--gamma", "40", "--poles=-4,-9",
            "--horizon", "4", "--force", "--out", str(out),
        ])
        assert rc == 0
        # drop the hash line: the manifest records each distinct output path
        outputs.append(out.read_text().splitlines()[1:])
    assert outputs[0] == outputs[1]
