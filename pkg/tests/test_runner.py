import json
import os

import numpy as np
import pytest

from diskflow import runner


def tiny_config(tmp_path, **over):
    doc = dict(alpha=0.3, beta=0.35, q=3, p=1, K_target=2.0, m_prime=8,
               m_double_prime=4, mesh_n_r=6, mesh_n_theta=16, graph_t=24.0,
               shoot_T=24.0, seed=7, lipschitz_pairs=2000,
               gronwall_pairs=60, prop3_pairs=80, lemma6_fields=25)
    doc.update(over)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return str(path)


def read_summary(out):
    with open(os.path.join(out, "summary.json")) as fh:
        return json.load(fh)


class TestConfig:
    def test_invalid_p_exits_2(self, tmp_path, capsys):
        cfg = tiny_config(tmp_path, p=2)
        code = runner.main(["decompose", "--config", cfg,
                            "--out", str(tmp_path / "o")])
        assert code == runner.EXIT_CONFIG

    def test_unknown_key_exits_2(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"nonsense": 1}')
        code = runner.main(["decompose", "--config", str(path),
                            "--out", str(tmp_path / "o")])
        assert code == runner.EXIT_CONFIG

    def test_step_policy_cap(self, tmp_path):
        cfg = tiny_config(tmp_path, step_c=0.2)
        code = runner.main(["flow", "--config", cfg,
                            "--out", str(tmp_path / "o")])
        assert code == runner.EXIT_CONFIG


class TestStages:
    def test_decompose(self, tmp_path):
        out = str(tmp_path / "out")
        code = runner.main(["decompose", "--config", tiny_config(tmp_path),
                            "--out", out])
        assert code == 0
        doc = read_summary(out)
        assert doc["passed"]
        assert os.path.exists(os.path.join(out, "decomposition.json"))

    def test_flow(self, tmp_path):
        out = str(tmp_path / "out")
        code = runner.main(["flow", "--config", tiny_config(tmp_path),
                            "--out", out, "--workers", "2"])
        assert code == 0
        doc = read_summary(out)
        assert doc["items"]["lipschitz_probe"]["ok"]
        assert doc["items"]["gronwall"]["ok"]
        assert doc["items"]["action_gap"]["ok"]

    def test_linking(self, tmp_path):
        out = str(tmp_path / "out")
        code = runner.main(["linking", "--config", tiny_config(tmp_path),
                            "--out", out])
        assert code == 0
        assert os.path.exists(os.path.join(out, "crossings.csv"))

    def test_lemma6(self, tmp_path):
        out = str(tmp_path / "out")
        code = runner.main(["lemma6", "--config", tiny_config(tmp_path),
                            "--out", out])
        assert code == 0
        assert os.path.exists(os.path.join(out, "lemma6_table.json"))

    def test_sweep(self, tmp_path):
        out = str(tmp_path / "out")
        code = runner.main(["sweep", "--config", tiny_config(tmp_path),
                            "--out", out])
        assert code == 0
        rows = open(os.path.join(out, "sweep.csv")).read().splitlines()
        assert rows[0].startswith("q,p,")

    def test_determinism(self, tmp_path):
        out1 = str(tmp_path / "a")
        out2 = str(tmp_path / "b")
        cfg = tiny_config(tmp_path)
        assert runner.main(["linking", "--config", cfg, "--out", out1]) == 0
        assert runner.main(["linking", "--config", cfg, "--out", out2]) == 0
        csv1 = open(os.path.join(out1, "crossings.csv")).read()
        csv2 = open(os.path.join(out2, "crossings.csv")).read()
        assert csv1 == csv2
