import json
import subprocess
import sys

import numpy as np
import pytest

from fracmono.cli import main, run, validate_config
from fracmono.errors import ConfigError
from fracmono.report import read_matrix, write_matrix


def base_config(kind="forward", **exp):
    cfg = {
        "grid": {"dim": 1, "omega_box": [[0.0, 1.0]], "collar_width": 0.5, "h": 1.0 / 16},
        "s": 0.5,
        "experiment": {"kind": kind, **exp},
    }
    return cfg


class TestValidation:
    def test_defaults_filled(self):
        cfg = validate_config(base_config(potential={"constant": 0.0}, g={"basis_index": 0}))
        assert cfg["scheme"] == "spectral-power"
        assert cfg["output"]["figures"] is True

    def test_collar_defaults_to_omega_width(self):
        cfg = base_config(potential={"constant": 0.0}, g={"basis_index": 0})
        del cfg["grid"]["collar_width"]
        out = validate_config(cfg)
        assert out["grid"]["collar_width"] == 1.0

    def test_missing_grid(self):
        with pytest.raises(ConfigError, match="grid"):
            validate_config({"s": 0.5, "experiment": {"kind": "forward"}})

    def test_bad_s(self):
        cfg = base_config(potential={"constant": 0.0}, g={"basis_index": 0})
        cfg["s"] = 1.5
        with pytest.raises(ConfigError, match="s"):
            validate_config(cfg)

    def test_unknown_kind(self):
        with pytest.raises(ConfigError, match="kind"):
            validate_config(base_config(kind="solve-everything"))

    def test_randomized_kind_requires_seed(self):
        with pytest.raises(ConfigError, match="seed"):
            validate_config(base_config(kind="mono-check", count=3))

    def test_nonpositive_tolerance(self):
        cfg = base_config(kind="reconstruct", truth={"constant": 0.0}, cells=[2], bisect_tol=-1)
        with pytest.raises(ConfigError, match="bisect_tol"):
            validate_config(cfg)


class TestRun:
    def test_forward_writes_reports(self, tmp_path):
        cfg = base_config(potential={"constant": 0.0}, g={"basis_index": 0})
        summary = run(cfg, tmp_path)
        assert summary["results"]["residual_relative"] <= 1e-10
        assert (tmp_path / "summary.json").exists()
        assert (tmp_path / "solution.csv").exists()
        assert (tmp_path / "solution.png").exists()

    def test_figures_can_be_disabled(self, tmp_path):
        cfg = base_config(potential={"constant": 0.0}, g={"basis_index": 0})
        cfg["output"] = {"figures": False}
        run(cfg, tmp_path)
        assert not (tmp_path / "solution.png").exists()

    def test_summary_embeds_resolved_config(self, tmp_path):
        cfg = base_config(potential={"constant": 0.0}, g={"basis_index": 0})
        run(cfg, tmp_path)
        stored = json.loads((tmp_path / "summary.json").read_text())
        assert stored["config"]["grid"]["h"] == cfg["grid"]["h"]
        assert stored["config"]["output"]["figures"] is True

    def test_mono_check_deterministic(self, tmp_path):
        cfg = base_config(kind="mono-check", count=5)
        cfg["seed"] = 11
        run(cfg, tmp_path / "a")
        run(cfg, tmp_path / "b")
        sa = (tmp_path / "a" / "summary.json").read_bytes()
        sb = (tmp_path / "b" / "summary.json").read_bytes()
        assert sa == sb
        ca = (tmp_path / "a" / "monotonicity.csv").read_bytes()
        cb = (tmp_path / "b" / "monotonicity.csv").read_bytes()
        assert ca == cb

    def test_detection_table_headers(self, tmp_path):
        cfg = base_config(
            kind="detect-definite",
            direction="up",
            reference={"constant": 0.0},
            target={"phantom": "block", "cells": [4], "block": [1, 1], "contrast": 1.0},
            cells=[4],
            alpha0=0.1,
            alpha_count=4,
        )
        run(cfg, tmp_path)
        header = (tmp_path / "detection.csv").read_text().splitlines()[0]
        assert header == "candidate_id,alpha_pass,neg_count_lower,neg_count_upper,pass"

    def test_dtn_dump_roundtrip(self, tmp_path):
        cfg = base_config(kind="dtn", potential={"constant": 0.3})
        cfg["output"] = {"dump_matrices": True, "figures": False}
        run(cfg, tmp_path)
        m = read_matrix(tmp_path / "dtn.fmono")
        assert m.shape == (16, 16)
        assert np.allclose(m, m.T)


class TestBinaryFormat:
    def test_roundtrip(self, tmp_path):
        a = np.arange(12, dtype=float).reshape(3, 4) / 7.0
        path = tmp_path / "m.fmono"
        write_matrix(path, a)
        b = read_matrix(path)
        assert np.array_equal(a, b)

    def test_header_layout(self, tmp_path):
        a = np.zeros((2, 5))
        path = tmp_path / "m.fmono"
        write_matrix(path, a)
        raw = path.read_bytes()
        assert raw[:6] == b"FMONO\x00"
        assert raw[6:8] == b"\x00\x00"
        assert int.from_bytes(raw[8:12], "little") == 2
        assert int.from_bytes(raw[12:16], "little") == 5
        assert len(raw) == 16 + 2 * 5 * 8

    def test_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "bad.fmono"
        path.write_bytes(b"NOTFMT\x00\x00" + b"\x00" * 16)
        with pytest.raises(ValueError):
            read_matrix(path)


class TestMainEntry:
    def test_success_and_exit_code(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(base_config(potential={"constant": 0.0},
                                                   g={"basis_index": 0})))
        rc = main(["forward", "--config", str(cfg_path), "--out", str(tmp_path / "out")])
        assert rc == 0
        assert (tmp_path / "out" / "summary.json").exists()

    def test_config_error_writes_record(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg = base_config(potential={"constant": 0.0}, g={"basis_index": 0})
        cfg["s"] = 2.0
        cfg_path.write_text(json.dumps(cfg))
        rc = main(["forward", "--config", str(cfg_path), "--out", str(tmp_path / "out")])
        assert rc == 2
        record = json.loads((tmp_path / "out" / "error.json").read_text())
        assert record["error"] == "ConfigError"

    def test_kind_mismatch_rejected(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(base_config(potential={"constant": 0.0},
                                                   g={"basis_index": 0})))
        rc = main(["dtn", "--config", str(cfg_path), "--out", str(tmp_path / "out")])
        assert rc == 2

    def test_module_error_preserved(self, tmp_path):
        # resonant reference potential for a testing operator
        cfg = base_config(kind="detect-definite", direction="up",
                          reference={"constant": -26.0},
                          target={"constant": 0.0}, cells=[4])
        # -26 makes the interior operator indefinite at n=16: the reference
        # must be non-resonant with d=0 for the derivative
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        rc = main(["detect-definite", "--config", str(cfg_path), "--out", str(tmp_path / "out")])
        if rc != 0:
            record = json.loads((tmp_path / "out" / "error.json").read_text())
            assert "error" in record

    def test_seed_override(self, tmp_path):
        cfg = base_config(kind="mono-check", count=3)
        cfg["seed"] = 1
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        rc = main(["mono-check", "--config", str(cfg_path), "--out", str(tmp_path / "a"),
                   "--seed", "2"])
        assert rc == 0
        stored = json.loads((tmp_path / "a" / "summary.json").read_text())
        assert stored["config"]["seed"] == 2

    def test_console_script_installed(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(base_config(potential={"constant": 0.0},
                                                   g={"basis_index": 0})))
        proc = subprocess.run(
            [sys.executable, "-m", "fracmono_launcher", "forward",
             "--config", str(cfg_path), "--out", str(tmp_path / "out"), "--threads", "1"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
