import json

import numpy as np
import pytest

from lqpnp.cli import main, resolve_config
from lqpnp.denoisers import two_level_prior
from lqpnp.image import from_vector, load_image, save_image
from lqpnp.sidecar import read_sidecar, write_sidecar


@pytest.fixture
def clean_png(tmp_path):
    img = from_vector(two_level_prior().sample(16 * 16, seed=1), (16, 16, 1))
    path = tmp_path / "clean.png"
    save_image(img, path)
    return path


def write_config(tmp_path, **kwargs):
    cfg = {
        "schedule": {"N": 40, "beta_start": 1e-3, "beta_end": 0.05},
        "solver": {"q": 0.5, "T": 6},
        "output": {
            "measurement_png": str(tmp_path / "y.png"),
            "measurement_raw": str(tmp_path / "y.f64"),
            "mask": str(tmp_path / "y.mask"),
            "restored": str(tmp_path / "restored.png"),
            "trace": str(tmp_path / "trace.jsonl"),
            "resolved_config": str(tmp_path / "resolved.json"),
        },
    }
    for key, value in kwargs.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path


class TestSidecar:
    def test_round_trip(self, tmp_path, rng):
        vec = rng.standard_normal(24)
        p = tmp_path / "x.f64"
        write_sidecar(p, vec, (2, 4, 3))
        back, shape = read_sidecar(p)
        assert shape == (2, 4, 3)
        np.testing.assert_array_equal(back, vec)

    def test_magic_guarded(self, tmp_path):
        p = tmp_path / "bad.f64"
        p.write_bytes(b"\x00" * 80)
        from lqpnp.errors import DecodeError
        with pytest.raises(DecodeError):
            read_sidecar(p)


class TestResolveConfig:
    def test_defaults_echoed(self):
        cfg = resolve_config()
        assert cfg["solver"]["T_inter"] == 1
        assert cfg["schedule"]["N"] == 1000
        assert cfg["operator"]["blur_sigma"] == 3.0

    def test_override_precedence(self, tmp_path):
        path = write_config(tmp_path, solver={"q": 1.5})
        cfg = resolve_config(path, {("solver", "q"): 0.7})
        assert cfg["solver"]["q"] == 0.7
        assert cfg["solver"]["T"] == 6  # from file

    def test_unknown_task_rejected(self, tmp_path):
        path = write_config(tmp_path, task="sharpen")
        from lqpnp.errors import ArgumentError
        with pytest.raises(ArgumentError):
            resolve_config(path)


class TestDegrade:
    def test_denoise_level_zero_matches_input(self, tmp_path, clean_png):
        cfg = write_config(tmp_path, task="denoise",
                           input={"clean": str(clean_png)},
                           noise={"sp_level": 0.0})
        assert main(["degrade", "--config", str(cfg)]) == 0
        y_img = load_image(tmp_path / "y.png")
        clean = load_image(clean_png)
        np.testing.assert_allclose(y_img.data, clean.data, atol=1 / 510 + 1e-12)
        y_raw, shape = read_sidecar(tmp_path / "y.f64")
        assert shape == (16, 16, 1)
        np.testing.assert_array_equal(y_raw, clean.data)

    def test_sr_output_shape(self, tmp_path, clean_png):
        cfg = write_config(tmp_path, task="sr",
                           input={"clean": str(clean_png)},
                           operator={"sr_factor": 4})
        assert main(["degrade", "--config", str(cfg)]) == 0
        _, shape = read_sidecar(tmp_path / "y.f64")
        assert shape == (4, 4, 1)
        assert load_image(tmp_path / "y.png").shape == (4, 4, 1)

    def test_inpaint_writes_mask_with_expected_site_count(self, tmp_path,
                                                          clean_png):
        cfg = write_config(tmp_path, task="inpaint",
                           input={"clean": str(clean_png)},
                           operator={"mask_fraction": 0.7, "mask_seed": 5})
        assert main(["degrade", "--config", str(cfg)]) == 0
        from lqpnp.operators import load_mask
        mask = load_mask(tmp_path / "y.mask")
        assert mask.total == 256
        assert mask.kept.size == round(0.3 * 256)
        # full-size preview for shape recovery
        assert load_image(tmp_path / "y.png").shape == (16, 16, 1)

    def test_resolved_config_echoes_defaults(self, tmp_path, clean_png):
        cfg = write_config(tmp_path, task="denoise",
                           input={"clean": str(clean_png)})
        main(["degrade", "--config", str(cfg)])
        doc = json.loads((tmp_path / "resolved.json").read_text())
        assert doc["solver"]["eps0"] == 1e-2  # default filled in
        assert doc["noise"]["sp_level"] == 0.5
        assert doc["domain_shape"] == [16, 16, 1]
        assert doc["tool_version"]


class TestRestoreCommand:
    def test_round_trip_and_determinism(self, tmp_path, clean_png):
        cfg = write_config(tmp_path, task="denoise",
                           input={"clean": str(clean_png)},
                           noise={"sp_level": 0.5, "seed": 2},
                           master_seed=7)
        assert main(["degrade", "--config", str(cfg)]) == 0
        assert main(["restore", "--config", str(cfg)]) == 0
        first_png = (tmp_path / "restored.png").read_bytes()
        first_trace = (tmp_path / "trace.jsonl").read_text()
        assert len(first_trace.splitlines()) == 6  # T records
        assert main(["restore", "--config", str(cfg)]) == 0
        assert (tmp_path / "restored.png").read_bytes() == first_png
        assert (tmp_path / "trace.jsonl").read_text() == first_trace
        rec = json.loads(first_trace.splitlines()[0])
        assert set(rec) == {"k", "t", "eps", "step", "fidelity_lq",
                            "surrogate", "residual_l2"}

    def test_restore_inpaint_and_sr_shapes(self, tmp_path, clean_png):
        for task in ("inpaint", "sr"):
            cfg = write_config(tmp_path, task=task,
                               input={"clean": str(clean_png)},
                               solver={"q": 0.5, "T": 4})
            assert main(["degrade", "--config", str(cfg)]) == 0
            assert main(["restore", "--config", str(cfg)]) == 0
            assert load_image(tmp_path / "restored.png").shape == (16, 16, 1)

    def test_guidance_variant_runs(self, tmp_path, clean_png):
        cfg = write_config(tmp_path, task="denoise",
                           input={"clean": str(clean_png)},
                           guidance={"variant": "irls_weighted", "rho": 0.05},
                           schedule={"N": 30, "beta_start": 1e-3,
                                     "beta_end": 0.05})
        assert main(["degrade", "--config", str(cfg)]) == 0
        assert main(["restore", "--config", str(cfg)]) == 0
        lines = (tmp_path / "trace.jsonl").read_text().splitlines()
        assert len(lines) == 29  # N-1 ancestral steps
        assert json.loads(lines[0])["variant"] == "irls_weighted"

    def test_bad_q_exit_2(self, tmp_path, clean_png, capsys):
        cfg = write_config(tmp_path, task="denoise",
                           input={"clean": str(clean_png)},
                           solver={"q": 2.5, "T": 3})
        main(["degrade", "--config", str(cfg)])
        assert main(["restore", "--config", str(cfg)]) == 2
        assert "error" in capsys.readouterr().err

    def test_dead_external_endpoint_exit_3(self, tmp_path, clean_png, capsys):
        cfg = write_config(tmp_path, task="denoise",
                           input={"clean": str(clean_png)},
                           denoiser={"kind": "external",
                                     "endpoint": {"kind": "stdio",
                                                  "command": ["/no/such/bin"],
                                                  "timeout_ms": 500}},
                           solver={"q": 0.5, "T": 2})
        main(["degrade", "--config", str(cfg)])
        assert main(["restore", "--config", str(cfg)]) == 3
        assert "transport" in capsys.readouterr().err

    def test_flag_overrides(self, tmp_path, clean_png):
        cfg = write_config(tmp_path, task="denoise",
                           input={"clean": str(clean_png)})
        main(["degrade", "--config", str(cfg)])
        assert main(["restore", "--config", str(cfg), "--solver-t", "3"]) == 0
        assert len((tmp_path / "trace.jsonl").read_text().splitlines()) == 3
        doc = json.loads((tmp_path / "resolved.json").read_text())
        assert doc["solver"]["T"] == 3


class TestEvaluateCommand:
    def test_identical_images(self, tmp_path, clean_png, capsys):
        assert main(["evaluate", "--ref", str(clean_png),
                     "--test", str(clean_png)]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["psnr_db"] == "inf"
        assert doc["ssim"] == pytest.approx(1.0, abs=1e-12)

    def test_missing_file_exit_2(self, tmp_path, clean_png, capsys):
        assert main(["evaluate", "--ref", str(clean_png),
                     "--test", str(tmp_path / "missing.png")]) == 2
        assert "error" in capsys.readouterr().err


class TestFitNoiseCommand:
    def test_salt_pepper_residuals_suggest_small_q(self, tmp_path, capsys):
        from lqpnp.noise import SaltPepperSpec, apply_salt_pepper
        rng = np.random.default_rng(3)
        clean = from_vector(rng.random(32 * 32), (32, 32, 1))
        noisy_vals = apply_salt_pepper(clean.data,
                                       SaltPepperSpec(level=0.5, seed=4))
        clean_path = tmp_path / "c.png"
        noisy_path = tmp_path / "n.png"
        save_image(clean, clean_path)
        save_image(from_vector(noisy_vals, (32, 32, 1)), noisy_path)
        out = tmp_path / "fit.json"
        assert main(["fit-noise", "--clean", str(clean_path),
                     "--noisy", str(noisy_path), "--output", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["suggested"]["q"] <= 1.0
        assert not doc["degenerate"]

    def test_identical_inputs_degenerate(self, tmp_path, clean_png, capsys):
        assert main(["fit-noise", "--clean", str(clean_png),
                     "--noisy", str(clean_png)]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["degenerate"]
        assert doc["ggsm"]["delta"] == 1e-8


class TestBenchmarkCommand:
    def test_small_benchmark_report(self, tmp_path):
        img_dir = tmp_path / "imgs"
        img_dir.mkdir()
        prior = two_level_prior()
        for i in range(3):
            save_image(from_vector(prior.sample(256, seed=20 + i), (16, 16, 1)),
                       img_dir / f"img{i}.png")
        cfg = write_config(tmp_path, task="denoise",
                           solver={"q": 0.5, "T": 4, "step_rule": "prox",
                                   "lambda": 0.2},
                           master_seed=11)
        out = tmp_path / "report.json"
        assert main(["benchmark", "--dir", str(img_dir), "--config", str(cfg),
                     "--output", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert len(doc["images"]) == 3
        assert [r["name"] for r in doc["images"]] == sorted(
            r["name"] for r in doc["images"])
        psnrs = [r["psnr_db"] for r in doc["images"]]
        assert doc["aggregate"]["psnr_mean"] == pytest.approx(np.mean(psnrs),
                                                              rel=1e-12)
        assert doc["aggregate"]["count"] == 3
        assert doc["images"][0]["seed"] == 11
        assert doc["images"][1]["seed"] == 12

    def test_empty_dir_exit_2(self, tmp_path, capsys):
        empty = tmp_path / "none"
        empty.mkdir()
        cfg = write_config(tmp_path)
        assert main(["benchmark", "--dir", str(empty), "--config",
                     str(cfg)]) == 2
