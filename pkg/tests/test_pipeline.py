import json
from pathlib import Path

import pytest

from srsqueeze import cli, pipeline
from srsqueeze.data import PatchSampler, write_synthetic_dataset
from srsqueeze.distill import KDConfig
from srsqueeze.models import ModelConfig, build, exact_param_count, load_weights, save_weights
from srsqueeze.pipeline import (DataSection, PlanSection, PretrainSection, RunConfig, StageError,
                                run_workflow)
from srsqueeze.pruning import PruneConfig
from srsqueeze.training import evaluate, evaluate_bicubic, pretrain

ARTIFACTS = ("teacher.srwt", "pruned.srwt", "prune_report.json", "plan.json", "student.srwt",
             "distill_log.jsonl", "eval.json", "report.json")


def tiny_run(out_dir, seed=0) -> RunConfig:
    return RunConfig(
        seed=seed, out_dir=str(out_dir),
        model=ModelConfig(16, 1, 2),
        data=DataSection(synthetic=6, size=48, held_out=2, prune_images=4, kd_images=4, patch=24),
        pretrain=PretrainSection(iters=20, batch=4),
        prune=PruneConfig(lam=3e-3, epochs=2, steps_per_epoch=5, batch=4, patch=24, log_every=5),
        plan=PlanSection(mode="search"),
        distill=KDConfig(iterations=10, batch=4, patch=24, pyramid_levels=4, log_every=2),
    )


@pytest.fixture(scope="module")
def tiny_report(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return out, run_workflow(tiny_run(out))


# -- pretrain --------------------------------------------------------------------------

def test_pretrain_beats_bicubic(train_images, held_out):
    model = pretrain(ModelConfig(16, 2, 2), PatchSampler(train_images, patch=32, scale=2, seed=1), 500,
                     seed=0, batch=16, lr=5e-3)
    ours = evaluate(model, held_out, with_ssim=False)
    base = evaluate_bicubic(held_out, 2, with_ssim=False)
    for p_model, p_bicubic in zip(ours.psnr, base.psnr):
        assert p_model > p_bicubic


def test_pretrain_zero_iterations_is_init():
    model = pretrain(ModelConfig(8, 1, 2), None, 0, seed=3)
    fresh = build(ModelConfig(8, 1, 2), seed=3)
    for n, p in model.named_parameters():
        assert p.data.tobytes() == fresh.params[n].data.tobytes()


def test_pretrain_same_seed_same_checkpoint(tmp_path, train_images):
    blobs = []
    for i in range(2):
        m = pretrain(ModelConfig(8, 1, 1), PatchSampler(train_images, patch=16, seed=2), 5, seed=1, batch=2)
        save_weights(m, tmp_path / f"{i}.srwt")
        blobs.append((tmp_path / f"{i}.srwt").read_bytes())
    assert blobs[0] == blobs[1]


def test_pretrain_empty_dataset():
    class Empty:
        def __len__(self):
            return 0

    with pytest.raises(ValueError, match="empty"):
        pretrain(ModelConfig(8, 1, 1), Empty(), 3)


# -- run config ------------------------------------------------------------------------

def test_toml_round_trip(tmp_path):
    (tmp_path / "run.toml").write_text("""
seed = 3
out_dir = "out"
[model]
n_c = 24
n_l = 2
n_b = 3
[prune]
lam = 1e-3
[distill]
alpha = 0.2
betas = [0.9, 0.99]
[plan]
density = 0.2
""")
    cfg = RunConfig.from_toml(tmp_path / "run.toml")
    assert cfg.seed == 3 and cfg.model == ModelConfig(24, 2, 3)
    assert cfg.prune.lam == 1e-3 and cfg.distill.alpha == 0.2 and cfg.distill.betas == (0.9, 0.99)
    assert cfg.plan.density == 0.2
    assert Path(cfg.out_dir) == tmp_path / "out"
    assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))).fingerprint() == cfg.fingerprint()


def test_shipped_toy_config_parses():
    cfg = RunConfig.from_toml(Path(__file__).parents[1] / "configs" / "toy.toml")
    assert cfg.model.triple == (32, 2, 4)


@pytest.mark.parametrize("bad", [{"nope": 1}, {"model": {"n_c": 8, "n_l": 1, "n_b": 1, "depth": 2}}])
def test_unknown_keys_rejected(bad):
    with pytest.raises(ValueError, match="unknown"):
        RunConfig.from_dict(bad)


# -- workflow --------------------------------------------------------------------------

def test_report_has_every_stage(tiny_report):
    out, report = tiny_report
    assert {"pretrain", "prune", "plan", "distill", "eval"} <= set(report)
    for name in ARTIFACTS:
        assert (out / name).exists(), name
    assert json.loads((out / "report.json").read_text()) == json.loads(json.dumps(report))


def test_report_ratio_recomputed(tiny_report):
    out, report = tiny_report
    s = report["summary"]
    teacher, student = load_weights(out / "teacher.srwt"), load_weights(out / "student.srwt")
    assert s["compression_ratio"] == exact_param_count(student).total / exact_param_count(teacher).total
    assert s["d"] < 1
    assert s["student_params"] < s["teacher_params"]


def test_report_stage_contents(tiny_report):
    out, report = tiny_report
    prune = json.loads((out / "prune_report.json").read_text())
    assert report["prune"]["density"] == prune["density"] == report["plan"]["d"]
    rows = [json.loads(line) for line in (out / "distill_log.jsonl").read_text().splitlines()]
    assert [r["iter"] for r in rows] == sorted(r["iter"] for r in rows)
    assert report["distill"]["last"] == rows[-1]
    assert set(report["summary"]["psnr"]) == {"bicubic", "teacher", "pruned", "student"}
    # no absolute paths leak into the report
    assert str(out) not in (out / "report.json").read_text()


def test_density_override(tmp_path):
    cfg = tiny_run(tmp_path)
    cfg.plan = PlanSection(density=0.25)
    cfg.distill.iterations = 2
    report = run_workflow(cfg)
    assert report["plan"]["d"] == 0.25
    assert report["prune"]["density"] != 0.25


def test_resume_reuses_plan(tmp_path, monkeypatch):
    cfg = tiny_run(tmp_path)

    def boom(*a, **kw):
        raise RuntimeError("simulated crash")

    monkeypatch.setattr(pipeline, "run_distillation", boom)
    with pytest.raises(StageError) as err:
        run_workflow(cfg)
    assert err.value.stage == "distill" and "distill" in str(err.value)
    plan_bytes = (tmp_path / "plan.json").read_bytes()
    teacher_bytes = (tmp_path / "teacher.srwt").read_bytes()
    assert not (tmp_path / "student.srwt").exists()

    monkeypatch.undo()
    calls = []
    real_plan = pipeline._stage_plan
    monkeypatch.setattr(pipeline, "_stage_plan", lambda *a: calls.append(a) or real_plan(*a))
    report = run_workflow(cfg)
    assert calls == []  # plan stage skipped
    assert (tmp_path / "plan.json").read_bytes() == plan_bytes
    assert (tmp_path / "teacher.srwt").read_bytes() == teacher_bytes
    assert report["plan"] == json.loads(plan_bytes) | {"verification": report["plan"]["verification"],
                                                        "file": "plan.json"}


def test_changed_config_starts_over(tmp_path):
    cfg = tiny_run(tmp_path)
    cfg.distill.iterations = 2
    run_workflow(cfg)
    cfg.prune.lam = 1e-2
    report = run_workflow(cfg)
    assert report["config"]["prune"]["lam"] == 1e-2
    assert json.loads((tmp_path / "prune_report.json").read_text())["metadata"]["config"]["lam"] == 1e-2


def test_stage_error_names_stage(tmp_path):
    cfg = tiny_run(tmp_path)
    cfg.pretrain.weights = str(tmp_path / "missing.srwt")
    with pytest.raises(StageError, match="pretrain") as err:
        run_workflow(cfg)
    assert "missing.srwt" in str(err.value)


def test_supplied_teacher_is_used(tmp_path):
    teacher = build(ModelConfig(16, 1, 2), seed=11)
    save_weights(teacher, tmp_path / "t.srwt")
    cfg = tiny_run(tmp_path / "run")
    cfg.pretrain.weights = str(tmp_path / "t.srwt")
    cfg.distill.iterations = 2
    report = run_workflow(cfg)
    assert (tmp_path / "run" / "teacher.srwt").read_bytes() == (tmp_path / "t.srwt").read_bytes()
    assert report["config"]["pretrain"]["weights"] == "t.srwt"


# -- CLI -------------------------------------------------------------------------------

def test_cli_count(capsys):
    assert cli.main(["count", "--nc", "64", "--nl", "2", "--nb", "16", "--scale", "2"]) == 0
    out = capsys.readouterr().out
    assert "1,369,859" in out and "316.25 G" in out and "632.50 G" in out


def test_cli_plan(tmp_path, capsys):
    out = tmp_path / "plan.json"
    assert cli.main(["plan", "--nc", "60", "--nl", "6", "--nb", "4", "--density", "0.089",
                     "--mode", "search", "--out", str(out)]) == 0
    target = json.loads(out.read_text())["target"]
    assert (target["n_c"], target["n_l"], target["n_b"]) == (24, 4, 3)


def test_cli_stages_chain(tmp_path, capsys):
    data = tmp_path / "data"
    assert cli.main(["make-toy-data", "--out", str(data), "--n", "4", "--size", "40"]) == 0
    t, pr, rep, pl, st = (str(tmp_path / n) for n in
                          ("t.srwt", "p.srwt", "prune.json", "plan.json", "s.srwt"))
    assert cli.main(["pretrain", "--nc", "16", "--nl", "1", "--nb", "2", "--data", str(data),
                     "--iters", "3", "--batch", "2", "--patch", "16", "--out", t]) == 0
    assert cli.main(["prune", "--model", t, "--data", str(data), "--lambda", "1e-2", "--epochs", "1",
                     "--steps-per-epoch", "3", "--batch", "2", "--patch", "16", "--out", pr, "--report", rep]) == 0
    assert 0 <= json.loads(Path(rep).read_text())["density"] <= 1
    assert cli.main(["plan", "--nc", "16", "--nl", "1", "--nb", "2", "--prune-report", rep, "--out", pl]) == 0
    log = tmp_path / "run.jsonl"
    assert cli.main(["distill", "--teacher", t, "--student-config", pl, "--data", str(data), "--alpha", "0.1",
                     "--iters", "3", "--batch", "2", "--patch", "16", "--levels", "3",
                     "--out", st, "--log", str(log)]) == 0
    rows = [json.loads(line) for line in log.read_text().splitlines()]
    assert len(rows) == 3 and set(rows[0]) == {"iter", "total", "student_term", "dis_term", "lap_image", "lap_hf"}
    metrics = tmp_path / "m.json"
    assert cli.main(["eval", "--model", st, "--hr", str(data), "--scale", "2", "--out", str(metrics)]) == 0
    m = json.loads(metrics.read_text())
    assert len(m["psnr"]) == 4 and m["border"] == 2
    assert cli.main(["eval", "--hr", str(data), "--scale", "2"]) == 0


def test_cli_run(tmp_path, capsys):
    cfg = tmp_path / "run.toml"
    cfg.write_text("""
out_dir = "out"
[model]
n_c = 8
n_l = 1
n_b = 1
[data]
synthetic = 3
size = 32
held_out = 1
patch = 16
[pretrain]
iters = 2
batch = 2
[prune]
lam = 1e-2
epochs = 1
steps_per_epoch = 2
batch = 2
patch = 16
[plan]
density = 0.5
[distill]
iterations = 2
batch = 2
patch = 16
pyramid_levels = 3
""")
    assert cli.main(["run", "--config", str(cfg)]) == 0
    assert "report:" in capsys.readouterr().out
    assert (tmp_path / "out" / "report.json").exists()


def test_cli_errors(tmp_path, capsys):
    write_synthetic_dataset(tmp_path / "hr", 1, 32)
    assert cli.main(["eval", "--model", str(tmp_path / "nope.srwt"), "--hr", str(tmp_path / "hr")]) == 1
    assert "nope.srwt" in capsys.readouterr().err
    assert cli.main(["plan", "--nc", "60", "--nl", "6", "--nb", "4", "--density", "1.5",
                     "--out", str(tmp_path / "p.json")]) == 1
    assert "density" in capsys.readouterr().err
    assert cli.main(["run", "--config", str(tmp_path / "missing.toml")]) == 1
    assert "missing.toml" in capsys.readouterr().err


def test_cli_eval_scale_mismatch(tmp_path, capsys):
    write_synthetic_dataset(tmp_path / "hr", 1, 32)
    save_weights(build(ModelConfig(8, 1, 1, scale=3)), tmp_path / "m.srwt")
    assert cli.main(["eval", "--model", str(tmp_path / "m.srwt"), "--hr", str(tmp_path / "hr"),
                     "--scale", "2"]) == 1
    assert "x3" in capsys.readouterr().err
