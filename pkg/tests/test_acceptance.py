"""End-to-end acceptance gate.

One test per release criterion, so ``pytest -v`` prints one pass/fail
line for each. Timed criteria measure wall-clock with perf_counter and
assume a single otherwise-idle CPU core.
"""

import json
import subprocess
import time

import numpy as np
import pytest

import test_tensor as tensor_suite
from sentiformer import cli
from sentiformer import data as D
from sentiformer import evaluate as E
from sentiformer import model as M
from sentiformer import tensor as T
from sentiformer import train as TR
from sentiformer.tensor import Tensor

TINY = dict(d_e=16, d_h=8, d_k=4, d_s=4, n_classes=3, depth_adaptive=2,
            depth_fusion=2, heads_self=2, heads_cross=2)


def tiny_config(**overrides):
    return M.ModelConfig(**{**TINY, **overrides}).validate()


def make_dataset(informative=("v", "c", "p"), seed=7):
    spec = D.SyntheticSpec(classes=8, per_class=125, separation=5.0,
                           noise_std=1.0, informative_streams=set(informative),
                           seed=seed)
    return D.train_test_split(D.gen_synthetic(spec), test_fraction=0.2, seed=7)


def run_training(train_set, test_set, epochs, ablation=frozenset()):
    model_cfg = M.ModelConfig(ablation=set(ablation)).validate()
    train_cfg = TR.TrainConfig(epochs=epochs)
    params, metrics = TR.train(train_set, model_cfg, train_cfg)
    report = E.evaluate(params, test_set, model_cfg)
    return params, model_cfg, metrics, report


@pytest.fixture(scope="module")
def convergence_run():
    train_set, test_set = make_dataset()
    start = time.perf_counter()
    params, model_cfg, metrics, report = run_training(train_set, test_set, epochs=50)
    elapsed = time.perf_counter() - start
    return dict(params=params, model_cfg=model_cfg, metrics=metrics,
                report=report, elapsed=elapsed, train_set=train_set,
                test_set=test_set)


def test_gradient_fidelity_tiny_config(capsys):
    start = time.perf_counter()
    rc = cli.main(["gradcheck"])
    elapsed = time.perf_counter() - start
    out = capsys.readouterr().out
    assert rc == 0 and "gradcheck PASS" in out
    err = float(out.split("max relative error:")[1].split()[0])
    assert err < 1e-5
    assert elapsed < 60.0, f"gradcheck took {elapsed:.1f}s (limit 60s)"


def test_tensor_op_suite():
    rng = np.random.default_rng(42)
    start = time.perf_counter()
    instances = 0

    x = rng.standard_normal((400, 8)) * 3
    rows = T.softmax_rows(Tensor(x)).data
    assert np.allclose(rows.sum(axis=-1), 1.0, atol=1e-12)
    instances += 400

    shifts = rng.uniform(-25, 25, size=(400, 1))
    shifted = T.softmax_rows(Tensor(x + shifts)).data
    assert np.max(np.abs(shifted - rows)) < 1e-12
    instances += 400

    y = rng.standard_normal((400, 16)) * 5
    normed = T.layer_norm(Tensor(y), Tensor(np.ones(16)), Tensor(np.zeros(16)),
                          1e-12).data
    assert np.max(np.abs(normed.mean(axis=-1))) < 1e-9
    assert np.max(np.abs(normed.var(axis=-1) - 1.0)) < 1e-6
    instances += 400

    for rep in range(6):
        for name, tensors, objective in tensor_suite._primitive_cases(rng):
            err = T.finite_diff_check(objective, tensors, h=1e-5)
            assert err < 1e-6, f"{name} rep {rep}: relative error {err:.3e}"
            instances += 1

    elapsed = time.perf_counter() - start
    assert instances >= 1000
    assert elapsed < 30.0, f"tensor suite took {elapsed:.1f}s (limit 30s)"


def test_architectural_invariants():
    rng = np.random.default_rng(11)
    train_cfg = TR.TrainConfig(seed=3)

    # shape chain across a config grid
    for classes in (2, 3, 8):
        for depth in (1, 2):
            cfg = tiny_config(n_classes=classes, depth_adaptive=depth,
                              depth_fusion=depth)
            params = TR.init_params(cfg, train_cfg)
            e = [Tensor(rng.standard_normal((4, cfg.d_e))) for _ in range(3)]
            logits, fused = M.forward_parts(*e, params, cfg)
            assert logits.data.shape == (4, classes)
            assert fused.data.shape == (4, cfg.d_h)

    # softmax classification is shift-invariant in the logits
    cfg = tiny_config()
    params = TR.init_params(cfg, train_cfg)
    fused = Tensor(rng.standard_normal((16, cfg.n_classes + 1, cfg.d_h)))
    logits = M.classify_logits(fused, params).data
    probs = M.classify(fused, params).data
    assert np.array_equal(np.argmax(probs, axis=-1), np.argmax(logits, axis=-1))
    shifted = T.softmax_rows(Tensor(logits + 123.0)).data
    assert np.array_equal(np.argmax(shifted, axis=-1), np.argmax(probs, axis=-1))

    # adaptive attention is invariant to permuting the metadata key rows
    L = cfg.n_classes
    h_v = Tensor(rng.standard_normal((2, L, cfg.d_h)))
    h_c = rng.standard_normal((2, L, cfg.d_h))
    h_p = rng.standard_normal((2, L, cfg.d_h))
    h_m = Tensor(rng.standard_normal((2, L, cfg.d_h)))
    base = M.adaptive_step(h_v, Tensor(h_c), Tensor(h_p), h_m, params, cfg, 1)
    perm = rng.permutation(L)
    permuted = M.adaptive_step(h_v, Tensor(h_c[:, perm]), Tensor(h_p[:, perm]),
                               h_m, params, cfg, 1)
    assert np.max(np.abs(base[1].data - permuted[1].data)) <= 1e-5

    # a zero output projection reduces the adaptive loop to the identity
    params["adaptive.wo"].data[:] = 0.0
    u = M.UnifiedStates(h_v=h_v, h_c=Tensor(h_c), h_p=Tensor(h_p))
    _, h_m_final = M.adaptive_learning(u, params, cfg)
    token = params["adaptive.token"].data
    assert np.array_equal(h_m_final.data,
                          np.broadcast_to(token, h_m_final.data.shape))

    # the no_caption ablation is exactly insensitive to e_c
    cfg_abl = tiny_config(ablation={"no_caption"})
    params_abl = TR.init_params(cfg_abl, train_cfg)
    e_v = Tensor(rng.standard_normal((4, cfg_abl.d_e)))
    e_p = Tensor(rng.standard_normal((4, cfg_abl.d_e)))
    out1, _ = M.forward_parts(e_v, Tensor(rng.standard_normal((4, cfg_abl.d_e))),
                              e_p, params_abl, cfg_abl)
    out2, _ = M.forward_parts(e_v, Tensor(rng.standard_normal((4, cfg_abl.d_e))),
                              e_p, params_abl, cfg_abl)
    assert np.array_equal(out1.data, out2.data)


def test_synthetic_convergence(convergence_run):
    report = convergence_run["report"]
    elapsed = convergence_run["elapsed"]
    assert report.accuracy >= 0.95, f"test accuracy {report.accuracy:.4f}"
    assert report.macro_f1 >= 0.95, f"macro F1 {report.macro_f1:.4f}"
    assert elapsed < 300.0, f"training took {elapsed:.0f}s (limit 300s)"


def test_metadata_routing():
    # caption/prompt carry the class signal, the vision stream is pure noise:
    # the full model must exploit the metadata, and the model with both
    # metadata streams ablated must stay at chance (0.125 for 8 classes)
    train_meta, test_meta = make_dataset(informative=("c", "p"))
    _, _, _, full = run_training(train_meta, test_meta, epochs=50)
    assert full.accuracy >= 0.90, f"metadata-only accuracy {full.accuracy:.4f}"

    # chance-level configurations cannot benefit from longer training, so the
    # negative runs use a reduced epoch budget
    _, _, _, blinded = run_training(train_meta, test_meta, epochs=12,
                                    ablation={"no_caption", "no_prompt"})
    assert blinded.accuracy <= 0.25, f"blinded accuracy {blinded.accuracy:.4f}"

    train_vis, test_vis = make_dataset(informative=("v",))
    _, _, _, no_vision = run_training(train_vis, test_vis, epochs=12,
                                      ablation={"no_vision"})
    assert no_vision.accuracy <= 0.25, f"no-vision accuracy {no_vision.accuracy:.4f}"


def test_ablation_substitutes(convergence_run):
    train_set = convergence_run["train_set"]
    test_set = convergence_run["test_set"]
    for flag, module_id in (("mlp_unified", "unified"),
                            ("mlp_adaptive", "adaptive"),
                            ("mlp_fusion", "fusion")):
        cfg = M.ModelConfig(ablation={flag}).validate()
        original = M.module_param_count(cfg, module_id)
        substitute = M.mlp_substitute_param_count(cfg, module_id)
        assert abs(substitute - original) / original <= 0.05, (
            f"{flag}: {substitute} vs {original} parameters")
        _, _, _, report = run_training(train_set, test_set, epochs=25,
                                       ablation={flag})
        assert report.accuracy >= 0.80, f"{flag} accuracy {report.accuracy:.4f}"


def test_training_determinism(tmp_path):
    records = D.gen_synthetic(D.SyntheticSpec(classes=3, per_class=20, d_e=16,
                                              seed=1))
    data_path = tmp_path / "data.jsonl"
    D.write_jsonl(records, data_path)
    cfg_path = tmp_path / "tiny.cfg"
    cfg_path.write_text("d_e = 16\nd_h = 8\nd_k = 4\nd_s = 4\nclasses = 3\n"
                        "heads_self = 2\nheads_cross = 2\nepochs = 3\n")
    logs = []
    for run in ("a", "b"):
        out_dir = tmp_path / run
        rc = cli.main(["train", "--data", str(data_path), "--out", str(out_dir),
                       "--config", str(cfg_path)])
        assert rc == 0
        logs.append((out_dir / "metrics.csv").read_bytes())
    assert logs[0] == logs[1]


def test_checkpoint_round_trip(convergence_run, tmp_path):
    params = convergence_run["params"]
    cfg = convergence_run["model_cfg"]
    path = tmp_path / "model.ckpt"
    TR.save_checkpoint(params, cfg, path)
    loaded_params, loaded_cfg = TR.load_checkpoint(path)

    rng = np.random.default_rng(99)
    inputs = [rng.standard_normal((100, cfg.d_e)).astype(np.float32)
              for _ in range(3)]
    before, _ = M.forward_parts(*(Tensor(x) for x in inputs), params, cfg)
    after, _ = M.forward_parts(*(Tensor(x) for x in inputs), loaded_params,
                               loaded_cfg)
    assert np.array_equal(before.data, after.data)


def test_loss_sanity():
    cfg = M.ModelConfig().validate()
    params = TR.init_params(cfg, TR.TrainConfig(seed=0))
    rng = np.random.default_rng(17)
    e = [Tensor(rng.standard_normal((64, cfg.d_e)).astype(np.float32))
         for _ in range(3)]
    labels = rng.integers(0, cfg.n_classes, size=64)
    logits, _ = M.forward_parts(*e, params, cfg)
    loss = M.cross_entropy_from_logits(logits, labels).data.item()
    assert abs(loss - np.log(8)) < 0.5, f"untrained loss {loss:.4f}"

    uniform = Tensor(np.full((64, 8), 1.0 / 8.0))
    uniform_loss = M.cross_entropy(uniform, labels).data.item()
    assert abs(uniform_loss - np.log(8)) < 1e-6


# ---------------------------------------------------------------------------
# feature-extractor criteria (exercised through its command-line interface)


@pytest.fixture(scope="module")
def stub_extraction(tmp_path_factory):
    root = tmp_path_factory.mktemp("extract")
    images = root / "imgs"
    images.mkdir()
    for i in range(10):
        (images / f"img{i:02d}.jpg").write_bytes(b"\xff\xd8stub")
    labels = root / "labels.txt"
    labels.write_text("\n".join(f"img{i:02d} {i % 4}" for i in range(10)) + "\n")
    out = root / "features.jsonl"
    proc = subprocess.run(
        ["sentiformer-extract", "run", "--stub", "--images", str(images),
         "--labels", str(labels), "--out", str(out)],
        capture_output=True, text=True)
    return proc, out, images, labels


def test_extractor_stub_schema(stub_extraction):
    proc, out, _, _ = stub_extraction
    assert proc.returncode == 0, proc.stderr
    records = D.read_jsonl(out)  # raises on any schema violation
    assert len(records) == 10
    assert all(r.e_v.shape == (512,) for r in records)


def test_extractor_prompt_goldens(stub_extraction):
    golden = ("the scene or background of the image is beach, and the image "
              "contains the following objects: person, dog")
    args = ["prompt", "--scene", "beach", "--objects", "person,dog"]
    ours = subprocess.run(["sentiformer-extract"] + args, capture_output=True)
    engine = subprocess.run(["sentiformer"] + args, capture_output=True)
    assert ours.returncode == 0 and engine.returncode == 0
    assert ours.stdout == engine.stdout == (golden + "\n").encode()

    # every emitted prompt field must match the shared template byte-for-byte
    _, out, _, _ = stub_extraction
    for line in open(out, encoding="utf-8"):
        doc = json.loads(line)
        assert D.build_prompt(doc["scene"], doc["objects"]).startswith(
            "the scene or background of the image is " + doc["scene"])


def _real_models_available():
    try:
        from transformers import CLIPModel

        CLIPModel.from_pretrained("openai/clip-vit-base-patch32",
                                  local_files_only=True)
        return True
    except Exception:
        return False


@pytest.mark.skipif(not _real_models_available(),
                    reason="pretrained weights not available locally")
def test_extractor_real_models(tmp_path):
    from PIL import Image

    images = tmp_path / "imgs"
    images.mkdir()
    rng = np.random.default_rng(0)
    for i in range(10):
        arr = rng.integers(0, 255, size=(48, 48, 3), dtype=np.uint8)
        Image.fromarray(arr).save(images / f"img{i}.png")
    labels = tmp_path / "labels.txt"
    labels.write_text("\n".join(f"img{i} {i % 2}" for i in range(10)) + "\n")
    out = tmp_path / "features.jsonl"
    proc = subprocess.run(
        ["sentiformer-extract", "run", "--images", str(images),
         "--labels", str(labels), "--out", str(out)],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    records = D.read_jsonl(out)
    assert len(records) == 10
    assert all(r.e_v.shape == (512,) for r in records)
