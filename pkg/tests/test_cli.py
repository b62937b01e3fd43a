import numpy as np
import pytest

from helmnet import cli
from helmnet.data import read_manifest, write_ppm
from helmnet.trainer import TrainConfig, load_checkpoint


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def _echoed(err):
    return dict(line[2:].split("=", 1) for line in err.splitlines() if line.startswith("# "))


def test_no_command_is_usage_error(capsys):
    assert run(capsys)[0] == 1
    assert run(capsys, "fly")[0] == 1
    assert run(capsys, "inspect", "--bogus")[0] == 1


def test_inspect(capsys, tmp_path):
    code, out, err = run(capsys, "inspect", "--variant", "final", "--csv", tmp_path / "t.csv")
    assert code == 0
    assert any(line.split()[:3] == ["Conv2d-1", "222x222", "308"] for line in out.splitlines())
    assert _echoed(err)["variant"] == "final"
    assert (tmp_path / "t.csv").read_text().startswith("layer,")


def test_inspect_batchnorm_dropout(capsys):
    code, out, _ = run(capsys, "inspect", "--variant", "final", "--batchnorm", "--dropout", "0.1")
    assert code == 0 and "BatchNorm2d-1" in out and "Dropout" in out


def test_synth_split_augment(capsys, tmp_path):
    code, out, err = run(capsys, "synth", "--out", tmp_path / "c", "--per-class", 10, "--size", 16, "--seed", 2)
    assert code == 0 and _echoed(err)["seed"] == "2"
    code, out, _ = run(capsys, "split", "--in", tmp_path / "c", "--out", tmp_path / "m.csv", "--seed", 4)
    assert code == 0 and out.strip() == "train=14 val=4 test=2"
    assert read_manifest(tmp_path / "m.csv", size=None).seed == 4
    (tmp_path / "plan.txt").write_text("original\nrotate -30\nbrightness 1.28\n")
    code, out, _ = run(capsys, "augment", "--in", tmp_path / "c", "--out", tmp_path / "a",
                       "--plan", tmp_path / "plan.txt", "--threads", 2)
    assert code == 0 and "20 sources -> 60 images" in out


def test_split_bad_ratios_exit_1(capsys, tmp_path):
    assert run(capsys, "split", "--in", tmp_path, "--out", tmp_path / "m.csv", "--ratios", "0.5,0.5")[0] == 1


def test_split_missing_corpus_exit_2(capsys, tmp_path):
    code, _, err = run(capsys, "split", "--in", tmp_path / "nope", "--out", tmp_path / "m.csv")
    assert code == 2 and "nope" in err


def test_augment_bad_plan_exit_2(capsys, tmp_path, tiny_root):
    (tmp_path / "plan.txt").write_text("shear 0.2\n")
    code, _, err = run(capsys, "augment", "--in", tiny_root, "--out", tmp_path / "o", "--plan", tmp_path / "plan.txt")
    assert code == 2 and "shear" in err


@pytest.fixture
def trained(capsys, tmp_path, tiny_root):
    cfg = tmp_path / "train.cfg"
    cfg.write_text(f"variant=initial\nimage_size=32\nepochs=1\nbatch_size=6\ndata_root={tiny_root}\n"
                   f"checkpoint_path={tmp_path / 'ck.hnet'}\nlog_path={tmp_path / 'log.csv'}\n")
    code, out, err = run(capsys, "train", "--config", cfg, "--epochs", 2, "--seed", 5)
    assert code == 0, err
    return tmp_path, out, err


def test_train_echo_and_overrides(trained):
    tmp_path, out, err = trained
    echo = _echoed(err)
    assert echo["epochs"] == "2" and echo["seed"] == "5" and echo["learning_rate"] == "0.02"
    assert out.splitlines()[0] == "epoch,train_loss,train_acc,val_acc,wall_ms"
    assert "[validation]" in out and "[test]" in out
    # the echoed config reproduces the run
    assert TrainConfig.from_mapping(echo) == load_checkpoint(tmp_path / "ck.hnet").config


def test_eval_and_predict(capsys, trained, tiny_root):
    tmp_path, _, _ = trained
    code, out, _ = run(capsys, "eval", "--checkpoint", tmp_path / "ck.hnet", "--subset", "val")
    assert code == 0 and out.startswith("[val] n=") and "precision" in out
    img = np.random.default_rng(0).integers(0, 256, (40, 40, 3), dtype=np.uint8)
    write_ppm(tmp_path / "x.ppm", img)
    code, out, _ = run(capsys, "predict", "--checkpoint", tmp_path / "ck.hnet", "--image", tmp_path / "x.ppm")
    name, p0, p1 = out.split()
    assert code == 0 and name in ("helmet", "no_helmet")
    assert float(p0.split("=")[1]) + float(p1.split("=")[1]) == pytest.approx(1, abs=2e-6)


def test_corrupt_checkpoint_exit_2(capsys, trained):
    tmp_path, _, _ = trained
    blob = bytearray((tmp_path / "ck.hnet").read_bytes())
    blob[100] ^= 1
    (tmp_path / "bad.hnet").write_bytes(bytes(blob))
    code, _, err = run(capsys, "eval", "--checkpoint", tmp_path / "bad.hnet")
    assert code == 2 and "CRC" in err


def test_predict_bad_image_exit_2(capsys, trained):
    tmp_path, _, _ = trained
    (tmp_path / "bad.ppm").write_bytes(b"P5\n1 1\n255\n\x00")
    code, _, err = run(capsys, "predict", "--checkpoint", tmp_path / "ck.hnet", "--image", tmp_path / "bad.ppm")
    assert code == 2 and "byte 0" in err


def test_train_malformed_config_exit_2(capsys, tmp_path):
    (tmp_path / "c.cfg").write_text("epochs\n")
    assert run(capsys, "train", "--config", tmp_path / "c.cfg")[0] == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_exit_3(capsys, tmp_path, tiny_root):
    code, _, err = run(capsys, "train", "--data-root", tiny_root, "--variant", "initial", "--image-size", 32,
                       "--epochs", 1, "--batch-size", 6, "--learning-rate", 1e30)
    assert code == 3 and "non-finite" in err


def test_grid(capsys, tmp_path, tiny_root):
    (tmp_path / "g.txt").write_text("variant=initial\ndropout_rate=0.1,0.5\n")
    code, out, err = run(capsys, "grid", "--grid", tmp_path / "g.txt", "--data-root", tiny_root,
                         "--image-size", 32, "--epochs", 1, "--batch-size", 6, "--out", tmp_path / "g.csv")
    assert code == 0
    assert _echoed(err)["grid.dropout_rate"] == "0.1,0.5"
    assert out == (tmp_path / "g.csv").read_text() and len(out.splitlines()) == 3


def test_threads_must_be_positive(capsys):
    assert run(capsys, "inspect", "--threads", 0)[0] == 1
