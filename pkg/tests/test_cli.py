import csv
import json

import numpy as np
import pytest

from conftest import make_note
from stnpiano import store, wavio
from stnpiano.analysis import parse_key
from stnpiano.audio import AudioBuffer
from stnpiano.cli import main, run
from stnpiano.store import VelocityBank
from stnpiano.synth import render_note

SR = 24000


@pytest.fixture
def model_file(tmp_path):
    entries = tuple(make_note(velocity=v, seed=v, H=50) for v in (40, 120))
    return store.save(VelocityBank(60, entries), tmp_path / "c4.stn.json")


def note_wav(path, seconds=2.0, velocity=80, F0=261.63, B=3e-4, delta_f=0.15, seed=1):
    m = make_note(F0=F0, B=B, delta_f=delta_f, velocity=velocity, seed=seed, H=12)
    return wavio.write(path, render_note(m, int(seconds * SR)))


def test_usage_errors():
    assert run([]).exit_code == 1
    assert run(["analyze", "x.wav"]).exit_code == 1
    assert run(["frobnicate"]).exit_code == 1
    assert main(["render"]) == 1


def test_analyze_writes_five_artifacts(tmp_path):
    wav = note_wav(tmp_path / "note.wav")
    result = run(["analyze", str(wav), "--key", "C4", "--out", str(tmp_path / "out")])
    assert result.exit_code == 0
    assert sorted(p.name for p in result.artifacts) == sorted(
        ["peaks.csv", "b_samples.csv", "b_init.json", "harmonic.wav", "transient.wav"])
    assert len(list(csv.DictReader(open(tmp_path / "out" / "b_samples.csv")))) == 30
    b = json.loads((tmp_path / "out" / "b_init.json").read_text())
    assert b["B_init"] == pytest.approx(3e-4, rel=0.05)


def test_analyze_non_audio_is_data_error(tmp_path):
    bogus = tmp_path / "a.wav"
    bogus.write_text("this is not a wav file")
    result = run(["analyze", str(bogus), "--key", "60", "--out", str(tmp_path)])
    assert result.exit_code == 2


def test_analyze_silent_is_numeric_error(tmp_path):
    wav = wavio.write(tmp_path / "s.wav", AudioBuffer(np.zeros(SR), SR))
    result = run(["analyze", str(wav), "--key", "60", "--out", str(tmp_path / "o")])
    assert result.exit_code == 3
    assert "missing partial m=1" in result.log


def test_fit_stage1_and_missing_velocity(tmp_path):
    for v in (60, 100):
        note_wav(tmp_path / f"C4_{v}.wav", velocity=v, seed=v)
    out = tmp_path / "fit.stn.json"
    result = run(["fit", str(tmp_path), "--key", "C4", "--velocities", "60,100", "--out", str(out),
                  "--stage", "1"])
    assert result.exit_code == 0, result.log
    bank = store.load(out)
    assert bank.velocities == [60, 100]
    for e in bank.entries:
        # the sixth partial decays into the noise floor within a few hundred ms
        assert e.B == pytest.approx(3e-4, rel=0.05)
        assert e.metadata["stages"] == ["inharmonicity"]
    assert (tmp_path / "fit.stn_v60_history.csv").is_file()
    missing = run(["fit", str(tmp_path), "--key", "C4", "--velocities", "60,70", "--out", str(out)])
    assert missing.exit_code == 2 and "60_70.wav" in missing.log


def test_render_duration_and_switches(tmp_path, model_file):
    out = tmp_path / "r.wav"
    assert run(["render", str(model_file), "--velocity", "80", "--duration", "10", "--out", str(out)]).exit_code == 0
    y = wavio.read(out)
    assert y.sample_rate == SR and len(y) == 240000
    plain = tmp_path / "h.wav"
    run(["render", str(model_file), "--duration", "1", "--out", str(plain), "--no-noise", "--no-transient"])
    model = store.interpolate(store.load(model_file), 80)
    ref = render_note(model, SR, ("harmonic",)).samples.astype(np.float32)
    np.testing.assert_array_equal(wavio.read(plain).samples, ref)


def test_render_unknown_key(tmp_path, model_file):
    result = run(["render", str(model_file), "--key", "D4", "--out", str(tmp_path / "x.wav")])
    assert result.exit_code == 2 and "not in model" in result.log


def test_render_corrupt_model(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{}")
    assert run(["render", str(bad), "--out", str(tmp_path / "x.wav")]).exit_code == 2


def test_loss_identical_files(tmp_path):
    wav = note_wav(tmp_path / "a.wav", seconds=1.0)
    report = tmp_path / "loss.csv"
    result = run(["loss", str(wav), str(wav), "--out", str(report)])
    assert result.exit_code == 0
    row = next(csv.DictReader(open(report)))
    assert float(row["stft_loss"]) == 0.0 and float(row["rms_loss"]) == 0.0


def test_trichord(tmp_path):
    paths = []
    for key, f in (("G3", 196.0), ("A#3", 233.08), ("D4", 293.66)):
        k = parse_key(key)
        m = make_note(F0=f, key_id=k, seed=k, H=20)
        paths.append(str(store.save(VelocityBank(k, (m,)), tmp_path / f"{key}.json")))
    out = tmp_path / "chord.wav"
    result = run(["trichord", *paths, "--keys", "G3", "A#3", "D4", "--velocities", "80", "80", "80",
                  "--duration", "1", "--out", str(out)])
    assert result.exit_code == 0
    y = wavio.read(out).samples
    assert len(y) == SR and np.max(np.abs(y)) <= 1.0


def test_bench_reports_factor(model_file):
    result = run(["bench", str(model_file), "--duration", "1"])
    assert result.exit_code == 0
    assert "real_time_factor=" in result.log
