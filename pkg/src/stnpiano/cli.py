"""
Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or missing
inputs, malformed files), 3 numerical failure (estimation or divergence).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import store, wavio
from .analysis import (aggregate_B, estimate_B, estimate_partial_peaks, estimate_polarization_pairs, hpss_decompose,
                       key_to_f0, parse_key)
from .audio import MODEL_RATE, AudioBuffer, to_model_rate
from .errors import (DivergenceError, EstimationError, InvalidArgumentError, ModelLoadError,
                     WavFormatError)
from .fitting import STAGES, fit_note, init_from_analysis, write_history
from .losses import WINDOW_PRESETS, evaluate
from .noise import fresh_seed
from .optim import OptimizerConfig
from .store import VelocityBank
from .synth import COMPONENTS, render_note, render_trichord

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
DEFAULT_VELOCITIES = (45, 56, 67, 78, 89, 100, 111)


@dataclass
class CommandResult:
    exit_code: int = EXIT_OK
    artifacts: list = field(default_factory=list)
    log: str = ""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def _read_model_rate(path) -> AudioBuffer:
    return to_model_rate(wavio.read(path))


def cmd_analyze(wav_path, key_id: int, out_dir, margin: float = 8.0) -> CommandResult:
    """Peaks, pairwise B samples, B_init and the harmonic/transient components."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    x = _read_model_rate(wav_path)
    peaks = estimate_partial_peaks(x, key_to_f0(key_id))
    b = estimate_B(peaks)
    dec = hpss_decompose(x, margin)
    arts = [
        _write_csv(out / "peaks.csv", ["m", "frequency_hz", "magnitude_db"],
                   [[p.m, repr(p.frequency), repr(p.magnitude_db)] for p in peaks]),
        _write_csv(out / "b_samples.csv", ["B"], [[repr(float(v))] for v in b.B_samples]),
    ]
    (out / "b_init.json").write_text(json.dumps({"key_id": key_id, "B_init": b.B_mean,
                                                 "n_samples": len(b.B_samples), "discarded": b.discarded}))
    arts.append(out / "b_init.json")
    arts.append(wavio.write(out / "harmonic.wav", dec.harmonic))
    arts.append(wavio.write(out / "transient.wav", dec.transient))
    return CommandResult(EXIT_OK, arts, f"B_init={b.B_mean:.6g} from {len(b.B_samples)} samples")


def _velocity_file(wav_dir: Path, key_text: str, key_id: int, velocity: int) -> Path:
    for name in (f"{key_text}_{velocity}.wav", f"{key_id}_{velocity}.wav"):
        if (wav_dir / name).is_file():
            return wav_dir / name
    raise FileNotFoundError(f"missing input file {key_id}_{velocity}.wav in {wav_dir}")


def cmd_fit(wav_dir, key_text, velocities, out_model, stages=STAGES, config: OptimizerConfig | None = None,
            stage_epochs: dict | None = None, seed: int = 0) -> CommandResult:
    """Fit one model per velocity and store them as a velocity bank."""
    key_id = parse_key(key_text)
    wav_dir, out_model = Path(wav_dir), Path(out_model)
    config = config or OptimizerConfig(seed=seed)
    files = {v: _velocity_file(wav_dir, str(key_text), key_id, v) for v in velocities}
    F0_hint = key_to_f0(key_id)
    decomps, recordings, groups = {}, {}, []
    for v, path in files.items():
        x = _read_model_rate(path)
        recordings[v] = x
        decomps[v] = hpss_decompose(x)
        groups.append(estimate_B(estimate_partial_peaks(x, F0_hint)))
    B_init = aggregate_B(groups)
    entries, arts, log = [], [], []
    for v in sorted(velocities):
        init = init_from_analysis(recordings[v], key_id, v, F0_hint, B_init, seed=seed)
        try:
            pairs = (estimate_polarization_pairs(recordings[v], init.F0, init.B)
                     if "inharmonicity" in stages else None)
            model, history = fit_note(decomps[v], init, config, stages, stage_epochs, pairs=pairs)
        except DivergenceError as exc:
            raise DivergenceError(f"{exc.stage} (velocity {v})", exc.epoch, exc.loss, exc.initial) from None
        entries.append(model)
        arts.append(write_history(history, out_model.with_name(f"{out_model.stem}_v{v}_history.csv")))
        log.append(f"velocity {v}: B={model.B:.6g} delta_f={model.delta_f:.4g}")
    arts.insert(0, store.save(VelocityBank(key_id, tuple(entries)), out_model))
    return CommandResult(EXIT_OK, arts, "\n".join(log))


def _model_for(model_path, key_text, velocity):
    bank = store.load(model_path)
    if key_text is not None and parse_key(key_text) != bank.key_id:
        raise KeyError(f"key {key_text} not in model {model_path} (holds key {bank.key_id})")
    return store.interpolate(bank, velocity)


def cmd_render(model_path, key_text, velocity, duration_s, out_wav, phantoms=True, noise=True,
               transient=True, seed=None) -> CommandResult:
    model = _model_for(model_path, key_text, velocity)
    components = [c for c, on in zip(COMPONENTS, (True, transient, noise)) if on]
    n = int(round(duration_s * MODEL_RATE))
    y = render_note(model, n, components, phantoms, seed)
    return CommandResult(EXIT_OK, [wavio.write(out_wav, y)], f"{n} samples at {MODEL_RATE} Hz")


def cmd_loss(pred_wav, target_wav, preset="harmonic", out_csv=None) -> CommandResult:
    if preset not in WINDOW_PRESETS:
        raise InvalidArgumentError(f"unknown preset {preset!r}; choose from {sorted(WINDOW_PRESETS)}")
    pred, target = _read_model_rate(pred_wav), _read_model_rate(target_wav)
    report = evaluate(pred, target, WINDOW_PRESETS[preset])
    row = report.as_row()
    arts = []
    if out_csv:
        arts.append(_write_csv(Path(out_csv), list(row), [[repr(float(v)) for v in row.values()]]))
    log = " ".join(f"{k}={v:.6g}" for k, v in row.items())
    return CommandResult(EXIT_OK, arts, log)


def cmd_trichord(model_paths, keys, velocities, duration_s, out_wav, normalize=False, seed=None) -> CommandResult:
    if len(model_paths) != 3 or len(velocities) != 3:
        raise InvalidArgumentError("trichord needs three models and three velocities")
    keys = keys or [None] * 3
    models = [_model_for(p, k, v) for p, k, v in zip(model_paths, keys, velocities)]
    n = int(round(duration_s * MODEL_RATE))
    y = render_trichord(models, n, normalize=normalize, seed=seed)
    return CommandResult(EXIT_OK, [wavio.write(out_wav, y)], "uncoupled sum of three notes")


def cmd_bench(model_path, key_text=None, velocity=80, duration_s=10.0, repeats=3) -> CommandResult:
    model = _model_for(model_path, key_text, velocity)
    n = int(round(duration_s * MODEL_RATE))
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        render_note(model, n)
        best = min(best, time.perf_counter() - t0)
    rtf = duration_s / best
    return CommandResult(EXIT_OK, [], f"samples_per_second={n / best:.6g} real_time_factor={rtf:.4g} H={model.H}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stnpiano", description="Sines + transient + noise piano modelling.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", help="estimate peaks and B, separate components")
    a.add_argument("wav")
    a.add_argument("--key", required=True, help="MIDI number or note name (e.g. 60, C4, A#3)")
    a.add_argument("--out", required=True, help="output directory")
    a.add_argument("--margin", type=float, default=8.0)

    f = sub.add_parser("fit", help="fit a velocity bank from <key>_<velocity>.wav files")
    f.add_argument("wav_dir")
    f.add_argument("--key", required=True)
    f.add_argument("--velocities", default=",".join(map(str, DEFAULT_VELOCITIES)))
    f.add_argument("--out", required=True, help="model file (.stn.json)")
    f.add_argument("--stage", choices=["1", "2", "all"], default="all",
                   help="1: inharmonicity only; 2: damping only; all: every stage")
    f.add_argument("--epochs", type=int, default=None, help="cap on stage-2 epochs")
    f.add_argument("--seed", type=int, default=0)

    r = sub.add_parser("render", help="render a note to a float32 WAV")
    r.add_argument("model")
    r.add_argument("--key", default=None)
    r.add_argument("--velocity", type=float, default=80)
    r.add_argument("--duration", type=float, default=4.0, help="seconds")
    r.add_argument("--out", required=True)
    r.add_argument("--no-phantoms", action="store_true")
    r.add_argument("--no-noise", action="store_true")
    r.add_argument("--no-transient", action="store_true")
    r.add_argument("--seed", type=int, default=None, help="noise seed (default: stored seed)")
    r.add_argument("--fresh", action="store_true", help="draw a random noise seed")

    lo = sub.add_parser("loss", help="compare two WAV files")
    lo.add_argument("pred")
    lo.add_argument("target")
    lo.add_argument("--preset", default="harmonic", choices=sorted(WINDOW_PRESETS))
    lo.add_argument("--out", default=None, help="CSV report")

    t = sub.add_parser("trichord", help="uncoupled sum of three notes")
    t.add_argument("models", nargs=3)
    t.add_argument("--keys", nargs=3, default=None)
    t.add_argument("--velocities", nargs=3, type=float, default=[80, 80, 80])
    t.add_argument("--duration", type=float, default=4.0)
    t.add_argument("--out", required=True)
    t.add_argument("--normalize", action="store_true", help="peak-normalise before clipping")
    t.add_argument("--seed", type=int, default=None)

    b = sub.add_parser("bench", help="time a 10 s render")
    b.add_argument("model")
    b.add_argument("--key", default=None)
    b.add_argument("--velocity", type=float, default=80)
    b.add_argument("--duration", type=float, default=10.0)
    return p


def run(argv=None) -> CommandResult:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return CommandResult(EXIT_USAGE, [], str(exc))
    except SystemExit as exc:  # --help
        return CommandResult(EXIT_OK if not exc.code else EXIT_USAGE)
    try:
        if args.command == "analyze":
            return cmd_analyze(args.wav, parse_key(args.key), args.out, args.margin)
        if args.command == "fit":
            vel = [int(v) for v in args.velocities.split(",") if v.strip()]
            stages = {"1": ("inharmonicity",), "2": ("damping",), "all": STAGES}[args.stage]
            epochs = {"damping": args.epochs} if args.epochs is not None else None
            return cmd_fit(args.wav_dir, args.key, vel, args.out, stages, stage_epochs=epochs, seed=args.seed)
        if args.command == "render":
            seed = fresh_seed() if args.fresh else args.seed
            return cmd_render(args.model, args.key, args.velocity, args.duration, args.out,
                              not args.no_phantoms, not args.no_noise, not args.no_transient, seed)
        if args.command == "loss":
            return cmd_loss(args.pred, args.target, args.preset, args.out)
        if args.command == "trichord":
            return cmd_trichord(args.models, args.keys, args.velocities, args.duration, args.out,
                                args.normalize, args.seed)
        if args.command == "bench":
            return cmd_bench(args.model, args.key, args.velocity, args.duration)
    except (EstimationError, DivergenceError, FloatingPointError) as exc:
        return CommandResult(EXIT_NUMERIC, [], f"numerical failure: {exc}")
    except (WavFormatError, ModelLoadError, InvalidArgumentError, FileNotFoundError, KeyError,
            IsADirectoryError, PermissionError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        return CommandResult(EXIT_DATA, [], f"data error: {msg}")
    return CommandResult(EXIT_USAGE, [], f"unknown command {args.command}")


def main(argv=None) -> int:
    result = run(argv)
    stream = sys.stdout if result.exit_code == EXIT_OK else sys.stderr
    if result.log:
        print(result.log, file=stream)
    for path in result.artifacts:
        print(f"wrote {path}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
