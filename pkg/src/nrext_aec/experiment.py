"""Experiment grid over scenarios, input ratios, AEC lengths, designs and modes.

A run writes ``results.csv`` (one row per grid point plus mean/std rows over
scenarios), ``errors.csv`` for failed grid points, ``timings.csv`` with
wall-clock times and the resolved ``config.yaml``. Results are formatted
with fixed precision so reruns give identical bytes.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import yaml

from .metrics import MetricsEvaluator
from .pipelines import DESIGNS, MODES, prepare_front_end, run_aec
from .room_acoustics import RoomSpec, build_geometry, build_ir_bank
from .signals import (babble_like, default_far_end, read_wav, speech_like, synthesize_scenario,
                      write_wav)
from .stft import StftConfig

__all__ = [
    "ExperimentConfig",
    "ResultsTable",
    "RESULT_COLUMNS",
    "FIGURES",
    "OUTPUT_DIR_ENV",
    "load_config",
    "run_experiment",
    "read_results",
    "emit_figure_data",
    "build_scenario",
]

log = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "NREXT_AEC_OUTPUT_DIR"

RESULT_COLUMNS = ["scenario_id", "design", "mode", "snr_in_db", "ser_in_db", "lf",
                  "delta_snr_i", "delta_ser_i", "sd_i", "seed",
                  "std_delta_snr_i", "std_delta_ser_i", "std_sd_i"]
ERROR_COLUMNS = ["scenario_id", "design", "mode", "snr_in_db", "ser_in_db", "seed", "error"]
TIMING_COLUMNS = ["scenario_id", "design", "mode", "snr_in_db", "ser_in_db", "lf", "runtime_s"]
METRICS = ("delta_snr_i", "delta_ser_i", "sd_i")
FIGURES = ("nr_performance", "aec_converged", "aec_adaptive")

_GRID_DEFAULT = [-15.0, -7.5, 0.0, 7.5, 15.0]


# --- configuration ---------------------------------------------------------

@dataclass
class ScenarioBlock:
    count: int = 5
    seeds: list[int] | None = None

    def seed_list(self) -> list[int]:
        return list(self.seeds) if self.seeds is not None else list(range(self.count))


@dataclass
class GridBlock:
    snr_db: list[float] = field(default_factory=lambda: list(_GRID_DEFAULT))
    ser_db: list[float] = field(default_factory=lambda: list(_GRID_DEFAULT))
    lf: list[int] = field(default_factory=lambda: [128, 384, 640, 896, 1150])
    designs: list[str] = field(default_factory=lambda: list(DESIGNS))
    modes: list[str] = field(default_factory=lambda: ["converged"])


@dataclass
class StftBlock:
    window_size: int = 512


@dataclass
class NlmsBlock:
    step_size: float = 0.1
    regularization: float = 1e-6
    echo_path_length: int = 128


@dataclass
class GevdBlock:
    smoothing: float = 0.995
    full_regime: str = "desired"


@dataclass
class AudioBlock:
    """Source signals; ``None`` selects the built-in synthesizers.

    ``duration_s`` is the length of one activity cycle (near-end speech in
    the first half, far-end speech shifted by a quarter). Adaptive runs
    prepend ``adaptive_warmup_s`` of the repeated cycle and are measured on
    the final ``duration_s`` only.
    """

    duration_s: float = 10.0
    adaptive_warmup_s: float = 10.0
    ref_mic: int = 0
    far_end_snr_db: float = 0.0
    speech: str | None = None
    noise: str | None = None
    far_end: list[str] | None = None


@dataclass
class IoBlock:
    output_dir: str = "results"
    write_audio: bool = False


@dataclass
class ExperimentConfig:
    scenarios: ScenarioBlock = field(default_factory=ScenarioBlock)
    grid: GridBlock = field(default_factory=GridBlock)
    stft: StftBlock = field(default_factory=StftBlock)
    nlms: NlmsBlock = field(default_factory=NlmsBlock)
    gevd: GevdBlock = field(default_factory=GevdBlock)
    audio: AudioBlock = field(default_factory=AudioBlock)
    io: IoBlock = field(default_factory=IoBlock)
    workers: int = 1

    @classmethod
    def from_dict(cls, data: dict | None) -> "ExperimentConfig":
        data = dict(data or {})
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name not in data:
                continue
            value = data.pop(f.name)
            if f.name == "workers":
                kwargs[f.name] = int(value)
                continue
            block_cls = type(f.default_factory())
            value = dict(value or {})
            known = {g.name for g in dataclasses.fields(block_cls)}
            unknown = set(value) - known
            if unknown:
                raise ValueError(f"unknown key(s) in '{f.name}': {sorted(unknown)}")
            kwargs[f.name] = block_cls(**value)
        if data:
            raise ValueError(f"unknown config section(s): {sorted(data)}")
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self):
        g = self.grid
        for name in ("snr_db", "ser_db", "lf", "designs", "modes"):
            if not getattr(g, name):
                raise ValueError(f"grid.{name} must not be empty")
        if any(int(v) < 1 for v in g.lf):
            raise ValueError("grid.lf entries must be >= 1")
        for d in g.designs:
            if d not in DESIGNS:
                raise ValueError(f"unknown design {d!r}, expected one of {DESIGNS}")
        for m in g.modes:
            if m not in MODES:
                raise ValueError(f"unknown mode {m!r}, expected one of {MODES}")
        seeds = self.scenarios.seed_list()
        if not seeds:
            raise ValueError("at least one scenario is required")
        if self.scenarios.seeds is not None and len(seeds) != self.scenarios.count:
            raise ValueError("scenarios.seeds must list exactly scenarios.count seeds")
        if len(set(seeds)) != len(seeds):
            raise ValueError("scenario seeds must be distinct")
        if self.gevd.full_regime not in ("desired", "all"):
            raise ValueError("gevd.full_regime must be 'desired' or 'all'")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        paths = [self.audio.speech, self.audio.noise] + list(self.audio.far_end or [])
        for p in paths:
            if p is not None and not Path(p).is_file():
                raise FileNotFoundError(f"audio file not found: {p}")


def _parse_override(item: str) -> tuple[list[str], object]:
    if "=" not in item:
        raise ValueError(f"override {item!r} must look like section.key=value")
    key, raw = item.split("=", 1)
    return key.strip().split("."), yaml.safe_load(raw)


def load_config(path=None, overrides: list[str] | None = None) -> ExperimentConfig:
    """Read a YAML config (or the defaults) and apply ``section.key=value`` overrides.

    The output directory may also be overridden by the environment variable
    ``NREXT_AEC_OUTPUT_DIR``; an explicit override wins over both.
    """
    data = {}
    if path is not None:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    env_dir = os.environ.get(OUTPUT_DIR_ENV)
    if env_dir:
        data.setdefault("io", {})
        data["io"] = dict(data["io"] or {}, output_dir=env_dir)
    for item in overrides or []:
        keys, value = _parse_override(item)
        node = data
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ValueError(f"override {item!r} descends into a scalar")
        node[keys[-1]] = value
    return ExperimentConfig.from_dict(data)


# --- scenarios ---------------------------------------------------------------

def _subseed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, k]).generate_state(1)[0])


def _fit(x: np.ndarray, T: int) -> np.ndarray:
    if len(x) < T:
        x = np.tile(x, int(np.ceil(T / len(x))))
    return x[:T]


@lru_cache(maxsize=8)
def _sources(seed: int, cycle_s: float, total_s: float, n_loudspeakers: int, fs: int,
             speech: str | None, noise: str | None, far_end: tuple[str, ...] | None):
    T = int(round(total_s * fs))
    starts = np.arange(0.0, total_s, cycle_s)
    if speech is None:
        sp = speech_like(total_s, [(t, t + cycle_s / 2) for t in starts], fs, _subseed(seed, 1))
    else:
        sp = _fit(read_wav(speech, fs), T)
    bb = babble_like(total_s, fs, _subseed(seed, 2)) if noise is None else _fit(read_wav(noise, fs), T)
    if far_end is None:
        fe = default_far_end(n_loudspeakers, total_s, fs, _subseed(seed, 3),
                             offset_s=cycle_s / 4, period_s=cycle_s)
    else:
        if len(far_end) != n_loudspeakers:
            raise ValueError(f"need {n_loudspeakers} far-end files, got {len(far_end)}")
        fe = np.stack([_fit(read_wav(p, fs), T) for p in far_end])
    return sp, bb, fe


def build_scenario(cfg: ExperimentConfig, seed: int, snr_in_db: float, ser_in_db: float,
                   mode: str = "converged"):
    """Calibrated tracks, VAD, IR bank and evaluation mask for one grid point."""
    room = RoomSpec()
    geometry = build_geometry(seed, room)
    bank = build_ir_bank(room, geometry)
    a = cfg.audio
    total = a.duration_s + (a.adaptive_warmup_s if mode == "adaptive" else 0.0)
    far = tuple(a.far_end) if a.far_end else None
    sp, bb, fe = _sources(seed, a.duration_s, total, geometry.n_loudspeakers, room.sample_rate,
                          a.speech, a.noise, far)
    N = cfg.stft.window_size
    tracks, vad = synthesize_scenario(bank, sp, bb, _subseed(seed, 4), snr_in_db, ser_in_db,
                                      ref_mic=a.ref_mic, far_end_waves=fe,
                                      far_end_snr_db=a.far_end_snr_db, frame_size=N, hop=N // 2)
    eval_mask = np.zeros(tracks.length, bool)
    eval_mask[int(round((total - a.duration_s) * room.sample_rate)):] = True
    return tracks, vad, bank, eval_mask


# --- one grid unit -------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "nan" if np.isnan(v) else f"{v:.6f}"


def _run_unit(cfg_dict: dict, scenario_id: int, seed: int, snr: float, ser: float, mode: str):
    cfg = ExperimentConfig.from_dict(cfg_dict)
    rows, errors, timings, audio = [], [], [], []
    base = {"scenario_id": scenario_id, "mode": mode, "snr_in_db": snr, "ser_in_db": ser}
    try:
        tracks, vad, _, eval_mask = build_scenario(cfg, seed, snr, ser, mode)
    except Exception as exc:  # noqa: BLE001 - recorded, sweep continues
        for design in cfg.grid.designs:
            errors.append(dict(base, design=design, seed=seed, error=_describe(exc)))
        return rows, errors, timings, audio
    stft_cfg = StftConfig(cfg.stft.window_size)
    ev = MetricsEvaluator(tracks, vad, cfg.audio.ref_mic, eval_mask=eval_mask)
    for design in cfg.grid.designs:
        try:
            t0 = time.perf_counter()
            front = prepare_front_end(design, tracks, vad, stft_cfg, mode, cfg.audio.ref_mic,
                                      weight=cfg.gevd.smoothing, full_regime=cfg.gevd.full_regime,
                                      echo_path_length=cfg.nlms.echo_path_length)
            t_front = time.perf_counter() - t0
            delay = ev.find_delay(front.d_shadow["s"], 2 * front.delay + 2)
            snr_i, sd = ev.nr_stage(front.d_shadow, delay)
            for lf in cfg.grid.lf:
                t0 = time.perf_counter()
                out = run_aec(front, int(lf), cfg.nlms.step_size, cfg.nlms.regularization)
                runtime = t_front + time.perf_counter() - t0
                ser_i = ev.cascade(out.shadows, delay)
                rows.append(dict(base, design=design, lf=int(lf), delta_snr_i=snr_i,
                                 delta_ser_i=ser_i, sd_i=sd, seed=seed))
                timings.append(dict(base, design=design, lf=int(lf), runtime_s=runtime))
                if cfg.io.write_audio:
                    audio.append(_write_audio(cfg, dict(base, design=design, lf=int(lf), seed=seed), out))
        except Exception as exc:  # noqa: BLE001 - recorded, sweep continues
            log.warning("grid point failed: scenario %s %s %s SNR %s SER %s: %s",
                        scenario_id, design, mode, snr, ser, exc)
            errors.append(dict(base, design=design, seed=seed, error=_describe(exc)))
    return rows, errors, timings, audio


def _describe(exc: Exception) -> str:
    tb = traceback.extract_tb(exc.__traceback__)
    where = f" at {Path(tb[-1].filename).name}:{tb[-1].lineno}" if tb else ""
    return f"{type(exc).__name__}: {exc}{where}"


def _run_name(info: dict) -> str:
    return (f"s{info['scenario_id']}_{info['design']}_{info['mode']}_snr{info['snr_in_db']:g}"
            f"_ser{info['ser_in_db']:g}_lf{info['lf']}")


def _write_audio(cfg: ExperimentConfig, info: dict, out) -> dict:
    directory = Path(cfg.io.output_dir) / "audio" / _run_name(info)
    directory.mkdir(parents=True, exist_ok=True)
    write_wav(directory / "output.wav", out.s_hat_r)
    for name, x in out.shadows.items():
        write_wav(directory / f"shadow_{name}.wav", x)
    return dict(info, path=str(directory.relative_to(cfg.io.output_dir)))


# --- sweep -----------------------------------------------------------------------

@dataclass
class ResultsTable:
    """Per-scenario rows followed by mean rows (``scenario_id == "mean"``)."""

    rows: list[dict]
    aggregates: list[dict]
    errors: list[dict]
    path: Path | None = None

    def select(self, **criteria) -> list[dict]:
        return [r for r in self.rows if all(r[k] == v for k, v in criteria.items())]

    def mean(self, **criteria) -> dict | None:
        hits = [r for r in self.aggregates if all(r[k] == v for k, v in criteria.items())]
        return hits[0] if len(hits) == 1 else None


class _CsvSink:
    """Append-with-flush writer so completed rows survive a crash."""

    def __init__(self, path: Path, columns: list[str]):
        self.columns = columns
        self.fh = open(path, "w", newline="")
        self.writer = csv.DictWriter(self.fh, fieldnames=columns, lineterminator="\n")
        self.writer.writeheader()
        self.fh.flush()

    def write(self, row: dict):
        self.writer.writerow({c: _fmt(row[c]) if c in row and not isinstance(row[c], str) else row.get(c, "")
                              for c in self.columns})
        self.fh.flush()

    def close(self):
        self.fh.close()


def _aggregate(rows: list[dict]) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        key = (r["design"], r["mode"], r["snr_in_db"], r["ser_in_db"], r["lf"])
        groups.setdefault(key, []).append(r)
    out = []
    for (design, mode, snr, ser, lf), members in groups.items():
        agg = {"scenario_id": "mean", "design": design, "mode": mode, "snr_in_db": snr,
               "ser_in_db": ser, "lf": lf, "seed": ""}
        for m in METRICS:
            vals = np.array([r[m] for r in members], float)
            agg[m] = float(np.mean(vals))
            agg[f"std_{m}"] = float(np.std(vals))
        out.append(agg)
    return out


def run_experiment(cfg: ExperimentConfig, output_dir=None) -> ResultsTable:
    """Execute every grid point and write the CSV outputs.

    Grid points run in a pool of ``cfg.workers`` processes; rows are written
    in grid order by this process only.
    """
    out_dir = Path(output_dir or cfg.io.output_dir)
    cfg = dataclasses.replace(cfg, io=dataclasses.replace(cfg.io, output_dir=str(out_dir)))
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.yaml", "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)

    units = []
    for sid, seed in enumerate(cfg.scenarios.seed_list()):
        for snr in cfg.grid.snr_db:
            for ser in cfg.grid.ser_db:
                for mode in cfg.grid.modes:
                    units.append((sid, seed, float(snr), float(ser), mode))
    cfg_dict = cfg.to_dict()

    results = _CsvSink(out_dir / "results.csv", RESULT_COLUMNS)
    errors = _CsvSink(out_dir / "errors.csv", ERROR_COLUMNS)
    timings = _CsvSink(out_dir / "timings.csv", TIMING_COLUMNS)
    manifest = _CsvSink(out_dir / "audio_manifest.csv",
                        ["scenario_id", "design", "mode", "snr_in_db", "ser_in_db", "lf", "seed", "path"]) \
        if cfg.io.write_audio else None
    all_rows, all_errors = [], []
    args = [(cfg_dict,) + u for u in units]
    try:
        if cfg.workers > 1:
            pool = ProcessPoolExecutor(max_workers=cfg.workers)
            stream = pool.map(_run_unit, *zip(*args))
        else:
            pool = None
            stream = (_run_unit(*a) for a in args)
        for i, (rows, errs, times, audio) in enumerate(stream, 1):
            for r in rows:
                results.write(r)
            for e in errs:
                errors.write(e)
            for t in times:
                timings.write(t)
            for a in audio:
                manifest.write(a)
            all_rows += rows
            all_errors += errs
            log.info("grid unit %d/%d done", i, len(units))
        if pool is not None:
            pool.shutdown()
        aggregates = _aggregate(all_rows)
        for a in aggregates:
            results.write(a)
    finally:
        for sink in (results, errors, timings, manifest):
            if sink is not None:
                sink.close()
    return ResultsTable(rows=all_rows, aggregates=aggregates, errors=all_errors,
                        path=out_dir / "results.csv")


# --- figure data ------------------------------------------------------------------

def read_results(path) -> list[dict]:
    """Per-scenario rows of a results CSV with numeric fields parsed."""
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            if r["scenario_id"] == "mean":
                continue
            rows.append({"scenario_id": int(r["scenario_id"]), "design": r["design"],
                         "mode": r["mode"], "snr_in_db": float(r["snr_in_db"]),
                         "ser_in_db": float(r["ser_in_db"]), "lf": int(r["lf"]),
                         "delta_snr_i": float(r["delta_snr_i"]),
                         "delta_ser_i": float(r["delta_ser_i"]), "sd_i": float(r["sd_i"]),
                         "seed": int(r["seed"])})
    return rows


_FIGURE_COLUMNS = {
    "nr_performance": ["design", "snr_in_db", "ser_in_db", "mean_delta_snr_i", "std_delta_snr_i",
                       "mean_sd_i", "std_sd_i"],
    "aec_converged": ["design", "ser_in_db", "snr_in_db", "lf", "mean_delta_ser_i", "std_delta_ser_i"],
    "aec_adaptive": ["design", "ser_in_db", "snr_in_db", "lf", "mean_delta_ser_i", "std_delta_ser_i"],
}


def emit_figure_data(results, figure_id: str, path) -> Path:
    """Long-format mean/std table for one figure.

    ``results`` is a list of per-scenario rows or a results CSV path.
    ``nr_performance`` uses converged rows at one ``lf`` (the NR stage does
    not depend on it); the AEC figures keep every ``lf``.
    """
    if figure_id not in _FIGURE_COLUMNS:
        raise ValueError(f"unknown figure {figure_id!r}, expected one of {FIGURES}")
    if isinstance(results, (str, Path)):
        results = read_results(results)
    columns = _FIGURE_COLUMNS[figure_id]
    mode = "adaptive" if figure_id == "aec_adaptive" else "converged"
    rows = [r for r in results if r["mode"] == mode]
    groups: dict[tuple, list[dict]] = {}
    if figure_id == "nr_performance":
        for r in rows:
            groups.setdefault((r["design"], r["snr_in_db"], r["ser_in_db"]), []).append(r)
        # one lf per group: the smallest present
        for key, members in groups.items():
            lf0 = min(m["lf"] for m in members)
            groups[key] = [m for m in members if m["lf"] == lf0]
    else:
        for r in rows:
            groups.setdefault((r["design"], r["ser_in_db"], r["snr_in_db"], r["lf"]), []).append(r)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not groups:
        log.warning("no %s rows for figure %s; writing header only", mode, figure_id)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for key in sorted(groups):
            members = groups[key]
            if figure_id == "nr_performance":
                stats = []
                for m in ("delta_snr_i", "sd_i"):
                    v = np.array([r[m] for r in members])
                    stats += [np.mean(v), np.std(v)]
            else:
                v = np.array([r["delta_ser_i"] for r in members])
                stats = [np.mean(v), np.std(v)]
            writer.writerow([_fmt(k) if not isinstance(k, str) else k for k in key]
                            + [_fmt(s) for s in stats])
    return path
