"""CSV/JSON artifact readers and writers with fixed formatting.

Floats are written with 6 decimals and rows in canonical order so reruns
produce byte-identical files.
"""
from __future__ import annotations

import csv
import io
import json
import os
from pathlib import Path
from typing import Iterable, Sequence

from .adaptation import AdaptationSample, ComparisonRecord, MatchCurves
from .instructions import Instruction, parse, render

SCRATCH = "scratch"
SAMPLE_COLUMNS = ("base_instruction", "transfer_instruction", "n_steps", "success_rate", "seed")
CURVE_COLUMNS = ("base_instruction", "transfer_instruction", "step", "rolling_success")
DATASET_COLUMNS = ("z_x", "z_i", "z_j", "label")
PREDICTION_COLUMNS = ("z_x", "z_i", "z_j", "probability", "label", "correct")


def fmt(x: float) -> str:
    return f"{x:.6f}"


def _base_name(s: AdaptationSample) -> str:
    return SCRATCH if s.base_instruction is None else render(s.base_instruction)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write atomically: a temp file in the same directory, then rename."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    write_text(path, buf.getvalue())


def write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_json(path, obj) -> None:
    write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_samples(path, samples: Sequence[AdaptationSample]) -> None:
    rows = [
        (_base_name(s), render(s.transfer_instruction), s.n_steps, fmt(s.success_rate), s.seed)
        for s in sorted(samples, key=lambda s: s.sort_key)
    ]
    write_csv(path, SAMPLE_COLUMNS, rows)


def write_curves(path, samples: Sequence[AdaptationSample]) -> None:
    rows = [
        (_base_name(s), render(s.transfer_instruction), step, fmt(value))
        for s in sorted(samples, key=lambda s: s.sort_key)
        for step, value in s.curve
    ]
    write_csv(path, CURVE_COLUMNS, rows)


def _instr_or_none(text: str):
    return None if text == SCRATCH else parse(text)


def read_samples(samples_path, curves_path=None) -> list[AdaptationSample]:
    curves: dict[tuple[str, str], list] = {}
    if curves_path is not None and Path(curves_path).exists():
        for row in read_csv(curves_path):
            curves.setdefault((row["base_instruction"], row["transfer_instruction"]), []).append(
                (int(row["step"]), float(row["rolling_success"]))
            )
    out = []
    for row in read_csv(samples_path):
        key = (row["base_instruction"], row["transfer_instruction"])
        out.append(
            AdaptationSample(
                base_instruction=_instr_or_none(row["base_instruction"]),
                transfer_instruction=parse(row["transfer_instruction"]),
                n_steps=int(row["n_steps"]),
                success_rate=float(row["success_rate"]),
                curve=curves.get(key, []),
                seed=int(row["seed"]),
            )
        )
    return out


def write_dataset(path, records: Sequence[ComparisonRecord]) -> None:
    write_csv(path, DATASET_COLUMNS, [(render(r.z_x), render(r.z_i), render(r.z_j), r.label) for r in records])


def read_dataset(path) -> list[ComparisonRecord]:
    return [
        ComparisonRecord(parse(r["z_x"]), parse(r["z_i"]), parse(r["z_j"]), int(r["label"]))
        for r in read_csv(path)
    ]


def write_predictions(path, preds) -> None:
    rows = [
        (render(r.z_x), render(r.z_i), render(r.z_j), fmt(p), r.label, int(ok))
        for r, p, ok in preds
    ]
    write_csv(path, PREDICTION_COLUMNS, rows)


def sample_to_json(s: AdaptationSample) -> dict:
    return {
        "base_instruction": _base_name(s),
        "transfer_instruction": render(s.transfer_instruction),
        "n_steps": s.n_steps,
        "success_rate": s.success_rate,
        "curve": [[t, v] for t, v in s.curve],
        "seed": s.seed,
    }


def sample_from_json(d: dict) -> AdaptationSample:
    return AdaptationSample(
        base_instruction=_instr_or_none(d["base_instruction"]),
        transfer_instruction=parse(d["transfer_instruction"]),
        n_steps=d["n_steps"],
        success_rate=d["success_rate"],
        curve=[(int(t), float(v)) for t, v in d["curve"]],
        seed=d["seed"],
    )


def write_match_curves(path, mc: MatchCurves) -> None:
    series = {"match": mc.match, "differ": mc.differ, "overall": mc.overall, "scratch": mc.scratch}
    header = ("step",) + tuple(series)
    rows = []
    for i, step in enumerate(mc.steps):
        rows.append((step,) + tuple("" if v is None else fmt(v[i]) for v in series.values()))
    write_csv(path, header, rows)
