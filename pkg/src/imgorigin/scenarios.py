"""Evaluation scenarios: confusion counts over labeled probe sets.

A scenario pits belonging probes (fresh generations of the target model,
optionally pushed through a mild pixel filter) against non-belonging
probes from a named contrast source:

* ``vs_training_data``: images the target model was trained on.
* ``vs_unseen_data``: fresh draws from the training data's generator.
* ``vs_other_architecture``: outputs of a different architecture trained
  on the same data.
* ``vs_other_dataset``: outputs of the same architecture trained on
  different data.
* ``vs_overlapping_dataset``: outputs of a model whose training set
  shares a fraction of images with the target's.
* ``calibration_ablation``: the same probes decided twice, with and
  without reference calibration (two sub-reports).
* ``metric_ablation``: the same probes decided once per distance metric
  (one sub-report per metric).
* ``adaptive_filter``: belonging probes are post-processed with
  clamp((gain*x + bias)^gamma) before attribution.

Codebook targets use the exactness decision rule (belonging iff the best
reconstruction loss is below 1e-12) instead of the outlier test, since
their self-losses are exactly zero and have no spread to normalize by.

Probe construction, per-probe inversion seeds, and output order are all
derived from the scenario seed by index, so reports and verdict logs are
byte-identical across worker counts. Wall-clock measurements are kept in
a separate timing file for the same reason.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attribution import (
    UNCALIBRATED_ID,
    AttributionVerdict,
    calibrate,
    ensure_distribution,
    invert_for,
    verdict_from_losses,
)
from .datasets import Dataset
from .exceptions import MissingArtifactError
from .inversion import InversionConfig
from .metrics import METRICS
from .models import GridModel, ModelInput, sample_inputs
from .tensorio import Rng, derive_seed
from .validation import check_unit_range

__all__ = [
    "EXACT_BELONGING_THRESHOLD",
    "SCENARIOS",
    "ConfusionReport",
    "FilterParams",
    "Scenario",
    "ScenarioResult",
    "apply_filter",
    "emit_report",
    "read_report",
    "run_scenario",
]

SCENARIOS = (
    "vs_training_data",
    "vs_unseen_data",
    "vs_other_architecture",
    "vs_other_dataset",
    "vs_overlapping_dataset",
    "calibration_ablation",
    "metric_ablation",
    "adaptive_filter",
)

_DATASET_CONTRAST = {
    "vs_training_data",
    "vs_unseen_data",
    "calibration_ablation",
    "metric_ablation",
    "adaptive_filter",
}
_MODEL_CONTRAST = {
    "vs_other_architecture",
    "vs_other_dataset",
    "vs_overlapping_dataset",
}

EXACT_BELONGING_THRESHOLD = 1e-12

# probe-stream namespaces under the scenario seed
_NS_BELONGING = 10
_NS_NONBELONGING = 11
_NS_PROBE_CFG = 12

REPORT_NAME = "report.json"
VERDICTS_NAME = "verdicts.jsonl"
TIMING_NAME = "timing.json"

CSV_HEADER = "scenario,tp,fp,fn,tn,acc,mean_ms"


@dataclass(frozen=True)
class FilterParams:
    gain: float = 1.08
    bias: float = 0.02
    gamma: float = 1.15

    def __post_init__(self):
        if self.gain <= 0 or self.gamma <= 0:
            raise ValueError("gain and gamma must be positive")


def apply_filter(x, params: FilterParams) -> np.ndarray:
    """clamp((gain*x + bias)^gamma, 0, 1), elementwise on a [0,1] image."""
    arr = np.asarray(x, dtype=np.float64)
    check_unit_range(arr, "image")
    y = np.maximum(params.gain * arr + params.bias, 0.0) ** params.gamma
    return np.clip(y, 0.0, 1.0)


@dataclass(frozen=True)
class ConfusionReport:
    """Counts for one decision rule; belonging is the positive class."""

    scenario: str
    tp: int
    fp: int
    fn: int
    tn: int
    mean_ms: float = 0.0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def acc(self) -> float:
        return (self.tp + self.tn) / self.total

    def to_json_dict(self, *, with_timing: bool = True) -> dict:
        out = {
            "scenario": self.scenario,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "tn": self.tn,
            "acc": self.acc,
        }
        if with_timing:
            out["mean_ms"] = self.mean_ms
        return out


@dataclass
class Scenario:
    name: str
    target_model: object = None
    reference_model: object = None
    contrast_dataset: Dataset | None = None
    contrast_model: object = None
    n_belonging: int = 100
    n_nonbelonging: int = 100
    n_distribution: int = 100
    metric: str = "mse"
    alpha: float = 0.05
    inversion: InversionConfig = field(default_factory=InversionConfig)
    seed: int = 0
    distribution_seed: int = 0
    filter_params: FilterParams | None = None

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.name!r}, expected one of {SCENARIOS}")


@dataclass
class ScenarioResult:
    scenario: str
    reports: list
    verdicts: list  # (variant, AttributionVerdict) pairs, probe-major order
    per_probe_ms: list

    @property
    def report(self) -> ConfusionReport:
        return self.reports[0]


def _belonging_probes(s: Scenario):
    model = s.target_model
    if isinstance(model, GridModel):
        inputs = [ModelInput(i % model.size) for i in range(s.n_belonging)]
    else:
        inputs = sample_inputs(model, s.n_belonging, Rng(s.seed).child(_NS_BELONGING))
    images = [model.forward(inp) for inp in inputs]
    if s.name == "adaptive_filter":
        params = s.filter_params or FilterParams()
        images = [apply_filter(img, params) for img in images]
    return images


def _nonbelonging_probes(s: Scenario):
    if s.name in _DATASET_CONTRAST:
        ds = s.contrast_dataset
        if ds is None:
            raise MissingArtifactError(
                f"scenario {s.name} needs a contrast dataset"
            )
        if ds.count < s.n_nonbelonging:
            raise ValueError(
                f"contrast dataset has {ds.count} images, need {s.n_nonbelonging}"
            )
        idx = Rng(s.seed).child(_NS_NONBELONGING).permutation(ds.count)[: s.n_nonbelonging]
        return [ds.images[i].astype(np.float64) for i in idx]
    model = s.contrast_model
    if model is None:
        raise MissingArtifactError(f"scenario {s.name} needs a contrast model")
    inputs = sample_inputs(model, s.n_nonbelonging, Rng(s.seed).child(_NS_NONBELONGING))
    return [model.forward(inp) for inp in inputs]


def _exact_verdict(model, x, metric, examined_id) -> AttributionVerdict:
    res = invert_for(model, x, metric, InversionConfig())
    belonging = res.best_loss < EXACT_BELONGING_THRESHOLD
    return AttributionVerdict(
        examined_id=examined_id,
        model_id=model.model_id,
        reference_id=UNCALIBRATED_ID,
        metric=metric,
        raw_loss=res.best_loss,
        reference_loss=None,
        calibrated_loss=calibrate(res.best_loss, 1.0),
        z_score=None,
        threshold=EXACT_BELONGING_THRESHOLD,
        decision="belonging" if belonging else "non-belonging",
        config={"rule": "exact-zero"},
    )


def run_scenario(
    s: Scenario, *, cache_dir=None, out_dir=None, workers: int = 1
) -> ScenarioResult:
    """Execute a scenario and (optionally) write its artifacts.

    Writes ``report.json`` and ``verdicts.jsonl`` (deterministic) plus
    ``timing.json`` (measured wall times) into ``out_dir`` when given.
    """
    probes = [("belonging", img, True) for img in _belonging_probes(s)]
    probes += [("foreign", img, False) for img in _nonbelonging_probes(s)]
    ids = [f"{kind}-{i:03d}" for i, (kind, _, _) in enumerate(probes)]

    exact = isinstance(s.target_model, GridModel)
    if exact:
        variants = [("exact", None, None)]
    elif s.name == "calibration_ablation":
        if s.reference_model is None:
            raise MissingArtifactError("calibration_ablation needs a reference model")
        dist_cal = ensure_distribution(
            s.target_model, s.reference_model, s.metric,
            s.inversion.with_seed(s.distribution_seed),
            n=s.n_distribution, alpha=s.alpha, workers=workers, cache_dir=cache_dir,
        )
        dist_raw = ensure_distribution(
            s.target_model, None, s.metric,
            s.inversion.with_seed(s.distribution_seed),
            n=s.n_distribution, alpha=s.alpha, workers=workers, cache_dir=cache_dir,
        )
        variants = [("calibrated", s.metric, dist_cal), ("uncalibrated", s.metric, dist_raw)]
    elif s.name == "metric_ablation":
        variants = []
        for metric in METRICS:
            dist = ensure_distribution(
                s.target_model, s.reference_model, metric,
                s.inversion.with_seed(s.distribution_seed),
                n=s.n_distribution, alpha=s.alpha, workers=workers, cache_dir=cache_dir,
            )
            variants.append((metric, metric, dist))
    else:
        dist = ensure_distribution(
            s.target_model, s.reference_model, s.metric,
            s.inversion.with_seed(s.distribution_seed),
            n=s.n_distribution, alpha=s.alpha, workers=workers, cache_dir=cache_dir,
        )
        variants = [("default", s.metric, dist)]

    needs_reference = any(
        v[2] is not None and v[2].reference_id != UNCALIBRATED_ID for v in variants
    )

    def run_probe(i: int):
        _, img, _ = probes[i]
        t0 = time.perf_counter()
        if exact:
            out = [("exact", _exact_verdict(s.target_model, img, s.metric, ids[i]))]
            return out, (time.perf_counter() - t0) * 1e3
        cfg = s.inversion.with_seed(derive_seed(s.seed, _NS_PROBE_CFG, i))
        # One raw/reference inversion per metric, shared across variants.
        raw_by_metric: dict = {}
        ref_by_metric: dict = {}
        for _, metric, _ in variants:
            if metric not in raw_by_metric:
                raw_by_metric[metric] = invert_for(
                    s.target_model, img, metric, cfg
                ).best_loss
                if needs_reference:
                    ref_by_metric[metric] = invert_for(
                        s.reference_model, img, metric,
                        cfg.with_seed(derive_seed(s.seed, _NS_PROBE_CFG, i, 1)),
                    ).best_loss
        out = []
        for variant, metric, dist in variants:
            ref_loss = (
                ref_by_metric[metric]
                if dist.reference_id != UNCALIBRATED_ID
                else None
            )
            out.append(
                (variant, verdict_from_losses(raw_by_metric[metric], ref_loss, dist, cfg, examined_id=ids[i]))
            )
        return out, (time.perf_counter() - t0) * 1e3

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_probe, range(len(probes))))
    else:
        outcomes = [run_probe(i) for i in range(len(probes))]

    per_probe_ms = [ms for _, ms in outcomes]
    mean_ms = float(np.mean(per_probe_ms)) if per_probe_ms else 0.0

    variant_names = [v[0] for v in variants]
    counts = {name: {"tp": 0, "fp": 0, "fn": 0, "tn": 0} for name in variant_names}
    verdicts = []
    for i, (probe_verdicts, _) in enumerate(outcomes):
        truth = probes[i][2]
        for variant, verdict in probe_verdicts:
            verdicts.append((variant, verdict))
            c = counts[variant]
            if verdict.is_belonging:
                c["tp" if truth else "fp"] += 1
            else:
                c["fn" if truth else "tn"] += 1

    reports = []
    for name in variant_names:
        label = s.name if len(variant_names) == 1 else f"{s.name}[{name}]"
        reports.append(ConfusionReport(scenario=label, mean_ms=mean_ms, **counts[name]))

    result = ScenarioResult(s.name, reports, verdicts, per_probe_ms)
    if out_dir is not None:
        _write_artifacts(result, Path(out_dir))
    return result


def _write_artifacts(result: ScenarioResult, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    report_doc = {
        "scenario": result.scenario,
        "reports": [r.to_json_dict(with_timing=False) for r in result.reports],
    }
    with open(out_dir / REPORT_NAME, "w") as fh:
        json.dump(report_doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out_dir / VERDICTS_NAME, "w") as fh:
        for variant, verdict in result.verdicts:
            line = {"variant": variant}
            line.update(verdict.to_json_dict())
            fh.write(json.dumps(line, sort_keys=True))
            fh.write("\n")
    timing = {
        "mean_ms": float(np.mean(result.per_probe_ms)) if result.per_probe_ms else 0.0,
        "per_probe_ms": result.per_probe_ms,
    }
    with open(out_dir / TIMING_NAME, "w") as fh:
        json.dump(timing, fh, indent=2)
        fh.write("\n")


def load_scenario_reports(out_dir) -> list[ConfusionReport]:
    """Rebuild ConfusionReports from a scenario output directory."""
    out_dir = Path(out_dir)
    report_path = out_dir / REPORT_NAME
    if not report_path.is_file():
        raise MissingArtifactError(f"scenario report not found: {report_path}")
    with open(report_path) as fh:
        doc = json.load(fh)
    timing_path = out_dir / TIMING_NAME
    mean_ms = 0.0
    if timing_path.is_file():
        with open(timing_path) as fh:
            mean_ms = float(json.load(fh).get("mean_ms", 0.0))
    return [
        ConfusionReport(
            scenario=r["scenario"], tp=r["tp"], fp=r["fp"], fn=r["fn"], tn=r["tn"],
            mean_ms=mean_ms,
        )
        for r in doc["reports"]
    ]


def emit_report(reports, fmt: str, path=None) -> str:
    """Render confusion reports as ``csv`` or ``json``; write when given a path."""
    if fmt == "csv":
        lines = [CSV_HEADER]
        for r in reports:
            lines.append(
                f"{r.scenario},{r.tp},{r.fp},{r.fn},{r.tn},{r.acc:.3f},{r.mean_ms:.3f}"
            )
        text = "\n".join(lines) + "\n"
    elif fmt == "json":
        text = json.dumps([r.to_json_dict() for r in reports], indent=2) + "\n"
    else:
        raise ValueError(f"unknown report format {fmt!r}, expected 'csv' or 'json'")
    if path is not None:
        Path(path).write_text(text)
    return text


def read_report(path) -> list[ConfusionReport]:
    """Parse a report file written by emit_report (csv or json)."""
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"report file not found: {path}")
    text = path.read_text()
    if path.suffix == ".json" or text.lstrip().startswith("["):
        rows = json.loads(text)
        return [
            ConfusionReport(
                scenario=r["scenario"], tp=r["tp"], fp=r["fp"], fn=r["fn"], tn=r["tn"],
                mean_ms=r.get("mean_ms", 0.0),
            )
            for r in rows
        ]
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if lines[0] != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {lines[0]!r}")
    out = []
    for ln in lines[1:]:
        scenario, tp, fp, fn, tn, _acc, mean_ms = ln.split(",")
        out.append(
            ConfusionReport(
                scenario=scenario, tp=int(tp), fp=int(fp), fn=int(fn), tn=int(tn),
                mean_ms=float(mean_ms),
            )
        )
    return out
