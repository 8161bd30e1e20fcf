"""Automated evaluation: identity preservation, condition separation, fidelity.

All metrics are pixel-space or spectrum-space proxies computable without any
pretrained network: identity = cycle reconstruction error, separation = mean
pairwise L1 between outputs under different conditions, fidelity = texture
classifier accuracy on generated outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .errors import DomainError, FormatError
from .spectra import TextureClassifier


@dataclass
class EvalReport:
    occupations: list[str]
    identity: dict[str, float]
    separation: np.ndarray
    fidelity: dict[str, float] | None
    metadata: dict[str, str] = field(default_factory=dict)

    def mean_separation(self) -> float:
        n = len(self.occupations)
        if n < 2:
            return 0.0
        off_diag = self.separation[~np.eye(n, dtype=bool)]
        return float(off_diag.mean())

    def __eq__(self, other):
        if not isinstance(other, EvalReport):
            return NotImplemented
        return (
            self.occupations == other.occupations
            and self.identity == other.identity
            and np.array_equal(self.separation, other.separation)
            and self.fidelity == other.fidelity
            and self.metadata == other.metadata
        )


def _outputs_per_condition(gen_fn, young: list[np.ndarray], conditions: int):
    """gen_fn(image (3,H,W), p) -> (3,H,W); cache all outputs once."""
    return {
        p: [np.asarray(gen_fn(img, p)) for img in young]
        for p in range(1, conditions + 1)
    }


def identity_scores(gen_fn, rec_fn, young: list[np.ndarray], conditions: int) -> dict[int, float]:
    """Per-condition mean |decoder(generator(y, p)) - y| over the eval set."""
    if not young:
        raise DomainError("evaluation set is empty")
    scores = {}
    for p in range(1, conditions + 1):
        errs = [
            float(np.abs(np.asarray(rec_fn(np.asarray(gen_fn(img, p)))) - img).mean())
            for img in young
        ]
        scores[p] = float(np.mean(errs))
    return scores


def separation_matrix(outputs: dict[int, list[np.ndarray]]) -> np.ndarray:
    """Symmetric zero-diagonal matrix of mean pairwise output distances."""
    conditions = sorted(outputs)
    n = len(conditions)
    matrix = np.zeros((n, n), dtype=np.float64)
    for i, p in enumerate(conditions):
        for j, q in enumerate(conditions):
            if j <= i:
                continue
            dists = [
                float(np.abs(a - b).mean())
                for a, b in zip(outputs[p], outputs[q])
            ]
            matrix[i, j] = matrix[j, i] = float(np.mean(dists))
    return matrix.astype(np.float32)


def condition_fidelity(
    outputs: dict[int, list[np.ndarray]], classifier: TextureClassifier
) -> dict[int, float]:
    """Classifier accuracy on each condition's generated outputs."""
    accs = {p: classifier.accuracy(imgs, p) for p, imgs in outputs.items()}
    accs[0] = float(np.mean([accs[p] for p in outputs]))  # overall under key 0
    return accs


def evaluate_networks(
    gen_params,
    dec_params,
    young: list[np.ndarray],
    conditions: int,
    occupation_names: list[str],
    classifier: TextureClassifier | None = None,
    metadata: dict[str, str] | None = None,
) -> EvalReport:
    """Full report for one parameter set over an in-memory eval pool."""
    from .networks import generate, reconstruct  # local import avoids a cycle

    def gen_fn(img, p):
        return generate(gen_params, Tensor(img[None]), p).data[0]

    def rec_fn(img):
        return reconstruct(dec_params, Tensor(img[None])).data[0]

    outputs = _outputs_per_condition(gen_fn, young, conditions)
    identity = identity_scores(gen_fn, rec_fn, young, conditions)
    separation = separation_matrix(outputs)
    fidelity = condition_fidelity(outputs, classifier) if classifier else None
    finite = np.isfinite(separation).all() and all(np.isfinite(v) for v in identity.values())
    if not finite:
        raise DomainError("evaluation produced non-finite scores")
    names = occupation_names or [f"occ{p}" for p in range(1, conditions + 1)]
    return EvalReport(
        occupations=list(names),
        identity={names[p - 1]: identity[p] for p in identity},
        separation=separation,
        fidelity=(
            {(names[p - 1] if p else "overall"): v for p, v in fidelity.items()}
            if fidelity
            else None
        ),
        metadata=dict(metadata or {}),
    )


# ---------------------------------------------------------------------------
# Report serialization (line-based, round-trippable)
# ---------------------------------------------------------------------------


def write_report(report: EvalReport, path: Path | str) -> None:
    lines = ["format report.v1"]
    lines.append("occupations " + " ".join(report.occupations))
    for key in sorted(report.metadata):
        lines.append(f"meta {key} = {report.metadata[key]}")
    for name in report.occupations:
        lines.append(f"identity {name} = {report.identity[name]!r}")
    n = len(report.occupations)
    for i in range(n):
        for j in range(i + 1, n):
            lines.append(
                f"separation {report.occupations[i]} {report.occupations[j]} = "
                f"{float(report.separation[i, j])!r}"
            )
    if report.fidelity is not None:
        for key in [*report.occupations, "overall"]:
            lines.append(f"fidelity {key} = {report.fidelity[key]!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_report(path: Path | str) -> EvalReport:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"report file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != "format report.v1":
        raise FormatError(f"{path}: not a recognized report file")
    occupations: list[str] = []
    identity: dict[str, float] = {}
    fidelity: dict[str, float] = {}
    metadata: dict[str, str] = {}
    sep_values: dict[tuple[str, str], float] = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        kind, rest = line.split(" ", 1)
        if kind == "occupations":
            occupations = rest.split()
        elif kind == "meta":
            key, value = rest.split(" = ", 1)
            metadata[key] = value
        elif kind == "identity":
            name, value = rest.split(" = ")
            identity[name] = float(value)
        elif kind == "separation":
            pair, value = rest.split(" = ")
            a, b = pair.split(" ")
            sep_values[(a, b)] = float(value)
        elif kind == "fidelity":
            name, value = rest.split(" = ")
            fidelity[name] = float(value)
        else:
            raise FormatError(f"{path} line {lineno}: unknown record '{kind}'")
    n = len(occupations)
    separation = np.zeros((n, n), dtype=np.float32)
    for (a, b), value in sep_values.items():
        i, j = occupations.index(a), occupations.index(b)
        separation[i, j] = separation[j, i] = np.float32(value)
    return EvalReport(
        occupations=occupations,
        identity=identity,
        separation=separation,
        fidelity=fidelity or None,
        metadata=metadata,
    )

def human_summary(report: EvalReport) -> str:
    """Short plain-text digest of a report."""
    lines = ["evaluation summary", "------------------"]
    for name in report.occupations:
        parts = [f"identity L1 {report.identity[name]:.4f}"]
        if report.fidelity:
            parts.append(f"fidelity {report.fidelity[name]:.1%}")
        lines.append(f"  {name}: " + ", ".join(parts))
    lines.append(f"  mean condition separation: {report.mean_separation():.4f}")
    if report.fidelity:
        lines.append(f"  overall fidelity: {report.fidelity['overall']:.1%}")
    return "\n".join(lines)
