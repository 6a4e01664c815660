"""Full-scale reference values for runs with pretrained models and face datasets.

These are comparison targets for optional large runs, not desk-scale gates.
Distances are mean ± std of the identity distance between source and output.
"""
from __future__ import annotations

from dataclasses import dataclass

MASK_DISTANCES = {  # region set -> (mean, std)
    "base": (1.25, 0.10),
    "eyes": (0.28, 0.08),
    "eyes+nose": (0.72, 0.14),
    "eyes+nose+mouth": (0.79, 0.14),
}
MASK_TOLERANCE = 0.15

METHOD_DISTANCES = {"FaceNet": (1.18, 0.08), "ArcFace": (1.35, 0.11), "CurricularFace": (1.29, 0.08)}
METHOD_TOLERANCE = 0.15

VERIFICATION_AUC = {"FaceNet": 0.6011, "ArcFace": 0.7127, "CurricularFace": 0.6805}
AUC_TOLERANCE = 0.08

VERIFICATION_ACCURACY = {"FaceNet": 0.5755, "ArcFace": 0.6599, "CurricularFace": 0.6325}

IDENTIFICATION_RANK = (1027.21, 25.68)


@dataclass(frozen=True)
class ReferenceCheck:
    name: str
    measured: float
    reference: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return abs(self.measured - self.reference) <= self.tolerance


def check(measured: dict, reference: dict, tolerance: float) -> list[ReferenceCheck]:
    """Compare measured means to reference means; keys missing from ``measured`` are skipped."""
    out = []
    for name, ref in reference.items():
        if name not in measured:
            continue
        ref_mean = ref[0] if isinstance(ref, tuple) else ref
        m = measured[name]
        out.append(ReferenceCheck(name, float(m[0] if isinstance(m, (tuple, list)) else m), ref_mean, tolerance))
    return out
