"""Reference FLOPs (G) / params (M) for RetinaNet R-50 at 640x640, and checks against them.

Ablation-table deltas are compared within 10%, absolute detector totals
within 5%.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

from .backbone import RESNET50
from .config import ABLATIONS, ablation_preset, fpg_config
from .cost import detector_cost, variant_cost_delta
from .graph import build_fpg, build_fpn

COMPONENT_ABLATION = {
    "full": (173.3, 104.5),
    "no_AD": (128.1, 83.3),
    "no_AU": (162.0, 83.3),
    "no_SU": (162.0, 83.3),
    "no_AS": (162.2, 101.5),
    "contracted": (136.0, 72.5),
}

SAME_UP_DESIGN = {
    "avgpool2": (128.1, 54.8),
    "maxpool2": (128.1, 54.8),
    "conv3_s2": (136.0, 72.5),
}

ACROSS_SKIP_DESIGN = {
    "identity": (133.0, 70.2),
    "conv1": (136.0, 72.5),
}

ACROSS_DOWN_DESIGN = {
    "intp": (109.3, 57.2),
    "intp_k1": (112.3, 58.9),
    "intp_k3": (136.0, 72.5),
}

RETINANET_TOTALS = {
    "FPN 1@256": (95.7, 37.8),
    "FPG 9@128": (95.9, 40.1),
    "FPG 9@256": (136.0, 72.5),
}

DELTA_TOLERANCE = 0.10
TOTAL_TOLERANCE = 0.05
HW = (640, 640)


@dataclass(frozen=True)
class Check:
    group: str
    name: str
    expected: float
    actual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return abs(self.actual - self.expected) <= self.tolerance * abs(self.expected) + 1e-12

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.group:<20} {self.name:<34} expected {self.expected:9.3f}  "
                f"got {self.actual:9.3f}  (tol {self.tolerance:.0%})")


def _gm(report) -> tuple[float, float]:
    return report.flops / 1e9, report.params / 1e6


def ablation_checks(hw=HW) -> list[Check]:
    got = {name: _gm(detector_cost(build_fpg(ablation_preset(name)), hw)) for name in ABLATIONS}
    checks = []
    for a, b in combinations(ABLATIONS, 2):
        for k, unit in enumerate(("GFLOPs", "Mparams")):
            exp = COMPONENT_ABLATION[a][k] - COMPONENT_ABLATION[b][k]
            checks.append(Check("ablation-delta", f"{a} - {b} {unit}", round(exp, 6),
                                got[a][k] - got[b][k], DELTA_TOLERANCE))
    return checks


def _variant(field: str, table: dict, pairs: list[tuple[str, str]], hw) -> list[Check]:
    base = fpg_config(9, 256)
    checks = []
    for hi, lo in pairs:
        df, dp = variant_cost_delta(base.replace(**{field: lo}), base.replace(**{field: hi}), hw)
        for k, (unit, val) in enumerate((("GFLOPs", df / 1e9), ("Mparams", dp / 1e6))):
            exp = round(table[hi][k] - table[lo][k], 6)
            checks.append(Check("operator-delta", f"{field} {hi} - {lo} {unit}", exp, val,
                                DELTA_TOLERANCE))
    return checks


def operator_checks(hw=HW) -> list[Check]:
    return (
        _variant("same_up_kind", SAME_UP_DESIGN, [("conv3_s2", "maxpool2"), ("maxpool2", "avgpool2")], hw)
        + _variant("across_skip_kind", ACROSS_SKIP_DESIGN, [("conv1", "identity")], hw)
        + _variant("across_down_kind", ACROSS_DOWN_DESIGN, [("intp_k1", "intp"), ("intp_k3", "intp_k1")], hw)
    )


def total_checks(hw=HW) -> list[Check]:
    graphs = {
        "FPN 1@256": build_fpn(256, backbone=RESNET50),
        "FPG 9@128": build_fpg(fpg_config(9, 128)),
        "FPG 9@256": build_fpg(fpg_config(9, 256)),
    }
    checks = []
    for name, graph in graphs.items():
        f, p = _gm(detector_cost(graph, hw))
        checks.append(Check("retinanet-total", f"{name} GFLOPs", RETINANET_TOTALS[name][0], f, TOTAL_TOLERANCE))
        checks.append(Check("retinanet-total", f"{name} Mparams", RETINANET_TOTALS[name][1], p, TOTAL_TOLERANCE))
    return checks


def all_checks(hw=HW) -> list[Check]:
    return ablation_checks(hw) + operator_checks(hw) + total_checks(hw)
