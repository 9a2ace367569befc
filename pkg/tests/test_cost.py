import pytest

from fpgrid.backbone import RESNET50, RESNET101
from fpgrid.config import ArchConfig, ConfigError, ablation_preset, fpg_config
from fpgrid.cost import (
    CSV_HEADER,
    HeadSpec,
    backbone_cost,
    detector_cost,
    edge_cost,
    format_row,
    graph_cost,
    head_cost,
    op_cost,
    sweep,
    variant_cost_delta,
)
from fpgrid.graph import (
    IDENTITY,
    Edge,
    EdgeKind,
    NodeRef,
    build_fpg,
    build_fpn,
    conv_block,
    parameter_free,
)
from fpgrid.shapes import ShapeTable


def _resnet_params_by_hand(blocks, fc=True):
    total = 7 * 7 * 3 * 64 + 2 * 64
    cin = 64
    for n, out in zip(blocks, (256, 512, 1024, 2048)):
        mid = out // 4
        for b in range(n):
            total += cin * mid + 9 * mid * mid + mid * out + 2 * (2 * mid + out)
            if b == 0:
                total += cin * out + 2 * out
            cin = out
    if fc:
        total += 2048 * 1000 + 1000
    return total


class TestEdgeCost:
    def _edge(self, op, level=3):
        a, b = NodeRef(1, level, 256, "pyramid"), NodeRef(2, level, 256, "pyramid")
        return Edge(a, b, EdgeKind.ACROSS_SAME, op)

    def test_1x1_block(self):
        e = self._edge(conv_block(1, 1, 256, 256))
        shapes = ShapeTable((640, 640), {"P3^1": (256, 80, 80), "P3^2": (256, 80, 80)})
        assert edge_cost(e, shapes) == (419_430_400, 66_304)

    def test_identity_skip(self):
        e = self._edge(parameter_free(IDENTITY, 256))
        shapes = ShapeTable((640, 640), {"P3^1": (256, 80, 80), "P3^2": (256, 80, 80)})
        assert edge_cost(e, shapes) == (0, 0)
        assert edge_cost(e, shapes, count_elementwise=True) == (0, 0)

    def test_3x3_stride2(self):
        flops, _ = op_cost(conv_block(3, 2, 256, 256), (256, 80, 80))
        assert flops == 9 * 256 * 256 * 40 * 40 == 943_718_400

    def test_missing_shape(self):
        e = self._edge(conv_block(1, 1, 256, 256))
        with pytest.raises(KeyError):
            edge_cost(e, ShapeTable((640, 640), {"P3^1": (256, 80, 80)}))

    def test_elementwise_flag(self):
        plain = op_cost(conv_block(1, 1, 8, 8), (8, 4, 4))
        counted = op_cost(conv_block(1, 1, 8, 8), (8, 4, 4), count_elementwise=True)
        assert counted[1] == plain[1]
        assert counted[0] == plain[0] + 2 * 8 * 4 * 4


class TestBackbone:
    def test_resnet50_params_hand_oracle(self):
        with_fc = backbone_cost(RESNET50, include_fc=True).params
        assert with_fc == _resnet_params_by_hand((3, 4, 6, 3)) == 25_557_032
        assert abs(with_fc - 25.6e6) <= 0.01 * 25.6e6
        assert backbone_cost(RESNET50).params == _resnet_params_by_hand((3, 4, 6, 3), fc=False)

    def test_resnet50_flops_at_224(self):
        # torchvision ResNet-50 is the usual 4.09 GMAC reference at 224x224
        fl = backbone_cost(RESNET50, (224, 224), include_fc=True).flops
        assert abs(fl - 4.089e9) <= 0.005 * 4.089e9

    def test_resnet101_larger(self):
        assert backbone_cost(RESNET101).params > backbone_cost(RESNET50).params
        assert backbone_cost(RESNET101, include_fc=True).params == _resnet_params_by_hand((3, 4, 23, 3))

    def test_area_scaling(self):
        a = backbone_cost(RESNET50, (640, 640)).flops
        b = backbone_cost(RESNET50, (1280, 832)).flops
        assert b * 640 * 640 == a * 1280 * 832


class TestHead:
    def test_zero_levels(self):
        rep = head_cost(HeadSpec(), [])
        assert rep.flops == 0
        assert rep.params == head_cost(HeadSpec(), [(256, 5, 5)]).params

    def test_param_formula(self):
        rep = head_cost(HeadSpec(), [(256, 10, 10)])
        per = {i.name: i.params for i in rep.items}
        assert per["cls.pred"] == 9 * 256 * 720 + 720
        assert per["reg.pred"] == 9 * 256 * 36 + 36
        assert per["cls.tower0"] == 9 * 256 * 256 + 256

    def test_doubling(self):
        small = head_cost(HeadSpec(), [(256, 10, 10), (256, 5, 5)])
        big = head_cost(HeadSpec(), [(256, 20, 20), (256, 10, 10)])
        assert big.flops == 4 * small.flops and big.params == small.params

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            head_cost(HeadSpec(), [(128, 10, 10)])

    def test_narrow_pyramid_feeds_head(self):
        rep = detector_cost(build_fpg(fpg_config(9, 128)))
        tower0 = next(i for i in rep.items if i.name == "cls.tower0")
        assert tower0.params == 9 * 128 * 256 + 256

    def test_rcnn_has_no_head(self):
        rep = detector_cost(build_fpg(fpg_config(2, 32, "rcnn")))
        assert rep.subtotal("head") == (0, 0)


class TestGraphCost:
    def test_additive(self):
        g = build_fpg(ablation_preset("contracted"))
        rep = graph_cost(g, (640, 640))
        by_kind = rep.by_kind()
        assert sum(f for f, _ in by_kind.values()) == rep.flops
        assert sum(p for _, p in by_kind.values()) == rep.params
        total = detector_cost(g)
        assert total.flops == sum(total.subtotal(c)[0] for c in ("backbone", "pyramid", "head"))

    def test_removed_edges_account_for_delta(self):
        full = graph_cost(build_fpg(ablation_preset("full")), (640, 640))
        no_ad = graph_cost(build_fpg(ablation_preset("no_AD")), (640, 640))
        ad = full.by_kind()[EdgeKind.ACROSS_DOWN.value]
        assert (full.flops - no_ad.flops, full.params - no_ad.params) == ad

    def test_elementwise_sums(self):
        g = build_fpg(ArchConfig(num_pathways=2, width=8))
        rep = graph_cost(g, (128, 128), count_elementwise=True)
        assert rep.by_kind()["Sum"][0] > 0
        assert rep.params == graph_cost(g, (128, 128)).params

    def test_fpn_magnitude(self):
        rep = graph_cost(build_fpn(256), (640, 640))
        laterals = sum(c * 256 + 256 for c in (512, 1024, 2048))
        outputs = 3 * (9 * 256 * 256 + 256)
        p6 = 9 * 2048 * 256 + 256
        p7 = 9 * 256 * 256 + 256
        assert rep.params == laterals + outputs + p6 + p7


class TestVariantDelta:
    def test_sign_and_zero(self):
        base = fpg_config(2, 16)
        df, dp = variant_cost_delta(base.replace(same_up_kind="maxpool2"), base)
        assert df > 0 and dp > 0
        assert variant_cost_delta(base, base) == (0, 0)

    def test_pool_variants_equal(self):
        base = fpg_config(2, 16)
        assert variant_cost_delta(base.replace(same_up_kind="avgpool2"),
                                  base.replace(same_up_kind="maxpool2")) == (0, 0)

    def test_rejects_other_differences(self):
        base = fpg_config(2, 16)
        with pytest.raises(ConfigError):
            variant_cost_delta(base, base.replace(width=32))
        with pytest.raises(ConfigError):
            variant_cost_delta(base, base.replace(same_up_kind="maxpool2", across_skip_kind="identity"))


class TestSweep:
    def test_rows_and_monotonicity(self):
        rows = sweep([3, 5, 7, 9], [128, 256])
        assert len(rows) == 8
        assert [r["flops"] for r in rows] == sorted(r["flops"] for r in rows)
        cell = {(r["pathways"], r["width"]): r for r in rows}
        for w in (128, 256):
            seq = [cell[p, w]["flops"] for p in (3, 5, 7, 9)]
            assert all(a < b for a, b in zip(seq, seq[1:]))
        for p in (3, 5, 7, 9):
            assert cell[p, 128]["flops"] < cell[p, 256]["flops"]
            assert cell[p, 128]["params"] < cell[p, 256]["params"]

    def test_row_format(self):
        row = sweep([9], [256])[0]
        out = format_row(row)
        assert len(out) == len(CSV_HEADER)
        assert out[:5] == ["9", "256", "retinanet", "640", "640"]
        assert all(len(v.split(".")[1]) == 3 for v in out[5:])

    def test_empty(self):
        with pytest.raises(ValueError):
            sweep([], [128])

    def test_matches_fpg_config(self):
        row = sweep([9], [128])[0]
        assert row["flops"] == detector_cost(build_fpg(fpg_config(9, 128))).flops
