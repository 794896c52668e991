import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from odapt.boxes import Box, BoxPrediction, detector_loss, greedy_match, iou, iou_matrix, match_boxes

RASTER = 1000


def raster_interval_count(lo: float, hi: float) -> int:
    """Number of 1/RASTER cells whose centers land in [lo, hi]."""
    import math as m

    first = m.ceil(lo * RASTER - 0.5)
    last = m.floor(hi * RASTER - 0.5)
    return max(0, last - first + 1)


def raster_iou(a: Box, b: Box) -> float:
    """Counting oracle: cell centers inside intersection vs union."""
    na = raster_interval_count(a.x1, a.x2) * raster_interval_count(a.y1, a.y2)
    nb = raster_interval_count(b.x1, b.x2) * raster_interval_count(b.y1, b.y2)
    ix1, ix2 = max(a.x1, b.x1), min(a.x2, b.x2)
    iy1, iy2 = max(a.y1, b.y1), min(a.y2, b.y2)
    ni = 0
    if ix2 > ix1 and iy2 > iy1:
        ni = raster_interval_count(ix1, ix2) * raster_interval_count(iy1, iy2)
    union = na + nb - ni
    return ni / union if union else 0.0


def raster_iou_grid(a: Box, b: Box) -> float:
    """Literal boolean-grid version of the counting oracle."""
    centers = (np.arange(RASTER) + 0.5) / RASTER
    def mask(box):
        mx = (centers >= box.x1) & (centers <= box.x2)
        my = (centers >= box.y1) & (centers <= box.y2)
        return my[:, None] & mx[None, :]
    ma, mb = mask(a), mask(b)
    union = (ma | mb).sum()
    return (ma & mb).sum() / union if union else 0.0


def random_box(rng, min_size=0.02):
    x1, y1 = rng.uniform(0, 1 - min_size, 2)
    w = rng.uniform(min_size, 1 - x1)
    h = rng.uniform(min_size, 1 - y1)
    return Box(x1, y1, x1 + w, y1 + h)


def random_lattice_box(rng, min_cells=5):
    """Corners on the 1/RASTER lattice, where cell counting is exact."""
    x1 = int(rng.integers(0, RASTER - min_cells))
    y1 = int(rng.integers(0, RASTER - min_cells))
    x2 = int(rng.integers(x1 + min_cells, RASTER + 1))
    y2 = int(rng.integers(y1 + min_cells, RASTER + 1))
    return Box(x1 / RASTER, y1 / RASTER, x2 / RASTER, y2 / RASTER)


def jittered_box(box, rng, scale=0.1):
    d = rng.uniform(-scale, scale, 4)
    x1 = min(max(box.x1 + d[0], 0.0), 0.97)
    y1 = min(max(box.y1 + d[1], 0.0), 0.97)
    x2 = max(min(box.x2 + d[2], 1.0), x1 + 0.02)
    y2 = max(min(box.y2 + d[3], 1.0), y1 + 0.02)
    return Box(x1, y1, x2, y2)


class TestIou:
    def test_identity(self):
        b = Box(0.1, 0.1, 0.5, 0.5)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(Box(0, 0, 0.2, 0.2), Box(0.5, 0.5, 0.9, 0.9)) == 0.0

    def test_quarter_overlap_closed_form(self):
        # intersection 0.25^2 = 0.0625, union 2*0.25 - 0.0625 = 0.4375
        got = iou(Box(0, 0, 0.5, 0.5), Box(0.25, 0.25, 0.75, 0.75))
        assert got == pytest.approx(1 / 7, abs=1e-12)
        assert raster_iou_grid(Box(0, 0, 0.5, 0.5), Box(0.25, 0.25, 0.75, 0.75)) == pytest.approx(
            1 / 7, abs=1e-3
        )

    def test_against_grid_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            a = random_lattice_box(rng)
            b = random_lattice_box(rng)
            assert iou(a, b) == pytest.approx(raster_iou_grid(a, b), abs=1e-3)

    def test_against_counting_oracle_10k(self):
        # On-lattice corners make the 1000x1000 cell count exact, so this
        # pins the analytic formula itself; off-lattice corners quantize at
        # ~1/(1000*min_side) and are enveloped separately below.
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(10_000):
            a = random_lattice_box(rng)
            if rng.uniform() < 0.5:
                d = rng.integers(-60, 61, 4)
                b = Box(
                    min(max(a.x1 + d[0] / RASTER, 0.0), 0.9),
                    min(max(a.y1 + d[1] / RASTER, 0.0), 0.9),
                    max(min(a.x2 + d[2] / RASTER, 1.0), min(a.x1 + d[0] / RASTER, 0.9) + 5 / RASTER),
                    max(min(a.y2 + d[3] / RASTER, 1.0), min(a.y1 + d[1] / RASTER, 0.9) + 5 / RASTER),
                )
            else:
                b = random_lattice_box(rng)
            worst = max(worst, abs(iou(a, b) - raster_iou(a, b)))
        assert worst <= 1e-3

    def test_off_lattice_quantization_envelope(self):
        rng = np.random.default_rng(17)
        worst = 0.0
        for _ in range(300):
            a = random_box(rng, min_size=0.05)
            b = jittered_box(a, rng) if rng.uniform() < 0.5 else random_box(rng, min_size=0.05)
            worst = max(worst, abs(iou(a, b) - raster_iou(a, b)))
        assert worst <= 0.05

    def test_counting_oracles_agree(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            a, b = random_box(rng), random_box(rng)
            assert raster_iou(a, b) == pytest.approx(raster_iou_grid(a, b), abs=1e-12)

    @given(
        x1=st.floats(0, 0.9), y1=st.floats(0, 0.9),
        w1=st.floats(0.02, 0.5), h1=st.floats(0.02, 0.5),
        x2=st.floats(0, 0.9), y2=st.floats(0, 0.9),
        w2=st.floats(0.02, 0.5), h2=st.floats(0.02, 0.5),
    )
    @settings(max_examples=200, deadline=None)
    def test_properties(self, x1, y1, w1, h1, x2, y2, w2, h2):
        a = Box(x1, y1, min(1.0, x1 + w1), min(1.0, y1 + h1))
        b = Box(x2, y2, min(1.0, x2 + w2), min(1.0, y2 + h2))
        v = iou(a, b)
        assert 0.0 <= v <= 1.0
        assert v == iou(b, a)
        assert iou(a, a) == 1.0

    def test_iou_matrix_matches_scalar(self):
        rng = np.random.default_rng(3)
        boxes_a = [random_box(rng) for _ in range(5)]
        boxes_b = [random_box(rng) for _ in range(3)]
        grid = iou_matrix(
            torch.tensor([b.as_array() for b in boxes_a]),
            torch.tensor([b.as_array() for b in boxes_b]),
        )
        for i, a in enumerate(boxes_a):
            for j, b in enumerate(boxes_b):
                assert float(grid[i, j]) == pytest.approx(iou(a, b), abs=1e-12)


class TestMatching:
    def preds(self, boxes, logit=5.0):
        return [BoxPrediction(b, logit) for b in boxes]

    def test_empty_gts(self):
        rng = np.random.default_rng(0)
        mr = match_boxes(self.preds([random_box(rng) for _ in range(4)]), [])
        assert mr.indicators == (False,) * 4
        assert mr.assignment == (None,) * 4

    def test_exact_match_identity(self):
        rng = np.random.default_rng(1)
        boxes = [random_box(rng) for _ in range(4)]
        mr = match_boxes(self.preds(boxes), boxes)
        assert mr.indicators == (True,) * 4
        assert mr.assignment == (0, 1, 2, 3)

    def test_duplicate_gt_tiebreak(self):
        g = Box(0.1, 0.1, 0.3, 0.3)
        gts = [g, g]
        preds = self.preds([g, g, Box(0.6, 0.6, 0.7, 0.7), Box(0.5, 0.1, 0.6, 0.2)])
        mr = match_boxes(preds, gts, 0.5)
        assert mr.indicators == (True, True, False, False)
        assert mr.assignment == (0, 1, None, None)

    def test_too_many_gts_rejected(self):
        rng = np.random.default_rng(2)
        boxes = [random_box(rng) for _ in range(4)]
        with pytest.raises(ValueError, match="at most 4"):
            match_boxes(self.preds(boxes), [random_box(rng) for _ in range(5)])

    def test_wrong_pred_count_rejected(self):
        rng = np.random.default_rng(2)
        with pytest.raises(ValueError, match="exactly 4"):
            match_boxes(self.preds([random_box(rng) for _ in range(3)]), [])

    @given(seed=st.integers(0, 10_000), thr=st.floats(0.1, 0.9))
    @settings(max_examples=150, deadline=None)
    def test_matching_invariants(self, seed, thr):
        rng = np.random.default_rng(seed)
        preds = [random_box(rng) for _ in range(4)]
        gts = [jittered_box(preds[i], rng) for i in range(int(rng.integers(0, 5)))]
        mr = match_boxes(self.preds(preds), gts, thr)
        assigned = [a for a in mr.assignment if a is not None]
        assert len(assigned) == len(set(assigned))  # no gt used twice
        for j, (ind, a) in enumerate(zip(mr.indicators, mr.assignment)):
            assert ind == (a is not None)
            if ind:
                assert iou(preds[j], gts[a]) >= thr

    def test_greedy_prefers_higher_iou(self):
        grid = np.array([[0.9, 0.2], [0.8, 0.85], [0.0, 0.0], [0.0, 0.0]])
        indicators, assignment = greedy_match(grid, 0.5)
        assert assignment[0] == 0 and assignment[1] == 1
        assert indicators == [True, True, False, False]


def frame_tensors(pred_boxes, logits):
    pb = torch.tensor(pred_boxes, dtype=torch.float64).reshape(1, 4, 4)
    pl = torch.tensor(logits, dtype=torch.float64).reshape(1, 4)
    return pb, pl


class TestDetectorLoss:
    def test_no_gt_zero_logits_closed_form(self):
        pb = torch.tensor([[[0.1, 0.1, 0.2, 0.2]] * 4], dtype=torch.float64)
        pl = torch.zeros(1, 4, dtype=torch.float64)
        loss = detector_loss(pb, pl, [[]])
        assert float(loss) == pytest.approx(4 * math.log(2), abs=1e-12)

    def test_saturated_correct_is_tiny(self):
        gts = [Box(0.1, 0.1, 0.3, 0.3), Box(0.5, 0.5, 0.8, 0.8)]
        pb = torch.tensor(
            [[[0.1, 0.1, 0.3, 0.3], [0.5, 0.5, 0.8, 0.8], [0.0, 0.0, 0.05, 0.05], [0.9, 0.9, 1.0, 1.0]]],
            dtype=torch.float64,
        )
        pl = torch.tensor([[20.0, 20.0, -20.0, -20.0]], dtype=torch.float64)
        assert float(detector_loss(pb, pl, [gts])) < 1e-6

    def test_matched_l1_closed_form(self):
        gt = Box(0.2, 0.2, 0.8, 0.8)
        pred = [0.3, 0.3, 0.9, 0.9]  # each coordinate off by 0.1, IoU 0.25/0.47 > 0.5
        pb = torch.tensor(
            [[pred, [0.0, 0.0, 0.05, 0.05], [0.9, 0.0, 0.95, 0.05], [0.0, 0.9, 0.05, 0.95]]],
            dtype=torch.float64,
        )
        pl = torch.tensor([[20.0, -20.0, -20.0, -20.0]], dtype=torch.float64)
        loss = float(detector_loss(pb, pl, [[gt]]))
        assert loss == pytest.approx(0.4, abs=1e-6)

    def test_bce_only_when_no_indicator(self):
        rng = np.random.default_rng(5)
        pb = torch.tensor([[random_box(rng).as_array() for _ in range(4)]], dtype=torch.float64)
        pl = torch.tensor([[0.3, -0.7, 1.2, 0.0]], dtype=torch.float64)
        gts = [[Box(0.001, 0.001, 0.004, 0.004)]]  # overlaps nothing
        expected = float(
            torch.nn.functional.binary_cross_entropy_with_logits(
                pl, torch.zeros_like(pl), reduction="sum"
            )
        )
        assert float(detector_loss(pb, pl, gts)) == pytest.approx(expected, abs=1e-12)

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(9)
        for _ in range(25):
            pb = torch.tensor([[random_box(rng).as_array() for _ in range(4)] for _ in range(3)])
            pl = torch.tensor(rng.normal(0, 2, (3, 4)))
            gts = [[random_box(rng) for _ in range(int(rng.integers(0, 5)))] for _ in range(3)]
            assert float(detector_loss(pb, pl, gts)) >= 0.0

    def test_non_finite_rejected(self):
        pb = torch.full((1, 4, 4), float("nan"), dtype=torch.float64)
        pl = torch.zeros(1, 4, dtype=torch.float64)
        with pytest.raises(ValueError, match="non-finite"):
            detector_loss(pb, pl, [[]])

    def _grad_setup(self):
        # Two frames: matched pairs with clear margins plus far-away slots.
        pred = torch.tensor(
            [
                [[0.11, 0.12, 0.31, 0.33], [0.52, 0.5, 0.81, 0.79], [0.02, 0.8, 0.12, 0.9], [0.85, 0.05, 0.95, 0.15]],
                [[0.42, 0.41, 0.62, 0.63], [0.05, 0.5, 0.15, 0.62], [0.7, 0.7, 0.8, 0.8], [0.2, 0.05, 0.3, 0.15]],
            ],
            dtype=torch.float64,
        )
        logits = torch.tensor([[1.1, -0.4, 0.3, -1.2], [0.8, 0.2, -0.6, 0.4]], dtype=torch.float64)
        gts = [
            [Box(0.1, 0.1, 0.3, 0.3), Box(0.5, 0.5, 0.8, 0.8)],
            [Box(0.4, 0.4, 0.6, 0.6)],
        ]
        return pred, logits, gts

    def test_gradient_matches_finite_differences(self):
        pred, logits, gts = self._grad_setup()
        pred = pred.clone().requires_grad_(True)
        logits = logits.clone().requires_grad_(True)
        loss = detector_loss(pred, logits, gts)
        loss.backward()

        eps = 1e-5
        for tensor, grad in ((logits, logits.grad), (pred, pred.grad)):
            flat = tensor.detach().reshape(-1)
            gflat = grad.reshape(-1)
            for k in range(flat.numel()):
                shift = torch.zeros_like(flat)
                shift[k] = eps
                up = detector_loss(
                    (flat + shift).reshape(tensor.shape) if tensor is pred else pred.detach(),
                    (flat + shift).reshape(tensor.shape) if tensor is logits else logits.detach(),
                    gts,
                )
                dn = detector_loss(
                    (flat - shift).reshape(tensor.shape) if tensor is pred else pred.detach(),
                    (flat - shift).reshape(tensor.shape) if tensor is logits else logits.detach(),
                    gts,
                )
                fd = float(up - dn) / (2 * eps)
                auto = float(gflat[k])
                if fd == 0.0 and auto == 0.0:
                    continue
                assert abs(auto - fd) <= 1e-4 * max(1.0, abs(fd)), f"k={k}: {auto} vs {fd}"

    def test_unmatched_box_gradient_exactly_zero(self):
        pred, logits, gts = self._grad_setup()
        pred = pred.clone().requires_grad_(True)
        loss = detector_loss(pred, logits, gts)
        loss.backward()
        # frame 0 slots 2,3 and frame 1 slots 1,2,3 are unmatched
        for f, j in [(0, 2), (0, 3), (1, 1), (1, 2), (1, 3)]:
            assert torch.all(pred.grad[f, j] == 0.0)
        for f, j in [(0, 0), (0, 1), (1, 0)]:
            assert torch.any(pred.grad[f, j] != 0.0)

    def test_confidence_monotonicity(self):
        pred, logits, gts = self._grad_setup()
        base = float(detector_loss(pred, logits, gts))
        up_matched = logits.clone()
        up_matched[0, 0] += 0.5  # matched slot: more confidence, less loss
        assert float(detector_loss(pred, up_matched, gts)) < base
        up_unmatched = logits.clone()
        up_unmatched[0, 2] += 0.5  # unmatched slot: more confidence, more loss
        assert float(detector_loss(pred, up_unmatched, gts)) > base
