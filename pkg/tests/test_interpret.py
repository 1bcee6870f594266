import numpy as np
import torch

from helpers import tiny_model_config
from shapefm import ShapeModel, extract_subsequences, generate_motif_dataset
from shapefm.interpret import build_explain_record, score_heatmap


def make_model(num_classes=None):
    torch.manual_seed(0)
    return ShapeModel(tiny_model_config(), num_classes=num_classes)


class TestExplainRecord:
    def test_spans_have_scale_width(self):
        model = make_model()
        x = np.random.default_rng(0).normal(size=64)
        record = build_explain_record(model, x, sample_index=3, true_class=1)
        assert record.sample_index == 3
        assert record.true_class == 1
        for scale in record.scales:
            for start, end in scale.spans:
                assert end - start + 1 == scale.window

    def test_spans_match_subsequence_extraction(self):
        model = make_model()
        x = np.random.default_rng(1).normal(size=64)
        record = build_explain_record(model, x, 0)
        for scale in record.scales:
            _, spans = extract_subsequences(torch.tensor(x), scale.window, scale.stride)
            assert [list(s) for s in scale.spans] == spans.tolist()

    def test_scores_exclude_class_token_slot(self):
        model = make_model()
        x = np.random.default_rng(2).normal(size=64)
        record = build_explain_record(model, x, 0)
        assert [len(s.scores) for s in record.scales] == [4, 8, 16]
        assert all(0.0 < v < 1.0 for s in record.scales for v in s.scores)

    def test_predicted_class_requires_head(self):
        x = np.random.default_rng(3).normal(size=64)
        assert build_explain_record(make_model(), x, 0).predicted_class is None
        with_head = build_explain_record(make_model(num_classes=3), x, 0)
        assert with_head.predicted_class in (0, 1, 2)

    def test_json_serializable(self):
        import json

        model = make_model(num_classes=2)
        x = np.random.default_rng(4).normal(size=64)
        record = build_explain_record(model, x, 5, true_class=0)
        payload = json.dumps(record.to_dict())
        assert '"sample_index": 5' in payload


class TestScoreHeatmap:
    def test_full_coverage_at_finest_scale(self):
        model = make_model()
        ds = generate_motif_dataset(1, (10, 20), 0.1, seed=0, target_length=64)
        record = build_explain_record(model, ds.samples[0].values, 0)
        heat = score_heatmap(record, 64)
        assert heat.shape == (3, 64)
        # stride equals window at every scale, so every step is covered
        assert (heat > 0).all()

    def test_cell_is_max_over_covering_windows(self):
        model = make_model()
        x = np.random.default_rng(5).normal(size=64)
        record = build_explain_record(model, x, 0)
        heat = score_heatmap(record, 64)
        finest = record.scales[-1]
        for (start, end), score in zip(finest.spans, finest.scores):
            np.testing.assert_allclose(heat[-1, start : end + 1], score)

    def test_uncovered_steps_are_zero(self):
        from shapefm.interpret import ExplainRecord, ScaleAttention

        record = ExplainRecord(
            sample_index=0,
            predicted_class=None,
            true_class=None,
            scales=[ScaleAttention(window=4, stride=4, spans=[(0, 3)], scores=[0.5])],
        )
        heat = score_heatmap(record, 10)
        assert (heat[0, 4:] == 0).all()
        assert (heat[0, :4] == 0.5).all()
