import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

import published as results
from oracles import dense_pauc, harmonic, pair_count_auc
from sepasd.errors import UndefinedMetric
from sepasd.metrics import (
    ClassMetrics,
    EvalReport,
    ScoredClip,
    auc,
    domain_auc,
    evaluate,
    harmonic_mean,
    omega,
    partial_auc,
    pauc,
    read_scores,
    render_report,
    roc_auc,
)


def clips(normal, anomalous, machine="fan", domain="source"):
    out = [ScoredClip(f"n{i}", machine, domain, "normal", s) for i, s in enumerate(normal)]
    return out + [ScoredClip(f"a{i}", machine, domain, "anomalous", s) for i, s in enumerate(anomalous)]


score_lists = st.lists(st.integers(-5, 5).map(float), min_size=1, max_size=15)


class TestAuc:
    def test_perfect_and_inverted(self):
        assert auc(clips([0.2, 0.1], [0.9, 0.8])) == 1.0
        assert auc(clips([0.9], [0.2])) == 0.0

    def test_pair_count_with_a_tie(self, rng):
        s = rng.standard_normal(10)
        s[7] = s[2]
        normal, anom = list(s[:5]), list(s[5:])
        twice, pairs = pair_count_auc(normal, anom)
        assert auc(clips(normal, anom)) == twice / (2 * pairs)

    def test_one_class(self):
        with pytest.raises(UndefinedMetric):
            auc(clips([0.1, 0.2], []))

    @settings(max_examples=80, deadline=None)
    @given(normal=score_lists, anomalous=score_lists)
    def test_matches_oracle(self, normal, anomalous):
        twice, pairs = pair_count_auc(normal, anomalous)
        assert roc_auc(normal, anomalous) == twice / (2 * pairs)

    @settings(max_examples=50, deadline=None)
    @given(normal=score_lists, anomalous=score_lists)
    def test_monotone_transform(self, normal, anomalous):
        f = lambda v: np.exp(np.asarray(v) / 3) * 7 - 1  # noqa: E731
        assert roc_auc(f(normal), f(anomalous)) == roc_auc(normal, anomalous)

    @settings(max_examples=50, deadline=None)
    @given(data=st.lists(st.floats(-100, 100), min_size=2, max_size=20, unique=True), split=st.integers(1, 19))
    def test_label_flip(self, data, split):
        assume(split < len(data))
        normal, anom = data[:split], data[split:]
        assert roc_auc(anom, normal) == pytest.approx(1 - roc_auc(normal, anom), abs=1e-15)


class TestPauc:
    def test_perfect(self):
        assert pauc(clips([0.1, 0.2, 0.3], [0.8, 0.9])) == 1.0

    def test_all_equal_is_chance(self):
        assert pauc(clips([0.5] * 7, [0.5] * 4)) == pytest.approx(0.5, abs=1e-15)

    def test_dense_oracle_on_twelve(self, rng):
        s = np.round(rng.standard_normal(12), 1)
        assert partial_auc(s[:7], s[7:]) == pytest.approx(dense_pauc(list(s[:7]), list(s[7:])), abs=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(normal=score_lists, anomalous=score_lists, max_fpr=st.sampled_from([0.05, 0.1, 0.3, 1.0]))
    def test_matches_oracle(self, normal, anomalous, max_fpr):
        assert partial_auc(normal, anomalous, max_fpr) == pytest.approx(
            dense_pauc(normal, anomalous, max_fpr), abs=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(normal=score_lists, anomalous=score_lists)
    def test_full_range_is_auc(self, normal, anomalous):
        assert partial_auc(normal, anomalous, 1.0) == pytest.approx(roc_auc(normal, anomalous), abs=1e-12)

    @pytest.mark.parametrize("bad", [0.0, -0.1, 1.5])
    def test_bad_max_fpr(self, bad):
        with pytest.raises(ValueError):
            partial_auc([0.0], [1.0], bad)


class TestDomainAuc:
    def test_single_domain_equals_auc(self, rng):
        c = clips(list(rng.standard_normal(6)), list(rng.standard_normal(5)))
        assert domain_auc(c, "source") == auc(c)

    def test_split_convention(self):
        c = (clips([0.0, 0.1], [], domain="source") + clips([0.9, 2.0], [], domain="target")
             + clips([], [1.0, 1.5], domain="source") + clips([], [1.2], domain="target"))
        assert domain_auc(c, "source") == 1.0
        assert domain_auc(c, "target") < 1.0

    def test_random_against_oracle(self, rng):
        doms = rng.choice(["source", "target"], 20)
        labs = rng.choice(["normal", "anomalous"], 20)
        labs[:2] = ["normal", "anomalous"]
        doms[:2] = ["source", "target"]
        scores = np.round(rng.standard_normal(20), 1)
        c = [ScoredClip(str(i), "fan", d, l, s) for i, (d, l, s) in enumerate(zip(doms, labs, scores))]
        for dom in ("source", "target"):
            normal = [x.score for x in c if x.label == "normal" and x.domain == dom]
            anom = [x.score for x in c if x.label == "anomalous"]
            if normal:
                twice, pairs = pair_count_auc(normal, anom)
                assert domain_auc(c, dom) == twice / (2 * pairs)

    def test_missing_domain_normals(self):
        with pytest.raises(UndefinedMetric, match="target"):
            domain_auc(clips([0.1], [0.9]), "target")


class TestOmega:
    def test_equal_values(self):
        assert omega([0.6] * 21) == pytest.approx(0.6, rel=1e-15)

    def test_two_values(self):
        assert harmonic_mean([0.4, 0.6]) == pytest.approx(0.48, rel=1e-15)

    @pytest.mark.parametrize("system", sorted(results.SYSTEMS))
    def test_published_table(self, system):
        published = results.SYSTEMS[system][3]
        got = 100 * omega(results.class_metrics(system))
        assert abs(got - published) <= 0.1
        assert got == pytest.approx(harmonic([v for row in results.SYSTEMS[system][:3] for v in row]), rel=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=30))
    def test_bounded_by_arithmetic_mean(self, values):
        assert omega(values) <= np.mean(values) * (1 + 1e-12)

    def test_rejects_non_positive(self):
        with pytest.raises(ValueError):
            omega([0.5, 0.0])
        with pytest.raises(ValueError):
            harmonic_mean([])


class TestEvaluate:
    def test_per_machine_order_and_values(self):
        c = clips([0.1, 0.2], [0.9], "pump", "source") + clips([0.3], [0.8], "fan", "target")
        c = [ScoredClip(f"{x.machine_type}{x.clip_id}", x.machine_type, x.domain, x.label, x.score) for x in c]
        c += [ScoredClip("pump_t", "pump", "target", "normal", 0.0),
              ScoredClip("fan_s", "fan", "source", "normal", 0.0)]
        rep = evaluate(c)
        assert rep.machines == ["pump", "fan"]
        assert rep.omega == 1.0

    def test_single_label_names_machine(self):
        c = clips([0.1, 0.2], [], "valve")
        with pytest.raises(UndefinedMetric, match="valve"):
            evaluate(c)

    def test_scored_clip_validation(self):
        with pytest.raises(ValueError):
            ScoredClip("a", "fan", "source", "unknown", 0.1)
        with pytest.raises(ValueError):
            ScoredClip("a", "fan", "src", "normal", 0.1)
        with pytest.raises(ValueError):
            ScoredClip("a", "fan", "source", "normal", float("nan"))

    def test_read_scores(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("clip_id,machine_type,domain,label,score\na,fan,source,normal,0.5\n")
        assert read_scores(p) == [ScoredClip("a", "fan", "source", "normal", 0.5)]


class TestRender:
    def test_chance_everywhere(self):
        rep = EvalReport((ClassMetrics("fan", 0.5, 0.5, 0.5),))
        md = render_report(rep)
        assert md.count("50.00%") == 4
        assert render_report(rep) == md

    def test_table_values_verbatim(self):
        rep = EvalReport(tuple(results.class_metrics("proposed_14")))
        md = render_report({"Proposed (14)": rep})
        lines = md.splitlines()
        assert lines[0] == "| System | Metric | " + " | ".join(results.MACHINES) + " | Ω (h-mean) |"
        target, source, pauc_row, published = results.SYSTEMS["proposed_14"]
        assert lines[2] == ("| Proposed (14) | AUC(Target) | " + " | ".join(f"{v:.2f}%" for v in target)
                            + f" | {published:.2f}% |")
        assert lines[3] == "|  | AUC(Source) | " + " | ".join(f"{v:.2f}%" for v in source) + " |  |"
        assert lines[4] == "|  | pAUC | " + " | ".join(f"{v:.2f}%" for v in pauc_row) + " |  |"

    def test_csv(self):
        rep = EvalReport((ClassMetrics("fan", 0.9, 0.8, 0.7),))
        out = render_report({"a": rep}, "csv").splitlines()
        assert out[0] == "system,metric,fan,omega"
        assert out[1].startswith("a,AUC(Target),80.00%,")
        with pytest.raises(ValueError):
            render_report(rep, "html")
