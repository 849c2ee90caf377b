#include "doctest.h"

#include <array>
#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "uad/metrics.hpp"
#include "uad/rng.hpp"
#include "uad/stats.hpp"

using namespace uad;

struct StatsRefCase {
    std::vector<std::vector<double>> groups;
    double h;
    double p;
    std::vector<std::array<double, 3>> dunn;  // (a, b, two-sided p)
};

#include "data/stats_reference.inc"

namespace {

ScoredVoxels random_instance(int n, Rng& rng, double tie_fraction = 0.3, double pos_rate = 0.3) {
    ScoredVoxels sv;
    bool has_pos = false, has_neg = false;
    for (int i = 0; i < n; ++i) {
        double s = rng.uniform_range(-2, 2);
        if (rng.uniform() < tie_fraction) s = std::round(s * 4.0) / 4.0;  // induce ties
        const bool pos = rng.uniform() < pos_rate;
        sv.scores.push_back(s);
        sv.labels.push_back(pos ? 1 : 0);
        has_pos = has_pos || pos;
        has_neg = has_neg || !pos;
    }
    if (!has_pos) sv.labels[0] = 1;
    if (!has_neg) sv.labels[n - 1] = 0;
    return sv;
}

}  // namespace

TEST_CASE("roc_auc basics") {
    ScoredVoxels perfect{{0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}};
    CHECK(roc_auc(perfect, 1.0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(roc_auc(perfect, 0.3) == doctest::Approx(1.0).epsilon(1e-15));

    ScoredVoxels flat{{0.5, 0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0, 0}};
    CHECK(roc_auc(flat, 1.0) == doctest::Approx(0.5).epsilon(1e-15));

    ScoredVoxels single{{0.1, 0.2}, {1, 1}};
    CHECK_THROWS_AS(static_cast<void>(roc_auc(single, 1.0)), std::invalid_argument);
    CHECK_THROWS_AS(static_cast<void>(roc_auc(perfect, 0.0)), std::invalid_argument);
    CHECK_THROWS_AS(static_cast<void>(roc_auc(perfect, 1.1)), std::invalid_argument);
}

TEST_CASE("roc_auc matches the pairwise oracle with ties counted half") {
    Rng rng(3);
    for (int rep = 0; rep < 50; ++rep) {
        const ScoredVoxels sv = random_instance(20, rng);
        CHECK(roc_auc(sv, 1.0) ==
              doctest::Approx(oracle::roc_auc_pairwise(sv.scores, sv.labels)).epsilon(1e-12));
    }
}

TEST_CASE("partial roc_auc matches threshold enumeration") {
    Rng rng(5);
    for (int rep = 0; rep < 50; ++rep) {
        const ScoredVoxels sv = random_instance(40, rng);
        for (double fmax : {1.0, 0.3, 0.17}) {
            CHECK(roc_auc(sv, fmax) ==
                  doctest::Approx(oracle::roc_auc_enum(sv.scores, sv.labels, fmax)).epsilon(1e-12));
        }
    }
}

TEST_CASE("pr_auc basics and oracle equivalence") {
    ScoredVoxels perfect{{0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}};
    CHECK(pr_auc(perfect) == doctest::Approx(1.0).epsilon(1e-15));

    // constant scores: single step with precision = prevalence
    ScoredVoxels flat{{0.4, 0.4, 0.4, 0.4, 0.4}, {1, 0, 0, 1, 0}};
    CHECK(pr_auc(flat) == doctest::Approx(0.4).epsilon(1e-15));

    ScoredVoxels none{{0.1, 0.2}, {0, 0}};
    CHECK_THROWS_AS(static_cast<void>(pr_auc(none)), std::invalid_argument);

    Rng rng(7);
    for (int rep = 0; rep < 50; ++rep) {
        const ScoredVoxels sv = random_instance(20, rng);
        CHECK(pr_auc(sv) == doctest::Approx(oracle::pr_auc_enum(sv.scores, sv.labels)).epsilon(1e-12));
    }
}

TEST_CASE("connected components under the three connectivities") {
    BinaryMask3 single(3, 3, 3);
    single.set(1, 1, 1, true);
    const LesionSet s = connected_components(single, 26);
    REQUIRE(s.components.size() == 1);
    CHECK(s.components[0].size() == 1);

    // two voxels sharing only a corner
    BinaryMask3 corner(4, 4, 4);
    corner.set(1, 1, 1, true);
    corner.set(2, 2, 2, true);
    CHECK(connected_components(corner, 26).components.size() == 1);
    CHECK(connected_components(corner, 6).components.size() == 2);
    CHECK(connected_components(corner, 18).components.size() == 2);

    // two voxels sharing an edge: connected at 18 and 26
    BinaryMask3 edge(4, 4, 4);
    edge.set(1, 1, 1, true);
    edge.set(2, 2, 1, true);
    CHECK(connected_components(edge, 6).components.size() == 2);
    CHECK(connected_components(edge, 18).components.size() == 1);

    Rng rng(11);
    BinaryMask3 m(6, 6, 6);
    for (auto& v : m.v) v = rng.uniform() < 0.3 ? 1 : 0;
    const LesionSet ls = connected_components(m, 26);
    std::size_t total = 0;
    for (const auto& comp : ls.components) {
        CHECK(!comp.empty());
        total += comp.size();
    }
    CHECK(total == m.count());
    CHECK(connected_components(BinaryMask3(3, 3, 3), 26).components.empty());
    CHECK_THROWS_AS(static_cast<void>(connected_components(m, 10)), std::invalid_argument);
}

TEST_CASE("pro_auc equals roc_auc when exactly one lesion exists") {
    Rng rng(13);
    for (int rep = 0; rep < 30; ++rep) {
        const ScoredVoxels sv = random_instance(60, rng);
        std::vector<int> comp(sv.labels.size());
        for (std::size_t i = 0; i < sv.labels.size(); ++i) comp[i] = sv.labels[i] ? 0 : -1;
        for (double fmax : {1.0, 0.3}) {
            CHECK(pro_auc(sv.scores, comp, fmax) == roc_auc(sv, fmax));  // exact equality
        }
    }
}

TEST_CASE("equal lesion weighting: a detected small lesion lifts PRO above TPR") {
    // lesion A: 1 voxel at score 1.0; lesion B: 100 voxels at 0.5;
    // 30 normals at 0.7 sit between them, 170 normals at 0.0
    std::vector<double> scores;
    std::vector<int> comp;
    std::vector<std::uint8_t> labels;
    scores.push_back(1.0); comp.push_back(0); labels.push_back(1);
    for (int i = 0; i < 30; ++i) { scores.push_back(0.7); comp.push_back(-1); labels.push_back(0); }
    for (int i = 0; i < 100; ++i) { scores.push_back(0.5); comp.push_back(1); labels.push_back(1); }
    for (int i = 0; i < 170; ++i) { scores.push_back(0.0); comp.push_back(-1); labels.push_back(0); }
    const ScoredVoxels sv{scores, labels};
    const double pro10 = pro_auc(scores, comp, 0.1);
    const double roc10 = roc_auc(sv, 0.1);
    CHECK(pro10 > roc10);
    CHECK(pro10 == doctest::Approx(0.5).epsilon(1e-12));  // hand-computed curve
    CHECK(pro10 == doctest::Approx(oracle::pro_auc_enum(scores, comp, 0.1)).epsilon(1e-12));
    CHECK(roc10 == doctest::Approx(1.0 / 101.0).epsilon(1e-12));
}

TEST_CASE("pro_auc matches threshold enumeration on random instances") {
    Rng rng(17);
    for (int rep = 0; rep < 30; ++rep) {
        const int n = 200;
        std::vector<double> scores;
        std::vector<int> comp;
        const int lesions = 1 + static_cast<int>(rng.uniform_index(4));
        for (int i = 0; i < n; ++i) {
            double s = rng.uniform_range(0, 1);
            if (rng.uniform() < 0.3) s = std::round(s * 8.0) / 8.0;
            scores.push_back(s);
            comp.push_back(rng.uniform() < 0.25 ? static_cast<int>(rng.uniform_index(lesions)) : -1);
        }
        comp[0] = 0;
        comp[1] = -1;
        // every lesion id must be nonempty
        for (int l = 0; l < lesions; ++l) comp[2 + l] = l;
        for (double fmax : {1.0, 0.3}) {
            CHECK(pro_auc(scores, comp, fmax) ==
                  doctest::Approx(oracle::pro_auc_enum(scores, comp, fmax)).epsilon(1e-12));
        }
    }
    CHECK_THROWS_AS(static_cast<void>(pro_auc({1.0, 2.0}, {-1, -1}, 1.0)), std::invalid_argument);
}

TEST_CASE("best_dice basics") {
    ScoredVoxels exact{{1, 0, 1, 0}, {1, 0, 1, 0}};
    const BestDice a = best_dice(exact);
    CHECK(a.dice == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(a.threshold == 1.0);

    ScoredVoxels t3{{0.9, 0.1, 0.2}, {1, 0, 0}};
    const BestDice b = best_dice(t3);
    CHECK(b.dice == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(b.threshold == 0.9);

    ScoredVoxels none{{0.5}, {0}};
    CHECK_THROWS_AS(static_cast<void>(best_dice(none)), std::invalid_argument);
}

TEST_CASE("best_dice matches exhaustive enumeration and is maximal") {
    Rng rng(19);
    for (int rep = 0; rep < 40; ++rep) {
        const ScoredVoxels sv = random_instance(50, rng);
        const BestDice impl = best_dice(sv);
        const oracle::DiceEnum ref = oracle::best_dice_enum(sv.scores, sv.labels);
        CHECK(impl.dice == ref.dice);
        CHECK(impl.threshold == ref.threshold);

        std::int64_t pos = 0;
        for (auto l : sv.labels) pos += l;
        for (int t = 0; t < 100; ++t) {
            const double thr = rng.uniform_range(-2.2, 2.2);
            std::int64_t tp = 0, fp = 0;
            for (std::size_t i = 0; i < sv.scores.size(); ++i)
                if (sv.scores[i] >= thr) (sv.labels[i] ? tp : fp) += 1;
            const double dice = 2.0 * tp / static_cast<double>(tp + fp + pos);
            CHECK(impl.dice >= dice - 1e-15);
        }
    }
}

TEST_CASE("curve metrics are invariant under strictly increasing transforms") {
    Rng rng(23);
    for (int rep = 0; rep < 20; ++rep) {
        const ScoredVoxels sv = random_instance(80, rng);
        std::vector<int> comp(sv.labels.size());
        int next = 0;
        for (std::size_t i = 0; i < sv.labels.size(); ++i)
            comp[i] = sv.labels[i] ? (next++ % 3) : -1;
        ScoredVoxels tv = sv;
        for (auto& s : tv.scores) s = std::exp(s) + 2.0 * s;  // strictly increasing
        std::vector<double> tscores = tv.scores;
        CHECK(roc_auc(sv, 1.0) == doctest::Approx(roc_auc(tv, 1.0)).epsilon(1e-12));
        CHECK(roc_auc(sv, 0.3) == doctest::Approx(roc_auc(tv, 0.3)).epsilon(1e-12));
        CHECK(pr_auc(sv) == doctest::Approx(pr_auc(tv)).epsilon(1e-12));
        CHECK(pro_auc(sv.scores, comp, 1.0) == doctest::Approx(pro_auc(tscores, comp, 1.0)).epsilon(1e-12));
        CHECK(best_dice(sv).dice == doctest::Approx(best_dice(tv).dice).epsilon(1e-12));
    }
}

TEST_CASE("complementing labels maps AUC to 1 - AUC on tie-free instances") {
    Rng rng(29);
    for (int rep = 0; rep < 20; ++rep) {
        ScoredVoxels sv = random_instance(40, rng, /*tie_fraction=*/0.0);
        const double auc = roc_auc(sv, 1.0);
        for (auto& l : sv.labels) l = l ? 0 : 1;
        CHECK(roc_auc(sv, 1.0) == doctest::Approx(1.0 - auc).epsilon(1e-12));
    }
}

TEST_CASE("kruskal_wallis hand example and invariances") {
    const std::vector<std::vector<double>> groups = {{1, 2, 3}, {4, 5, 6}, {7, 8, 9}};
    const KruskalResult kw = kruskal_wallis(groups);
    CHECK(kw.h == doctest::Approx(7.2).epsilon(1e-12));
    CHECK(kw.p == doctest::Approx(std::exp(-3.6)).epsilon(1e-12));  // chi-square with 2 dof

    const KruskalResult perm = kruskal_wallis({{7, 8, 9}, {1, 2, 3}, {4, 5, 6}});
    CHECK(perm.h == doctest::Approx(kw.h).epsilon(1e-14));

    const KruskalResult same = kruskal_wallis({{2.0, 2.0}, {2.0, 2.0, 2.0}});
    CHECK(same.h == 0.0);
    CHECK(same.p == 1.0);

    CHECK_THROWS_AS(static_cast<void>(kruskal_wallis({{1.0}})), std::invalid_argument);
    CHECK_THROWS_AS(static_cast<void>(kruskal_wallis({{1.0}, {}})), std::invalid_argument);
}

TEST_CASE("kruskal_wallis and dunn match the independent reference") {
    for (const StatsRefCase& ref : stats_reference_cases()) {
        const KruskalResult kw = kruskal_wallis(ref.groups);
        CHECK(kw.h == doctest::Approx(ref.h).epsilon(1e-6));
        CHECK(kw.p == doctest::Approx(ref.p).epsilon(1e-6));
        const std::vector<DunnPair> dunn = dunn_test(ref.groups);
        REQUIRE(dunn.size() == ref.dunn.size());
        for (std::size_t i = 0; i < dunn.size(); ++i) {
            CHECK(dunn[i].a == static_cast<int>(ref.dunn[i][0]));
            CHECK(dunn[i].b == static_cast<int>(ref.dunn[i][1]));
            CHECK(dunn[i].p == doctest::Approx(ref.dunn[i][2]).epsilon(1e-6));
        }
    }
}

TEST_CASE("dunn degenerate input and bonferroni flag") {
    const std::vector<std::vector<double>> same = {{1.0, 1.0}, {1.0, 1.0}, {1.0}};
    for (const auto& d : dunn_test(same)) CHECK(d.p == 1.0);

    const std::vector<std::vector<double>> groups = {{1, 2, 3}, {4, 5, 6}, {7, 8, 9}};
    const auto plain = dunn_test(groups, false);
    const auto bonf = dunn_test(groups, true);
    for (std::size_t i = 0; i < plain.size(); ++i)
        CHECK(bonf[i].p == doctest::Approx(std::min(1.0, plain[i].p * 3.0)).epsilon(1e-14));
}

TEST_CASE("evaluate_map restricts everything to the valid mask") {
    // 1-D layout in a 3-D shell: lesion occupies two voxels, one of which
    // gets excluded; excluded high-score normal voxels must not count
    AnomalyMap map;
    map.score = ScalarField(6, 1, 1);
    map.valid = BinaryMask3(6, 1, 1);
    BinaryMask3 lesions(6, 1, 1);
    const float scores[6] = {0.9f, 0.8f, 0.7f, 0.2f, 0.95f, 0.1f};
    for (int i = 0; i < 6; ++i) {
        map.score.v[i] = scores[i];
        map.valid.v[i] = 1;
    }
    lesions.set(0, 0, 0, true);
    lesions.set(1, 0, 0, true);
    map.valid.v[4] = 0;  // the highest-scoring normal voxel is invalid
    map.score.v[4] = 0.0f;
    const PatientMetrics pm = evaluate_map(map, lesions, 26);
    // remaining: scores {0.9,0.8,0.7,0.2,0.1}, labels {1,1,0,0,0} -> perfect
    CHECK(pm.auroc == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(pm.dice == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(pm.aupro == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("aggregate_report: singleton stats and best-method flagging") {
    MethodResults solo;
    solo.name = "only";
    solo.patients.push_back({0.8, 0.5, 0.1, 0.7, 0.3, 0.2, 0.5});
    const MetricReport r1 = aggregate_report({solo});
    CHECK(r1.groups.size() == 1);
    CHECK(r1.groups[0].cells[0][0].mean == doctest::Approx(0.8));
    CHECK(r1.groups[0].cells[0][0].sd == 0.0);

    // identical methods: no significant difference, nothing flagged
    MethodResults a, b;
    a.name = "m1";
    b.name = "m2";
    Rng rng(31);
    for (int i = 0; i < 12; ++i) {
        PatientMetrics pm{rng.uniform(), rng.uniform(), rng.uniform(),
                          rng.uniform(), rng.uniform(), rng.uniform(), 0.0};
        a.patients.push_back(pm);
        b.patients.push_back(pm);
    }
    const MetricReport r2 = aggregate_report({a, b});
    for (std::size_t m = 0; m < 2; ++m)
        for (std::size_t k = 0; k < 6; ++k) CHECK(!r2.groups[0].cells[m][k].flagged);

    // a clear gap on every metric: the better method is flagged best
    MethodResults good = a, bad = a;
    good.name = "good";
    bad.name = "bad";
    for (int i = 0; i < 12; ++i) {
        PatientMetrics hi{0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0};
        PatientMetrics lo{0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0};
        hi.auroc += 0.001 * i;
        lo.auroc += 0.001 * i;
        good.patients[i] = hi;
        bad.patients[i] = lo;
    }
    const MetricReport r3 = aggregate_report({bad, good});
    for (std::size_t k = 0; k < 6; ++k) {
        CHECK(r3.groups[0].cells[1][k].best);
        CHECK(r3.groups[0].cells[1][k].flagged);
        CHECK(!r3.groups[0].cells[0][k].flagged);
    }

    // per-hospital grouping adds one group per label
    std::vector<std::string> labels(12, "siteA");
    for (int i = 6; i < 12; ++i) labels[i] = "siteB";
    const MetricReport r4 = aggregate_report({bad, good}, labels);
    REQUIRE(r4.groups.size() == 3);
    CHECK(r4.groups[0].name == "all");
    CHECK(r4.groups[1].patient_count == 6);

    const std::string csv = report_to_csv(r4);
    CHECK(csv.find("AU PRO 30") != std::string::npos);
    const std::string table = report_to_table(r4);
    CHECK(table.find("best Dice") != std::string::npos);
}
