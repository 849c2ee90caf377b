#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "uad/volume.hpp"

namespace uad {

// Scores and binary labels (1 = lesion) restricted to the evaluated voxels.
struct ScoredVoxels {
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
};

// Exact trapezoidal area under TPR vs FPR up to fpr_max, normalized by
// fpr_max; equal scores collapse into single curve steps.
double roc_auc(const ScoredVoxels& sv, double fpr_max = 1.0);

// Step-wise precision-recall area over distinct thresholds.
double pr_auc(const ScoredVoxels& sv);

struct BestDice {
    double dice = 0.0;
    double threshold = 0.0;
};

// Max Dice over all distinct-score thresholds (score >= t predicts lesion);
// ties resolved toward the lowest threshold.
BestDice best_dice(const ScoredVoxels& sv);

struct LesionSet {
    int connectivity = 26;
    std::vector<std::vector<std::size_t>> components;  // linear voxel indices
};

LesionSet connected_components(const BinaryMask3& lesion_mask, int connectivity = 26);

// Area under the per-region-overlap curve: at each threshold PRO is the mean
// over lesions of that lesion's covered fraction, integrated against FPR up
// to fpr_max and normalized by fpr_max. component_id[i] is the lesion index
// of voxel i or -1 for normal voxels.
double pro_auc(const std::vector<double>& scores, const std::vector<int>& component_id,
               double fpr_max = 1.0);

// ---------------------------------------------------------------------------
// Per-patient evaluation and Table-style aggregation

inline constexpr std::array<const char*, 6> kMetricNames = {
    "AU ROC", "AU ROC 30", "AU PRC", "AU PRO", "AU PRO 30", "best Dice"};

struct PatientMetrics {
    double auroc = 0, auroc30 = 0, auprc = 0, aupro = 0, aupro30 = 0, dice = 0;
    double dice_threshold = 0;  // carried for reference, not a table row

    double metric(std::size_t k) const {
        const double m[6] = {auroc, auroc30, auprc, aupro, aupro30, dice};
        return m[k];
    }
};

// Scores a map against the lesion mask on its valid voxels. Lesion components
// are taken on the full lesion mask, then restricted to valid voxels.
PatientMetrics evaluate_map(const AnomalyMap& map, const BinaryMask3& lesions, int connectivity = 26);

struct MethodResults {
    std::string name;
    std::vector<PatientMetrics> patients;
};

struct MetricReport {
    struct Cell {
        double mean = 0, sd = 0;
        bool best = false;     // highest mean, Kruskal-Wallis significant
        bool flagged = false;  // best or not distinguishable from it (Dunn p >= 0.01)
    };
    struct Group {
        std::string name;
        std::size_t patient_count = 0;
        std::array<double, 6> kw_p{1, 1, 1, 1, 1, 1};
        std::array<bool, 6> kw_significant{};
        std::vector<std::array<Cell, 6>> cells;  // one entry per method
    };
    std::vector<std::string> method_names;
    std::vector<MethodResults> inputs;  // per-patient values as supplied
    std::vector<Group> groups;
};

// Pooled group plus one group per distinct patient label (when supplied).
// With several methods, flags the best method per metric and its
// statistically indistinguishable peers at p >= 0.01.
MetricReport aggregate_report(const std::vector<MethodResults>& methods,
                              const std::vector<std::string>& patient_groups = {},
                              double significance = 0.01);

std::string report_to_csv(const MetricReport& report, char delim = '\t');
std::string report_to_table(const MetricReport& report);

}  // namespace uad
