#include "uad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>

#include "uad/stats.hpp"

namespace uad {

namespace {

struct SweepPoint {
    double threshold;
    std::int64_t tp, fp;  // counts with score >= threshold
};

// Cumulative counts at every distinct threshold, descending; equal scores
// fall into the same step.
std::vector<SweepPoint> threshold_sweep(const std::vector<double>& scores,
                                        const std::vector<std::uint8_t>& labels) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&scores](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<SweepPoint> out;
    std::int64_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double thr = scores[order[i]];
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == thr) {
            if (labels[order[j]]) ++tp;
            else ++fp;
            ++j;
        }
        out.push_back({thr, tp, fp});
        i = j;
    }
    return out;
}

// Trapezoidal area under a piecewise-linear curve through (0,0) and the given
// points (x ascending), clipped at x_max.
double partial_area(const std::vector<double>& xs, const std::vector<double>& ys, double x_max) {
    double area = 0, px = 0, py = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double x = xs[i], y = ys[i];
        if (x >= x_max) {
            const double yc = (x == px) ? y : py + (y - py) * (x_max - px) / (x - px);
            area += 0.5 * (py + yc) * (x_max - px);
            return area;
        }
        area += 0.5 * (py + y) * (x - px);
        px = x;
        py = y;
    }
    return area;  // curve ended before x_max (x_max beyond achieved range)
}

void check_fpr_max(double fpr_max) {
    if (!(fpr_max > 0.0 && fpr_max <= 1.0))
        throw std::invalid_argument("fpr_max must lie in (0, 1]");
}

}  // namespace

double roc_auc(const ScoredVoxels& sv, double fpr_max) {
    check_fpr_max(fpr_max);
    if (sv.scores.size() != sv.labels.size())
        throw std::invalid_argument("roc_auc: scores/labels size mismatch");
    std::int64_t pos = 0;
    for (auto l : sv.labels) pos += (l != 0);
    const std::int64_t neg = static_cast<std::int64_t>(sv.labels.size()) - pos;
    if (pos == 0 || neg == 0)
        throw std::invalid_argument("roc_auc: both classes must be present");
    const auto sweep = threshold_sweep(sv.scores, sv.labels);
    std::vector<double> xs, ys;
    xs.reserve(sweep.size());
    ys.reserve(sweep.size());
    for (const auto& p : sweep) {
        xs.push_back(static_cast<double>(p.fp) / static_cast<double>(neg));
        ys.push_back(static_cast<double>(p.tp) / static_cast<double>(pos));
    }
    return partial_area(xs, ys, fpr_max) / fpr_max;
}

double pr_auc(const ScoredVoxels& sv) {
    if (sv.scores.size() != sv.labels.size())
        throw std::invalid_argument("pr_auc: scores/labels size mismatch");
    std::int64_t pos = 0;
    for (auto l : sv.labels) pos += (l != 0);
    if (pos == 0) throw std::invalid_argument("pr_auc: at least one positive required");
    const auto sweep = threshold_sweep(sv.scores, sv.labels);
    double area = 0, prev_recall = 0;
    for (const auto& p : sweep) {
        const double recall = static_cast<double>(p.tp) / static_cast<double>(pos);
        const double precision = static_cast<double>(p.tp) / static_cast<double>(p.tp + p.fp);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return area;
}

BestDice best_dice(const ScoredVoxels& sv) {
    if (sv.scores.size() != sv.labels.size())
        throw std::invalid_argument("best_dice: scores/labels size mismatch");
    std::int64_t pos = 0;
    for (auto l : sv.labels) pos += (l != 0);
    if (pos == 0) throw std::invalid_argument("best_dice: at least one positive required");
    const auto sweep = threshold_sweep(sv.scores, sv.labels);
    // dice = 2 tp / (tp + fp + pos); compare fractions in integers so that
    // ties resolve exactly toward the lowest threshold
    std::int64_t bn = -1, bd = 1;
    double bthr = 0;
    for (const auto& p : sweep) {  // descending thresholds: >= keeps the lowest tied one
        const std::int64_t num = 2 * p.tp;
        const std::int64_t den = p.tp + p.fp + pos;
        if (bn < 0 || num * bd >= bn * den) {
            bn = num;
            bd = den;
            bthr = p.threshold;
        }
    }
    return {static_cast<double>(bn) / static_cast<double>(bd), bthr};
}

LesionSet connected_components(const BinaryMask3& mask, int connectivity) {
    if (connectivity != 6 && connectivity != 18 && connectivity != 26)
        throw std::invalid_argument("connected_components: connectivity must be 6, 18 or 26");
    LesionSet out;
    out.connectivity = connectivity;
    std::vector<std::array<int, 3>> offsets;
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const int manh = std::abs(dx) + std::abs(dy) + std::abs(dz);
                if (manh == 0) continue;
                if (connectivity == 6 && manh > 1) continue;
                if (connectivity == 18 && manh > 2) continue;
                offsets.push_back({dx, dy, dz});
            }
    std::vector<std::uint8_t> seen(mask.v.size(), 0);
    for (int z = 0; z < mask.nz; ++z)
        for (int y = 0; y < mask.ny; ++y)
            for (int x = 0; x < mask.nx; ++x) {
                const std::size_t start = mask.idx(x, y, z);
                if (!mask.v[start] || seen[start]) continue;
                std::vector<std::size_t> comp;
                std::queue<std::array<int, 3>> q;
                q.push({x, y, z});
                seen[start] = 1;
                while (!q.empty()) {
                    const auto [cx, cy, cz] = q.front();
                    q.pop();
                    comp.push_back(mask.idx(cx, cy, cz));
                    for (const auto& o : offsets) {
                        const int nx = cx + o[0], ny = cy + o[1], nz = cz + o[2];
                        if (nx < 0 || ny < 0 || nz < 0 || nx >= mask.nx || ny >= mask.ny || nz >= mask.nz)
                            continue;
                        const std::size_t ni = mask.idx(nx, ny, nz);
                        if (mask.v[ni] && !seen[ni]) {
                            seen[ni] = 1;
                            q.push({nx, ny, nz});
                        }
                    }
                }
                std::sort(comp.begin(), comp.end());
                out.components.push_back(std::move(comp));
            }
    return out;
}

double pro_auc(const std::vector<double>& scores, const std::vector<int>& component_id,
               double fpr_max) {
    check_fpr_max(fpr_max);
    if (scores.size() != component_id.size())
        throw std::invalid_argument("pro_auc: scores/component size mismatch");
    int n_lesions = 0;
    for (int c : component_id) n_lesions = std::max(n_lesions, c + 1);
    if (n_lesions == 0) throw std::invalid_argument("pro_auc: at least one lesion required");
    std::vector<std::int64_t> size(n_lesions, 0);
    std::int64_t neg = 0;
    for (int c : component_id) {
        if (c >= 0) ++size[c];
        else ++neg;
    }
    if (neg == 0) throw std::invalid_argument("pro_auc: no normal voxels");
    for (int l = 0; l < n_lesions; ++l)
        if (size[l] == 0) throw std::invalid_argument("pro_auc: empty lesion component");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&scores](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<std::int64_t> tp(n_lesions, 0);
    std::int64_t fp = 0;
    std::vector<double> xs, ys;
    std::size_t i = 0;
    const double inv_lesions = 1.0 / n_lesions;
    while (i < order.size()) {
        const double thr = scores[order[i]];
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == thr) {
            const int c = component_id[order[j]];
            if (c >= 0) ++tp[c];
            else ++fp;
            ++j;
        }
        double pro = 0;
        for (int l = 0; l < n_lesions; ++l)
            pro += static_cast<double>(tp[l]) / static_cast<double>(size[l]);
        pro *= inv_lesions;
        xs.push_back(static_cast<double>(fp) / static_cast<double>(neg));
        ys.push_back(pro);
        i = j;
    }
    return partial_area(xs, ys, fpr_max) / fpr_max;
}

PatientMetrics evaluate_map(const AnomalyMap& map, const BinaryMask3& lesions, int connectivity) {
    if (!map.valid.same_dims(lesions))
        throw std::invalid_argument("evaluate_map: lesion mask dims mismatch");
    const LesionSet comps = connected_components(lesions, connectivity);
    std::vector<int> component_of(lesions.v.size(), -1);
    int next = 0;
    for (const auto& comp : comps.components) {
        bool any_valid = false;
        for (std::size_t v : comp) any_valid = any_valid || map.valid.v[v];
        if (!any_valid) continue;  // component entirely outside the valid set
        for (std::size_t v : comp) component_of[v] = next;
        ++next;
    }
    ScoredVoxels sv;
    std::vector<int> comp_ids;
    for (std::size_t i = 0; i < map.valid.v.size(); ++i) {
        if (!map.valid.v[i]) continue;
        sv.scores.push_back(map.score.v[i]);
        sv.labels.push_back(lesions.v[i] ? 1 : 0);
        comp_ids.push_back(lesions.v[i] ? component_of[i] : -1);
    }
    PatientMetrics pm;
    pm.auroc = roc_auc(sv, 1.0);
    pm.auroc30 = roc_auc(sv, 0.3);
    pm.auprc = pr_auc(sv);
    pm.aupro = pro_auc(sv.scores, comp_ids, 1.0);
    pm.aupro30 = pro_auc(sv.scores, comp_ids, 0.3);
    const BestDice bd = best_dice(sv);
    pm.dice = bd.dice;
    pm.dice_threshold = bd.threshold;
    return pm;
}

MetricReport aggregate_report(const std::vector<MethodResults>& methods,
                              const std::vector<std::string>& patient_groups, double significance) {
    if (methods.empty()) throw std::invalid_argument("aggregate_report: no methods");
    const std::size_t n_patients = methods[0].patients.size();
    if (n_patients == 0) throw std::invalid_argument("aggregate_report: no patients");
    for (const auto& m : methods)
        if (m.patients.size() != n_patients)
            throw std::invalid_argument("aggregate_report: methods cover different patient counts");
    if (!patient_groups.empty() && patient_groups.size() != n_patients)
        throw std::invalid_argument("aggregate_report: one group label per patient required");

    MetricReport report;
    report.inputs = methods;
    for (const auto& m : methods) report.method_names.push_back(m.name);

    std::vector<std::pair<std::string, std::vector<std::size_t>>> groups;
    {
        std::vector<std::size_t> all(n_patients);
        std::iota(all.begin(), all.end(), 0);
        groups.emplace_back("all", std::move(all));
        if (!patient_groups.empty()) {
            std::map<std::string, std::vector<std::size_t>> by_label;
            for (std::size_t i = 0; i < n_patients; ++i) by_label[patient_groups[i]].push_back(i);
            if (by_label.size() > 1)
                for (auto& [label, idx] : by_label) groups.emplace_back(label, std::move(idx));
        }
    }

    for (const auto& [label, idx] : groups) {
        MetricReport::Group g;
        g.name = label;
        g.patient_count = idx.size();
        g.cells.resize(methods.size());
        for (std::size_t metric = 0; metric < 6; ++metric) {
            std::vector<std::vector<double>> samples(methods.size());
            for (std::size_t m = 0; m < methods.size(); ++m)
                for (std::size_t i : idx) samples[m].push_back(methods[m].patients[i].metric(metric));
            for (std::size_t m = 0; m < methods.size(); ++m) {
                const auto& s = samples[m];
                double mean = 0;
                for (double v : s) mean += v;
                mean /= static_cast<double>(s.size());
                double sd = 0;
                if (s.size() > 1) {
                    for (double v : s) sd += (v - mean) * (v - mean);
                    sd = std::sqrt(sd / static_cast<double>(s.size() - 1));
                }
                g.cells[m][metric].mean = mean;
                g.cells[m][metric].sd = sd;
            }
            if (methods.size() >= 2) {
                const KruskalResult kw = kruskal_wallis(samples);
                g.kw_p[metric] = kw.p;
                if (kw.p < significance) {
                    g.kw_significant[metric] = true;
                    std::size_t best = 0;
                    for (std::size_t m = 1; m < methods.size(); ++m)
                        if (g.cells[m][metric].mean > g.cells[best][metric].mean) best = m;
                    g.cells[best][metric].best = true;
                    g.cells[best][metric].flagged = true;
                    const auto dunn = dunn_test(samples);
                    for (const auto& d : dunn) {
                        const std::size_t other =
                            (static_cast<std::size_t>(d.a) == best)   ? static_cast<std::size_t>(d.b)
                            : (static_cast<std::size_t>(d.b) == best) ? static_cast<std::size_t>(d.a)
                                                                      : best;
                        if (other == best) continue;
                        if (d.p >= significance) g.cells[other][metric].flagged = true;
                    }
                }
            }
        }
        report.groups.push_back(std::move(g));
    }
    return report;
}

std::string report_to_csv(const MetricReport& report, char delim) {
    std::ostringstream os;
    os << "group" << delim << "metric" << delim << "method" << delim << "mean" << delim << "sd"
       << delim << "best" << delim << "flagged" << delim << "kw_p\n";
    char buf[64];
    for (const auto& g : report.groups) {
        for (std::size_t metric = 0; metric < 6; ++metric) {
            for (std::size_t m = 0; m < report.method_names.size(); ++m) {
                const auto& c = g.cells[m][metric];
                os << g.name << delim << kMetricNames[metric] << delim << report.method_names[m];
                std::snprintf(buf, sizeof(buf), "%.6f", c.mean);
                os << delim << buf;
                std::snprintf(buf, sizeof(buf), "%.6f", c.sd);
                os << delim << buf;
                os << delim << (c.best ? 1 : 0) << delim << (c.flagged ? 1 : 0);
                std::snprintf(buf, sizeof(buf), "%.6g", g.kw_p[metric]);
                os << delim << buf << "\n";
            }
        }
    }
    return os.str();
}

std::string report_to_table(const MetricReport& report) {
    std::ostringstream os;
    for (const auto& g : report.groups) {
        os << "== " << g.name << " (" << g.patient_count << " patients) ==\n";
        std::size_t w = 12;
        for (const auto& n : report.method_names) w = std::max(w, n.size() + 2);
        os << std::string(11, ' ');
        for (const auto& n : report.method_names) os << "| " << n << std::string(w - n.size() - 2, ' ');
        os << "\n";
        char buf[64];
        for (std::size_t metric = 0; metric < 6; ++metric) {
            std::snprintf(buf, sizeof(buf), "%-11s", kMetricNames[metric]);
            os << buf;
            for (std::size_t m = 0; m < report.method_names.size(); ++m) {
                const auto& c = g.cells[m][metric];
                std::snprintf(buf, sizeof(buf), "%.3f +- %.3f%s", c.mean, c.sd,
                              c.flagged ? " *" : "");
                const std::string cell(buf);
                os << "| " << cell << std::string(w > cell.size() + 2 ? w - cell.size() - 2 : 1, ' ');
            }
            if (report.method_names.size() >= 2 && !g.kw_significant[metric]) os << "  (no best)";
            os << "\n";
        }
        os << "\n";
    }
    if (report.method_names.size() >= 2)
        os << "* best method per metric and methods not significantly different from it\n";
    return os.str();
}

}  // namespace uad
