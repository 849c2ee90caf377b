// Command-line front end: phantom generation, SAE training, per-patient
// fitting and whole-brain scoring, CSF post-processing, metric evaluation and
// table-style reporting.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "uad/metrics.hpp"
#include "uad/model_io.hpp"
#include "uad/nifti.hpp"
#include "uad/phantom.hpp"
#include "uad/pipeline.hpp"
#include "uad/postproc.hpp"
#include "uad/runconfig.hpp"
#include "uad/sae.hpp"

namespace fs = std::filesystem;
using namespace uad;

namespace {

constexpr const char* kVersion = "1.0.0";

// Removes everything it saw unless the run commits.
class OutputGuard {
public:
    ~OutputGuard() {
        if (committed_) return;
        for (const auto& p : paths_) {
            std::error_code ec;
            fs::remove(p, ec);
        }
    }
    std::string track(const std::string& path) {
        paths_.push_back(path);
        return path;
    }
    void commit() { committed_ = true; }

private:
    std::vector<std::string> paths_;
    bool committed_ = false;
};

struct CommonArgs {
    std::string config_path;
    int threads = 1;

    RunConfig config() const {
        return config_path.empty() ? parse_config_text("") : load_config(config_path);
    }
};

void write_manifest(OutputGuard& guard, const std::string& path, const std::string& command,
                    const RunConfig& cfg, int threads) {
    std::ofstream out(guard.track(path));
    if (!out) throw std::runtime_error("cannot write manifest: " + path);
    out << "tool uad " << kVersion << "\n";
    out << "command " << command << "\n";
    out << "threads " << threads << "\n";
    out << "config-begin\n" << serialize_config(cfg) << "config-end\n";
}

struct CaseEntry {
    std::string id, role, volume, brain, csf, lesion;
};

std::vector<CaseEntry> read_cases(const std::string& dir) {
    const std::string path = (fs::path(dir) / "cases.tsv").string();
    std::ifstream in(path);
    if (!in) throw std::runtime_error("dataset manifest not found: " + path);
    std::vector<CaseEntry> cases;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        CaseEntry e;
        std::getline(ls, e.id, '\t');
        std::getline(ls, e.role, '\t');
        std::getline(ls, e.volume, '\t');
        std::getline(ls, e.brain, '\t');
        std::getline(ls, e.csf, '\t');
        std::getline(ls, e.lesion, '\t');
        if (e.id.empty() || e.role.empty())
            throw std::runtime_error("malformed dataset manifest line: " + line);
        cases.push_back(std::move(e));
    }
    return cases;
}

Volume load_case_volume(const std::string& dir, const CaseEntry& e, bool normalize) {
    Volume v = read_volume_nifti((fs::path(dir) / e.volume).string());
    return normalize ? minmax_normalize(v) : v;
}

BinaryMask3 load_case_brain(const std::string& dir, const CaseEntry& e) {
    return read_mask_nifti((fs::path(dir) / e.brain).string());
}

// ---------------------------------------------------------------------------

int run_phantom(const CommonArgs& common, const std::string& out_dir) {
    const RunConfig cfg = common.config();
    fs::create_directories(out_dir);
    OutputGuard guard;
    std::ostringstream manifest_rows;
    manifest_rows << "id\trole\tvolume\tbrain\tcsf\tlesion\n";
    const int total = cfg.phantom_controls + cfg.phantom_patients;
    for (int i = 0; i < total; ++i) {
        const bool control = i < cfg.phantom_controls;
        char id[32];
        std::snprintf(id, sizeof(id), "case%03d", i);
        Rng rng(cfg.phantom.seed + 7919ULL * static_cast<std::uint64_t>(i));
        const PhantomCase c =
            control ? generate_control(cfg.phantom, rng) : generate_patient(cfg.phantom, rng);
        const std::string base = std::string(id);
        write_volume_nifti(c.volume, guard.track((fs::path(out_dir) / (base + ".nii.gz")).string()));
        write_mask_nifti(c.brain_mask, c.volume.voxel_mm,
                         guard.track((fs::path(out_dir) / (base + "_brain.nii.gz")).string()));
        write_mask_nifti(c.csf_mask, c.volume.voxel_mm,
                         guard.track((fs::path(out_dir) / (base + "_csf.nii.gz")).string()));
        manifest_rows << id << "\t" << (control ? "control" : "patient") << "\t" << base
                      << ".nii.gz\t" << base << "_brain.nii.gz\t" << base << "_csf.nii.gz\t";
        if (control) {
            manifest_rows << "-\n";
        } else {
            write_mask_nifti(c.lesion_mask, c.volume.voxel_mm,
                             guard.track((fs::path(out_dir) / (base + "_lesion.nii.gz")).string()));
            manifest_rows << base << "_lesion.nii.gz\n";
        }
    }
    {
        std::ofstream out(guard.track((fs::path(out_dir) / "cases.tsv").string()));
        out << manifest_rows.str();
    }
    write_manifest(guard, (fs::path(out_dir) / "manifest.txt").string(), "phantom", cfg,
                   common.threads);
    guard.commit();
    std::cout << "phantom: wrote " << cfg.phantom_controls << " controls and "
              << cfg.phantom_patients << " patients to " << out_dir << "\n";
    return 0;
}

int run_train(const CommonArgs& common, const std::string& data_dir, const std::string& out_model,
              const std::string& history_path) {
    const RunConfig cfg = common.config();
    std::vector<Volume> controls;
    std::vector<BinaryMask3> masks;
    for (const auto& e : read_cases(data_dir)) {
        if (e.role != "control") continue;
        controls.push_back(load_case_volume(data_dir, e, cfg.normalize_inputs));
        masks.push_back(load_case_brain(data_dir, e));
    }
    if (controls.size() < 2) throw std::runtime_error("train: need at least 2 controls in " + data_dir);
    auto [model, history] = train_sae<float>(controls, masks, cfg.sae, common.threads);

    OutputGuard guard;
    save_sae(model, guard.track(out_model));
    if (!history_path.empty()) {
        std::ofstream out(guard.track(history_path));
        out << "epoch\ttrain_loss\tval_loss\tbest\n";
        char buf[64];
        for (std::size_t e = 0; e < history.train_loss.size(); ++e) {
            std::snprintf(buf, sizeof(buf), "%zu\t%.10g\t%.10g\t%d\n", e, history.train_loss[e],
                          history.val_loss[e], static_cast<int>(e) == history.best_epoch ? 1 : 0);
            out << buf;
        }
    }
    write_manifest(guard, out_model + ".manifest", "train", cfg, common.threads);
    guard.commit();
    std::cout << "train: " << controls.size() << " controls, best epoch " << history.best_epoch
              << ", validation loss " << history.val_loss[history.best_epoch] << "\n";
    return 0;
}

void write_map(OutputGuard& guard, const AnomalyMap& map, const std::string& prefix) {
    write_scalar_nifti(map.score, guard.track(prefix + "_map.nii.gz"));
    write_mask_nifti(map.valid, map.score.voxel_mm, guard.track(prefix + "_valid.nii.gz"));
}

int run_fit_score(const CommonArgs& common, const std::string& model_path,
                  const std::string& data_dir, const std::string& out_dir, bool voxelwise,
                  bool save_models, const std::string& t1, const std::string& flair,
                  const std::string& volume4d, const std::string& mask_path,
                  const std::string& out_prefix) {
    const RunConfig cfg = common.config();
    const SaeModel<float> encoder = load_sae(model_path);
    OutputGuard guard;

    const bool single = !out_prefix.empty();
    struct Job {
        std::string id;
        Volume volume;
        BinaryMask3 mask;
        std::string prefix;
    };
    std::vector<Job> jobs;
    if (single) {
        if (mask_path.empty()) throw std::runtime_error("fit-score: --mask is required");
        Volume v = volume4d.empty() ? read_volume_pair(t1, flair) : read_volume_nifti(volume4d);
        if (cfg.normalize_inputs) v = minmax_normalize(v);
        jobs.push_back({fs::path(out_prefix).filename().string(), std::move(v),
                        read_mask_nifti(mask_path), out_prefix});
    } else {
        if (data_dir.empty() || out_dir.empty())
            throw std::runtime_error("fit-score: provide --data and --out, or --out-prefix");
        fs::create_directories(out_dir);
        for (const auto& e : read_cases(data_dir)) {
            if (e.role != "patient") continue;
            jobs.push_back({e.id, load_case_volume(data_dir, e, cfg.normalize_inputs),
                            load_case_brain(data_dir, e), (fs::path(out_dir) / e.id).string()});
        }
        if (jobs.empty()) throw std::runtime_error("fit-score: no patient cases in " + data_dir);
    }

    if (voxelwise) {
        if (data_dir.empty())
            throw std::runtime_error("fit-score --voxelwise: --data with control cases is required");
        std::vector<Volume> controls;
        BinaryMask3 common_mask;
        bool first = true;
        for (const auto& e : read_cases(data_dir)) {
            if (e.role != "control") continue;
            controls.push_back(load_case_volume(data_dir, e, cfg.normalize_inputs));
            const BinaryMask3 m = load_case_brain(data_dir, e);
            if (first) {
                common_mask = m;
                first = false;
            } else {
                for (std::size_t i = 0; i < common_mask.v.size(); ++i) common_mask.v[i] &= m.v[i];
            }
        }
        if (controls.size() < 2)
            throw std::runtime_error("fit-score --voxelwise: need at least 2 controls");
        const VoxelwiseBaseline baseline(controls, encoder, common_mask, cfg.nu, cfg.solver,
                                         common.threads);
        for (const auto& job : jobs) {
            const AnomalyMap map = baseline.score(job.volume, common.threads);
            write_map(guard, map, job.prefix);
            std::cout << "fit-score[voxelwise]: " << job.id << "\n";
        }
    } else {
        std::size_t index = 0;
        for (const auto& job : jobs) {
            Rng rng(cfg.seed + 104729ULL * static_cast<std::uint64_t>(index++));
            const PatientModel pm = fit_patient_model(job.volume, job.mask, encoder, cfg.nu,
                                                      cfg.n_locations, cfg.solver, rng,
                                                      common.threads);
            const AnomalyMap map = score_volume(job.volume, job.mask, encoder, pm, common.threads);
            write_map(guard, map, job.prefix);
            if (save_models) save_ocsvm(pm.ocsvm, guard.track(job.prefix + "_ocsvm.uadm"));
            std::cout << "fit-score: " << job.id << " (" << pm.ocsvm.support_vectors.size()
                      << " support vectors)\n";
        }
    }
    const std::string manifest =
        single ? out_prefix + ".manifest" : (fs::path(out_dir) / "manifest.txt").string();
    write_manifest(guard, manifest, voxelwise ? "fit-score --voxelwise" : "fit-score", cfg,
                   common.threads);
    guard.commit();
    return 0;
}

int run_postprocess(const CommonArgs& common, const std::string& map_prefix,
                    const std::string& seg_a, const std::string& seg_b, const std::string& brain,
                    const std::string& out_prefix) {
    const RunConfig cfg = common.config();
    AnomalyMap map;
    map.score = read_scalar_nifti(map_prefix + "_map.nii.gz");
    map.valid = read_mask_nifti(map_prefix + "_valid.nii.gz");
    const BinaryMask3 a = read_mask_nifti(seg_a);
    const BinaryMask3 b = seg_b.empty() ? a : read_mask_nifti(seg_b);
    const BinaryMask3 gross = read_mask_nifti(brain);
    const BinaryMask3 exclusion = refine_csf_mask(a, b, gross);
    const AnomalyMap cleaned = apply_exclusion(map, exclusion);

    OutputGuard guard;
    write_mask_nifti(exclusion, map.score.voxel_mm,
                     guard.track(out_prefix + "_exclusion.nii.gz"));
    write_map(guard, cleaned, out_prefix);
    write_manifest(guard, out_prefix + ".manifest", "postprocess", cfg, common.threads);
    guard.commit();
    std::cout << "postprocess: excluded " << exclusion.count() << " voxels, "
              << cleaned.valid.count() << " remain valid\n";
    return 0;
}

void append_metrics_row(std::ostream& out, const std::string& id, const std::string& group,
                        const PatientMetrics& pm) {
    char buf[320];
    std::snprintf(buf, sizeof(buf),
                  "%s\t%s\t%.10g\t%.10g\t%.10g\t%.10g\t%.10g\t%.10g\t%.10g\t%.10g\t%.10g\n",
                  id.c_str(), group.c_str(), pm.auroc, pm.auroc30, pm.auroc30 * 0.3, pm.auprc,
                  pm.aupro, pm.aupro30, pm.aupro30 * 0.3, pm.dice, pm.dice_threshold);
    out << buf;
}

const char* kMetricsHeader =
    "case\tgroup\tauroc\tauroc30\tauroc30_raw\tauprc\taupro\taupro30\taupro30_raw\tdice\t"
    "dice_threshold\n";

int run_evaluate(const CommonArgs& common, const std::string& map_prefix,
                 const std::string& lesions_path, const std::string& case_id,
                 const std::string& group, const std::string& data_dir, const std::string& maps_dir,
                 const std::string& out_csv, bool append) {
    const RunConfig cfg = common.config();
    OutputGuard guard;
    std::ostringstream rows;
    if (!map_prefix.empty()) {
        if (lesions_path.empty()) throw std::runtime_error("evaluate: --lesions is required");
        AnomalyMap map;
        map.score = read_scalar_nifti(map_prefix + "_map.nii.gz");
        map.valid = read_mask_nifti(map_prefix + "_valid.nii.gz");
        const BinaryMask3 lesions = read_mask_nifti(lesions_path);
        const PatientMetrics pm = evaluate_map(map, lesions, cfg.connectivity);
        append_metrics_row(rows, case_id.empty() ? map_prefix : case_id, group, pm);
    } else {
        if (data_dir.empty() || maps_dir.empty())
            throw std::runtime_error("evaluate: provide --map-prefix/--lesions or --data/--maps");
        for (const auto& e : read_cases(data_dir)) {
            if (e.role != "patient") continue;
            AnomalyMap map;
            const std::string prefix = (fs::path(maps_dir) / e.id).string();
            map.score = read_scalar_nifti(prefix + "_map.nii.gz");
            map.valid = read_mask_nifti(prefix + "_valid.nii.gz");
            const BinaryMask3 lesions = read_mask_nifti((fs::path(data_dir) / e.lesion).string());
            const PatientMetrics pm = evaluate_map(map, lesions, cfg.connectivity);
            append_metrics_row(rows, e.id, group, pm);
        }
    }
    const bool exists = fs::exists(out_csv);
    if (append && exists) {
        std::ofstream out(out_csv, std::ios::app);
        if (!out) throw std::runtime_error("evaluate: cannot append to " + out_csv);
        out << rows.str();
    } else {
        std::ofstream out(guard.track(out_csv));
        if (!out) throw std::runtime_error("evaluate: cannot write " + out_csv);
        out << kMetricsHeader << rows.str();
    }
    write_manifest(guard, out_csv + ".manifest", "evaluate", cfg, common.threads);
    guard.commit();
    std::cout << "evaluate: wrote " << out_csv << "\n";
    return 0;
}

struct LoadedMethod {
    std::string name;
    std::map<std::string, std::pair<std::string, PatientMetrics>> by_case;  // id -> (group, pm)
};

LoadedMethod load_metrics_csv(const std::string& spec) {
    const std::size_t eq = spec.find('=');
    if (eq == std::string::npos)
        throw std::runtime_error("report: --in expects NAME=metrics.csv, found '" + spec + "'");
    LoadedMethod m;
    m.name = spec.substr(0, eq);
    const std::string path = spec.substr(eq + 1);
    std::ifstream in(path);
    if (!in) throw std::runtime_error("report: cannot open " + path);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string id, group;
        PatientMetrics pm;
        std::string tok;
        std::getline(ls, id, '\t');
        std::getline(ls, group, '\t');
        double vals[9];
        for (double& v : vals) {
            if (!std::getline(ls, tok, '\t')) throw std::runtime_error("report: short row in " + path);
            v = std::stod(tok);
        }
        pm.auroc = vals[0];
        pm.auroc30 = vals[1];
        pm.auprc = vals[3];
        pm.aupro = vals[4];
        pm.aupro30 = vals[5];
        pm.dice = vals[7];
        pm.dice_threshold = vals[8];
        m.by_case[id] = {group, pm};
    }
    if (m.by_case.empty()) throw std::runtime_error("report: no rows in " + path);
    return m;
}

int run_report(const CommonArgs& common, const std::vector<std::string>& inputs,
               const std::string& out_prefix) {
    const RunConfig cfg = common.config();
    std::vector<LoadedMethod> loaded;
    for (const auto& spec : inputs) loaded.push_back(load_metrics_csv(spec));
    // patients must match across methods; keyed by case id
    std::vector<std::string> ids;
    for (const auto& [id, unused] : loaded[0].by_case) {
        static_cast<void>(unused);
        ids.push_back(id);
    }
    std::vector<MethodResults> methods;
    std::vector<std::string> groups;
    for (const auto& lm : loaded) {
        MethodResults mr;
        mr.name = lm.name;
        for (const auto& id : ids) {
            auto it = lm.by_case.find(id);
            if (it == lm.by_case.end())
                throw std::runtime_error("report: case " + id + " missing from method " + lm.name);
            mr.patients.push_back(it->second.second);
        }
        methods.push_back(std::move(mr));
    }
    for (const auto& id : ids) groups.push_back(loaded[0].by_case.at(id).first);

    const MetricReport report = aggregate_report(methods, groups);
    OutputGuard guard;
    {
        std::ofstream out(guard.track(out_prefix + ".tsv"));
        out << report_to_csv(report);
    }
    {
        std::ofstream out(guard.track(out_prefix + ".txt"));
        out << report_to_table(report);
    }
    write_manifest(guard, out_prefix + ".manifest", "report", cfg, common.threads);
    guard.commit();
    std::cout << report_to_table(report);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Patch-based unsupervised anomaly detection for two-channel brain volumes"};
    app.require_subcommand(1);
    CommonArgs common;
    app.add_option("--config", common.config_path, "run configuration file (key = value lines)");
    app.add_option("--threads", common.threads, "worker threads")->check(CLI::PositiveNumber);

    auto* p_phantom = app.add_subcommand("phantom", "generate a synthetic phantom dataset");
    std::string phantom_out;
    p_phantom->add_option("--out", phantom_out, "output dataset directory")->required();

    auto* p_train = app.add_subcommand("train", "train the siamese auto-encoder on controls");
    std::string train_data, train_model, train_history;
    p_train->add_option("--data", train_data, "dataset directory (cases.tsv)")->required();
    p_train->add_option("--out", train_model, "output model file")->required();
    p_train->add_option("--history", train_history, "optional per-epoch loss table");

    auto* p_fit = app.add_subcommand("fit-score",
                                     "fit per-patient normality models and score whole brains");
    std::string fit_model, fit_data, fit_out, fit_t1, fit_flair, fit_vol, fit_mask, fit_prefix;
    bool fit_voxelwise = false, fit_save_models = false;
    p_fit->add_option("--model", fit_model, "trained SAE model")->required();
    p_fit->add_option("--data", fit_data, "dataset directory (batch mode / controls)");
    p_fit->add_option("--out", fit_out, "output directory for batch mode");
    p_fit->add_flag("--voxelwise", fit_voxelwise, "per-voxel OC-SVM baseline over the controls");
    p_fit->add_flag("--save-models", fit_save_models, "persist each patient's OC-SVM");
    p_fit->add_option("--t1", fit_t1, "single case: first modality volume");
    p_fit->add_option("--flair", fit_flair, "single case: second modality volume");
    p_fit->add_option("--volume4d", fit_vol, "single case: combined 2-channel volume");
    p_fit->add_option("--mask", fit_mask, "single case: brain mask");
    p_fit->add_option("--out-prefix", fit_prefix, "single case: output prefix");

    auto* p_post = app.add_subcommand("postprocess", "CSF exclusion on an anomaly map");
    std::string post_map, post_a, post_b, post_brain, post_out;
    p_post->add_option("--map-prefix", post_map, "input map prefix (expects _map/_valid)")->required();
    p_post->add_option("--seg-a", post_a, "first CSF segmentation mask")->required();
    p_post->add_option("--seg-b", post_b, "second CSF segmentation mask (defaults to seg-a)");
    p_post->add_option("--brain", post_brain, "gross brain segmentation")->required();
    p_post->add_option("--out-prefix", post_out, "output prefix")->required();

    auto* p_eval = app.add_subcommand("evaluate", "voxel-level metrics against lesion masks");
    std::string eval_map, eval_lesions, eval_id, eval_group = "all", eval_data, eval_maps, eval_out;
    bool eval_append = false;
    p_eval->add_option("--map-prefix", eval_map, "map prefix (expects _map/_valid)");
    p_eval->add_option("--lesions", eval_lesions, "ground-truth lesion mask");
    p_eval->add_option("--case", eval_id, "case identifier for the CSV row");
    p_eval->add_option("--group", eval_group, "group label (e.g. hospital)");
    p_eval->add_option("--data", eval_data, "dataset directory (batch mode)");
    p_eval->add_option("--maps", eval_maps, "directory of scored maps (batch mode)");
    p_eval->add_option("--out", eval_out, "metrics CSV")->required();
    p_eval->add_flag("--append", eval_append, "append to an existing CSV");

    auto* p_report = app.add_subcommand("report", "aggregate metrics CSVs into a method table");
    std::vector<std::string> report_in;
    std::string report_out;
    p_report->add_option("--in", report_in, "method input as NAME=metrics.csv (repeatable)")
        ->required();
    p_report->add_option("--out-prefix", report_out, "output prefix (.tsv/.txt)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (p_phantom->parsed()) return run_phantom(common, phantom_out);
        if (p_train->parsed()) return run_train(common, train_data, train_model, train_history);
        if (p_fit->parsed())
            return run_fit_score(common, fit_model, fit_data, fit_out, fit_voxelwise,
                                 fit_save_models, fit_t1, fit_flair, fit_vol, fit_mask, fit_prefix);
        if (p_post->parsed())
            return run_postprocess(common, post_map, post_a, post_b, post_brain, post_out);
        if (p_eval->parsed())
            return run_evaluate(common, eval_map, eval_lesions, eval_id, eval_group, eval_data,
                                eval_maps, eval_out, eval_append);
        if (p_report->parsed()) return run_report(common, report_in, report_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
