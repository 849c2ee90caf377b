#include "uad/runconfig.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace uad {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ',')) out.push_back(trim(tok));
    return out;
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config: boolean expected for " + key + ", found '" + v + "'");
}

std::string join_ints(const std::vector<int>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    return os.str();
}

std::string join_floats(float a, float b) { return fmt(a) + "," + fmt(b); }

}  // namespace

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::vector<int> kernels, strides, filters;
    for (const auto& b : cfg.sae.blocks) {
        kernels.push_back(b.kernel);
        strides.push_back(b.stride);
        filters.push_back(b.filters);
    }

    std::map<std::string, std::function<void(const std::string&)>> setters;
    auto set_u64 = [](std::uint64_t& dst) {
        return [&dst](const std::string& v) { dst = std::stoull(v); };
    };
    auto set_i = [](int& dst) {
        return [&dst](const std::string& v) { dst = std::stoi(v); };
    };
    auto set_i64 = [](std::int64_t& dst) {
        return [&dst](const std::string& v) { dst = std::stoll(v); };
    };
    auto set_d = [](double& dst) {
        return [&dst](const std::string& v) { dst = std::stod(v); };
    };
    auto set_ints = [](std::vector<int>& dst) {
        return [&dst](const std::string& v) {
            dst.clear();
            for (const auto& tok : split_commas(v)) dst.push_back(std::stoi(tok));
        };
    };
    auto set_f2 = [](std::array<float, 2>& dst) {
        return [&dst](const std::string& v) {
            const auto toks = split_commas(v);
            if (toks.size() != 2) throw std::invalid_argument("config: expected two comma-separated values");
            dst[0] = std::stof(toks[0]);
            dst[1] = std::stof(toks[1]);
        };
    };

    setters["seed"] = set_u64(cfg.seed);
    setters["nu"] = set_d(cfg.nu);
    setters["n_locations"] = set_i(cfg.n_locations);
    setters["connectivity"] = set_i(cfg.connectivity);
    setters["bonferroni"] = [&cfg](const std::string& v) { cfg.bonferroni = parse_bool(v, "bonferroni"); };
    setters["normalize_inputs"] = [&cfg](const std::string& v) {
        cfg.normalize_inputs = parse_bool(v, "normalize_inputs");
    };
    setters["phantom_controls"] = set_i(cfg.phantom_controls);
    setters["phantom_patients"] = set_i(cfg.phantom_patients);

    setters["sae.patch_size"] = set_i(cfg.sae.patch_size);
    setters["sae.alpha"] = set_d(cfg.sae.alpha);
    setters["sae.epochs"] = set_i(cfg.sae.epochs);
    setters["sae.batch_size"] = set_i(cfg.sae.batch_size);
    setters["sae.patches_per_subject"] = set_i64(cfg.sae.patches_per_subject);
    setters["sae.validation_fraction"] = set_d(cfg.sae.validation_fraction);
    setters["sae.kernels"] = set_ints(kernels);
    setters["sae.strides"] = set_ints(strides);
    setters["sae.filters"] = set_ints(filters);

    setters["solver.tolerance"] = set_d(cfg.solver.tolerance);
    setters["solver.max_iterations"] = set_i64(cfg.solver.max_iterations);

    setters["phantom.dims"] = [&cfg](const std::string& v) {
        const auto toks = split_commas(v);
        if (toks.size() != 3) throw std::invalid_argument("config: phantom.dims needs three values");
        for (int i = 0; i < 3; ++i) cfg.phantom.dims[i] = std::stoi(toks[i]);
    };
    setters["phantom.background_mean"] = set_f2(cfg.phantom.background_mean);
    setters["phantom.csf_mean"] = set_f2(cfg.phantom.csf_mean);
    setters["phantom.gm_mean"] = set_f2(cfg.phantom.gm_mean);
    setters["phantom.wm_mean"] = set_f2(cfg.phantom.wm_mean);
    setters["phantom.noise_std"] = set_d(cfg.phantom.noise_std);
    setters["phantom.bias_amplitude"] = set_d(cfg.phantom.bias_amplitude);
    setters["phantom.deform_amplitude"] = set_d(cfg.phantom.deform_amplitude);
    setters["phantom.lesion_count_min"] = set_i(cfg.phantom.lesion_count_min);
    setters["phantom.lesion_count_max"] = set_i(cfg.phantom.lesion_count_max);
    setters["phantom.lesion_radius_min"] = set_d(cfg.phantom.lesion_radius_min);
    setters["phantom.lesion_radius_max"] = set_d(cfg.phantom.lesion_radius_max);
    setters["phantom.lesion_contrast"] = set_d(cfg.phantom.lesion_contrast);
    setters["phantom.lesion_fraction_target"] = set_d(cfg.phantom.lesion_fraction_target);
    setters["phantom.lesion_fraction_tolerance"] = set_d(cfg.phantom.lesion_fraction_tolerance);
    setters["phantom.decoy_count"] = set_i(cfg.phantom.decoy_count);
    setters["phantom.decoy_contrast"] = set_d(cfg.phantom.decoy_contrast);

    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                        " is not 'key = value'");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        auto it = setters.find(key);
        if (it == setters.end())
            throw std::invalid_argument("config: unknown key '" + key + "' (line " +
                                        std::to_string(lineno) + ")");
        try {
            it->second(value);
        } catch (const std::invalid_argument&) {
            throw;
        } catch (const std::exception&) {
            throw std::invalid_argument("config: bad value for " + key + ": '" + value + "'");
        }
    }

    if (kernels.size() != strides.size() || kernels.size() != filters.size() || kernels.empty())
        throw std::invalid_argument("config: sae.kernels/strides/filters must have equal nonzero length");
    cfg.sae.blocks.clear();
    for (std::size_t i = 0; i < kernels.size(); ++i)
        cfg.sae.blocks.push_back({kernels[i], strides[i], filters[i]});

    if (!(cfg.nu > 0 && cfg.nu <= 1)) throw std::invalid_argument("config: nu must lie in (0, 1]");
    if (cfg.n_locations < 2) throw std::invalid_argument("config: n_locations must be >= 2");
    if (cfg.connectivity != 6 && cfg.connectivity != 18 && cfg.connectivity != 26)
        throw std::invalid_argument("config: connectivity must be 6, 18 or 26");
    if (!(cfg.solver.tolerance > 0)) throw std::invalid_argument("config: solver.tolerance must be > 0");

    // one seed fans out to every stage
    cfg.sae.seed = cfg.seed;
    cfg.phantom.seed = cfg.seed;
    cfg.solver.seed = cfg.seed;
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open: " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return parse_config_text(os.str());
}

std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream os;
    std::vector<int> kernels, strides, filters;
    for (const auto& b : cfg.sae.blocks) {
        kernels.push_back(b.kernel);
        strides.push_back(b.stride);
        filters.push_back(b.filters);
    }
    os << "seed = " << cfg.seed << "\n";
    os << "nu = " << fmt(cfg.nu) << "\n";
    os << "n_locations = " << cfg.n_locations << "\n";
    os << "connectivity = " << cfg.connectivity << "\n";
    os << "bonferroni = " << (cfg.bonferroni ? "true" : "false") << "\n";
    os << "normalize_inputs = " << (cfg.normalize_inputs ? "true" : "false") << "\n";
    os << "phantom_controls = " << cfg.phantom_controls << "\n";
    os << "phantom_patients = " << cfg.phantom_patients << "\n";
    os << "sae.patch_size = " << cfg.sae.patch_size << "\n";
    os << "sae.alpha = " << fmt(cfg.sae.alpha) << "\n";
    os << "sae.epochs = " << cfg.sae.epochs << "\n";
    os << "sae.batch_size = " << cfg.sae.batch_size << "\n";
    os << "sae.patches_per_subject = " << cfg.sae.patches_per_subject << "\n";
    os << "sae.validation_fraction = " << fmt(cfg.sae.validation_fraction) << "\n";
    os << "sae.kernels = " << join_ints(kernels) << "\n";
    os << "sae.strides = " << join_ints(strides) << "\n";
    os << "sae.filters = " << join_ints(filters) << "\n";
    os << "solver.tolerance = " << fmt(cfg.solver.tolerance) << "\n";
    os << "solver.max_iterations = " << cfg.solver.max_iterations << "\n";
    os << "phantom.dims = " << cfg.phantom.dims[0] << "," << cfg.phantom.dims[1] << ","
       << cfg.phantom.dims[2] << "\n";
    os << "phantom.background_mean = " << join_floats(cfg.phantom.background_mean[0], cfg.phantom.background_mean[1]) << "\n";
    os << "phantom.csf_mean = " << join_floats(cfg.phantom.csf_mean[0], cfg.phantom.csf_mean[1]) << "\n";
    os << "phantom.gm_mean = " << join_floats(cfg.phantom.gm_mean[0], cfg.phantom.gm_mean[1]) << "\n";
    os << "phantom.wm_mean = " << join_floats(cfg.phantom.wm_mean[0], cfg.phantom.wm_mean[1]) << "\n";
    os << "phantom.noise_std = " << fmt(cfg.phantom.noise_std) << "\n";
    os << "phantom.bias_amplitude = " << fmt(cfg.phantom.bias_amplitude) << "\n";
    os << "phantom.deform_amplitude = " << fmt(cfg.phantom.deform_amplitude) << "\n";
    os << "phantom.lesion_count_min = " << cfg.phantom.lesion_count_min << "\n";
    os << "phantom.lesion_count_max = " << cfg.phantom.lesion_count_max << "\n";
    os << "phantom.lesion_radius_min = " << fmt(cfg.phantom.lesion_radius_min) << "\n";
    os << "phantom.lesion_radius_max = " << fmt(cfg.phantom.lesion_radius_max) << "\n";
    os << "phantom.lesion_contrast = " << fmt(cfg.phantom.lesion_contrast) << "\n";
    os << "phantom.lesion_fraction_target = " << fmt(cfg.phantom.lesion_fraction_target) << "\n";
    os << "phantom.lesion_fraction_tolerance = " << fmt(cfg.phantom.lesion_fraction_tolerance) << "\n";
    os << "phantom.decoy_count = " << cfg.phantom.decoy_count << "\n";
    os << "phantom.decoy_contrast = " << fmt(cfg.phantom.decoy_contrast) << "\n";
    return os.str();
}

}  // namespace uad
