#pragma once

#include <cstdint>
#include <string>

#include "uad/ocsvm.hpp"
#include "uad/phantom.hpp"
#include "uad/sae.hpp"

namespace uad {

// Line-based `key = value` configuration covering every tunable of the
// pipeline. Unknown keys are rejected; defaults follow the reference
// hyperparameters (nu = 0.03, n = 500, patch 15, 30 epochs, batch 1000).
struct RunConfig {
    std::uint64_t seed = 42;
    double nu = 0.03;
    int n_locations = 500;
    int connectivity = 26;
    bool bonferroni = false;
    bool normalize_inputs = true;
    int phantom_controls = 20;
    int phantom_patients = 10;
    SaeConfig sae;
    SolverConfig solver;
    PhantomConfig phantom;
};

RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);
std::string serialize_config(const RunConfig& cfg);

}  // namespace uad
