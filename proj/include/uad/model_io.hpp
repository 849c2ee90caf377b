#pragma once

#include <string>

#include "uad/ocsvm.hpp"
#include "uad/sae.hpp"

namespace uad {

// Model container: a text header (format version, model kind, architecture,
// hyperparameters) followed by named little-endian float32 tensor payloads.
// Loading re-validates the SAE shape chain and the OC-SVM dual constraints.

void save_sae(const SaeModel<float>& model, const std::string& path);
SaeModel<float> load_sae(const std::string& path);

void save_ocsvm(const OcsvmModel& model, const std::string& path);
OcsvmModel load_ocsvm(const std::string& path);

}  // namespace uad
