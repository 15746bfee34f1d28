// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "cdistill/container.hpp"
#include "cdistill/model.hpp"

namespace cdistill {

/// Architecture spec, named parameters and running statistics in one
/// container. `meta` is stored alongside (accuracies, config, seed).
TensorContainer checkpoint_container(const Model& model, const Json& meta = Json::object());
Model model_from_container(const TensorContainer& c);

void save_checkpoint(const Model& model, const std::string& path, const Json& meta = Json::object());
Model load_checkpoint(const std::string& path, Json* meta = nullptr);

}  // namespace cdistill
