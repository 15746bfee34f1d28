// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "cdistill/tensor.hpp"

namespace cdistill {

using Json = nlohmann::json;

inline constexpr std::uint32_t kContainerFormatVersion = 1;

/// Self-describing binary file: magic, format version, a JSON header
/// (kind, tensor extents, free-form metadata), then raw little-endian doubles.
struct TensorContainer {
  std::string kind;
  Json meta = Json::object();
  std::vector<Tensor> tensors;
};

std::string encode_container(const TensorContainer& c);
TensorContainer decode_container(std::string_view bytes, const std::string& origin = "<memory>");

void write_container(const std::string& path, const TensorContainer& c);
/// Throws FormatError on bad magic, version or kind mismatch.
TensorContainer read_container(const std::string& path, const std::string& expected_kind = "");

}  // namespace cdistill
