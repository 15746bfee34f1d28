// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>

namespace cdistill {

/// Writes `bytes` to `path` via a sibling temporary file and rename, creating
/// parent directories. Readers never observe a partial file.
void atomic_write(const std::string& path, std::string_view bytes);

/// Whole-file read; throws IoError when missing.
std::string read_file(const std::string& path);

bool file_exists(const std::string& path);

}  // namespace cdistill
