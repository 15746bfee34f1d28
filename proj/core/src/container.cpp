// SPDX-License-Identifier: Apache-2.0
#include "cdistill/container.hpp"

#include <cstring>

#include "cdistill/error.hpp"
#include "cdistill/io.hpp"

namespace cdistill {

namespace {

constexpr char kMagic[8] = {'C', 'D', 'S', 'T', 'B', 'U', 'N', 'D'};

template <typename T>
void put(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::string_view bytes, std::size_t& pos, const std::string& origin) {
  require(pos + sizeof(T) <= bytes.size(), ErrorKind::FormatError, origin + ": truncated");
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

std::string encode_container(const TensorContainer& c) {
  Json header;
  header["kind"] = c.kind;
  header["format_version"] = kContainerFormatVersion;
  header["meta"] = c.meta;
  Json shapes = Json::array();
  for (const auto& t : c.tensors) shapes.push_back({t.n(), t.c(), t.h(), t.w()});
  header["tensors"] = shapes;
  const std::string text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kContainerFormatVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& t : c.tensors) out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(Scalar));
  return out;
}

TensorContainer decode_container(std::string_view bytes, const std::string& origin) {
  require(bytes.size() >= sizeof(kMagic) && std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) == 0,
          ErrorKind::FormatError, origin + ": not a tensor container");
  std::size_t pos = sizeof(kMagic);
  const auto version = take<std::uint32_t>(bytes, pos, origin);
  require(version == kContainerFormatVersion, ErrorKind::FormatError,
          origin + ": unsupported format version " + std::to_string(version));
  const auto len = take<std::uint64_t>(bytes, pos, origin);
  require(pos + len <= bytes.size(), ErrorKind::FormatError, origin + ": truncated header");
  Json header;
  try {
    header = Json::parse(bytes.substr(pos, len));
  } catch (const Json::exception& e) {
    fail(ErrorKind::FormatError, origin + ": " + e.what());
  }
  pos += len;
  TensorContainer c;
  c.kind = header.at("kind").get<std::string>();
  c.meta = header.value("meta", Json::object());
  for (const auto& s : header.at("tensors")) {
    Shape shape{s[0].get<int>(), s[1].get<int>(), s[2].get<int>(), s[3].get<int>()};
    Tensor t(shape);
    const std::size_t nbytes = t.size() * sizeof(Scalar);
    require(pos + nbytes <= bytes.size(), ErrorKind::FormatError, origin + ": truncated payload");
    std::memcpy(t.data(), bytes.data() + pos, nbytes);
    pos += nbytes;
    c.tensors.push_back(std::move(t));
  }
  require(pos == bytes.size(), ErrorKind::FormatError, origin + ": trailing bytes");
  return c;
}

void write_container(const std::string& path, const TensorContainer& c) { atomic_write(path, encode_container(c)); }

TensorContainer read_container(const std::string& path, const std::string& expected_kind) {
  TensorContainer c = decode_container(read_file(path), path);
  require(expected_kind.empty() || c.kind == expected_kind, ErrorKind::FormatError,
          path + ": expected " + expected_kind + ", found " + c.kind);
  return c;
}

}  // namespace cdistill
