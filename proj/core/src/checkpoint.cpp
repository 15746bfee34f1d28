// SPDX-License-Identifier: Apache-2.0
#include "cdistill/checkpoint.hpp"

#include "cdistill/error.hpp"

namespace cdistill {

namespace {
constexpr const char* kKind = "checkpoint";
}

TensorContainer checkpoint_container(const Model& model, const Json& meta) {
  TensorContainer c;
  c.kind = kKind;
  const auto& s = model.spec();
  c.meta["spec"] = {{"arch_id", s.arch_id},
                    {"num_classes", s.num_classes},
                    {"height", s.height},
                    {"width", s.width},
                    {"channels", s.channels}};
  c.meta["params"] = model.parameter_names();
  c.meta["norm_layers"] = model.num_norm_layers();
  c.meta["user"] = meta;
  for (const Tensor* t : model.parameter_values()) c.tensors.push_back(*t);
  for (const auto& l : model.running_stats().layers) {
    const int ch = static_cast<int>(l.mean.size());
    c.tensors.emplace_back(Shape{1, ch, 1, 1}, l.mean);
    c.tensors.emplace_back(Shape{1, ch, 1, 1}, l.var);
  }
  return c;
}

Model model_from_container(const TensorContainer& c) {
  require(c.kind == kKind, ErrorKind::FormatError, "container is not a checkpoint");
  const Json& js = c.meta.at("spec");
  BackboneSpec spec{js.at("arch_id"), js.at("num_classes"), js.at("height"), js.at("width"), js.at("channels")};
  Model model = build_backbone(spec, 0);
  const auto names = c.meta.at("params").get<std::vector<std::string>>();
  const auto& params = model.parameters();
  require(names.size() == params.size() && c.tensors.size() == params.size() + 2 * model.num_norm_layers(),
          ErrorKind::FormatError, "checkpoint does not match architecture " + spec.str());
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(names[i] == params[i].name && c.tensors[i].shape() == params[i].value->shape(),
            ErrorKind::FormatError, "checkpoint parameter mismatch at " + names[i]);
    *params[i].value = c.tensors[i];
  }
  BNStatistics stats{StatsKind::Running, {}};
  for (std::size_t l = 0; l < model.num_norm_layers(); ++l) {
    const Tensor& m = c.tensors[params.size() + 2 * l];
    const Tensor& v = c.tensors[params.size() + 2 * l + 1];
    stats.layers.push_back({static_cast<int>(l), m.storage(), v.storage()});
  }
  model.set_running_stats(stats);
  return model;
}

void save_checkpoint(const Model& model, const std::string& path, const Json& meta) {
  write_container(path, checkpoint_container(model, meta));
}

Model load_checkpoint(const std::string& path, Json* meta) {
  TensorContainer c = read_container(path, kKind);
  if (meta != nullptr) *meta = c.meta.value("user", Json::object());
  return model_from_container(c);
}

}  // namespace cdistill
