// SPDX-License-Identifier: Apache-2.0
#include "cdistill/config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <optional>
#include <set>

#include "cdistill/digest.hpp"
#include "cdistill/error.hpp"
#include "cdistill/io.hpp"

namespace cdistill {

namespace {

// Reads one YAML mapping, remembering which keys were consumed so leftovers
// can be reported as unknown.
class Section {
 public:
  Section(YAML::Node node, std::string path, const std::string& origin)
      : node_(std::move(node)), path_(std::move(path)), origin_(origin) {
    if (!node_.IsMap()) bad(node_, "expected a mapping");
  }

  bool has(const char* key) const { return node_[key].IsDefined() && !node_[key].IsNull(); }

  template <typename T>
  void read(const char* key, T& out) {
    used_.insert(key);
    const YAML::Node v = node_[key];
    if (!v.IsDefined() || v.IsNull()) return;
    if (!v.IsScalar()) bad(v, "expected a scalar for '" + name(key) + "'");
    try {
      out = v.as<T>();
    } catch (const YAML::Exception&) {
      bad(v, "cannot read '" + name(key) + "' from '" + v.Scalar() + "'");
    }
  }

  void read_pair(const char* key, double& a, double& b) {
    used_.insert(key);
    const YAML::Node v = node_[key];
    if (!v.IsDefined() || v.IsNull()) return;
    if (!v.IsSequence() || v.size() != 2) bad(v, "'" + name(key) + "' must be a two-element list");
    try {
      a = v[0].as<double>();
      b = v[1].as<double>();
    } catch (const YAML::Exception&) {
      bad(v, "'" + name(key) + "' must contain numbers");
    }
  }

  void read_list(const char* key, std::vector<std::string>& out) {
    used_.insert(key);
    const YAML::Node v = node_[key];
    if (!v.IsDefined() || v.IsNull()) return;
    if (!v.IsSequence()) bad(v, "'" + name(key) + "' must be a list");
    out.clear();
    for (const auto& e : v) {
      if (!e.IsScalar()) bad(e, "'" + name(key) + "' must contain strings");
      out.push_back(e.Scalar());
    }
  }

  // Reads a string and maps it through `convert`, reporting failures at the value.
  template <typename T, typename F>
  void read_enum(const char* key, T& out, F convert) {
    std::string s;
    read(key, s);
    if (s.empty()) return;
    try {
      out = convert(s);
    } catch (const Error& e) {
      bad(node_[key], e.what());
    }
  }

  std::optional<Section> child(const char* key) {
    used_.insert(key);
    const YAML::Node v = node_[key];
    if (!v.IsDefined() || v.IsNull()) return std::nullopt;
    return Section(v, name(key), origin_);
  }

  void finish() const {
    for (const auto& kv : node_) {
      const std::string k = kv.first.Scalar();
      if (!used_.count(k)) bad(kv.first, "unknown key '" + name(k) + "'");
    }
  }

  // Runs a validator and pins any failure to this section's line.
  template <typename F>
  void check(F validate) const {
    try {
      validate();
    } catch (const Error& e) {
      fail(e.kind(), where(node_) + e.what());
    }
  }

  [[noreturn]] void bad(const YAML::Node& at, const std::string& message) const {
    fail(ErrorKind::InvalidConfig, where(at) + message);
  }

 private:
  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string where(const YAML::Node& at) const {
    const auto m = at.Mark();
    if (m.is_null()) return origin_ + ": ";
    return origin_ + ":" + std::to_string(m.line + 1) + ":" + std::to_string(m.column + 1) + ": ";
  }

  YAML::Node node_;
  std::string path_;
  const std::string& origin_;
  std::set<std::string> used_;
};

void read_augment(Section& s, AugmentFlags& a) {
  s.read("random_resized_crop", a.random_resized_crop);
  s.read("horizontal_flip", a.horizontal_flip);
  s.read_pair("scale", a.scale_lo, a.scale_hi);
  s.finish();
}

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "adamw") return OptimizerKind::AdamW;
  if (s == "sgd") return OptimizerKind::Sgd;
  fail(ErrorKind::InvalidConfig, "optimizer must be adam, adamw or sgd, got '" + s + "'");
}

SchedulerKind scheduler_from_string(const std::string& s) {
  if (s == "cosine") return SchedulerKind::Cosine;
  if (s == "constant") return SchedulerKind::Constant;
  fail(ErrorKind::InvalidConfig, "scheduler must be cosine or constant, got '" + s + "'");
}

CosineMode cosine_mode_from_string(const std::string& s) {
  if (s == "cycles") return CosineMode::Cycles;
  if (s == "stretch") return CosineMode::Stretch;
  fail(ErrorKind::InvalidConfig, "cosine_mode must be cycles or stretch, got '" + s + "'");
}

PriorSource prior_source_from_string(const std::string& s) {
  if (s == "computed") return PriorSource::Computed;
  if (s == "reference") return PriorSource::Reference;
  fail(ErrorKind::InvalidConfig, "prior.source must be computed or reference, got '" + s + "'");
}

void read_squeeze(Section& s, SqueezeConfig& c) {
  s.read_enum("optimizer", c.optimizer, optimizer_from_string);
  s.read("learning_rate", c.learning_rate);
  s.read("momentum", c.momentum);
  s.read_pair("betas", c.beta1, c.beta2);
  s.read("weight_decay", c.weight_decay);
  s.read("batch_size", c.batch_size);
  s.read("epochs", c.epochs);
  s.read_enum("scheduler", c.scheduler, scheduler_from_string);
  if (auto a = s.child("augmentation")) read_augment(*a, c.augmentation);
  s.read("seed", c.seed);
  s.finish();
  s.check([&] { c.validate(); });
}

void read_recover(Section& s, RecoverConfig& c, int committee_size) {
  s.read("iterations", c.iterations);
  s.read("learning_rate", c.learning_rate);
  s.read_pair("betas", c.beta1, c.beta2);
  s.read("epsilon", c.epsilon);
  s.read("batch_size", c.batch_size);
  s.read_enum("init_mode", c.init_mode, init_mode_from_string);
  if (auto a = s.child("augmentation")) read_augment(*a, c.augmentation);
  s.read("lambda_bn", c.lambda_bn);
  if (auto v = s.child("voting")) {
    v->read("N", c.voting.N);
    v->read("temperature", c.voting.temperature);
    v->read_enum("voter_mode", c.voting.voter_mode, voter_mode_from_string);
    v->finish();
    v->check([&] { c.voting.validate(committee_size > 1 ? committee_size : -1); });
  }
  s.read("resample_per_iteration", c.resample_per_iteration);
  s.finish();
  s.check([&] { c.validate(); });
}

void read_eval(Section& s, PostEvalConfig& c) {
  s.read("student_arch", c.student_arch);
  s.read("learning_rate", c.learning_rate);
  s.read("weight_decay", c.weight_decay);
  s.read_pair("betas", c.beta1, c.beta2);
  s.read("batch_size", c.batch_size);
  s.read("epochs", c.epochs);
  s.read("eta", c.eta);
  s.read_enum("cosine_mode", c.cosine_mode, cosine_mode_from_string);
  s.read("min_lr", c.min_lr);
  if (auto a = s.child("augmentation")) read_augment(*a, c.augmentation);
  s.read("cutmix", c.cutmix);
  s.read("cutmix_beta", c.cutmix_beta);
  s.read("kd_temperature", c.kd_temperature);
  s.read_enum("label_mode", c.labels.mode, label_mode_from_string);
  s.read("label_epsilon", c.labels.epsilon);
  s.read("protect_running_stats", c.labels.protect_running_stats);
  s.read("test_every", c.test_every);
  s.read("test_tail", c.test_tail);
  s.finish();
  s.check([&] { c.validate(); });
}

YAML::Node to_yaml(const Json& j) {
  YAML::Node n;
  if (j.is_object()) {
    n = YAML::Node(YAML::NodeType::Map);
    for (const auto& [k, v] : j.items()) n[k] = to_yaml(v);
  } else if (j.is_array()) {
    n = YAML::Node(YAML::NodeType::Sequence);
    for (const auto& v : j) n.push_back(to_yaml(v));
  } else if (j.is_boolean()) {
    n = j.get<bool>();
  } else if (j.is_number_unsigned()) {
    n = j.get<std::uint64_t>();
  } else if (j.is_number_integer()) {
    n = j.get<std::int64_t>();
  } else if (j.is_number_float()) {
    n = j.get<double>();
  } else if (j.is_string()) {
    n = j.get<std::string>();
  }
  return n;
}

}  // namespace

SqueezeConfig squeeze_preset(const std::string& dataset_id) {
  SqueezeConfig c;
  c.learning_rate = 0.01;
  if (dataset_id == "toy10") {
    c.batch_size = 16;
    c.epochs = 50;
  } else {
    c.batch_size = 32;
    c.epochs = 8;
  }
  return c;
}

void PipelineConfig::validate() const {
  require(version == kConfigVersion, ErrorKind::InvalidConfig,
          "unsupported config version " + std::to_string(version));
  require(ipc >= 1, ErrorKind::InvalidConfig, "ipc must be >= 1");
  require(!committee.members.empty(), ErrorKind::InvalidConfig, "committee.members is empty");
  require(prior.ipc >= 0 && prior.iterations >= 0 && prior.eval_epochs >= 0, ErrorKind::InvalidConfig,
          "prior overrides must be >= 0");
  require(prior.source != PriorSource::Reference || !prior.reference_path.empty(), ErrorKind::InvalidConfig,
          "prior.reference_path is required when prior.source is reference");
  squeeze.validate();
  recover.validate();
  if (committee.members.size() > 1) recover.voting.validate(static_cast<int>(committee.members.size()));
  eval.validate();
}

Json PipelineConfig::to_json() const {
  Json rec = recover.to_json();
  rec.erase("seed");
  Json ev = eval.to_json();
  ev.erase("seed");
  return {{"version", version},
          {"seed", seed},
          {"ipc", ipc},
          {"dataset", {{"id", dataset.id}, {"manifest", dataset.manifest}}},
          {"committee", {{"members", committee.members}}},
          {"squeeze", squeeze.to_json()},
          {"prior",
           {{"source", prior.source == PriorSource::Computed ? "computed" : "reference"},
            {"reference_path", prior.reference_path},
            {"ipc", prior.ipc},
            {"iterations", prior.iterations},
            {"eval_epochs", prior.eval_epochs}}},
          {"recover", rec},
          {"label", {{"teacher", label.teacher}}},
          {"eval", ev}};
}

std::string PipelineConfig::digest() const {
  Json j = to_json();
  j.erase("seed");
  return sha256_hex(j.dump());
}

PipelineConfig parse_config(const std::string& text, const std::string& origin) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    fail(ErrorKind::InvalidConfig, origin + ":" + std::to_string(e.mark.line + 1) + ":" +
                                       std::to_string(e.mark.column + 1) + ": " + e.msg);
  }
  if (root.IsNull()) fail(ErrorKind::InvalidConfig, origin + ": empty config");
  PipelineConfig c;
  Section top(root, "", origin);
  if (!top.has("version")) top.bad(root, "missing 'version'");
  top.read("version", c.version);
  if (c.version != kConfigVersion) top.bad(root["version"], "unsupported version " + std::to_string(c.version));
  top.read("seed", c.seed);
  top.read("ipc", c.ipc);
  if (auto d = top.child("dataset")) {
    d->read("id", c.dataset.id);
    d->read("manifest", c.dataset.manifest);
    d->finish();
  }
  c.squeeze = squeeze_preset(c.dataset.id);
  if (auto m = top.child("committee")) {
    m->read_list("members", c.committee.members);
    m->finish();
    m->check([&] {
      require(!c.committee.members.empty(), ErrorKind::InvalidConfig, "committee.members is empty");
      const auto known = registered_architectures();
      for (const auto& a : c.committee.members)
        require(std::find(known.begin(), known.end(), a) != known.end(), ErrorKind::InvalidConfig,
                "unknown architecture '" + a + "' in committee.members");
    });
  }
  if (auto s = top.child("squeeze")) read_squeeze(*s, c.squeeze);
  if (auto p = top.child("prior")) {
    p->read_enum("source", c.prior.source, prior_source_from_string);
    p->read("reference_path", c.prior.reference_path);
    p->read("ipc", c.prior.ipc);
    p->read("iterations", c.prior.iterations);
    p->read("eval_epochs", c.prior.eval_epochs);
    p->finish();
  }
  if (auto r = top.child("recover")) read_recover(*r, c.recover, static_cast<int>(c.committee.members.size()));
  if (auto l = top.child("label")) {
    l->read("teacher", c.label.teacher);
    l->finish();
  }
  if (auto e = top.child("eval")) read_eval(*e, c.eval);
  top.finish();
  top.check([&] { c.validate(); });
  return c;
}

PipelineConfig load_config(const std::string& path) {
  if (!file_exists(path)) fail(ErrorKind::InvalidConfig, "config file not found: " + path);
  return parse_config(read_file(path), path);
}

std::string dump_config(const PipelineConfig& cfg) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << to_yaml(cfg.to_json());
  return std::string(out.c_str()) + "\n";
}

void save_config(const PipelineConfig& cfg, const std::string& path) { atomic_write(path, dump_config(cfg)); }

PipelineConfig config_from_json(const Json& j) { return parse_config(j.dump(), "<json>"); }

}  // namespace cdistill
