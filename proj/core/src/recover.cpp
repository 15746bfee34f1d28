// SPDX-License-Identifier: Apache-2.0
#include "cdistill/recover.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>
#include <thread>

#include "cdistill/digest.hpp"
#include "cdistill/error.hpp"
#include "cdistill/io.hpp"
#include "cdistill/optim.hpp"
#include "cdistill/rng.hpp"

namespace cdistill {

namespace fs = std::filesystem;

std::string to_string(InitMode m) { return m == InitMode::RealPatch ? "real-patch" : "gaussian-noise"; }

InitMode init_mode_from_string(const std::string& s) {
  if (s == "real-patch") return InitMode::RealPatch;
  if (s == "gaussian-noise") return InitMode::GaussianNoise;
  fail(ErrorKind::InvalidConfig, "init mode must be real-patch or gaussian-noise, got '" + s + "'");
}

void RecoverConfig::validate() const {
  require(iterations >= 0, ErrorKind::InvalidConfig, "recover.iterations must be >= 0");
  require(learning_rate > 0, ErrorKind::InvalidConfig, "recover.learning_rate must be > 0");
  require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, ErrorKind::InvalidConfig, "recover.betas must lie in [0, 1)");
  require(epsilon > 0, ErrorKind::InvalidConfig, "recover.epsilon must be > 0");
  require(batch_size >= 0, ErrorKind::InvalidConfig, "recover.batch_size must be >= 0");
  require(lambda_bn >= 0, ErrorKind::InvalidConfig, "recover.lambda_bn must be >= 0");
  require(augmentation.scale_lo > 0 && augmentation.scale_lo <= augmentation.scale_hi && augmentation.scale_hi <= 1,
          ErrorKind::InvalidConfig, "recover.augmentation.scale must satisfy 0 < lo <= hi <= 1");
  voting.validate();
}

int RecoverConfig::effective_batch_size(int num_classes) const {
  if (batch_size > 0) return batch_size;
  return num_classes < 100 ? 10 : 100;
}

Json RecoverConfig::to_json() const {
  return {{"iterations", iterations},
          {"learning_rate", learning_rate},
          {"betas", {beta1, beta2}},
          {"epsilon", epsilon},
          {"batch_size", batch_size},
          {"init_mode", to_string(init_mode)},
          {"augmentation",
           {{"random_resized_crop", augmentation.random_resized_crop},
            {"horizontal_flip", augmentation.horizontal_flip},
            {"scale", {augmentation.scale_lo, augmentation.scale_hi}}}},
          {"lambda_bn", lambda_bn},
          {"voting", {{"N", voting.N}, {"temperature", voting.temperature}, {"voter_mode", to_string(voting.voter_mode)}}},
          {"resample_per_iteration", resample_per_iteration},
          {"seed", seed}};
}

std::string recover_config_digest(const RecoverConfig& cfg) {
  Json j = cfg.to_json();
  j.erase("seed");
  return sha256_hex(j.dump());
}

std::vector<std::string> member_ids(const std::vector<std::string>& arch_ids) {
  std::map<std::string, int> total, seen;
  for (const auto& a : arch_ids) ++total[a];
  std::vector<std::string> out;
  for (const auto& a : arch_ids) {
    const int k = seen[a]++;
    out.push_back(total[a] > 1 ? a + "@" + std::to_string(k) : a);
  }
  return out;
}

SyntheticSet init_synthetic(const LabeledDataset& data, int ipc, InitMode mode, int height, int width,
                            std::uint64_t seed, const AugmentFlags& crop) {
  require(ipc >= 1, ErrorKind::InvalidConfig, "ipc must be >= 1");
  require(data.num_classes > 0, ErrorKind::EmptyDataset, "dataset has no classes");
  const int C = data.num_classes;
  const int channels = data.images.empty() ? 3 : data.images.c();
  SyntheticSet s;
  s.dataset_id = data.dataset_id;
  s.num_classes = C;
  s.ipc = ipc;
  s.mean = data.mean;
  s.std = data.std;
  s.images = Tensor(Shape{ipc * C, channels, height, width});
  s.labels.resize(static_cast<std::size_t>(ipc) * C);
  for (int i = 0; i < ipc * C; ++i) s.labels[i] = i % C;

  if (mode == InitMode::GaussianNoise) {
    Rng rng = make_rng(seed, "init-gaussian");
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : s.images.values()) v = normal(rng);
    return s;
  }
  for (int cls = 0; cls < C; ++cls) {
    std::vector<int> pool = data.indices_of_class(cls);
    require(static_cast<int>(pool.size()) >= ipc, ErrorKind::InsufficientData,
            "class " + std::to_string(cls) + " has " + std::to_string(pool.size()) + " images, ipc is " +
                std::to_string(ipc));
    Rng rng = make_rng(seed, "init-patch", cls);
    std::shuffle(pool.begin(), pool.end(), rng);
    for (int r = 0; r < ipc; ++r) {
      const int slot = r * C + cls;
      const CropBox box = sample_crop_box(rng, data.images.h(), data.images.w(), crop.scale_lo, crop.scale_hi);
      resized_crop_into(data.images, pool[r], box, s.images, slot);
      s.init_records.push_back({slot, pool[r], box});
    }
  }
  std::sort(s.init_records.begin(), s.init_records.end(),
            [](const InitRecord& a, const InitRecord& b) { return a.slot < b.slot; });
  return s;
}

namespace {

struct Selection {
  std::vector<int> subset;
  std::vector<WeightedMember> members;
  std::vector<Scalar> weights;
};

Selection select(std::span<const CommitteeMember> committee, const PriorTable* prior, const VotingConfig& voting,
                 std::uint64_t seed) {
  Selection sel;
  if (committee.size() == 1) {
    sel.subset = {0};
    sel.weights = {1.0};
  } else {
    VotingConfig v = voting;
    v.seed = seed;
    sel.subset = sample_committee(static_cast<int>(committee.size()), v);
    std::vector<Scalar> alphas;
    for (int i : sel.subset) {
      if (voting.voter_mode == VoterMode::Prior) {
        require(prior != nullptr, ErrorKind::MissingPrior, "prior voting without a prior table");
        alphas.push_back(lookup_alpha(*prior, committee[i].member_id));
      } else {
        alphas.push_back(0.0);
      }
    }
    sel.weights = ppg_weights(alphas, voting.temperature, voting.voter_mode, seed);
  }
  for (std::size_t k = 0; k < sel.subset.size(); ++k) {
    const auto& m = committee[sel.subset[k]];
    require(m.model != nullptr, ErrorKind::IncompleteCommittee, "member " + m.member_id + " has no model");
    sel.members.push_back({m.model, m.member_id, sel.weights[k]});
  }
  return sel;
}

}  // namespace

RoundResult synthesize_ipc_round(std::span<const CommitteeMember> committee, const PriorTable* prior,
                                 std::span<const int> targets, const Tensor& init, const RecoverConfig& cfg,
                                 int ipc_round) {
  cfg.validate();
  require(!committee.empty(), ErrorKind::IncompleteCommittee, "empty committee");
  require(static_cast<int>(targets.size()) == init.n(), ErrorKind::ShapeError, "targets do not match init slab");
  if (committee.size() > 1) cfg.voting.validate(static_cast<int>(committee.size()));

  RoundResult out;
  out.images = init;
  RoundProvenance& prov = out.provenance;
  prov.ipc_round = ipc_round;
  prov.seed = derive_seed(cfg.seed, "round", static_cast<std::uint64_t>(ipc_round));
  Selection sel = select(committee, prior, cfg.voting, derive_seed(prov.seed, "subset"));
  prov.subset = sel.subset;
  for (const auto& m : sel.members) prov.members.push_back(m.member_id);
  prov.weights = sel.weights;

  int num_classes = 0;
  for (int t : targets) num_classes = std::max(num_classes, t + 1);
  const int B = cfg.effective_batch_size(std::max(num_classes, committee[0].model->spec().num_classes));
  const RecoverLossOptions opt{cfg.lambda_bn, true, std::nullopt};
  using Clock = std::chrono::steady_clock;

  for (int start = 0, chunk = 0; start < init.n(); start += B, ++chunk) {
    const int end = std::min(init.n(), start + B);
    std::vector<int> idx(end - start);
    for (int i = 0; i < end - start; ++i) idx[i] = start + i;
    Tensor x = gather(init, idx);
    const std::vector<int> y(targets.begin() + start, targets.begin() + end);
    Adam adam({&x}, {cfg.beta1, cfg.beta2, cfg.epsilon, 0.0, false});
    Rng aug_rng = make_rng(prov.seed, "augment", chunk);
    prov.chunk_sizes.push_back(end - start);
    prov.timing_marks.emplace_back();
    const auto t0 = Clock::now();
    std::vector<Tensor> grad(1);
    for (int it = 0; it < cfg.iterations; ++it) {
      prov.timing_marks.back().push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
      if (cfg.resample_per_iteration && committee.size() > 1) {
        sel = select(committee, prior, cfg.voting, derive_seed(prov.seed, "subset-iter", it));
      }
      const Scalar lr = cosine_lr(it, cfg.iterations, cfg.learning_rate, 0.0);
      Augmented aug = augment_batch(x, cfg.augmentation, aug_rng);
      Tensor g_aug;
      LossBreakdown loss = committee_loss(sel.members, aug.images, y, opt, &g_aug);
      if (!std::isfinite(loss.total))
        fail(ErrorKind::SynthesisDiverged,
             "non-finite loss at iteration " + std::to_string(it) + " of round " + std::to_string(ipc_round));
      grad[0] = augment_backward(g_aug, aug.records, x.shape());
      adam.step(grad, lr);
      prov.trace.push_back({it, chunk, lr, std::move(loss)});
    }
    prov.timing_marks.back().push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
    for (int i = start; i < end; ++i) copy_sample(x, i - start, out.images, i);
  }
  require(out.images.all_finite(), ErrorKind::SynthesisDiverged, "non-finite pixels in round " + std::to_string(ipc_round));
  return out;
}

SyntheticSet distill(const LabeledDataset& data, std::span<const CommitteeMember> committee,
                     const PriorTable* prior, int ipc, const RecoverConfig& cfg, int jobs) {
  cfg.validate();
  require(!committee.empty(), ErrorKind::IncompleteCommittee, "empty committee");
  if (committee.size() > 1 && cfg.voting.voter_mode == VoterMode::Prior) {
    require(prior != nullptr, ErrorKind::MissingPrior, "prior voting without a prior table");
    for (const auto& m : committee) lookup_alpha(*prior, m.member_id);
  }
  const auto& spec = committee[0].model->spec();
  SyntheticSet s = init_synthetic(data, ipc, cfg.init_mode, spec.height, spec.width, derive_seed(cfg.seed, "init"),
                                  cfg.augmentation);
  s.config_digest = recover_config_digest(cfg);
  const int C = s.num_classes;
  std::vector<RoundResult> results(ipc);
  auto run_round = [&](int r) {
    std::vector<int> idx(C);
    for (int c = 0; c < C; ++c) idx[c] = r * C + c;
    const Tensor init = gather(s.images, idx);
    const std::vector<int> targets(s.labels.begin() + r * C, s.labels.begin() + (r + 1) * C);
    results[r] = synthesize_ipc_round(committee, prior, targets, init, cfg, r);
  };
  jobs = std::max(1, jobs);
  if (jobs == 1) {
    for (int r = 0; r < ipc; ++r) run_round(r);
  } else {
    std::vector<std::exception_ptr> errors(ipc);
    for (int base = 0; base < ipc; base += jobs) {
      std::vector<std::thread> pool;
      for (int r = base; r < std::min(ipc, base + jobs); ++r) {
        pool.emplace_back([&, r] {
          try {
            run_round(r);
          } catch (...) {
            errors[r] = std::current_exception();
          }
        });
      }
      for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  for (int r = 0; r < ipc; ++r) {
    for (int c = 0; c < C; ++c) copy_sample(results[r].images, c, s.images, r * C + c);
    s.provenance.push_back(std::move(results[r].provenance));
  }
  return s;
}

namespace {

Json provenance_json(const RoundProvenance& p) {
  return {{"ipc_round", p.ipc_round}, {"seed", p.seed},         {"subset", p.subset},
          {"members", p.members},     {"weights", p.weights},   {"chunk_sizes", p.chunk_sizes},
          {"iterations", p.trace.empty() ? 0 : p.trace.back().iteration + 1}};
}

}  // namespace

void export_synthetic(const SyntheticSet& s, const std::string& dir) {
  const Tensor unit = denormalize(s.images, s.mean, s.std);
  for (int i = 0; i < s.images.n(); ++i) {
    const fs::path p = fs::path(dir) / std::to_string(s.labels[i]) / (std::to_string(s.ipc_index(i)) + ".ppm");
    atomic_write(p.string(), encode_ppm(unit, i));
  }
  TensorContainer c;
  c.kind = "synthetic-set";
  c.tensors.push_back(s.images);
  write_container((fs::path(dir) / "images.bin").string(), c);

  Json m;
  m["dataset_id"] = s.dataset_id;
  m["num_classes"] = s.num_classes;
  m["ipc"] = s.ipc;
  m["labels"] = s.labels;
  m["normalization"] = {{"mean", s.mean}, {"std", s.std}};
  m["config_digest"] = s.config_digest;
  m["images_sha256"] = sha256_hex(s.images);
  Json init = Json::array();
  for (const auto& r : s.init_records)
    init.push_back({{"slot", r.slot}, {"source", r.source_index}, {"box", {r.box.top, r.box.left, r.box.height, r.box.width}}});
  m["init_records"] = init;
  Json prov = Json::array();
  for (const auto& p : s.provenance) prov.push_back(provenance_json(p));
  m["provenance"] = prov;
  atomic_write((fs::path(dir) / "manifest.json").string(), m.dump(2) + "\n");
}

SyntheticSet load_synthetic(const std::string& dir) {
  const std::string mpath = (fs::path(dir) / "manifest.json").string();
  require(file_exists(mpath), ErrorKind::DependencyError, "no distilled set at " + dir);
  Json m = Json::parse(read_file(mpath));
  SyntheticSet s;
  s.dataset_id = m.at("dataset_id");
  s.num_classes = m.at("num_classes");
  s.ipc = m.at("ipc");
  s.labels = m.at("labels").get<std::vector<int>>();
  s.mean = m.at("normalization").at("mean").get<std::vector<double>>();
  s.std = m.at("normalization").at("std").get<std::vector<double>>();
  s.config_digest = m.value("config_digest", "");
  TensorContainer c = read_container((fs::path(dir) / "images.bin").string(), "synthetic-set");
  require(c.tensors.size() == 1, ErrorKind::FormatError, dir + ": images.bin layout");
  s.images = std::move(c.tensors[0]);
  require(sha256_hex(s.images) == m.value("images_sha256", ""), ErrorKind::FormatError,
          dir + ": images.bin does not match manifest digest");
  require(static_cast<int>(s.labels.size()) == s.images.n(), ErrorKind::FormatError, dir + ": label count");
  for (const auto& r : m.value("init_records", Json::array()))
    s.init_records.push_back({r.at("slot"), r.at("source"), {r.at("box")[0], r.at("box")[1], r.at("box")[2], r.at("box")[3]}});
  for (const auto& p : m.value("provenance", Json::array())) {
    RoundProvenance rp;
    rp.ipc_round = p.at("ipc_round");
    rp.seed = p.at("seed");
    rp.subset = p.at("subset").get<std::vector<int>>();
    rp.members = p.at("members").get<std::vector<std::string>>();
    rp.weights = p.at("weights").get<std::vector<Scalar>>();
    rp.chunk_sizes = p.value("chunk_sizes", std::vector<int>{});
    s.provenance.push_back(std::move(rp));
  }
  return s;
}

std::string loss_csv(const SyntheticSet& s) {
  std::ostringstream out;
  out.precision(10);
  out << "round,chunk,iteration,member,ce,bn_align,weight,total\n";
  for (const auto& p : s.provenance)
    for (const auto& row : p.trace)
      for (const auto& m : row.loss.per_member)
        out << p.ipc_round << ',' << row.chunk << ',' << row.iteration << ',' << m.member << ',' << m.ce << ','
            << m.bn_align << ',' << m.weight << ',' << row.loss.total << '\n';
  return out.str();
}

}  // namespace cdistill
