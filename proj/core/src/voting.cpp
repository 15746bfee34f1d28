// SPDX-License-Identifier: Apache-2.0
#include "cdistill/voting.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cdistill/error.hpp"
#include "cdistill/losses.hpp"
#include "cdistill/rng.hpp"

namespace cdistill {

std::string to_string(VoterMode m) {
  switch (m) {
    case VoterMode::Prior:
      return "prior";
    case VoterMode::Equal:
      return "equal";
    default:
      return "random";
  }
}

VoterMode voter_mode_from_string(const std::string& s) {
  if (s == "prior") return VoterMode::Prior;
  if (s == "equal") return VoterMode::Equal;
  if (s == "random") return VoterMode::Random;
  fail(ErrorKind::InvalidConfig, "voter mode must be prior, equal or random, got '" + s + "'");
}

void VotingConfig::validate(int committee_size) const {
  require(N >= 2, ErrorKind::InvalidSubsetSize, "committee subset size N=" + std::to_string(N) + " is below 2");
  require(committee_size < 0 || N <= committee_size, ErrorKind::InvalidSubsetSize,
          "committee subset size N=" + std::to_string(N) + " exceeds committee of " + std::to_string(committee_size));
  require(temperature > 0 && std::isfinite(temperature), ErrorKind::InvalidConfig, "temperature must be positive");
}

std::vector<Scalar> WeightVector::values() const {
  std::vector<Scalar> out;
  for (const auto& p : pairs) out.push_back(p.second);
  return out;
}

Scalar WeightVector::sum() const {
  Scalar s = 0;
  for (const auto& p : pairs) s += p.second;
  return s;
}

std::vector<int> sample_committee(int committee_size, const VotingConfig& cfg) {
  cfg.validate(committee_size);
  std::vector<int> pool(committee_size);
  std::iota(pool.begin(), pool.end(), 0);
  Rng rng = make_rng(cfg.seed, "committee");
  for (int i = 0; i < cfg.N; ++i) std::swap(pool[i], pool[uniform_int(rng, i, committee_size - 1)]);
  std::vector<int> out(pool.begin(), pool.begin() + cfg.N);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<Scalar> ppg_weights(std::span<const Scalar> alphas, Scalar temperature, VoterMode mode,
                                std::uint64_t seed) {
  require(!alphas.empty(), ErrorKind::InvalidSubsetSize, "no committee members to weight");
  for (Scalar a : alphas) require(std::isfinite(a), ErrorKind::InvalidScore, "non-finite prior score");
  require(temperature > 0, ErrorKind::InvalidConfig, "temperature must be positive");
  const std::size_t n = alphas.size();
  std::vector<Scalar> w(n);
  switch (mode) {
    case VoterMode::Prior: {
      const Scalar mx = *std::max_element(alphas.begin(), alphas.end());
      Scalar s = 0;
      for (std::size_t i = 0; i < n; ++i) s += (w[i] = std::exp((alphas[i] - mx) / temperature));
      for (auto& v : w) v /= s;
      break;
    }
    case VoterMode::Equal:
      std::fill(w.begin(), w.end(), 1.0 / Scalar(n));
      break;
    case VoterMode::Random: {
      // Normalized unit exponentials are a symmetric Dirichlet(1) draw.
      Rng rng = make_rng(seed, "random-voter");
      std::exponential_distribution<double> expo(1.0);
      Scalar s = 0;
      for (auto& v : w) s += (v = expo(rng));
      for (auto& v : w) v /= s;
      break;
    }
  }
  return w;
}

WeightVector ppg_weight_vector(const std::vector<std::string>& members, std::span<const Scalar> alphas,
                               Scalar temperature, VoterMode mode, std::uint64_t seed) {
  require(members.size() == alphas.size(), ErrorKind::ShapeError, "member and score counts differ");
  const auto w = ppg_weights(alphas, temperature, mode, seed);
  WeightVector out;
  for (std::size_t i = 0; i < w.size(); ++i) out.pairs.emplace_back(members[i], w[i]);
  return out;
}

MemberLoss recover_loss(const Model& teacher, const Tensor& x, std::span<const int> y,
                        const RecoverLossOptions& opt, Tensor* grad_x) {
  require(x.n() > 0, ErrorKind::EmptyBatch, "recover_loss on an empty batch");
  require(static_cast<int>(y.size()) == x.n(), ErrorKind::ShapeError, "label count does not match batch");
  require(x.c() == teacher.spec().channels && x.h() == teacher.spec().height && x.w() == teacher.spec().width,
          ErrorKind::ShapeError, "batch " + x.shape().str() + " does not fit " + teacher.spec().str());
  require(teacher.num_norm_layers() > 0, ErrorKind::NoNormalizationLayers, "teacher has no normalization layers");

  ForwardPass pass;
  pass.mode = NormMode::Batch;
  pass.record = grad_x != nullptr;
  pass.epsilon = opt.epsilon;
  const Tensor logits = teacher.forward(x, pass);

  MemberLoss out;
  Tensor dlogits(logits.shape());
  if (opt.include_ce) {
    LossAndGrad ce = cross_entropy(logits, y);
    out.ce = ce.loss;
    dlogits = std::move(ce.grad);
  }
  const auto& layers = pass.capture.layers;
  require(layers.size() == teacher.num_norm_layers(), ErrorKind::ShapeError, "incomplete statistics capture");
  if (grad_x != nullptr) pass.stat_grads.resize(layers.size());
  for (const auto& l : layers) {
    const BatchNorm2d& bn = teacher.norm_layer(l.layer_id);
    const auto& rm = bn.running_mean();
    const auto& rv = bn.running_var();
    StatGradient* sg = grad_x != nullptr ? &pass.stat_grads[l.layer_id] : nullptr;
    if (sg != nullptr) {
      sg->d_mean.resize(rm.size());
      sg->d_var.resize(rv.size());
    }
    for (std::size_t c = 0; c < rm.size(); ++c) {
      const Scalar dm = l.mean[c] - rm[c];
      const Scalar dv = l.var[c] - rv[c];
      out.bn_align += dm * dm + dv * dv;
      if (sg != nullptr) {
        sg->d_mean[c] = 2 * opt.lambda_bn * dm;
        sg->d_var[c] = 2 * opt.lambda_bn * dv;
      }
    }
  }
  out.composite = out.ce + opt.lambda_bn * out.bn_align;
  out.weighted = out.composite;
  if (grad_x != nullptr) *grad_x = teacher.backward(dlogits, pass, nullptr);
  return out;
}

LossBreakdown committee_loss(std::span<const WeightedMember> members, const Tensor& x, std::span<const int> y,
                             const RecoverLossOptions& opt, Tensor* grad_x) {
  require(!members.empty(), ErrorKind::InvalidSubsetSize, "empty committee");
  LossBreakdown out;
  out.lambda_bn = opt.lambda_bn;
  if (grad_x != nullptr) *grad_x = Tensor(x.shape());
  Tensor g;
  for (const auto& m : members) {
    require(m.model != nullptr, ErrorKind::IncompleteCommittee, "committee member " + m.member_id + " has no model");
    MemberLoss l = recover_loss(*m.model, x, y, opt, grad_x != nullptr ? &g : nullptr);
    l.member = m.member_id;
    l.weight = m.weight;
    l.weighted = m.weight * l.composite;
    out.total += l.weighted;
    if (grad_x != nullptr && m.weight != 0) {
      for (std::size_t i = 0; i < g.size(); ++i) (*grad_x)[i] += m.weight * g[i];
    }
    out.per_member.push_back(std::move(l));
  }
  return out;
}

}  // namespace cdistill
