// SPDX-License-Identifier: Apache-2.0
#include "cdistill/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "cdistill/error.hpp"
#include "cdistill/io.hpp"
#include "cdistill/rng.hpp"

namespace cdistill {

namespace fs = std::filesystem;

DiversityReport intraclass_cosine(const Tensor& embeddings, std::span<const int> labels) {
  require(static_cast<int>(labels.size()) == embeddings.n(), ErrorKind::ShapeError, "label count mismatch");
  const std::size_t D = embeddings.shape().sample_size();
  std::map<int, std::vector<int>> groups;
  for (int i = 0; i < embeddings.n(); ++i) groups[labels[i]].push_back(i);
  require(!groups.empty(), ErrorKind::InsufficientSamples, "no embeddings");
  std::vector<Scalar> norms(embeddings.n());
  for (int i = 0; i < embeddings.n(); ++i) {
    const Scalar* a = embeddings.sample_ptr(i);
    Scalar s = 0;
    for (std::size_t k = 0; k < D; ++k) s += a[k] * a[k];
    norms[i] = std::sqrt(s);
  }
  DiversityReport r;
  Scalar total = 0;
  for (const auto& [cls, idx] : groups) {
    require(idx.size() >= 2, ErrorKind::InsufficientSamples,
            "class " + std::to_string(cls) + " has fewer than two samples");
    Scalar sum = 0;
    long pairs = 0;
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = i + 1; j < idx.size(); ++j) {
        const Scalar* a = embeddings.sample_ptr(idx[i]);
        const Scalar* b = embeddings.sample_ptr(idx[j]);
        Scalar dot = 0;
        for (std::size_t k = 0; k < D; ++k) dot += a[k] * b[k];
        const Scalar denom = norms[idx[i]] * norms[idx[j]];
        sum += denom > 0 ? std::clamp(dot / denom, -1.0, 1.0) : 0.0;
        ++pairs;
      }
    r.per_class[cls] = sum / pairs;
    total += r.per_class[cls];
  }
  r.overall_mean = total / Scalar(r.per_class.size());
  return r;
}

DiversityReport intraclass_cosine(const SyntheticSet& distilled, const Model& embed_model) {
  require(distilled.ipc >= 2, ErrorKind::InsufficientSamples, "diversity needs ipc >= 2");
  std::vector<Tensor> parts;
  const int chunk = 250;
  for (int start = 0; start < distilled.images.n(); start += chunk) {
    const int end = std::min(distilled.images.n(), start + chunk);
    std::vector<int> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    ForwardPass pass;
    parts.push_back(embed_model.embed(gather(distilled.images, idx), pass));
  }
  DiversityReport r = intraclass_cosine(concat_batch(parts), distilled.labels);
  r.embed_arch = embed_model.spec().arch_id;
  return r;
}

BNDiscrepancyReport stats_discrepancy(std::span<const BNStatistics> batches, const BNStatistics& running) {
  require(!batches.empty(), ErrorKind::EmptyBatch, "no batches to compare");
  BNDiscrepancyReport r;
  r.batches_evaluated = static_cast<int>(batches.size());
  r.per_layer.resize(running.layers.size());
  for (std::size_t l = 0; l < running.layers.size(); ++l) r.per_layer[l].layer_id = running.layers[l].layer_id;
  for (const auto& b : batches) {
    require(b.layers.size() == running.layers.size(), ErrorKind::ShapeError, "layer count mismatch");
    for (std::size_t l = 0; l < b.layers.size(); ++l) {
      const auto& x = b.layers[l];
      const auto& y = running.layers[l];
      require(x.mean.size() == y.mean.size(), ErrorKind::ShapeError, "channel count mismatch");
      Scalar dm = 0, dv = 0;
      for (std::size_t c = 0; c < x.mean.size(); ++c) {
        dm += (x.mean[c] - y.mean[c]) * (x.mean[c] - y.mean[c]);
        dv += (x.var[c] - y.var[c]) * (x.var[c] - y.var[c]);
      }
      r.per_layer[l].mean_gap += std::sqrt(dm) / r.batches_evaluated;
      r.per_layer[l].var_gap += std::sqrt(dv) / r.batches_evaluated;
    }
  }
  return r;
}

BNDiscrepancyReport bn_discrepancy(std::span<const Tensor> batches, const Model& teacher) {
  require(!batches.empty(), ErrorKind::EmptyBatch, "no batches to compare");
  std::vector<BNStatistics> caps;
  for (const auto& b : batches) caps.push_back(capture_batch_stats(teacher, b).stats);
  return stats_discrepancy(caps, read_running_stats(teacher));
}

DiscrepancyComparison compare_discrepancy(const Tensor& synthetic, const Tensor& real, const Model& teacher,
                                          int batch_size, int batches, std::uint64_t seed) {
  require(synthetic.n() >= 2 && real.n() >= 2, ErrorKind::EmptyBatch, "need at least two images per source");
  require(batches >= 1, ErrorKind::RangeError, "batches must be >= 1");
  const int bs = std::min({batch_size, synthetic.n(), real.n()});
  require(bs >= 2, ErrorKind::RangeError, "batch size must be >= 2");
  auto draw = [&](const Tensor& pool, std::string_view tag) {
    Rng rng = make_rng(seed, tag);
    std::vector<int> order(pool.n());
    std::iota(order.begin(), order.end(), 0);
    std::vector<Tensor> out;
    for (int b = 0; b < batches; ++b) {
      std::shuffle(order.begin(), order.end(), rng);
      out.push_back(gather(pool, std::span<const int>(order.data(), bs)));
    }
    return out;
  };
  DiscrepancyComparison c;
  c.batch_size = bs;
  c.synthetic = bn_discrepancy(draw(synthetic, "discrepancy-synthetic"), teacher);
  c.real = bn_discrepancy(draw(real, "discrepancy-real"), teacher);
  int mean_above = 0, var_above = 0;
  const std::size_t L = c.synthetic.per_layer.size();
  for (std::size_t l = 0; l < L; ++l) {
    mean_above += c.synthetic.per_layer[l].mean_gap > c.real.per_layer[l].mean_gap;
    var_above += c.synthetic.per_layer[l].var_gap > c.real.per_layer[l].var_gap;
  }
  c.mean_fraction_above = L ? double(mean_above) / double(L) : 0.0;
  c.var_fraction_above = L ? double(var_above) / double(L) : 0.0;
  return c;
}

namespace {

std::string svg_plot(const TrainingTrace& t, const std::string& title) {
  const double W = 640, H = 400, L = 50, R = 20, T = 30, Bm = 40;
  const int E = static_cast<int>(t.per_epoch.size());
  auto px = [&](double e) { return L + (E > 1 ? e / (E - 1) : 0.5) * (W - L - R); };
  auto py = [&](double acc) { return H - Bm - acc / 100.0 * (H - T - Bm); };
  auto poly = [&](bool train, const char* color) {
    std::ostringstream s;
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (int i = 0; i < E; ++i) {
      const double v = train ? t.per_epoch[i].train_top1 : t.per_epoch[i].test_top1;
      if (std::isnan(v)) continue;
      s << px(i) << ',' << py(v) << ' ';
    }
    s << "\"/>\n";
    return s.str();
  };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << L << "\" y=\"20\" font-size=\"14\">" << title << "</text>\n"
    << "<line x1=\"" << L << "\" y1=\"" << H - Bm << "\" x2=\"" << W - R << "\" y2=\"" << H - Bm
    << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - Bm << "\" stroke=\"black\"/>\n";
  for (int a = 0; a <= 100; a += 25)
    s << "<text x=\"" << L - 30 << "\" y=\"" << py(a) + 4 << "\" font-size=\"10\">" << a << "</text>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"" << H - 10 << "\" font-size=\"11\">epoch</text>\n";
  s << poly(true, "#d62728") << poly(false, "#1f77b4");
  s << "<text x=\"" << W - 150 << "\" y=\"" << T + 15 << "\" font-size=\"11\" fill=\"#d62728\">train top-1</text>\n"
    << "<text x=\"" << W - 150 << "\" y=\"" << T + 30 << "\" font-size=\"11\" fill=\"#1f77b4\">test top-1</text>\n"
    << "</svg>\n";
  return s.str();
}

std::string safe_name(const std::string& s) {
  std::string out;
  for (char c : s) out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_');
  return out.empty() ? "run" : out;
}

}  // namespace

CurveFiles emit_curves(std::span<const TrainingTrace> traces, std::span<const std::string> labels,
                       const std::string& dir) {
  require(!traces.empty(), ErrorKind::AlignmentError, "no traces to plot");
  require(traces.size() == labels.size(), ErrorKind::AlignmentError, "one label per trace required");
  for (const auto& t : traces) {
    require(t.per_epoch.size() == traces[0].per_epoch.size(), ErrorKind::AlignmentError, "traces differ in length");
    for (std::size_t i = 0; i < t.per_epoch.size(); ++i)
      require(t.per_epoch[i].epoch == traces[0].per_epoch[i].epoch, ErrorKind::AlignmentError,
              "traces disagree on epoch numbering");
  }
  CurveFiles files;
  std::ostringstream csv;
  csv.precision(17);
  csv << "epoch,label,train_top1,test_top1\n";
  for (std::size_t k = 0; k < traces.size(); ++k) {
    for (const auto& r : traces[k].per_epoch) {
      csv << r.epoch << ',' << labels[k] << ',' << r.train_top1 << ',';
      if (std::isnan(r.test_top1)) {
        csv << "nan";
      } else {
        csv << r.test_top1;
      }
      csv << '\n';
    }
    const std::string plot = (fs::path(dir) / (safe_name(labels[k]) + ".svg")).string();
    atomic_write(plot, svg_plot(traces[k], labels[k]));
    files.plots.push_back(plot);
  }
  files.csv = (fs::path(dir) / "curves.csv").string();
  atomic_write(files.csv, csv.str());
  return files;
}

double timing_probe(const TimingLog& log) {
  require(log.marks_ms.size() >= 2, ErrorKind::IncompleteLog, "timing log needs at least two marks");
  require(log.batch_size > 0, ErrorKind::IncompleteLog, "timing log has no batch size");
  const double span = log.marks_ms.back() - log.marks_ms.front();
  const double per_step = span / double(log.marks_ms.size() - 1);
  return per_step / log.batch_size;
}

}  // namespace cdistill
