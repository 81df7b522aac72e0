#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fpforge/dataset.hpp"
#include "fpforge/detector.hpp"
#include "fpforge/error.hpp"

namespace fpforge {

namespace detail {

inline void check_scores(std::span<const double> scores, std::span<const int> labels, const char* who) {
  if (scores.empty()) throw ValidationError(std::string(who) + ": empty input");
  if (scores.size() != labels.size()) throw ValidationError(std::string(who) + ": scores and labels differ in length");
  for (int l : labels) {
    if (l != 0 && l != 1) throw ValidationError(std::string(who) + ": labels must be 0 or 1");
  }
}

}  // namespace detail

/// Fraction of samples with (score >= tau) == label.
inline double accuracy(std::span<const double> scores, std::span<const int> labels, double tau = 0.5) {
  detail::check_scores(scores, labels, "accuracy");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) hit += (scores[i] >= tau ? 1 : 0) == labels[i];
  return static_cast<double>(hit) / static_cast<double>(scores.size());
}

/// Step-interpolated AP: rank by descending score (equal scores keep their
/// original order) and average the precision at the rank of every positive.
inline double average_precision(std::span<const double> scores, std::span<const int> labels) {
  detail::check_scores(scores, labels, "average_precision");
  const auto positives = std::count(labels.begin(), labels.end(), 1);
  if (positives == 0) throw ValidationError("average_precision: no positive labels");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (labels[order[k]] == 1) {
      ++tp;
      ap += static_cast<double>(tp) / static_cast<double>(k + 1);
    }
  }
  return ap / static_cast<double>(positives);
}

struct SourceResult {
  std::string source;
  bool seen = false;
  double acc = 0.0;
  double ap = 0.0;
  std::size_t n_real = 0;
  std::size_t n_fake = 0;
};

struct EvalReport {
  std::string name;  // row label, e.g. the augmentation arm
  std::vector<SourceResult> sources;
  nlohmann::json config;

  double mean_acc() const { return mean_of(&SourceResult::acc, std::nullopt); }
  double mean_ap() const { return mean_of(&SourceResult::ap, std::nullopt); }
  double unseen_mean_acc() const { return mean_of(&SourceResult::acc, false); }
  double unseen_mean_ap() const { return mean_of(&SourceResult::ap, false); }
  double seen_mean_acc() const { return mean_of(&SourceResult::acc, true); }

  const SourceResult& at(const std::string& source) const {
    for (const auto& s : sources) {
      if (s.source == source) return s;
    }
    throw ValidationError("report has no source '" + source + "'");
  }

 private:
  double mean_of(double SourceResult::*field, std::optional<bool> seen) const {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& r : sources) {
      if (seen && r.seen != *seen) continue;
      s += r.*field;
      ++n;
    }
    return n ? s / static_cast<double>(n) : std::nan("");
  }
};

inline nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["name"] = r.name;
  j["sources"] = nlohmann::json::array();
  for (const auto& s : r.sources) {
    j["sources"].push_back({{"source", s.source},
                            {"seen", s.seen},
                            {"acc", s.acc},
                            {"ap", s.ap},
                            {"n_real", s.n_real},
                            {"n_fake", s.n_fake}});
  }
  j["mean_acc"] = finite_or_null(r.mean_acc());
  j["mean_ap"] = finite_or_null(r.mean_ap());
  j["unseen_mean_acc"] = finite_or_null(r.unseen_mean_acc());
  j["unseen_mean_ap"] = finite_or_null(r.unseen_mean_ap());
  if (!r.config.is_null()) j["config"] = r.config;
  return j;
}

/// Scores one source: its fakes plus its paired reals.
inline SourceResult score_source(const std::string& source, bool seen, std::span<const double> real_scores,
                                 std::span<const double> fake_scores) {
  std::vector<double> s(real_scores.begin(), real_scores.end());
  s.insert(s.end(), fake_scores.begin(), fake_scores.end());
  std::vector<int> l(real_scores.size(), 0);
  l.resize(s.size(), 1);
  return {source, seen, accuracy(s, l), average_precision(s, l), real_scores.size(), fake_scores.size()};
}

/// Per-GAN evaluation on the test split: every GAN's fakes against the reals
/// tagged for it. `gans` fixes the column order; seen GANs are flagged.
inline EvalReport cross_gan_eval(DetectorParams<float>& det, const Dataset& d, const std::vector<std::string>& gans,
                                 const std::vector<std::string>& seen) {
  if (gans.empty()) throw ValidationError("cross_gan_eval: no GANs to evaluate");
  EvalReport rep;
  for (const auto& g : gans) {
    const auto fakes = d.select([&](const SampleRecord& r) { return r.split == "test" && r.gan_id == g; });
    const auto reals = d.select([&](const SampleRecord& r) { return r.split == "test" && r.label == 0 && r.eval_for == g; });
    if (fakes.empty() || reals.empty()) {
      throw ValidationError("test split has no " + std::string(fakes.empty() ? "fakes" : "reals") + " for GAN '" + g + "'");
    }
    const auto rs = predict(d.batch(reals), det);
    const auto fs = predict(d.batch(fakes), det);
    const bool is_seen = std::find(seen.begin(), seen.end(), g) != seen.end();
    rep.sources.push_back(score_source(g, is_seen, rs, fs));
  }
  return rep;
}

/// Per-category evaluation of one GAN: fakes of each category against the
/// reals of the same category that are tagged for that GAN.
inline EvalReport cross_category_eval(DetectorParams<float>& det, const Dataset& d, const std::string& gan,
                                      const std::vector<std::string>& categories,
                                      const std::vector<std::string>& seen_categories) {
  if (categories.empty()) throw ValidationError("cross_category_eval: no categories to evaluate");
  EvalReport rep;
  for (const auto& c : categories) {
    const auto fakes = d.select([&](const SampleRecord& r) { return r.split == "test" && r.gan_id == gan && r.category_id == c; });
    const auto reals = d.select(
        [&](const SampleRecord& r) { return r.split == "test" && r.label == 0 && r.eval_for == gan && r.category_id == c; });
    if (fakes.empty() || reals.empty()) {
      throw ValidationError("test split has no " + std::string(fakes.empty() ? "fakes" : "reals") + " for GAN '" + gan +
                            "' in category '" + c + "'");
    }
    const auto rs = predict(d.batch(reals), det);
    const auto fs = predict(d.batch(fakes), det);
    const bool is_seen = std::find(seen_categories.begin(), seen_categories.end(), c) != seen_categories.end();
    rep.sources.push_back(score_source(c, is_seen, rs, fs));
  }
  return rep;
}

inline std::string pct(double v) {
  if (!std::isfinite(v)) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v * 100.0);
  return buf;
}

/// Column-aligned table: one row per report, an (Acc, AP) column pair per
/// source, Mean last. Values are percentages with one decimal.
inline std::string emit_table(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw ValidationError("emit_table: no reports");
  const auto& first = reports.front().sources;
  for (const auto& r : reports) {
    bool same = r.sources.size() == first.size();
    for (std::size_t i = 0; same && i < first.size(); ++i) same = r.sources[i].source == first[i].source;
    if (!same) throw ValidationError("emit_table: report '" + r.name + "' has a different source set");
  }
  std::vector<std::string> heads;
  for (const auto& s : first) heads.push_back(s.source + (s.seen ? "*" : ""));
  heads.push_back("Mean");
  std::size_t name_w = 6;
  for (const auto& r : reports) name_w = std::max(name_w, r.name.size());
  std::vector<std::size_t> col_w;
  for (const auto& h : heads) col_w.push_back(std::max<std::size_t>(h.size(), 11));

  auto pad = [](const std::string& s, std::size_t w) { return s + std::string(w > s.size() ? w - s.size() : 0, ' '); };
  auto pair = [&](const std::string& a, const std::string& b, std::size_t w) {
    std::string cell = pad(a, 5) + " " + b;
    return pad(cell, w);
  };
  std::string out = pad("Method", name_w);
  for (std::size_t i = 0; i < heads.size(); ++i) out += " | " + pad(heads[i], col_w[i]);
  out += "\n" + pad("", name_w);
  for (std::size_t i = 0; i < heads.size(); ++i) out += " | " + pair("Acc", "AP", col_w[i]);
  out += "\n";
  for (const auto& r : reports) {
    out += pad(r.name, name_w);
    for (std::size_t i = 0; i < r.sources.size(); ++i) out += " | " + pair(pct(r.sources[i].acc), pct(r.sources[i].ap), col_w[i]);
    out += " | " + pair(pct(r.mean_acc()), pct(r.mean_ap()), col_w.back());
    out += "\n";
  }
  while (out.find(" \n") != std::string::npos) out.replace(out.find(" \n"), 2, "\n");
  return out;
}

inline nlohmann::json table_json(const std::vector<EvalReport>& reports) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : reports) rows.push_back(report_to_json(r));
  return rows;
}

}  // namespace fpforge
