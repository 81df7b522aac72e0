#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fpforge/augment.hpp"
#include "fpforge/checkpoint.hpp"
#include "fpforge/config.hpp"
#include "fpforge/dataset.hpp"
#include "fpforge/detector.hpp"
#include "fpforge/error.hpp"
#include "fpforge/extractor.hpp"
#include "fpforge/metrics.hpp"
#include "fpforge/parallel.hpp"
#include "fpforge/spectrum.hpp"
#include "fpforge/synthgan.hpp"

#ifndef FPFORGE_VERSION_STRING
#define FPFORGE_VERSION_STRING "0.1.0"
#endif

namespace fpforge {

namespace fs = std::filesystem;

inline const char* version_string() { return FPFORGE_VERSION_STRING; }

/// Seeds of the individual stages, all derived from the master seed.
struct StageSeeds {
  std::uint64_t data, extractor, detector, perturb, mechanism;
  explicit StageSeeds(std::uint64_t master)
      : data(derive_seed(master, 1)),
        extractor(derive_seed(master, 2)),
        detector(derive_seed(master, 3)),
        perturb(derive_seed(master, 4)),
        mechanism(derive_seed(master, 5)) {}
};

struct RunOptions {
  unsigned threads = 1;
  std::ostream* log = nullptr;
};

namespace detail {

inline std::mutex& log_mutex() {
  static std::mutex m;
  return m;
}

inline void log_line(const RunOptions& opt, const std::string& msg) {
  if (!opt.log) return;
  std::lock_guard lock(log_mutex());
  *opt.log << "[fpforge] " << msg << std::endl;
}

/// Runs one pipeline stage; failures are re-thrown with the stage name and
/// keep their error class.
template <class Fn>
auto stage(const std::string& name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ValidationError& e) {
    throw ValidationError("stage " + name + ": " + e.what());
  } catch (const RuntimeError& e) {
    throw RuntimeError("stage " + name + ": " + e.what());
  } catch (const std::exception& e) {
    throw RuntimeError("stage " + name + ": " + e.what());
  }
}

inline bool stage_done(const fs::path& dir) { return fs::exists(dir / "DONE"); }
inline void mark_done(const fs::path& dir) { write_file(dir / "DONE", "ok\n"); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Stages. Each stage's output directory is named by the hash of everything
// that determines it, so identical requests reuse earlier results.

struct DataStage {
  std::string hash;
  fs::path dir;
  Dataset data;
};

inline std::string data_key(const BenchmarkConfig& cfg, std::uint64_t seed) {
  return json_hash({{"stage", "data"}, {"dataset", dataset_to_json(cfg)}, {"seed", seed}});
}

inline DataStage data_stage(const BenchmarkConfig& cfg, std::uint64_t seed, const fs::path& cache, const RunOptions& opt) {
  DataStage s;
  s.hash = data_key(cfg, seed);
  s.dir = cache / ("data-" + s.hash);
  if (detail::stage_done(s.dir)) {
    s.data = read_dataset(s.dir);
    return s;
  }
  detail::log_line(opt, "generating benchmark " + s.hash);
  s.data = make_benchmark(cfg, seed, opt.threads);
  s.data.config = {{"dataset", dataset_to_json(cfg)}, {"seed", seed}};
  write_dataset(s.data, s.dir);
  detail::mark_done(s.dir);
  return s;
}

struct ExtractorStage {
  std::string hash;
  fs::path dir;
  std::unique_ptr<ExtractorResult> result;
  nlohmann::json info;  // category ids, history, accuracy
};

inline nlohmann::json history_json(const std::vector<ExtractorEpochStats>& h) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& e : h) {
    out.push_back({{"epoch", e.epoch},
                   {"rec_loss", e.rec_loss},
                   {"adv_loss", finite_or_null(e.adv_loss)},
                   {"disc_batch_accuracy", finite_or_null(e.disc_accuracy)}});
  }
  return out;
}

/// Writes extractor.ckpt, extractor.json and loss.csv into `dir`.
inline void save_extractor(const fs::path& dir, ExtractorResult& res, bool adv_enabled, double disc_accuracy) {
  nlohmann::json info{{"category_ids", res.category_ids},
                      {"num_classes", res.discriminator.num_classes},
                      {"adv_enabled", adv_enabled},
                      {"history", history_json(res.history)},
                      {"disc_accuracy", finite_or_null(disc_accuracy)}};
  save_checkpoint(dir / "extractor.ckpt", extractor_parameters(res));
  write_file(dir / "extractor.json", info.dump(1) + "\n");
  write_file(dir / "loss.csv", history_csv(res.history));
}

/// Reads back what save_extractor wrote; `info` receives extractor.json.
inline std::unique_ptr<ExtractorResult> load_extractor(const fs::path& dir, nlohmann::json* info = nullptr) {
  auto j = nlohmann::json::parse(read_file(dir / "extractor.json"));
  const auto k = j.at("num_classes").get<std::size_t>();
  auto r = std::make_unique<ExtractorResult>(ExtractorResult{AutoencoderParams<float>(0), DiscriminatorParams<float>(k, 0),
                                                             j.at("category_ids").get<std::vector<std::string>>(), {}});
  load_checkpoint(dir / "extractor.ckpt", extractor_parameters(*r));
  if (info) *info = std::move(j);
  return r;
}

/// Trains E and D on the train split and saves them under `dir`.
inline void train_extractor_to(const Dataset& data, const ExtractorTrainConfig& cfg, const fs::path& dir) {
  auto td = extractor_data(data);
  auto res = train_extractor(td, cfg);
  const double acc =
      cfg.adv_enabled ? discriminator_accuracy(td.fakes, td.fake_labels, res.encoder, res.discriminator) : std::nan("");
  save_extractor(dir, res, cfg.adv_enabled, acc);
}

/// Trains (or loads) E and D on the train split of `data`. The returned
/// networks are always read back from the checkpoint file, so later stages
/// consume exactly the stored bytes.
inline ExtractorStage extractor_stage(const DataStage& data, const ExtractorTrainConfig& cfg, const fs::path& cache,
                                      const RunOptions& opt) {
  ExtractorStage s;
  s.hash = json_hash({{"stage", "extractor"}, {"data", data.hash}, {"extractor", extractor_to_json(cfg)}, {"seed", cfg.seed}});
  s.dir = cache / ("extractor-" + s.hash);
  if (!detail::stage_done(s.dir)) {
    detail::log_line(opt, "training extractor " + s.hash + (cfg.adv_enabled ? " (adv on)" : " (adv off)"));
    train_extractor_to(data.data, cfg, s.dir);
    detail::mark_done(s.dir);
  }
  s.result = load_extractor(s.dir, &s.info);
  return s;
}

struct DetectorStage {
  std::string hash;
  fs::path dir;
  std::unique_ptr<DetectorParams<float>> detector;
  nlohmann::json info;
};

struct TrainSet {
  Tensor<float> reals, fakes;
};

inline TrainSet train_set(const Dataset& d) {
  const auto r = d.select([](const SampleRecord& s) { return s.split == "train" && s.label == 0; });
  const auto f = d.select([](const SampleRecord& s) { return s.split == "train" && s.label == 1; });
  return {d.batch(r), d.batch(f)};
}

inline void save_detector(const fs::path& dir, DetectorResult& res, const DetectorTrainConfig& cfg, Strategy strategy) {
  nlohmann::json info{{"variant", cfg.variant},
                      {"strategy", strategy_name(strategy)},
                      {"loss_history", res.loss_history},
                      {"augment", {{"total", res.augment.total},
                                   {"perturbed", res.augment.perturbed},
                                   {"passed_through", res.augment.passed_through},
                                   {"mixup_fallbacks", res.augment.mixup_fallbacks}}}};
  save_checkpoint(dir / "detector.ckpt", res.detector.named_parameters());
  write_file(dir / "detector.json", info.dump(1) + "\n");
}

inline std::unique_ptr<DetectorParams<float>> load_detector(const fs::path& dir, nlohmann::json* info = nullptr) {
  auto j = nlohmann::json::parse(read_file(dir / "detector.json"));
  auto det = std::make_unique<DetectorParams<float>>(j.at("variant").get<std::string>(), 0);
  load_checkpoint(dir / "detector.ckpt", det->named_parameters());
  if (info) *info = std::move(j);
  return det;
}

/// `recon` must hold E(x_f) for the train fakes when the strategy is not None.
inline DetectorStage detector_stage(const DataStage& data, const TrainSet& train, const ExtractorStage* ext,
                                    const Tensor<float>* recon, PerturbConfig perturb, const DetectorTrainConfig& cfg,
                                    const fs::path& cache, const RunOptions& opt) {
  DetectorStage s;
  nlohmann::json key{{"stage", "detector"},
                     {"data", data.hash},
                     {"detector", detector_to_json(cfg)},
                     {"seed", cfg.seed},
                     {"strategy", strategy_name(perturb.strategy)}};
  if (perturb.strategy != Strategy::None) {
    if (!ext) throw ValidationError("augmented detector needs an extractor");
    key["extractor"] = ext->hash;
    key["perturb"] = perturb_to_json(perturb);
    key["perturb_seed"] = perturb.seed;
  }
  s.hash = json_hash(key);
  s.dir = cache / ("detector-" + s.hash);
  if (!detail::stage_done(s.dir)) {
    detail::log_line(opt, "training detector " + s.hash + " (" + strategy_name(perturb.strategy) + ", " + cfg.variant + ")");
    std::optional<std::uint64_t> before;
    if (ext) before = param_checksum(ext->result->encoder.named_parameters());
    auto res = train_detector(train.reals, train.fakes, recon, perturb, cfg);
    if (before && *before != param_checksum(ext->result->encoder.named_parameters())) {
      throw RuntimeError("extractor parameters changed during detector training");
    }
    save_detector(s.dir, res, cfg, perturb.strategy);
    detail::mark_done(s.dir);
  }
  s.detector = load_detector(s.dir, &s.info);
  return s;
}

// ---------------------------------------------------------------------------
// Mechanism checks: visual and spectral effect of the perturbations.

struct MechanismResult {
  nlohmann::json metrics;
  std::vector<std::pair<std::string, std::string>> files;  // relative path, bytes
};

inline std::vector<Tensor<float>> split_images(const Tensor<float>& batch) {
  std::vector<Tensor<float>> out;
  for (std::size_t i = 0; i < batch.dim(0); ++i) {
    auto one = slice_batch(batch, i, 1);
    out.push_back(one.reshaped({batch.dim(1), batch.dim(2), batch.dim(3)}));
  }
  return out;
}

/// Perturbs `fakes` in chunks of `batch` with every sample perturbed.
inline Tensor<float> perturb_all(const Tensor<float>& fakes, const Tensor<float>& recon, PerturbConfig cfg,
                                 std::size_t batch, std::uint64_t seed) {
  cfg.apply_prob = 1.0;
  Rng rng(seed);
  Tensor<float> out(fakes.shape());
  const std::size_t n = fakes.dim(0), per = fakes.numel() / n;
  for (std::size_t lo = 0; lo < n; lo += batch) {
    const std::size_t cnt = std::min(batch, n - lo);
    auto b = augment_batch(slice_batch(fakes, lo, cnt), slice_batch(recon, lo, cnt), cfg, rng);
    std::copy(b.storage().begin(), b.storage().end(), out.storage().begin() + static_cast<std::ptrdiff_t>(lo * per));
  }
  return out;
}

inline MechanismResult mechanism_checks(const Dataset& d, const BenchmarkConfig& bench, AutoencoderParams<float>& encoder,
                                        const PerturbConfig& perturb, std::size_t batch, std::size_t count,
                                        std::uint64_t seed) {
  MechanismResult m;
  const auto& seen = bench.seen_gans.front();
  auto first_n = [&](std::vector<std::size_t> idx) {
    if (idx.size() > count) idx.resize(count);
    return idx;
  };
  const auto real_idx = first_n(d.select([&](const SampleRecord& r) { return r.split == "test" && r.label == 0 && r.eval_for == seen; }));
  const auto fake_idx = first_n(d.select([&](const SampleRecord& r) { return r.split == "test" && r.gan_id == seen; }));
  if (real_idx.empty() || fake_idx.empty()) throw ValidationError("no test images for GAN '" + seen + "'");
  const auto reals = d.batch(real_idx);
  const auto fakes = d.batch(fake_idx);
  const auto recon = reconstruct(fakes, encoder);

  PerturbConfig mix = perturb;
  mix.strategy = Strategy::Mixup;
  PerturbConfig scl = perturb;
  scl.strategy = Strategy::Scaling;
  const auto mixed = perturb_all(fakes, recon, mix, batch, derive_seed(seed, 1));
  const auto scaled = perturb_all(fakes, recon, scl, batch, derive_seed(seed, 2));

  const std::size_t n = fakes.dim(0), per = fakes.numel() / n;
  std::vector<double> psnr_mix, psnr_scale, psnr_recon;
  for (std::size_t i = 0; i < n; ++i) {
    auto a = std::span<const float>(fakes.storage()).subspan(i * per, per);
    psnr_mix.push_back(psnr(a, std::span<const float>(mixed.storage()).subspan(i * per, per)));
    psnr_scale.push_back(psnr(a, std::span<const float>(scaled.storage()).subspan(i * per, per)));
    psnr_recon.push_back(psnr(a, std::span<const float>(recon.storage()).subspan(i * per, per)));
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
  };

  const auto real_list = split_images(reals), fake_list = split_images(fakes);
  const auto mix_list = split_images(mixed), scale_list = split_images(scaled);
  const auto spec_fake = average_spectrum(fake_list);
  const auto spec_mix = average_spectrum(mix_list);
  const auto spec_scale = average_spectrum(scale_list);
  const auto spec_real = average_spectrum(real_list);

  const auto [ky, kx] = characteristic_bin(find_gan(bench, seen), d.side);
  const auto lin_fake = mean_magnitude_spectrum(fake_list);
  const auto lin_real = mean_magnitude_spectrum(real_list);

  m.metrics = {{"gan", seen},
               {"images", n},
               {"median_psnr_mixup_db", median(psnr_mix)},
               {"median_psnr_scaling_db", median(psnr_scale)},
               {"median_psnr_reconstruction_db", median(psnr_recon)},
               {"spectrum_rel_l2_mixup", relative_l2(spec_fake, spec_mix)},
               {"spectrum_rel_l2_scaling", relative_l2(spec_fake, spec_scale)},
               {"characteristic_bin", {ky, kx}},
               {"peak_to_median_fake", peak_to_median(lin_fake, ky, kx)},
               {"peak_to_median_real", peak_to_median(lin_real, ky, kx)}};

  m.files.emplace_back("spectra/real.pgm", encode_pgm(spec_real));
  m.files.emplace_back("spectra/" + seen + ".pgm", encode_pgm(spec_fake));
  m.files.emplace_back("spectra/" + seen + "_mixup.pgm", encode_pgm(spec_mix));
  m.files.emplace_back("spectra/" + seen + "_scaling.pgm", encode_pgm(spec_scale));
  m.files.emplace_back("samples/real.ppm", encode_ppm(std::span<const float>(reals.storage()).subspan(0, per), d.side));
  m.files.emplace_back("samples/" + seen + ".ppm", encode_ppm(std::span<const float>(fakes.storage()).subspan(0, per), d.side));
  m.files.emplace_back("samples/" + seen + "_mixup.ppm", encode_ppm(std::span<const float>(mixed.storage()).subspan(0, per), d.side));
  m.files.emplace_back("samples/" + seen + "_scaling.ppm",
                       encode_ppm(std::span<const float>(scaled.storage()).subspan(0, per), d.side));

  nlohmann::json profiles = nlohmann::json::object();
  for (const auto& g : test_gans(bench)) {
    const auto gi = first_n(d.select([&](const SampleRecord& r) { return r.split == "test" && r.gan_id == g; }));
    const auto gl = split_images(d.batch(gi));
    const auto lin = mean_magnitude_spectrum(gl);
    const auto [gy, gx] = characteristic_bin(find_gan(bench, g), d.side);
    profiles[g] = {{"characteristic_bin", {gy, gx}},
                   {"peak_to_median_fake", peak_to_median(lin, gy, gx)},
                   {"peak_to_median_real", peak_to_median(lin_real, gy, gx)}};
    if (g != seen) m.files.emplace_back("spectra/" + g + ".pgm", encode_pgm(average_spectrum(gl)));
  }
  m.metrics["profiles"] = profiles;
  return m;
}

// ---------------------------------------------------------------------------

struct RunRecord {
  std::string config_hash;
  std::string version;
  std::string started;
  std::string finished;
  std::vector<std::string> artifacts;  // relative to the output dir
  nlohmann::json report;               // content of report.json
  std::string table;
};

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

namespace detail {

struct Arm {
  std::string name;
  PerturbConfig perturb;
  DetectorTrainConfig detector;
  const ExtractorStage* extractor = nullptr;
  const Tensor<float>* recon = nullptr;
};

inline nlohmann::json arm_summary(const EvalReport& r) {
  return {{"mean_acc", finite_or_null(r.mean_acc())},
          {"mean_ap", finite_or_null(r.mean_ap())},
          {"unseen_mean_acc", finite_or_null(r.unseen_mean_acc())},
          {"unseen_mean_ap", finite_or_null(r.unseen_mean_ap())},
          {"seen_acc", finite_or_null(r.seen_mean_acc())}};
}

}  // namespace detail

/// Runs the configured experiment end to end and writes report.json,
/// table.txt, run.json and figures under `out`. Stage results are cached
/// under cfg.cache_dir (default out/cache).
inline RunRecord run_experiment(const ExperimentConfig& cfg, const fs::path& out, const RunOptions& opt = {}) {
  validate_config(cfg);
  RunRecord rec;
  rec.started = utc_now();
  rec.version = version_string();
  const auto config_json = config_to_json(cfg);
  rec.config_hash = json_hash(config_json);
  const fs::path cache = cfg.cache_dir.empty() ? out / "cache" : fs::path(cfg.cache_dir);
  const StageSeeds seeds(cfg.seed);

  auto ext_cfg = cfg.extractor;
  ext_cfg.seed = seeds.extractor;
  auto det_cfg = cfg.detector;
  det_cfg.seed = seeds.detector;
  auto base_perturb = cfg.perturb;
  base_perturb.seed = seeds.perturb;

  std::vector<EvalReport> rows;
  nlohmann::json summary = nlohmann::json::object();
  nlohmann::json extractor_info = nlohmann::json::object();
  std::optional<MechanismResult> mech;

  // Trains every arm (possibly in parallel) and evaluates it with `eval`.
  auto run_arms = [&](const DataStage& data, const TrainSet& train, std::vector<detail::Arm>& arms,
                      const std::function<EvalReport(DetectorParams<float>&)>& eval) {
    std::vector<EvalReport> reps(arms.size());
    parallel_for(arms.size(), opt.threads, [&](std::size_t i) {
      auto& a = arms[i];
      auto det = detail::stage("train-detector[" + a.name + "]", [&] {
        return detector_stage(data, train, a.extractor, a.recon, a.perturb, a.detector, cache, opt);
      });
      reps[i] = detail::stage("evaluate[" + a.name + "]", [&] { return eval(*det.detector); });
      reps[i].name = a.name;
    });
    return reps;
  };
  auto make_arm = [&](const std::string& name, Strategy s, const ExtractorStage* ext, const Tensor<float>* recon,
                      const std::string& variant) {
    detail::Arm a;
    a.name = name;
    a.perturb = base_perturb;
    a.perturb.strategy = s;
    a.detector = det_cfg;
    a.detector.variant = variant;
    a.extractor = ext;
    a.recon = recon;
    return a;
  };
  auto ext_summary = [](const ExtractorStage& e) {
    const auto& h = e.info.at("history");
    return nlohmann::json{{"adv_enabled", e.info.at("adv_enabled")},
                          {"num_classes", e.info.at("num_classes")},
                          {"disc_accuracy", e.info.at("disc_accuracy")},
                          {"final_rec_loss", h.empty() ? nlohmann::json(nullptr) : h.back().at("rec_loss")}};
  };

  const auto gans = test_gans(cfg.dataset);
  const auto& seen = cfg.dataset.seen_gans;

  switch (cfg.kind) {
    case ExperimentKind::CrossGan:
    case ExperimentKind::AblationDetector: {
      auto data = detail::stage("gen-data", [&] { return data_stage(cfg.dataset, seeds.data, cache, opt); });
      auto ext = detail::stage("train-extractor", [&] { return extractor_stage(data, ext_cfg, cache, opt); });
      const auto train = train_set(data.data);
      const auto recon = reconstruct(train.fakes, ext.result->encoder);
      std::vector<detail::Arm> arms;
      if (cfg.kind == ExperimentKind::CrossGan) {
        for (auto s : cfg.arms) arms.push_back(make_arm(strategy_name(s), s, &ext, &recon, cfg.detector.variant));
      } else {
        for (const auto& v : cfg.detector_variants) {
          for (auto s : cfg.arms) arms.push_back(make_arm(v + "/" + strategy_name(s), s, &ext, &recon, v));
        }
      }
      rows = run_arms(data, train, arms, [&](DetectorParams<float>& det) { return cross_gan_eval(det, data.data, gans, seen); });
      for (const auto& r : rows) summary[r.name] = detail::arm_summary(r);
      if (cfg.kind == ExperimentKind::CrossGan) {
        const auto none = std::find_if(rows.begin(), rows.end(), [](const auto& r) { return r.name == "none"; });
        if (none != rows.end()) {
          for (const auto& r : rows) {
            if (r.name == "none") continue;
            summary[r.name]["delta_unseen_mean_acc"] = finite_or_null(r.unseen_mean_acc() - none->unseen_mean_acc());
            summary[r.name]["delta_unseen_mean_ap"] = finite_or_null(r.unseen_mean_ap() - none->unseen_mean_ap());
          }
        }
      }
      extractor_info = ext_summary(ext);
      if (cfg.spectra) {
        mech = detail::stage("spectrum", [&] {
          return mechanism_checks(data.data, cfg.dataset, ext.result->encoder, base_perturb, cfg.detector.batch_size,
                                  cfg.spectrum_images, seeds.mechanism);
        });
      }
      break;
    }
    case ExperimentKind::CrossCategory: {
      auto full = detail::stage("gen-data", [&] { return data_stage(cfg.dataset, seeds.data, cache, opt); });
      auto ext = detail::stage("train-extractor", [&] { return extractor_stage(full, ext_cfg, cache, opt); });
      auto one_cfg = cfg.dataset;
      one_cfg.train_categories = {cfg.train_category};
      one_cfg.unseen_gans.clear();
      one_cfg.test_per_gan = cfg.cross_category_test_per_gan;
      auto data = detail::stage("gen-data[" + cfg.train_category + "]", [&] { return data_stage(one_cfg, seeds.data, cache, opt); });
      const auto train = train_set(data.data);
      const auto recon = reconstruct(train.fakes, ext.result->encoder);
      std::vector<detail::Arm> arms;
      for (auto s : cfg.arms) arms.push_back(make_arm(strategy_name(s), s, &ext, &recon, cfg.detector.variant));
      std::vector<std::string> held_out;
      for (const auto& c : cfg.dataset.categories) {
        if (c.category_id != cfg.train_category) held_out.push_back(c.category_id);
      }
      rows = run_arms(data, train, arms, [&](DetectorParams<float>& det) {
        return cross_category_eval(det, data.data, seen.front(), held_out, {});
      });
      for (const auto& r : rows) summary[r.name] = detail::arm_summary(r);
      extractor_info = ext_summary(ext);
      break;
    }
    case ExperimentKind::CategorySweep: {
      std::vector<std::unique_ptr<ExtractorStage>> keep;
      for (std::size_t k : cfg.sweep_counts) {
        auto kcfg = cfg.dataset;
        kcfg.train_categories.clear();
        for (std::size_t i = 0; i < k; ++i) kcfg.train_categories.push_back(cfg.dataset.categories[i].category_id);
        const std::string tag = "k=" + std::to_string(k);
        auto data = detail::stage("gen-data[" + tag + "]", [&] { return data_stage(kcfg, seeds.data, cache, opt); });
        auto ecfg = ext_cfg;
        // A single fake category leaves nothing for D to tell apart.
        if (k < 2) ecfg.adv_enabled = false;
        auto ext = std::make_unique<ExtractorStage>(
            detail::stage("train-extractor[" + tag + "]", [&] { return extractor_stage(data, ecfg, cache, opt); }));
        const auto train = train_set(data.data);
        const auto recon = reconstruct(train.fakes, ext->result->encoder);
        std::vector<detail::Arm> arms;
        for (auto s : cfg.arms) arms.push_back(make_arm(tag + "/" + strategy_name(s), s, ext.get(), &recon, cfg.detector.variant));
        auto reps = run_arms(data, train, arms, [&](DetectorParams<float>& det) { return cross_gan_eval(det, data.data, gans, seen); });
        for (auto& r : reps) {
          summary[r.name] = detail::arm_summary(r);
          rows.push_back(std::move(r));
        }
        extractor_info[tag] = ext_summary(*ext);
        keep.push_back(std::move(ext));
      }
      break;
    }
    case ExperimentKind::AblationAdv: {
      auto data = detail::stage("gen-data", [&] { return data_stage(cfg.dataset, seeds.data, cache, opt); });
      const auto train = train_set(data.data);
      for (bool adv : {true, false}) {
        auto ecfg = ext_cfg;
        ecfg.adv_enabled = adv;
        const std::string tag = adv ? "with L_adv" : "without L_adv";
        auto ext = detail::stage(std::string("train-extractor[") + tag + "]", [&] { return extractor_stage(data, ecfg, cache, opt); });
        const auto recon = reconstruct(train.fakes, ext.result->encoder);
        std::vector<detail::Arm> arms{make_arm(tag, cfg.ablation_strategy, &ext, &recon, cfg.detector.variant)};
        auto reps = run_arms(data, train, arms, [&](DetectorParams<float>& det) { return cross_gan_eval(det, data.data, gans, seen); });
        summary[tag] = detail::arm_summary(reps.front());
        extractor_info[tag] = ext_summary(ext);
        rows.push_back(std::move(reps.front()));
      }
      summary["delta_mean_acc"] = finite_or_null(rows[0].mean_acc() - rows[1].mean_acc());
      summary["delta_mean_ap"] = finite_or_null(rows[0].mean_ap() - rows[1].mean_ap());
      const auto k = extractor_info["with L_adv"]["num_classes"].get<double>();
      summary["disc_accuracy_bound"] = 1.0 / k + 0.25;
      break;
    }
  }

  nlohmann::json report{{"experiment", experiment_name(cfg.kind)},
                        {"config_hash", rec.config_hash},
                        {"config", config_json},
                        {"rows", table_json(rows)},
                        {"summary", summary},
                        {"extractor", extractor_info}};
  if (mech) report["mechanism"] = mech->metrics;
  rec.report = report;
  rec.table = emit_table(rows);

  detail::stage("write-report", [&] {
    write_file(out / "report.json", report.dump(2) + "\n");
    write_file(out / "table.txt", rec.table);
    rec.artifacts = {"report.json", "table.txt"};
    if (mech) {
      for (const auto& [path, bytes] : mech->files) {
        write_file(out / path, bytes);
        rec.artifacts.push_back(path);
      }
    }
    rec.finished = utc_now();
    rec.artifacts.push_back("run.json");
    nlohmann::json run{{"config_hash", rec.config_hash},
                       {"version", rec.version},
                       {"started", rec.started},
                       {"finished", rec.finished},
                       {"cache_dir", cache.string()},
                       {"artifacts", rec.artifacts}};
    write_file(out / "run.json", run.dump(2) + "\n");
    return 0;
  });
  return rec;
}

}  // namespace fpforge
