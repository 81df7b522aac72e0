#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fpforge/fpforge.hpp"

namespace fs = std::filesystem;
using namespace fpforge;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  unsigned threads = 1;
};

ExperimentConfig load_config(const Globals& g) {
  ExperimentConfig cfg = g.config.empty() ? ExperimentConfig{} : parse_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  validate_config(cfg);
  return cfg;
}

fs::path require_out(const Globals& g) {
  if (g.out.empty()) throw ValidationError("--out is required");
  return g.out;
}

Dataset load_data(const std::string& dir) {
  auto d = read_dataset(dir);
  validate_dataset(d);
  return d;
}

RunOptions run_options(const Globals& g) { return RunOptions{std::max(1u, g.threads), &std::cerr}; }

void print_written(const fs::path& p) { std::cout << "wrote " << p.string() << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fingerprint-perturbation training pipeline for synthetic-image detectors"};
  app.set_version_flag("--version", std::string(version_string()));
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Master seed (overrides the config)");
  app.add_option("--out", g.out, "Output directory (or file for spectrum)");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic benchmark");

  auto* tex = app.add_subcommand("train-extractor", "Train the fingerprint extractor on a dataset");
  std::string data_dir;
  tex->add_option("--data", data_dir, "Dataset directory")->required();

  auto* per = app.add_subcommand("perturb", "Write a copy of a dataset with perturbed train fakes");
  std::string ext_dir, strategy;
  per->add_option("--data", data_dir, "Dataset directory")->required();
  per->add_option("--extractor", ext_dir, "Extractor directory")->required();
  per->add_option("--strategy", strategy, "scaling or mixup (default: config perturb.strategy)");

  auto* tdet = app.add_subcommand("train-detector", "Train a detector, optionally with fingerprint perturbation");
  std::string variant;
  tdet->add_option("--data", data_dir, "Dataset directory")->required();
  tdet->add_option("--extractor", ext_dir, "Extractor directory (required unless --strategy none)");
  tdet->add_option("--strategy", strategy, "none, scaling or mixup (default: config perturb.strategy)");
  tdet->add_option("--variant", variant, "smaller, small or larger (default: config detector.variant)");

  auto* ev = app.add_subcommand("evaluate", "Score a detector on the test split");
  std::string det_dir, by = "gan", gan_id;
  ev->add_option("--data", data_dir, "Dataset directory")->required();
  ev->add_option("--detector", det_dir, "Detector directory")->required();
  ev->add_option("--by", by, "gan or category")->check(CLI::IsMember({"gan", "category"}));
  ev->add_option("--gan", gan_id, "GAN whose categories are scored with --by category");

  auto* sp = app.add_subcommand("spectrum", "Average log spectrum of a set of test images as PGM");
  std::string source, csv_path;
  std::size_t count = 200;
  bool reals = false;
  sp->add_option("--data", data_dir, "Dataset directory")->required();
  sp->add_option("--source", source, "GAN id")->required();
  sp->add_flag("--reals", reals, "Use the reals paired with the GAN instead of its fakes");
  sp->add_option("--count", count, "Number of images")->check(CLI::PositiveNumber);
  sp->add_option("--csv", csv_path, "Also write the linear spectrum as CSV");

  auto* exp = app.add_subcommand("experiment", "Run a full experiment from a config");

  for (auto* sub : {gen, tex, per, tdet, ev, sp, exp}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    const auto cfg = load_config(g);
    const StageSeeds seeds(cfg.seed);
    const auto opt = run_options(g);

    if (gen->parsed()) {
      const auto out = require_out(g);
      auto d = make_benchmark(cfg.dataset, seeds.data, opt.threads);
      d.config = {{"dataset", dataset_to_json(cfg.dataset)}, {"seed", seeds.data}};
      write_dataset(d, out);
      print_written(out / "manifest.json");
    } else if (tex->parsed()) {
      const auto out = require_out(g);
      auto ecfg = cfg.extractor;
      ecfg.seed = seeds.extractor;
      train_extractor_to(load_data(data_dir), ecfg, out);
      print_written(out / "extractor.ckpt");
    } else if (per->parsed()) {
      const auto out = require_out(g);
      auto pcfg = cfg.perturb;
      pcfg.seed = seeds.perturb;
      if (!strategy.empty()) pcfg.strategy = parse_strategy(strategy);
      if (pcfg.strategy == Strategy::None) throw ValidationError("perturb needs strategy scaling or mixup");
      auto d = load_data(data_dir);
      auto ext = load_extractor(ext_dir);
      const auto idx = d.select([](const SampleRecord& r) { return r.split == "train" && r.label == 1; });
      Rng rng(derive_seed(pcfg.seed, 23));
      AugmentReport rep;
      const std::size_t bs = cfg.detector.batch_size;
      for (std::size_t lo = 0; lo < idx.size(); lo += bs) {
        const std::vector<std::size_t> part(idx.begin() + static_cast<std::ptrdiff_t>(lo),
                                            idx.begin() + static_cast<std::ptrdiff_t>(std::min(lo + bs, idx.size())));
        const auto before = rep.records.size();
        auto aug = augment_batch(d.batch(part), ext->encoder, pcfg, rng, &rep);
        for (std::size_t k = 0; k < part.size(); ++k) {
          auto px = std::span<const float>(aug.storage()).subspan(k * d.image_numel(), d.image_numel());
          std::copy(px.begin(), px.end(), d.pixels.begin() + static_cast<std::ptrdiff_t>(part[k] * d.image_numel()));
          d.records[part[k]].perturbation = rep.records[before + k];
        }
      }
      d.config["perturb"] = perturb_to_json(pcfg);
      write_dataset(d, out);
      std::cout << "perturbed " << rep.perturbed << " of " << rep.total << " train fakes\n";
      print_written(out / "manifest.json");
    } else if (tdet->parsed()) {
      const auto out = require_out(g);
      auto pcfg = cfg.perturb;
      pcfg.seed = seeds.perturb;
      if (!strategy.empty()) pcfg.strategy = parse_strategy(strategy);
      auto dcfg = cfg.detector;
      dcfg.seed = seeds.detector;
      if (!variant.empty()) dcfg.variant = variant;
      const auto d = load_data(data_dir);
      const auto train = train_set(d);
      std::optional<Tensor<float>> recon;
      if (pcfg.strategy != Strategy::None) {
        if (ext_dir.empty()) throw ValidationError("--extractor is required with strategy " + strategy_name(pcfg.strategy));
        auto ext = load_extractor(ext_dir);
        recon = reconstruct(train.fakes, ext->encoder);
      }
      auto res = train_detector(train.reals, train.fakes, recon ? &*recon : nullptr, pcfg, dcfg);
      save_detector(out, res, dcfg, pcfg.strategy);
      print_written(out / "detector.ckpt");
    } else if (ev->parsed()) {
      const auto out = require_out(g);
      const auto d = load_data(data_dir);
      auto det = load_detector(det_dir);
      EvalReport rep;
      if (by == "gan") {
        std::vector<std::string> gans, seen;
        for (const auto& r : d.records) {
          if (r.split == "test" && r.gan_id && std::find(gans.begin(), gans.end(), *r.gan_id) == gans.end()) {
            gans.push_back(*r.gan_id);
          }
          if (r.split == "train" && r.gan_id && std::find(seen.begin(), seen.end(), *r.gan_id) == seen.end()) {
            seen.push_back(*r.gan_id);
          }
        }
        rep = cross_gan_eval(*det, d, gans, seen);
      } else {
        if (gan_id.empty()) throw ValidationError("--gan is required with --by category");
        std::vector<std::string> cats, seen;
        for (const auto& r : d.records) {
          if (r.split == "test" && r.gan_id == gan_id && std::find(cats.begin(), cats.end(), r.category_id) == cats.end()) {
            cats.push_back(r.category_id);
          }
          if (r.split == "train" && r.label == 1 && std::find(seen.begin(), seen.end(), r.category_id) == seen.end()) {
            seen.push_back(r.category_id);
          }
        }
        rep = cross_category_eval(*det, d, gan_id, cats, seen);
      }
      rep.name = fs::path(det_dir).filename().string();
      const auto table = emit_table({rep});
      write_file(out / "report.json", nlohmann::json{{"rows", table_json({rep})}}.dump(2) + "\n");
      write_file(out / "table.txt", table);
      std::cout << table;
    } else if (sp->parsed()) {
      const auto out = require_out(g);
      const auto d = load_data(data_dir);
      auto idx = d.select([&](const SampleRecord& r) {
        return r.split == "test" && (reals ? (r.label == 0 && r.eval_for == source) : r.gan_id == source);
      });
      if (idx.empty()) throw ValidationError("no test images for source '" + source + "'");
      if (idx.size() > count) idx.resize(count);
      std::vector<Tensor<float>> imgs;
      for (auto i : idx) imgs.push_back(d.image(i));
      export_pgm(average_spectrum(imgs), out);
      print_written(out);
      if (!csv_path.empty()) {
        write_file(csv_path, spectrum_csv(mean_magnitude_spectrum(imgs)));
        print_written(csv_path);
      }
    } else if (exp->parsed()) {
      fs::path out = g.out.empty() ? fs::path(cfg.output_dir) : fs::path(g.out);
      if (out.empty()) throw ValidationError("--out or output_dir is required");
      const auto rec = run_experiment(cfg, out, opt);
      std::cout << rec.table;
      print_written(out / "report.json");
    }
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
