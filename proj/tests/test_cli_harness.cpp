#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "fpforge/config.hpp"
#include "fpforge/experiment.hpp"
#include "test_helpers.hpp"

using namespace fpforge;
namespace fs = std::filesystem;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config_text(text, "cfg.json");
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

ExperimentConfig tiny(const std::string& experiment) {
  auto j = nlohmann::json::parse(R"({
    "seed": 5,
    "dataset": {
      "side": 32,
      "gans": [
        {"gan_id": "ga", "pattern": "checkerboard", "period_px": 2},
        {"gan_id": "gb", "pattern": "sine_grid", "period_px": 8}
      ],
      "seen_gans": ["ga"], "unseen_gans": ["gb"],
      "train_real": 16, "train_fake": 16, "test_per_gan": 8
    },
    "extractor": {"epochs": 1, "batch_size": 8},
    "detector": {"epochs": 1, "batch_size": 4},
    "cross_category": {"test_per_gan": 8},
    "sweep_counts": [1, 2],
    "detector_variants": ["smaller", "small"],
    "spectrum_images": 8
  })");
  j["experiment"] = experiment;
  return parse_config_json(j);
}

std::vector<std::string> row_names(const nlohmann::json& report) {
  std::vector<std::string> out;
  for (const auto& r : report.at("rows")) out.push_back(r.at("name").get<std::string>());
  return out;
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(FPFORGE_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(ParseConfig, EmptyFileIsRejected) {
  EXPECT_NE(error_of("").find("empty config"), std::string::npos);
  EXPECT_NE(error_of(" \n\t").find("empty config"), std::string::npos);
  EXPECT_NE(error_of("{").find("invalid JSON"), std::string::npos);
}

TEST(ParseConfig, MinimalConfigIsFullyDefaulted) {
  const auto c = parse_config_text(R"({"experiment": "cross_gan", "seed": 1})", "min.json");
  EXPECT_EQ(c.kind, ExperimentKind::CrossGan);
  EXPECT_EQ(c.seed, 1u);
  EXPECT_EQ(c.extractor.lambda_adv, 1e-4);
  EXPECT_EQ(c.extractor.lr_e, 1e-3);
  EXPECT_EQ(c.extractor.lr_d, 1e-3);
  EXPECT_EQ(c.detector.lr, 1e-4);
  EXPECT_EQ(c.perturb.alpha0, 5.0);
  EXPECT_EQ(c.perturb.n, 2u);
  EXPECT_EQ(c.perturb.apply_prob, 0.8);
  EXPECT_EQ(c.perturb.alpha_min, 0.0);
  EXPECT_EQ(c.dataset.side, 64u);
  EXPECT_EQ(c.dataset.categories.size(), 4u);
  EXPECT_EQ(c.dataset.seen_gans.size(), 1u);
  EXPECT_EQ(c.dataset.unseen_gans.size(), 4u);

  const auto echo = config_to_json(c);
  EXPECT_EQ(echo.at("experiment"), "cross_gan");
  EXPECT_EQ(echo.at("extractor").at("lambda_adv"), 1e-4);
  EXPECT_EQ(echo.at("perturb").at("alpha0"), 5.0);
  EXPECT_EQ(echo.at("dataset").at("gans").size(), 5u);
  EXPECT_EQ(config_to_json(parse_config_json(echo)), echo);
}

TEST(ParseConfig, AlphaOverrideSurvivesRoundTrip) {
  const auto c = parse_config_text(R"({"experiment": "cross_gan", "seed": 1, "perturb": {"alpha0": 2.5}})", "a.json");
  EXPECT_EQ(c.perturb.alpha0, 2.5);
  const auto text = config_to_json(c).dump(2);
  const auto back = parse_config_text(text, "echo.json");
  EXPECT_EQ(back.perturb.alpha0, 2.5);
  EXPECT_EQ(config_to_json(back).dump(2), text);
}

TEST(ParseConfig, ErrorsNameTheJsonPath) {
  EXPECT_NE(error_of(R"({"seed": 1})").find("missing required field 'experiment'"), std::string::npos);
  EXPECT_NE(error_of(R"({"experiment": "cross_gan"})").find("missing required field 'seed'"), std::string::npos);
  EXPECT_NE(error_of(R"({"experiment": "cross_gan", "seed": 1, "bogus": 0})").find("/bogus: unknown key"), std::string::npos);
  EXPECT_NE(error_of(R"({"experiment": "cross_gan", "seed": 1, "perturb": {"alpha": 1}})").find("/perturb/alpha: unknown key"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"experiment": "cross_gan", "seed": "one"})").find("/seed: expected an integer"), std::string::npos);
  EXPECT_NE(error_of(R"({"experiment": "cross_gan", "seed": 1.5})").find("/seed: expected an integer"), std::string::npos);
  EXPECT_NE(error_of(R"({"experiment": "cross_gan", "seed": -1})").find("/seed: must not be negative"), std::string::npos);
  EXPECT_NE(error_of(R"({"experiment": "cross_gan", "seed": 1, "detector": {"epochs": "x"}})").find("/detector/epochs"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"experiment": "cross_gan", "seed": 1, "dataset": {"gans": [{"gan_id": "g", "pattern": "checkerboard", "wobble": 1}]}})")
                .find("/dataset/gans/0/wobble: unknown key"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"experiment": "table9", "seed": 1})").find("/experiment: unknown experiment"), std::string::npos);
  EXPECT_NE(error_of(R"({"experiment": "cross_gan", "seed": 1, "dataset": {"seen_gans": ["nope"]}})").find("nope"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"experiment": "cross_category", "seed": 1, "cross_category": {"train_category": "dog"}})")
                .find("/cross_category/train_category"),
            std::string::npos);
  const auto missing = error_of(R"({"seed": 1})");
  EXPECT_EQ(missing.find("/experiment: /"), std::string::npos) << missing;
}

TEST(ParseConfig, ReadsFilesAndReportsUnreadableOnes) {
  const auto dir = test::scratch_dir("parse_config");
  write_file(dir / "c.json", R"({"experiment": "ablation_adv", "seed": 3})");
  EXPECT_EQ(parse_config(dir / "c.json").kind, ExperimentKind::AblationAdv);
  write_file(dir / "empty.json", "");
  EXPECT_THROW(parse_config(dir / "empty.json"), ValidationError);
  EXPECT_THROW(parse_config(dir / "absent.json"), RuntimeError);
}

TEST(JsonHash, StableAndSensitive) {
  const nlohmann::json a{{"a", 1}, {"b", {1, 2}}};
  EXPECT_EQ(json_hash(a), json_hash(nlohmann::json::parse(R"({"b":[1,2],"a":1})")));
  EXPECT_EQ(json_hash(a).size(), 16u);
  EXPECT_NE(json_hash(a), json_hash(nlohmann::json{{"a", 2}, {"b", {1, 2}}}));
  // FNV-1a 64 of the dumps "\"\"" and "1".
  EXPECT_EQ(json_hash(nlohmann::json("")), "07cc7607b4949e25");
  EXPECT_EQ(json_hash(nlohmann::json::parse("1")), "af63ac4c86019afc");
}

TEST(RunExperiment, CrossGanIsDeterministicAcrossThreadsAndReusesCache) {
  const auto root = test::scratch_dir("run_cross_gan");
  auto cfg = tiny("cross_gan");
  const auto a = run_experiment(cfg, root / "a");
  const auto b = run_experiment(cfg, root / "b", {.threads = 3});
  const auto a_bytes = read_file(root / "a" / "report.json");
  EXPECT_EQ(a_bytes, read_file(root / "b" / "report.json"));
  EXPECT_EQ(read_file(root / "a" / "table.txt"), read_file(root / "b" / "table.txt"));
  EXPECT_EQ(a.config_hash, json_hash(config_to_json(cfg)));
  EXPECT_EQ(a.report.at("config_hash"), a.config_hash);
  EXPECT_EQ(json_hash(a.report.at("config")), a.config_hash);
  EXPECT_EQ(row_names(a.report), (std::vector<std::string>{"none", "scaling", "mixup"}));
  EXPECT_TRUE(a.report.contains("mechanism"));
  EXPECT_TRUE(a.report.at("summary").at("mixup").contains("delta_unseen_mean_acc"));
  for (const auto& f : a.artifacts) EXPECT_TRUE(fs::exists(root / "a" / f)) << f;
  const auto run = nlohmann::json::parse(read_file(root / "a" / "run.json"));
  EXPECT_EQ(run.at("config_hash"), a.config_hash);
  EXPECT_EQ(run.at("version"), version_string());

  // Rerun into a shared cache: the second run trains nothing and still
  // reproduces the bytes.
  cfg.cache_dir = (root / "cache").string();
  run_experiment(cfg, root / "c");
  std::vector<fs::path> stages;
  for (const auto& e : fs::directory_iterator(root / "cache")) stages.push_back(e.path());
  EXPECT_EQ(stages.size(), 5u);  // data, extractor and three detectors
  std::vector<fs::file_time_type> stamps;
  for (const auto& s : stages) stamps.push_back(fs::last_write_time(s / "DONE"));
  run_experiment(cfg, root / "d");
  for (std::size_t i = 0; i < stages.size(); ++i) EXPECT_EQ(fs::last_write_time(stages[i] / "DONE"), stamps[i]);
  EXPECT_EQ(read_file(root / "c" / "report.json"), a_bytes);
  EXPECT_EQ(read_file(root / "d" / "report.json"), a_bytes);

  auto other = cfg;
  other.seed = 6;
  run_experiment(other, root / "e");
  EXPECT_NE(read_file(root / "e" / "report.json"), a_bytes);
}

TEST(RunExperiment, OtherKindsEmitTheirRows) {
  const auto root = test::scratch_dir("run_kinds");
  auto no_spectra = [](ExperimentConfig c) {
    c.spectra = false;
    return c;
  };
  const auto cat = run_experiment(no_spectra(tiny("cross_category")), root / "cat");
  EXPECT_EQ(row_names(cat.report), (std::vector<std::string>{"none", "scaling", "mixup"}));
  for (const auto& s : cat.report.at("rows")[0].at("sources")) EXPECT_NE(s.at("source"), "cat0");

  const auto sweep = run_experiment(no_spectra(tiny("category_sweep")), root / "sweep");
  EXPECT_EQ(row_names(sweep.report).size(), 6u);
  EXPECT_EQ(row_names(sweep.report).front(), "k=1/none");
  EXPECT_EQ(sweep.report.at("extractor").at("k=1").at("adv_enabled"), false);
  EXPECT_EQ(sweep.report.at("extractor").at("k=2").at("adv_enabled"), true);

  const auto abl = run_experiment(no_spectra(tiny("ablation_adv")), root / "abl");
  EXPECT_EQ(row_names(abl.report), (std::vector<std::string>{"with L_adv", "without L_adv"}));
  const auto& sum = abl.report.at("summary");
  EXPECT_NEAR(sum.at("delta_mean_acc").get<double>(),
              sum.at("with L_adv").at("mean_acc").get<double>() - sum.at("without L_adv").at("mean_acc").get<double>(), 1e-12);
  EXPECT_NEAR(sum.at("disc_accuracy_bound").get<double>(), 1.0 / 4 + 0.25, 1e-12);

  const auto det = run_experiment(no_spectra(tiny("ablation_detector")), root / "det");
  EXPECT_EQ(row_names(det.report).size(), 6u);
  EXPECT_EQ(row_names(det.report).front(), "smaller/none");
}

TEST(RunExperiment, StageFailureNamesTheStage) {
  const auto root = test::scratch_dir("run_fail");
  auto cfg = tiny("cross_gan");
  cfg.spectra = false;
  // A file where the cache directory should be makes the first stage fail.
  write_file(root / "blocker", "x");
  cfg.cache_dir = (root / "blocker").string();
  try {
    run_experiment(cfg, root / "out");
    FAIL() << "expected a failure";
  } catch (const RuntimeError& e) {
    EXPECT_NE(std::string(e.what()).find("stage gen-data"), std::string::npos) << e.what();
  }
}

TEST(Cli, ExitCodes) {
  const auto dir = test::scratch_dir("cli");
  const auto log = dir / "log.txt";
  auto j = config_to_json(tiny("cross_gan"));
  j["spectra"] = false;
  write_file(dir / "tiny.json", j.dump());
  write_file(dir / "bad.json", R"({"experiment": "cross_gan", "seed": 1, "bogus": 1})");

  EXPECT_EQ(run_cli("--version", log), 0);
  EXPECT_EQ(run_cli("--config " + (dir / "tiny.json").string() + " --out " + (dir / "data").string() + " gen-data", log), 0);
  EXPECT_TRUE(fs::exists(dir / "data" / "manifest.json"));
  EXPECT_EQ(run_cli("--config " + (dir / "bad.json").string() + " --out " + (dir / "x").string() + " gen-data", log), 1);
  EXPECT_NE(read_file(log).find("/bogus: unknown key"), std::string::npos);
  EXPECT_EQ(run_cli("no-such-command", log), 1);
  EXPECT_EQ(run_cli("--config " + (dir / "tiny.json").string() + " gen-data", log), 1);
  EXPECT_EQ(run_cli("--config " + (dir / "tiny.json").string() + " --out " + (dir / "ext").string() +
                        " train-extractor --data " + (dir / "missing").string(),
                    log),
            2);
  EXPECT_EQ(run_cli("--config " + (dir / "tiny.json").string() + " --out " + (dir / "exp").string() + " experiment", log), 0);
  EXPECT_TRUE(fs::exists(dir / "exp" / "report.json"));
}
