#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "proplab/experiment.hpp"
#include "proplab/simgen.hpp"

namespace {

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

// Overrides are spliced into the JSON before the strict parse so unknown-key
// checking still sees the final document.
std::string with_overrides(const std::string& text, bool set_seed,
                           std::uint64_t seed, const std::string& preset) {
  if (!set_seed && preset.empty()) return text;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(std::string("config parse error: ") + e.what());
  }
  if (set_seed) j["seed"] = seed;
  if (!preset.empty()) j["eval"]["nms_preset"] = preset;
  return j.dump();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"proposal pipeline lab"};
  app.require_subcommand(1);

  std::string config_path, dataset_path, out_path, records_dir, preset, label = "run";
  std::string grid_path;
  std::vector<std::string> record_files;
  std::uint64_t seed = 0;
  int threads = 1;

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->add_option("--config", config_path, "experiment config JSON")
      ->required()
      ->check(CLI::ExistingFile);
  gen->add_option("--out", out_path, "dataset output path")->required();
  gen->add_option("--seed", seed, "override the config seed");

  CLI::App* run = app.add_subcommand("run", "run one experiment");
  run->add_option("--config", config_path, "experiment config JSON")
      ->required()
      ->check(CLI::ExistingFile);
  run->add_option("--dataset", dataset_path, "dataset file from `gen`")
      ->required()
      ->check(CLI::ExistingFile);
  run->add_option("--out", out_path, "write the run record JSON here");
  run->add_option("--seed", seed, "override the config seed");
  run->add_option("--threads", threads, "worker threads")
      ->check(CLI::PositiveNumber);
  run->add_option("--preset", preset, "override eval.nms_preset")
      ->check(CLI::IsMember({"imagenet", "voc", "coco", "classic"}));
  run->add_option("--label", label, "column label used in reports");

  CLI::App* ablate = app.add_subcommand("ablate", "run an ablation grid");
  ablate->add_option("--grid", grid_path, "grid JSON: {\"base\": config, \"grid\": {path: [values]}}")
      ->required()
      ->check(CLI::ExistingFile);
  ablate->add_option("--dataset", dataset_path, "dataset file from `gen`")
      ->required()
      ->check(CLI::ExistingFile);
  ablate->add_option("--out", out_path, "write the metric table CSV here");
  ablate->add_option("--records-dir", records_dir, "write one run record per cell");
  ablate->add_option("--threads", threads, "worker threads")
      ->check(CLI::PositiveNumber);

  CLI::App* report = app.add_subcommand("report", "combine run records into a table");
  report->add_option("records", record_files, "run record files")
      ->required()
      ->check(CLI::ExistingFile);
  report->add_option("--out", out_path, "write the table as CSV here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      std::string text = read_text_file(config_path);
      text = with_overrides(text, gen->count("--seed") > 0, seed, "");
      const proplab::ExperimentConfig cfg = proplab::parse_experiment_config(text);
      const proplab::Dataset dataset = proplab::generate_dataset(cfg.dataset, cfg.seed);
      proplab::write_dataset(dataset, out_path);
      std::size_t objects = 0;
      for (const auto& scene : dataset.scenes) objects += scene.objects.size();
      std::cerr << "wrote " << dataset.scenes.size() << " scenes, " << objects
                << " objects, " << dataset.n_classes << " classes -> " << out_path
                << "\n";
    } else if (*run) {
      std::string text = read_text_file(config_path);
      text = with_overrides(text, run->count("--seed") > 0, seed, preset);
      const proplab::ExperimentConfig cfg = proplab::parse_experiment_config(text);
      const proplab::Dataset dataset = proplab::read_dataset(dataset_path);
      const proplab::RunRecord rec =
          proplab::run_experiment(cfg, dataset, threads, label);
      if (!out_path.empty()) proplab::write_run_record(rec, out_path);
      std::cout << proplab::report_text({&rec, 1});
      std::fprintf(stderr, "config %s, wall time %.2fs\n", rec.config_hash.c_str(),
                   rec.wall_time_sec);
    } else if (*ablate) {
      const proplab::Dataset dataset = proplab::read_dataset(dataset_path);
      const std::vector<proplab::RunRecord> records =
          proplab::run_ablation(read_text_file(grid_path), dataset, threads);
      if (!out_path.empty()) write_text_file(out_path, proplab::report_csv(records));
      if (!records_dir.empty()) {
        std::filesystem::create_directories(records_dir);
        for (std::size_t i = 0; i < records.size(); ++i) {
          char name[32];
          std::snprintf(name, sizeof name, "cell_%03zu.json", i);
          proplab::write_run_record(records[i],
                                    (std::filesystem::path(records_dir) / name).string());
        }
      }
      std::cout << proplab::report_text(records);
    } else if (*report) {
      std::vector<proplab::RunRecord> records;
      records.reserve(record_files.size());
      for (const std::string& f : record_files)
        records.push_back(proplab::read_run_record(f));
      if (!out_path.empty()) write_text_file(out_path, proplab::report_csv(records));
      std::cout << proplab::report_text(records);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
