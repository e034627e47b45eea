#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "robustst/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Self-training domain adaptation for a toy object detector"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::vector<std::string> variants;
  std::vector<std::uint64_t> seeds;
  std::size_t trials = 100;
  double tolerance = 1e-6;

  auto* gen = app.add_subcommand("gen-data", "Write source and target dataset files");
  gen->add_option("--config", config_path, "JSON config file (defaults when omitted)")->check(CLI::ExistingFile);
  gen->add_option("--out", out_dir, "Output directory")->required();

  auto* run = app.add_subcommand("run", "Run the pipeline for selected variants and write reports");
  run->add_option("--config", config_path, "JSON config file (defaults when omitted)")->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "Output directory")->required();
  run->add_option("--variants", variants, "Comma-separated variant names (default: all)")->delimiter(',');
  run->add_option("--seeds", seeds, "Comma-separated seeds overriding the config")->delimiter(',');

  auto* ablate = app.add_subcommand("ablate", "Run all six methods and write the ablation table");
  ablate->add_option("--config", config_path, "JSON config file (defaults when omitted)")->check(CLI::ExistingFile);
  ablate->add_option("--out", out_dir, "Output directory")->required();
  ablate->add_option("--seeds", seeds, "Comma-separated seeds overriding the config")->delimiter(',');

  auto* verify = app.add_subcommand("verify-theorems", "Compare closed-form fusions with iterative minimizers");
  verify->add_option("--trials", trials, "Random instances per check")->capture_default_str();
  verify->add_option("--tolerance", tolerance, "Largest accepted deviation")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : robustst::kExitBadInput;
  }

  const std::optional<std::vector<std::uint64_t>> seed_override =
      seeds.empty() ? std::nullopt : std::optional(seeds);
  if (*gen) return robustst::cmd_gen_data(config_path, out_dir, std::cout, std::cerr);
  if (*run) return robustst::cmd_run(config_path, variants, out_dir, seed_override, std::cout, std::cerr);
  if (*ablate) return robustst::cmd_ablate(config_path, out_dir, seed_override, std::cout, std::cerr);
  if (*verify) return robustst::cmd_verify_theorems(trials, tolerance, std::cout, std::cerr);
  return robustst::kExitBadInput;
}
