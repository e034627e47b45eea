#pragma once

// Implementations of the command-line verbs. Each returns a process exit status and writes
// human-readable progress to `out` and problems to `err`.

#include <filesystem>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "robustst/config.hpp"
#include "robustst/dataset_io.hpp"
#include "robustst/pipeline.hpp"
#include "robustst/report.hpp"
#include "robustst/verify.hpp"

namespace robustst {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitBadInput = 2;

/// Loads `path`, or the built-in defaults when `path` is empty.
inline PipelineConfig load_config_or_default(const std::string& path) {
  if (path.empty()) {
    PipelineConfig c;
    c.validate();
    return c;
  }
  return load_config(path);
}

inline std::vector<Variant> parse_variant_list(const std::vector<std::string>& names) {
  std::vector<Variant> out;
  for (const std::string& n : names) out.push_back(parse_variant(n));
  if (out.empty()) throw ConfigError("variants", "need at least one variant");
  return out;
}

/// Writes <out>/source.jsonl and <out>/target.jsonl for `config.seed`.
inline int cmd_gen_data(const std::string& config_path, const std::string& out_dir, std::ostream& out,
                        std::ostream& err) {
  try {
    const PipelineConfig c = load_config_or_default(config_path);
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path dir(out_dir);
    const LabeledDataset source = generate_dataset(c.world, c.n_source_scenes,
                                                   derive_seed(c.seed, stream::source_data), DomainTag::source);
    const LabeledDataset target = generate_dataset(apply_domain_shift(c.world), c.n_target_scenes,
                                                   derive_seed(c.seed, stream::target_data), DomainTag::target);
    for (const auto* ds : {&source, &target}) {
      const auto path = dir / (std::string(to_string(ds->domain)) + ".jsonl");
      save_dataset(*ds, path.string());
      std::size_t objects = 0;
      for (const auto& a : ds->annotations) objects += a.size();
      out << to_string(ds->domain) << ": " << ds->size() << " scenes, " << objects << " objects, "
          << ds->placement_failures << " placement failures -> " << path.string() << '\n';
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitBadInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

namespace detail {

inline void print_means(const ExperimentReport& report, std::ostream& out) {
  for (const VariantSummary& m : report.means) {
    out << std::left << std::setw(16) << to_string(m.variant) << std::right << std::fixed << std::setprecision(2)
        << 100.0 * m.mean_map << '\n';
  }
  out.unsetf(std::ios::floatfield);
}

/// Shared body of `run` and `ablate`.
inline int run_and_report(const std::string& command, const std::string& config_path,
                          const std::optional<std::vector<std::uint64_t>>& seeds,
                          const std::function<std::vector<Variant>()>& variants, const std::string& out_dir,
                          bool write_ablation, std::ostream& out, std::ostream& err) {
  PipelineConfig c;
  std::vector<Variant> vs;
  try {
    c = load_config_or_default(config_path);
    if (seeds) {
      c.seeds = *seeds;
      c.validate();
    }
    vs = variants();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitBadInput;
  }

  const std::filesystem::path dir(out_dir);
  RunManifest manifest;
  manifest.command = command;
  manifest.config = to_json(c);
  manifest.seeds = c.seeds;
  manifest.outputs = {(dir / "report.csv").string(), (dir / "summary.json").string()};
  if (write_ablation) manifest.outputs.push_back((dir / "ablation.csv").string());
  manifest.started_at = utc_timestamp();
  const Stopwatch clock;
  const auto manifest_path = dir / "manifest.json";
  try {
    std::filesystem::create_directories(dir);
    manifest.write(manifest_path);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }

  try {
    const ExperimentReport report = run_experiment(c, vs);
    write_atomically(dir / "report.csv", report_csv(report, c.world.num_classes));
    write_atomically(dir / "summary.json", summary_json(report).dump(2) + "\n");
    if (write_ablation) {
      const std::string table = ablation_table(report);
      write_atomically(dir / "ablation.csv", table);
      out << table;
    } else {
      print_means(report, out);
    }
    const MonotonicityCheck mono = check_ablation_monotonicity(report);
    if (mono.status == MonotonicityCheck::Status::flagged || mono.status == MonotonicityCheck::Status::violated) {
      out << "note: ours_cls -> ours_cls_box -> ours_full is not monotone (largest drop " << 100.0 * mono.largest_drop
          << " AP points, " << to_string(mono.status) << ")\n";
    }
    manifest.status = "completed";
  } catch (const std::exception& e) {
    manifest.status = "failed";
    manifest.error = e.what();
    err << "error: " << e.what() << '\n';
  }
  manifest.finished_at = utc_timestamp();
  manifest.wall_seconds = clock.seconds();
  try {
    manifest.write(manifest_path);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return manifest.status == "completed" ? kExitOk : kExitFailure;
}

}  // namespace detail

inline int cmd_run(const std::string& config_path, const std::vector<std::string>& variants,
                   const std::string& out_dir, const std::optional<std::vector<std::uint64_t>>& seeds,
                   std::ostream& out, std::ostream& err) {
  return detail::run_and_report(
      "run", config_path, seeds,
      [&] {
        if (variants.empty()) return std::vector<Variant>(kAllVariants.begin(), kAllVariants.end());
        return parse_variant_list(variants);
      },
      out_dir, false, out, err);
}

/// All six methods; also writes ablation.csv (methods as rows, AP last).
inline int cmd_ablate(const std::string& config_path, const std::string& out_dir,
                      const std::optional<std::vector<std::uint64_t>>& seeds, std::ostream& out, std::ostream& err) {
  return detail::run_and_report(
      "ablate", config_path, seeds, [] { return std::vector<Variant>(kAllVariants.begin(), kAllVariants.end()); },
      out_dir, true, out, err);
}

inline int cmd_verify_theorems(std::size_t trials, double tolerance, std::ostream& out, std::ostream& err,
                               std::uint64_t seed = 0) {
  if (trials == 0) {
    err << "error: --trials must be positive\n";
    return kExitBadInput;
  }
  if (!(tolerance >= 0.0)) {
    err << "error: --tolerance must be >= 0\n";
    return kExitBadInput;
  }
  const TheoremCheck r = verify_theorems(trials, seed);
  out << std::scientific << std::setprecision(3);
  out << "categorical: " << trials << " trials, max TV distance " << r.max_categorical_tv << " ("
      << std::defaultfloat << r.categorical_seconds << " s)\n";
  out << std::scientific << std::setprecision(3);
  out << "gaussian:    " << trials << " trials x " << std::size(kCheckSigmas) << " sigmas, max coordinate error "
      << r.max_gaussian_error << ", sigma spread " << r.max_sigma_spread << " (" << std::defaultfloat
      << r.gaussian_seconds << " s)\n";
  bool ok = true;
  if (!(r.max_categorical_tv < tolerance)) {
    const auto& t = random_categorical_trials(r.worst_categorical + 1, seed)[r.worst_categorical];
    err << "categorical trial " << r.worst_categorical << " (alpha " << t.alpha << ", " << t.p1.size()
        << " classes) deviates by " << r.max_categorical_tv << " >= " << tolerance << '\n';
    ok = false;
  }
  if (!(r.max_gaussian_error < tolerance)) {
    const auto& t = random_gaussian_trials(r.worst_gaussian + 1, seed + 1)[r.worst_gaussian];
    err << "gaussian trial " << r.worst_gaussian << " (alpha " << t.alpha << ", sigma " << r.worst_gaussian_sigma
        << ") deviates by " << r.max_gaussian_error << " >= " << tolerance << '\n';
    ok = false;
  }
  if (!(r.max_sigma_spread <= tolerance)) {
    err << "fused mean changes with sigma by " << r.max_sigma_spread << '\n';
    ok = false;
  }
  if (!r.oracles_converged) out << "warning: an iterative minimizer hit its step limit\n";
  out << (ok ? "PASS" : "FAIL") << '\n';
  return ok ? kExitOk : kExitFailure;
}

}  // namespace robustst
