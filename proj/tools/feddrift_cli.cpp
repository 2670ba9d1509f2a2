// Command line front end: runs one of the four canonical experiments and
// writes the report CSVs.

#include <CLI11.hpp>
#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include "feddrift/errors.hpp"
#include "feddrift/harness.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

struct RunArgs {
  int experiment = 0;
  std::uint64_t seed = 42;
  std::string out_dir = "out";
  std::string data = "synthetic";
  int interval = 0;          // 0: keep preset
  std::string components;    // empty: keep preset
  double multiplier = 0.0;   // 0: keep preset
};

feddrift::harness::ExperimentConfig build_config(const RunArgs& args) {
  auto cfg = feddrift::harness::preset(args.experiment);
  cfg.seed = args.seed;
  if (args.interval > 0) cfg.detection_interval = args.interval;
  if (args.multiplier > 0.0) cfg.threshold_multiplier = args.multiplier;
  if (!args.components.empty()) {
    if (args.components == "auto") {
      cfg.n_components = feddrift::driftdetect::kAutoComponents;
    } else {
      try {
        cfg.n_components = std::stoi(args.components);
      } catch (const std::exception&) {
        throw feddrift::ConfigError("--components expects 'auto' or an integer");
      }
    }
  }
  if (args.data == "synthetic") {
    cfg.data.kind = feddrift::harness::DataSource::Kind::synthetic;
  } else if (args.data.rfind("idx:", 0) == 0) {
    const std::string paths = args.data.substr(4);
    const auto comma = paths.find(',');
    if (comma == std::string::npos || comma == 0 || comma + 1 == paths.size()) {
      throw feddrift::ConfigError("--data idx form is idx:IMAGES,LABELS");
    }
    cfg.data.kind = feddrift::harness::DataSource::Kind::idx;
    cfg.data.images_path = paths.substr(0, comma);
    cfg.data.labels_path = paths.substr(comma + 1);
  } else {
    throw feddrift::ConfigError("--data expects 'synthetic' or 'idx:IMAGES,LABELS'");
  }
  return cfg;
}

int run_command(const RunArgs& args) {
  const auto report = feddrift::harness::run_experiment(build_config(args));
  feddrift::harness::emit_report(report, args.out_dir);

  const auto& cfg = report.config;  // resolved values
  std::cout << "experiment " << cfg.experiment_id << " seed " << cfg.seed << '\n'
            << "rounds: " << cfg.n_training_rounds << " training + "
            << cfg.detection_rounds << " detection (interval "
            << cfg.detection_interval << ")\n"
            << "normal stats: mu="
            << feddrift::harness::format_double(report.stats.mu_norm)
            << " sigma=" << feddrift::harness::format_double(report.stats.sigma_norm)
            << '\n';
  std::cout << "injected nodes:";
  for (int id : report.injected_nodes) std::cout << ' ' << id;
  if (report.injected_nodes.empty()) std::cout << " none";
  std::cout << "\ndetected nodes:";
  for (int id : report.detected_nodes) std::cout << ' ' << id;
  if (report.detected_nodes.empty()) std::cout << " none";
  std::cout << '\n'
            << "alpha=" << feddrift::harness::format_double(report.alpha)
            << " beta=" << feddrift::harness::format_double(report.beta) << '\n'
            << "final train accuracy: "
            << feddrift::harness::format_double(report.final_train_accuracy) << '\n'
            << "reports written to " << args.out_dir << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning simulator with concept drift detection"};
  app.require_subcommand(1);

  RunArgs args;
  CLI::App* run = app.add_subcommand("run", "Run one of the canonical experiments");
  run->add_option("--experiment", args.experiment, "Experiment preset (1-4)")
      ->required()
      ->check(CLI::Range(1, 4));
  run->add_option("--seed", args.seed, "Master seed (default 42)");
  run->add_option("--out", args.out_dir, "Output directory (default ./out)");
  run->add_option("--data", args.data, "'synthetic' or 'idx:IMAGES,LABELS'");
  run->add_option("--interval", args.interval, "Detection interval override")
      ->check(CLI::PositiveNumber);
  run->add_option("--components", args.components, "'auto' or a component count");
  run->add_option("--multiplier", args.multiplier, "Threshold multiplier override")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }

  try {
    return run_command(args);
  } catch (const feddrift::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const feddrift::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const feddrift::FormatError& e) {
    std::cerr << "data format error: " << e.what() << '\n';
    return kExitIo;
  } catch (const feddrift::ConsistencyError& e) {
    std::cerr << "data consistency error: " << e.what() << '\n';
    return kExitIo;
  } catch (const feddrift::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << '\n';
    return 1;
  }
}
