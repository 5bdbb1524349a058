#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "dadee/errors.hpp"
#include "dadee/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct Options {
  std::string config;
  std::optional<std::string> checkpoint;
  std::optional<std::size_t> layer;
  std::optional<std::string> out;
};

void add_common(CLI::App& cmd, Options& o, bool with_checkpoint, bool with_layer) {
  cmd.add_option("--config", o.config, "experiment config JSON")->required()->check(CLI::ExistingFile);
  if (with_checkpoint) cmd.add_option("--checkpoint", o.checkpoint, "checkpoint file; default: every configured seed");
  if (with_layer) cmd.add_option("--layer", o.layer, "1-based layer; default: final")->check(CLI::PositiveNumber);
  cmd.add_option("--out", o.out, "output directory; default: output_dir from the config");
}

int run(const std::string& command, const Options& o) {
  using namespace dadee;
  const ExperimentConfig config = load_config(o.config);
  const std::filesystem::path out = o.out ? std::filesystem::path(*o.out) : config.output_dir;
  std::optional<std::filesystem::path> checkpoint;
  if (o.checkpoint) checkpoint = *o.checkpoint;

  std::vector<std::filesystem::path> written;
  if (command == "train-source") {
    written = cmd_train_source(config, out);
  } else if (command == "adapt") {
    written = cmd_adapt(config, out, checkpoint);
  } else if (command == "evaluate") {
    written = cmd_evaluate(config, out, checkpoint);
  } else if (command == "sweep-alpha") {
    written = cmd_sweep_alpha(config, out, checkpoint);
  } else {
    written = cmd_export_features(config, out, checkpoint, o.layer);
  }
  for (const auto& p : written) std::cout << p.string() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-exit encoder domain adaptation"};
  app.require_subcommand(1);
  Options o;
  add_common(*app.add_subcommand("train-source", "train the source encoder and its exits"), o, false, false);
  add_common(*app.add_subcommand("adapt", "adversarial adaptation with distillation"), o, true, false);
  add_common(*app.add_subcommand("evaluate", "experiment reports and multi-seed summary"), o, true, false);
  add_common(*app.add_subcommand("sweep-alpha", "accuracy and speedup for every threshold"), o, true, false);
  add_common(*app.add_subcommand("export-features", "pooled features of both test sets as CSV"), o, true, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    return run(app.get_subcommands().front()->get_name(), o);
  } catch (const dadee::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const dadee::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return kExitRuntime;
  }
}
