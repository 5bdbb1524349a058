#include "dadee/pipeline.hpp"

#include <array>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "dadee/errors.hpp"

namespace dadee {

namespace {

namespace fs = std::filesystem;

std::string seed_tag(std::uint64_t seed) {
  std::ostringstream s;
  s << "seed" << std::setw(4) << std::setfill('0') << seed;
  return s.str();
}

void write_file(const fs::path& path, const std::string& text, std::vector<fs::path>& written) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
  if (!out) throw ValidationError("cannot write " + path.string());
  written.push_back(path);
}

std::string read_if_present(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  std::ostringstream text;
  text << in.rdbuf();
  return text.str();
}

fs::path source_history_path(const fs::path& dir, std::uint64_t seed) {
  return dir / ("source-history-" + seed_tag(seed) + ".csv");
}

fs::path adapt_history_path(const fs::path& dir, std::uint64_t seed) {
  return dir / ("adapt-history-" + seed_tag(seed) + ".csv");
}

Checkpoint load_checked(const fs::path& path, Phase phase, const std::string& digest) {
  Checkpoint c = load_checkpoint(path);
  if (c.provenance.phase != phase) {
    throw ValidationError(path.string() + ": phase is " + to_string(c.provenance.phase) + ", expected " +
                          to_string(phase));
  }
  if (c.provenance.config_digest != digest) {
    throw ValidationError(path.string() + ": config digest " + c.provenance.config_digest +
                          " does not match the config (" + digest + ")");
  }
  return c;
}

void check_vocab(const Checkpoint& c, const PreparedData& data, const fs::path& path) {
  if (!(c.bundle.config == data.encoder)) {
    throw ValidationError(path.string() + ": encoder config does not match the data of seed " +
                          std::to_string(c.provenance.seed));
  }
}

// Seeds to process: the checkpoint's own seed when one is given.
struct Job {
  std::uint64_t seed;
  fs::path checkpoint;
};

std::vector<Job> jobs(const ExperimentConfig& config, const fs::path& dir, Phase phase,
                      const std::optional<fs::path>& checkpoint) {
  if (checkpoint) return {Job{load_checkpoint(*checkpoint).provenance.seed, *checkpoint}};
  std::vector<Job> out;
  for (std::uint64_t s : config.seeds) out.push_back(Job{s, checkpoint_path(dir, phase, s)});
  return out;
}

}  // namespace

SeededRng stream_rng(std::uint64_t seed, Stream stream) {
  return SeededRng(seed).fork(static_cast<std::uint64_t>(stream));
}

PreparedData prepare_data(const ExperimentConfig& config, std::uint64_t seed) {
  config.validate();
  RawCorpus source_train, source_dev, source_test, target_train, target_test;
  if (config.data.synthetic) {
    SyntheticShiftSpec spec = *config.data.synthetic;
    spec.seed = seed;
    ShiftPair pair = generate_shift_pair(spec);
    source_train = std::move(pair.source_train);
    source_dev = std::move(pair.source_dev);
    source_test = std::move(pair.source_test);
    target_train = std::move(pair.target_train);
    target_test = std::move(pair.target_test);
  } else {
    const TsvPaths& p = *config.data.tsv;
    auto opts = [&](CorpusRole role, bool labeled, const char* domain) {
      TsvOptions o;
      o.labeled = labeled;
      o.num_classes = config.encoder.num_classes;
      o.role = role;
      o.domain = domain;
      return o;
    };
    source_train = read_tsv(p.source_train, opts(CorpusRole::kSourceTrain, true, "source"));
    source_dev = read_tsv(p.source_dev, opts(CorpusRole::kSourceDev, true, "source"));
    source_test = read_tsv(p.source_test, opts(CorpusRole::kSourceTest, true, "source"));
    target_train = read_tsv(p.target_train, opts(CorpusRole::kTargetTrain, false, "target"));
    target_test = read_tsv(p.target_test, opts(CorpusRole::kTargetTest, true, "target"));
  }
  const std::array<RawCorpus, 2> vocab_sources{source_train, target_train};
  PreparedData d;
  d.vocab = build_vocab(vocab_sources, config.data.min_count);
  d.encoder = config.encoder;
  d.encoder.vocab_size = d.vocab.size();
  const std::size_t len = d.encoder.max_seq_len;
  d.source_train = tokenize(source_train, d.vocab, len);
  d.source_dev = tokenize(source_dev, d.vocab, len);
  d.source_test = tokenize(source_test, d.vocab, len);
  d.target_test = tokenize(target_test, d.vocab, len);
  d.target_train = strip_labels(tokenize(target_train, d.vocab, len));
  return d;
}

TrainedSource run_source_training(const ExperimentConfig& config, const PreparedData& data, std::uint64_t seed) {
  SeededRng rng = stream_rng(seed, Stream::kSourceTraining);
  EncoderBundle bundle = init_encoder<float>(data.encoder, rng);
  return train_source(std::move(bundle), data.source_train, data.source_dev, config.source, rng);
}

AdaptResult run_adaptation(const ExperimentConfig& config, const PreparedData& data, const EncoderBundle& source,
                           std::uint64_t seed, const AdaptProbe& probe) {
  SeededRng rng = stream_rng(seed, Stream::kAdaptation);
  auto discs = init_discriminators<float>(source.config.num_layers, source.config.d_model, config.adapt.disc_hidden,
                                          rng);
  return adapt(source, clone_for_target(source), std::move(discs), data.source_train, data.target_train,
               config.adapt, rng, probe);
}

SweepResult target_sweep(const ExperimentConfig& config, const PreparedData& data, const EncoderBundle& adapted) {
  const SweepResult on_dev = select_alpha(adapted, data.source_dev, config.alpha_space);
  SweepResult on_target = sweep_alpha(adapted, data.target_test, config.alpha_space);
  on_target.selected = on_dev.selected;
  return on_target;
}

ExperimentReport build_report(const ExperimentConfig& config, const PreparedData& data, const EncoderBundle& source,
                              const EncoderBundle& adapted, std::uint64_t seed) {
  const std::size_t layers = adapted.config.num_layers;
  ExperimentReport r;
  r.seed = seed;
  r.config_digest = config_digest(config);
  r.source_exit_accuracy = per_exit_accuracy(adapted, data.source_test);
  r.target_exit_accuracy = per_exit_accuracy(adapted, data.target_test);
  r.source_only_target_accuracy = per_exit_accuracy(source, data.target_test).back();
  r.final_target_accuracy = r.target_exit_accuracy.back();

  const SweepResult sweep = target_sweep(config, data, adapted);
  const SweepPoint& chosen = sweep.points.at(sweep.selected);
  r.selected_alpha = chosen.alpha;
  r.early_exit_target_accuracy = chosen.accuracy;
  r.early_exit_speedup = chosen.speedup;

  SeededRng before_rng = stream_rng(seed, Stream::kProbe);
  SeededRng after_rng = stream_rng(seed, Stream::kProbe);
  r.a_distance_before = a_distance(pooled_features(source, data.source_test, layers),
                                   pooled_features(source, data.target_test, layers), before_rng)
                            .d_a;
  r.a_distance_after = a_distance(pooled_features(adapted, data.source_test, layers),
                                  pooled_features(adapted, data.target_test, layers), after_rng)
                           .d_a;
  r.validate();
  return r;
}

fs::path checkpoint_path(const fs::path& dir, Phase phase, std::uint64_t seed) {
  return dir / checkpoint_file_name(phase, seed);
}

std::vector<fs::path> cmd_train_source(const ExperimentConfig& config, const fs::path& out) {
  fs::create_directories(out);
  const std::string digest = config_digest(config);
  std::vector<fs::path> written;
  for (std::uint64_t seed : config.seeds) {
    const PreparedData data = prepare_data(config, seed);
    const TrainedSource trained = run_source_training(config, data, seed);
    const fs::path ckpt = checkpoint_path(out, Phase::kSourceTrained, seed);
    save_checkpoint(ckpt, trained.bundle, Provenance{Phase::kSourceTrained, seed, digest});
    written.push_back(ckpt);
    write_file(source_history_path(out, seed), trained.history.to_csv(), written);
  }
  return written;
}

std::vector<fs::path> cmd_adapt(const ExperimentConfig& config, const fs::path& out,
                                const std::optional<fs::path>& checkpoint) {
  fs::create_directories(out);
  const std::string digest = config_digest(config);
  std::vector<fs::path> written;
  for (const Job& job : jobs(config, out, Phase::kSourceTrained, checkpoint)) {
    const Checkpoint source = load_checked(job.checkpoint, Phase::kSourceTrained, digest);
    const PreparedData data = prepare_data(config, job.seed);
    check_vocab(source, data, job.checkpoint);
    const AdaptResult result = run_adaptation(config, data, source.bundle, job.seed);
    const fs::path ckpt = checkpoint_path(out, Phase::kAdapted, job.seed);
    save_checkpoint(ckpt, result.target, Provenance{Phase::kAdapted, job.seed, digest});
    written.push_back(ckpt);
    write_file(adapt_history_path(out, job.seed), result.history.to_csv(), written);
  }
  return written;
}

std::vector<fs::path> cmd_evaluate(const ExperimentConfig& config, const fs::path& out,
                                   const std::optional<fs::path>& checkpoint) {
  fs::create_directories(out);
  const std::string digest = config_digest(config);
  std::vector<fs::path> written;
  std::vector<ExperimentReport> reports;
  for (const Job& job : jobs(config, out, Phase::kAdapted, checkpoint)) {
    const fs::path dir = job.checkpoint.parent_path();
    const Checkpoint adapted = load_checked(job.checkpoint, Phase::kAdapted, digest);
    const fs::path source_file = checkpoint_path(dir, Phase::kSourceTrained, job.seed);
    const Checkpoint source = load_checked(source_file, Phase::kSourceTrained, digest);
    const PreparedData data = prepare_data(config, job.seed);
    check_vocab(adapted, data, job.checkpoint);
    check_vocab(source, data, source_file);
    if (!data.target_test.labeled()) throw ValidationError("evaluate: target-test has no labels");

    ExperimentReport report = build_report(config, data, source.bundle, adapted.bundle, job.seed);
    report.source_history_csv = read_if_present(source_history_path(dir, job.seed));
    report.adapt_history_csv = read_if_present(adapt_history_path(dir, job.seed));
    write_file(out / ("report-" + seed_tag(job.seed) + ".json"), report.to_json(), written);
    reports.push_back(std::move(report));
  }
  if (reports.size() >= 2) write_file(out / "summary.json", summary_to_json(multi_seed_summary(reports)), written);
  return written;
}

std::vector<fs::path> cmd_sweep_alpha(const ExperimentConfig& config, const fs::path& out,
                                      const std::optional<fs::path>& checkpoint) {
  fs::create_directories(out);
  const std::string digest = config_digest(config);
  std::vector<fs::path> written;
  for (const Job& job : jobs(config, out, Phase::kAdapted, checkpoint)) {
    const Checkpoint adapted = load_checked(job.checkpoint, Phase::kAdapted, digest);
    const PreparedData data = prepare_data(config, job.seed);
    check_vocab(adapted, data, job.checkpoint);
    write_file(out / ("sweep-" + seed_tag(job.seed) + ".csv"), target_sweep(config, data, adapted.bundle).to_csv(),
               written);
  }
  return written;
}

std::vector<fs::path> cmd_export_features(const ExperimentConfig& config, const fs::path& out,
                                          const std::optional<fs::path>& checkpoint,
                                          std::optional<std::size_t> layer) {
  fs::create_directories(out);
  const std::string digest = config_digest(config);
  std::vector<fs::path> written;
  for (const Job& job : jobs(config, out, Phase::kAdapted, checkpoint)) {
    const Checkpoint c = load_checkpoint(job.checkpoint);
    if (c.provenance.config_digest != digest) {
      throw ValidationError(job.checkpoint.string() + ": config digest does not match the config");
    }
    const PreparedData data = prepare_data(config, job.seed);
    check_vocab(c, data, job.checkpoint);
    const std::size_t k = layer.value_or(c.bundle.config.num_layers);
    auto rows = export_features(c.bundle, data.source_test, k);
    auto target_rows = export_features(c.bundle, data.target_test, k);
    rows.insert(rows.end(), target_rows.begin(), target_rows.end());
    const std::string name =
        "features-" + to_string(c.provenance.phase) + "-" + seed_tag(job.seed) + "-layer" + std::to_string(k) + ".csv";
    write_file(out / name, features_to_csv(rows), written);
  }
  return written;
}

}  // namespace dadee
