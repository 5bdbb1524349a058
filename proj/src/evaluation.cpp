#include "dadee/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "dadee/errors.hpp"
#include "dadee/source_training.hpp"

namespace dadee {

namespace {

using Json = nlohmann::ordered_json;

std::string format_double(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

double parse_double(std::string_view s, std::size_t line) {
  double v = 0.0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw ValidationError("feature csv line " + std::to_string(line) + ": bad number '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double dot(const std::vector<double>& w, const std::vector<double>& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * x[i];
  return s;
}

void require_layer(const EncoderBundle& bundle, std::size_t layer) {
  if (layer < 1 || layer > bundle.config.num_layers) {
    throw ValidationError("layer " + std::to_string(layer) + " outside 1.." + std::to_string(bundle.config.num_layers));
  }
}

}  // namespace

double d_a_from_error(double probe_error) { return std::clamp(2.0 * (1.0 - 2.0 * probe_error), 0.0, 2.0); }

ADistanceReport a_distance(const FeatureMatrix& source, const FeatureMatrix& target, SeededRng& rng,
                           const ProbeConfig& probe) {
  if (source.size() < kMinADistanceSamples || target.size() < kMinADistanceSamples) {
    throw ValidationError("a_distance: need at least " + std::to_string(kMinADistanceSamples) +
                          " vectors per domain, got " + std::to_string(source.size()) + " and " +
                          std::to_string(target.size()));
  }
  const std::size_t width = source.front().size();
  for (const auto* set : {&source, &target})
    for (const auto& v : *set)
      if (v.size() != width || width == 0) throw ShapeError("a_distance: feature width mismatch");

  const bool swap = target < source;
  const FeatureMatrix& first = swap ? target : source;
  const FeatureMatrix& second = swap ? source : target;

  struct Sample {
    const std::vector<double>* x;
    double y;
  };
  std::vector<Sample> train, test;
  // Equal-size subsets from both domains, so a constant guess scores exactly 0.5.
  const std::size_t n = std::min(first.size(), second.size());
  const std::size_t half = n / 2;
  for (const auto& [set, y] : {std::pair{&first, 1.0}, std::pair{&second, -1.0}}) {
    const auto order = rng.permutation(set->size());
    for (std::size_t i = 0; i < 2 * half; ++i) (i < half ? train : test).push_back({&(*set)[order[i]], y});
  }

  std::vector<double> w(width, 0.0);
  double b = 0.0;
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = 0; epoch < probe.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t i : order) {
      const Sample& s = train[i];
      if (s.y * (dot(w, *s.x) + b) < 1.0) {
        for (std::size_t k = 0; k < width; ++k) w[k] += probe.lr * s.y * (*s.x)[k];
        b += probe.lr * s.y;
      }
    }
  }
  std::size_t errors = 0;
  for (const Sample& s : test) errors += (dot(w, *s.x) + b >= 0.0 ? 1.0 : -1.0) != s.y;

  ADistanceReport report;
  report.probe_error = static_cast<double>(errors) / static_cast<double>(test.size());
  report.d_a = d_a_from_error(report.probe_error);
  report.source_size = source.size();
  report.target_size = target.size();
  return report;
}

std::vector<double> per_exit_accuracy(const EncoderBundle& bundle, const Corpus& corpus) {
  if (!bundle.frozen) throw ValidationError("per_exit_accuracy: bundle is not frozen");
  if (!corpus.labeled()) throw ValidationError("per_exit_accuracy: corpus " + to_string(corpus.role) + " is unlabeled");
  return exit_accuracies(bundle, corpus);
}

FeatureMatrix pooled_features(const EncoderBundle& bundle, const Corpus& corpus, std::size_t layer) {
  require_layer(bundle, layer);
  if (corpus.size() == 0) throw ValidationError("pooled_features: empty corpus");
  constexpr std::size_t kBatch = 64;
  const std::size_t d = bundle.config.d_model;
  FeatureMatrix out;
  NoGradGuard<float> no_grad;
  for (std::size_t start = 0; start < corpus.size(); start += kBatch) {
    std::vector<std::vector<TokenId>> seqs;
    for (std::size_t i = start; i < std::min(corpus.size(), start + kBatch); ++i) seqs.push_back(corpus.examples[i].ids);
    EncoderPass<float> pass(bundle, pack_batch(seqs, bundle.config));
    LayerResult<float> r;
    while (pass.layers_done() < layer) r = pass.next();
    const auto v = r.pooled.data();
    for (std::size_t s = 0; s < seqs.size(); ++s) out.emplace_back(v.begin() + s * d, v.begin() + (s + 1) * d);
  }
  return out;
}

std::vector<FeatureRow> export_features(const EncoderBundle& bundle, const Corpus& corpus, std::size_t layer) {
  if (!bundle.frozen) throw ValidationError("export_features: bundle is not frozen");
  const FeatureMatrix features = pooled_features(bundle, corpus, layer);
  std::vector<FeatureRow> rows;
  for (std::size_t i = 0; i < features.size(); ++i)
    rows.push_back(FeatureRow{corpus.domain, corpus.examples[i].label, features[i]});
  return rows;
}

std::string features_to_csv(std::span<const FeatureRow> rows) {
  if (rows.empty()) throw ValidationError("features_to_csv: no rows");
  const std::size_t width = rows.front().features.size();
  std::string out = "domain,label";
  for (std::size_t k = 0; k < width; ++k) out += ",f" + std::to_string(k);
  out += '\n';
  for (const auto& r : rows) {
    if (r.features.size() != width) throw ShapeError("features_to_csv: ragged rows");
    if (r.domain.find_first_of(",\n") != std::string::npos) {
      throw ValidationError("features_to_csv: domain tag '" + r.domain + "' contains a comma or newline");
    }
    out += r.domain + ',' + (r.label ? std::to_string(*r.label) : std::string());
    for (double v : r.features) out += ',' + format_double(v);
    out += '\n';
  }
  return out;
}

std::vector<FeatureRow> features_from_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("feature csv: empty input");
  const auto header = split_commas(line);
  if (header.size() < 3 || header[0] != "domain" || header[1] != "label") {
    throw ValidationError("feature csv: header must start with domain,label,f0");
  }
  std::vector<FeatureRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_commas(line);
    if (fields.size() != header.size()) {
      throw ValidationError("feature csv line " + std::to_string(line_no) + ": expected " +
                            std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
    }
    FeatureRow row;
    row.domain = fields[0];
    if (!fields[1].empty()) row.label = static_cast<std::size_t>(parse_double(fields[1], line_no));
    for (std::size_t k = 2; k < fields.size(); ++k) row.features.push_back(parse_double(fields[k], line_no));
    rows.push_back(std::move(row));
  }
  return rows;
}

void ExperimentReport::validate() const {
  auto unit = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(std::string("report: ") + name + " outside [0, 1]");
  };
  for (double a : source_exit_accuracy) unit(a, "source_exit_accuracy");
  for (double a : target_exit_accuracy) unit(a, "target_exit_accuracy");
  unit(source_only_target_accuracy, "source_only_target_accuracy");
  unit(final_target_accuracy, "final_target_accuracy");
  unit(early_exit_target_accuracy, "early_exit_target_accuracy");
  const double layers = static_cast<double>(target_exit_accuracy.size());
  if (!(early_exit_speedup >= 1.0 && early_exit_speedup <= std::max(1.0, layers))) {
    throw ValidationError("report: early_exit_speedup outside [1, L]");
  }
}

std::string ExperimentReport::to_json() const {
  Json j;
  j["seed"] = seed;
  j["config_digest"] = config_digest;
  j["source_exit_accuracy"] = source_exit_accuracy;
  j["target_exit_accuracy"] = target_exit_accuracy;
  j["source_only_target_accuracy"] = source_only_target_accuracy;
  j["final_target_accuracy"] = final_target_accuracy;
  j["selected_alpha"] = selected_alpha;
  j["early_exit_target_accuracy"] = early_exit_target_accuracy;
  j["early_exit_speedup"] = early_exit_speedup;
  j["a_distance_before"] = a_distance_before;
  j["a_distance_after"] = a_distance_after;
  j["source_history_csv"] = source_history_csv;
  j["adapt_history_csv"] = adapt_history_csv;
  return j.dump(2) + "\n";
}

ExperimentReport ExperimentReport::from_json(const std::string& text) {
  try {
    const Json j = Json::parse(text);
    ExperimentReport r;
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config_digest = j.at("config_digest").get<std::string>();
    r.source_exit_accuracy = j.at("source_exit_accuracy").get<std::vector<double>>();
    r.target_exit_accuracy = j.at("target_exit_accuracy").get<std::vector<double>>();
    r.source_only_target_accuracy = j.at("source_only_target_accuracy").get<double>();
    r.final_target_accuracy = j.at("final_target_accuracy").get<double>();
    r.selected_alpha = j.at("selected_alpha").get<double>();
    r.early_exit_target_accuracy = j.at("early_exit_target_accuracy").get<double>();
    r.early_exit_speedup = j.at("early_exit_speedup").get<double>();
    r.a_distance_before = j.at("a_distance_before").get<double>();
    r.a_distance_after = j.at("a_distance_after").get<double>();
    r.source_history_csv = j.value("source_history_csv", std::string());
    r.adapt_history_csv = j.value("adapt_history_csv", std::string());
    return r;
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("report json: ") + e.what());
  }
}

std::vector<MetricSummary> multi_seed_summary(std::span<const ExperimentReport> reports) {
  if (reports.size() < 2) throw ValidationError("multi_seed_summary: need at least 2 reports");
  for (const auto& r : reports) {
    if (r.config_digest != reports.front().config_digest) {
      throw ValidationError("multi_seed_summary: config digests differ (" + reports.front().config_digest + " vs " +
                            r.config_digest + ")");
    }
    if (r.target_exit_accuracy.size() != reports.front().target_exit_accuracy.size() ||
        r.source_exit_accuracy.size() != reports.front().source_exit_accuracy.size()) {
      throw ValidationError("multi_seed_summary: reports have different layer counts");
    }
  }
  std::vector<std::pair<std::string, std::vector<double>>> metrics = {
      {"source_only_target_accuracy", {}}, {"final_target_accuracy", {}},  {"selected_alpha", {}},
      {"early_exit_target_accuracy", {}},  {"early_exit_speedup", {}},     {"a_distance_before", {}},
      {"a_distance_after", {}}};
  const std::size_t layers = reports.front().target_exit_accuracy.size();
  for (std::size_t i = 0; i < layers; ++i) metrics.push_back({"source_exit_accuracy_" + std::to_string(i + 1), {}});
  for (std::size_t i = 0; i < layers; ++i) metrics.push_back({"target_exit_accuracy_" + std::to_string(i + 1), {}});
  for (const auto& r : reports) {
    const std::vector<double> scalars = {r.source_only_target_accuracy, r.final_target_accuracy, r.selected_alpha,
                                         r.early_exit_target_accuracy, r.early_exit_speedup, r.a_distance_before,
                                         r.a_distance_after};
    std::size_t m = 0;
    for (double v : scalars) metrics[m++].second.push_back(v);
    for (double v : r.source_exit_accuracy) metrics[m++].second.push_back(v);
    for (double v : r.target_exit_accuracy) metrics[m++].second.push_back(v);
  }
  std::vector<MetricSummary> out;
  for (const auto& [name, values] : metrics) {
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    out.push_back({name, mean, std::sqrt(ss / static_cast<double>(values.size() - 1))});
  }
  return out;
}

std::string summary_to_json(std::span<const MetricSummary> summary) {
  Json j = Json::object();
  for (const auto& m : summary) j[m.name] = {{"mean", m.mean}, {"std", m.std}};
  return j.dump(2) + "\n";
}

}  // namespace dadee
