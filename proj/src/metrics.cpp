#include "layerlens/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "layerlens/differentiable.hpp"
#include "layerlens/parallel.hpp"
#include "layerlens/rng.hpp"

namespace layerlens {

std::string to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::kCosine: return "cosine";
    case MetricKind::kAccuracy: return "accuracy";
    case MetricKind::kPerplexity: return "perplexity";
    case MetricKind::kOutCosine: return "out_cosine";
    case MetricKind::kOutNorm: return "out_norm";
    case MetricKind::kOutJs: return "out_js";
    case MetricKind::kTaylor: return "taylor";
    case MetricKind::kRandom: return "random";
  }
  return "unknown";
}

const std::vector<MetricKind>& all_metrics() {
  static const std::vector<MetricKind> kAll = {MetricKind::kCosine,    MetricKind::kAccuracy, MetricKind::kPerplexity,
                                               MetricKind::kOutCosine, MetricKind::kOutNorm,  MetricKind::kOutJs,
                                               MetricKind::kTaylor,    MetricKind::kRandom};
  return kAll;
}

MetricKind metric_kind_from_string(const std::string& name) {
  std::string lower = name;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (MetricKind k : all_metrics())
    if (to_string(k) == lower) return k;
  throw std::invalid_argument("unknown metric '" + name +
                              "' (expected cosine, accuracy, perplexity, out_cosine, out_norm, out_js, taylor or random)");
}

double RelevanceReport::score_of(std::size_t layer) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i] == layer) return scores[i];
  throw std::out_of_range("report has no score for layer " + std::to_string(layer));
}

namespace {

void require_nonempty(const CalibrationDataset& d) {
  if (d.instances.empty()) throw std::invalid_argument("calibration dataset '" + d.id + "' is empty");
}

void require_layer(const TransformerModel& model, std::size_t l) {
  if (l >= model.n_layers()) {
    throw std::out_of_range("layer index " + std::to_string(l) + " out of range for a " +
                            std::to_string(model.n_layers()) + "-layer model");
  }
}

RelevanceReport empty_report(const TransformerModel& model, const CalibrationDataset& d, MetricKind metric) {
  RelevanceReport r;
  r.metric = metric;
  r.dataset_id = d.id;
  for (std::size_t l = 0; l < model.n_layers(); ++l) r.layers.push_back(l);
  r.raw_acc_drop.assign(model.n_layers(), std::nullopt);
  return r;
}

// Per-instance values summed in index order, so the result does not depend
// on the worker count.
double ordered_mean(const std::vector<double>& values) {
  double total = 0.0;
  for (double v : values) total += v;
  return total / static_cast<double>(values.size());
}

std::vector<double> softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
  for (double& v : p) v /= z;
  return p;
}

struct LastPosition {
  std::vector<double> hidden;
  std::vector<double> logits;
};

LastPosition last_position(const TransformerModel& model, std::span<const int> tokens, PassCounter* counter) {
  ForwardResult r = forward(model, tokens, true, counter);
  const Tensor& x = r.trace->layers.back();
  auto row = x.row(x.rows() - 1);
  return {std::vector<double>(row.begin(), row.end()), std::move(r.logits)};
}

double compare_outputs(const LastPosition& full, const LastPosition& pruned, MetricKind variant) {
  switch (variant) {
    case MetricKind::kOutCosine: return 1.0 - cosine_similarity(full.hidden, pruned.hidden);
    case MetricKind::kOutNorm: {
      const double base = norm2(full.hidden);
      if (base == 0.0) throw NumericError("output similarity: full-model hidden state has zero norm");
      std::vector<double> diff(full.hidden.size());
      for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = full.hidden[i] - pruned.hidden[i];
      return norm2(diff) / base;
    }
    case MetricKind::kOutJs: return js_divergence(softmax(full.logits), softmax(pruned.logits));
    default: throw std::invalid_argument("output similarity variant must be out_cosine, out_norm or out_js");
  }
}

std::vector<LastPosition> last_positions(const TransformerModel& model, const CalibrationDataset& d,
                                         PassCounter* counter) {
  std::vector<LastPosition> out(d.size());
  parallel_for(d.size(), [&](std::size_t i) { out[i] = last_position(model, d.instances[i].tokens, counter); });
  return out;
}

double output_similarity_against(const TransformerModel& model, std::size_t l, const CalibrationDataset& d,
                                 const std::vector<LastPosition>& full, MetricKind variant, PassCounter* counter) {
  const TransformerModel pruned = remove_layer(model, l);
  std::vector<double> values(d.size());
  parallel_for(d.size(), [&](std::size_t i) {
    values[i] = compare_outputs(full[i], last_position(pruned, d.instances[i].tokens, counter), variant);
  });
  return ordered_mean(values);
}

std::vector<double> taylor_scores(const TransformerModel& model, const CalibrationDataset& d, PassCounter* counter) {
  require_nonempty(d);
  const GradientSum g = gradient_sum(model, d.instances, LossKind::kLastToken, counter);
  const auto params = parameter_list(model);
  std::vector<double> scores(model.n_layers(), 0.0);
  for (std::size_t l = 0; l < model.n_layers(); ++l) {
    const auto [first, last] = block_parameter_range(model, l);
    for (std::size_t p = first; p < last; ++p) {
      const Tensor& w = *params[p];
      for (std::size_t k = 0; k < w.size(); ++k) scores[l] += std::abs(w[k] * g.grads[p][k]);
    }
    if (!std::isfinite(scores[l])) throw NumericError("taylor relevance of layer " + std::to_string(l) + " is not finite");
  }
  return scores;
}

}  // namespace

double evaluate_accuracy(const TransformerModel& model, const CalibrationDataset& d, PassCounter* counter) {
  require_nonempty(d);
  std::vector<double> hit(d.size());
  parallel_for(d.size(), [&](std::size_t i) {
    const Instance& inst = d.instances[i];
    hit[i] = predict(model, inst.tokens, inst.options, counter) == inst.label ? 1.0 : 0.0;
  });
  return ordered_mean(hit);
}

double evaluate_perplexity(const TransformerModel& model, const CalibrationDataset& d, PassCounter* counter) {
  require_nonempty(d);
  if (model.config().head_kind != HeadKind::kLmUnembedding) {
    throw std::invalid_argument("perplexity needs a model with an LM unembedding head");
  }
  std::vector<double> nll(d.size());
  std::vector<double> count(d.size());
  parallel_for(d.size(), [&](std::size_t i) {
    const Instance& inst = d.instances[i];
    const Tensor logits = forward_all_logits(model, inst.tokens, counter);
    double total = 0.0;
    for (std::size_t j = 0; j < inst.tokens.size(); ++j) {
      const int target = j + 1 < inst.tokens.size() ? inst.tokens[j + 1] : inst.label;
      auto row = logits.row(j);
      const double mx = *std::max_element(row.begin(), row.end());
      double z = 0.0;
      for (double v : row) z += std::exp(v - mx);
      total += mx + std::log(z) - row[static_cast<std::size_t>(target)];
    }
    nll[i] = total;
    count[i] = static_cast<double>(inst.tokens.size());
  });
  double total = 0.0, n = 0.0;
  for (std::size_t i = 0; i < nll.size(); ++i) {
    total += nll[i];
    n += count[i];
  }
  return std::exp(total / n);
}

RelevanceReport cos_sim_score(const TransformerModel& model, const CalibrationDataset& d) {
  require_nonempty(d);
  PassCounter counter;
  const std::size_t L = model.n_layers();
  std::vector<std::vector<double>> per_instance(d.size());
  parallel_for(d.size(), [&](std::size_t i) {
    const ForwardResult r = forward(model, d.instances[i].tokens, true, &counter);
    const auto& layers = r.trace->layers;
    std::vector<double> scores(L, 0.0);
    for (std::size_t l = 0; l < L; ++l) {
      const std::size_t n = layers[l].rows();
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        try {
          total += 1.0 - cosine_similarity(layers[l].row(j), layers[l + 1].row(j));
        } catch (const NumericError&) {
          throw NumericError("cosine score: zero-norm hidden state at layer " + std::to_string(l) + ", instance " +
                             std::to_string(i) + ", position " + std::to_string(j));
        }
      }
      scores[l] = total / static_cast<double>(n);
    }
    per_instance[i] = std::move(scores);
  });
  RelevanceReport report = empty_report(model, d, MetricKind::kCosine);
  report.scores.assign(L, 0.0);
  for (const auto& s : per_instance)
    for (std::size_t l = 0; l < L; ++l) report.scores[l] += s[l];
  for (double& s : report.scores) s /= static_cast<double>(d.size());
  report.forward_passes = counter.forward_passes();
  return report;
}

double acc_based_relevance(double acc_full, double acc_pruned, double r) {
  const double denom = std::max(acc_full - r, 0.0);
  if (denom <= 0.0) {
    throw IllDefinedError("full-model accuracy " + format_double(acc_full) + " does not exceed the chance level " +
                          format_double(r) + ": the relevance score becomes ill-defined");
  }
  return 1.0 - std::max(acc_pruned - r, 0.0) / denom;
}

double acc_based_relevance(const TransformerModel& model, std::size_t l, const CalibrationDataset& d) {
  require_layer(model, l);
  const double r = random_baseline(d);
  const double full = evaluate_accuracy(model, d);
  if (full <= r) acc_based_relevance(full, full, r);  // throws
  return acc_based_relevance(full, evaluate_accuracy(remove_layer(model, l), d), r);
}

double perplexity_relevance(const TransformerModel& model, std::size_t l, const CalibrationDataset& d) {
  require_layer(model, l);
  return evaluate_perplexity(remove_layer(model, l), d) - evaluate_perplexity(model, d);
}

double js_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) throw std::invalid_argument("js_divergence: distributions differ in size");
  constexpr double kFloor = 1e-12;
  double kl_p = 0.0, kl_q = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) kl_p += p[i] * (std::log(std::max(p[i], kFloor)) - std::log(std::max(m, kFloor)));
    if (q[i] > 0.0) kl_q += q[i] * (std::log(std::max(q[i], kFloor)) - std::log(std::max(m, kFloor)));
  }
  return std::max(0.0, 0.5 * kl_p + 0.5 * kl_q);
}

double output_similarity(const TransformerModel& model, std::size_t l, const CalibrationDataset& d,
                         MetricKind variant) {
  require_layer(model, l);
  require_nonempty(d);
  if (variant != MetricKind::kOutCosine && variant != MetricKind::kOutNorm && variant != MetricKind::kOutJs) {
    throw std::invalid_argument("output similarity variant must be out_cosine, out_norm or out_js");
  }
  return output_similarity_against(model, l, d, last_positions(model, d, nullptr), variant, nullptr);
}

double taylor_relevance(const TransformerModel& model, std::size_t l, const CalibrationDataset& d) {
  require_layer(model, l);
  return taylor_scores(model, d, nullptr)[l];
}

RelevanceReport score_all(const TransformerModel& model, const CalibrationDataset& d, MetricKind metric,
                          const ScoreOptions& options) {
  require_nonempty(d);
  const std::size_t L = model.n_layers();
  RelevanceReport report;
  PassCounter counter;
  switch (metric) {
    case MetricKind::kCosine:
      report = cos_sim_score(model, d);
      break;
    case MetricKind::kAccuracy: {
      report = empty_report(model, d, metric);
      const double r = options.chance_level.value_or(random_baseline(d));
      const double full = evaluate_accuracy(model, d, &counter);
      if (full <= r) acc_based_relevance(full, full, r);  // throws IllDefinedError
      for (std::size_t l = 0; l < L; ++l) {
        const double pruned = evaluate_accuracy(remove_layer(model, l), d, &counter);
        report.scores.push_back(acc_based_relevance(full, pruned, r));
        report.raw_acc_drop[l] = full - pruned;
      }
      break;
    }
    case MetricKind::kPerplexity: {
      report = empty_report(model, d, metric);
      const double base = evaluate_perplexity(model, d, &counter);
      for (std::size_t l = 0; l < L; ++l)
        report.scores.push_back(evaluate_perplexity(remove_layer(model, l), d, &counter) - base);
      break;
    }
    case MetricKind::kOutCosine:
    case MetricKind::kOutNorm:
    case MetricKind::kOutJs: {
      report = empty_report(model, d, metric);
      const auto full = last_positions(model, d, &counter);
      for (std::size_t l = 0; l < L; ++l)
        report.scores.push_back(output_similarity_against(model, l, d, full, metric, &counter));
      break;
    }
    case MetricKind::kTaylor:
      report = empty_report(model, d, metric);
      report.scores = taylor_scores(model, d, &counter);
      break;
    case MetricKind::kRandom: {
      report = empty_report(model, d, metric);
      auto rng = make_engine(options.seed, 0x7a4d);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (std::size_t l = 0; l < L; ++l) report.scores.push_back(u(rng));
      break;
    }
  }
  if (metric != MetricKind::kCosine) {
    report.forward_passes = counter.forward_passes();
    report.backward_passes = counter.backward_passes();
  }
  report.model_id = options.model_id;
  return report;
}

// ---------------------------------------------------------------------------
// Report files

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

double parse_double(const std::string& s, const std::string& what) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::runtime_error("report: cannot parse " + what + " '" + s + "'");
  }
  return v;
}

std::string id_token(const std::string& id) {
  std::string out = id.empty() ? "-" : id;
  for (char& c : out)
    if (std::isspace(static_cast<unsigned char>(c))) c = '_';
  return out;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

std::string report_to_csv(const RelevanceReport& report) {
  std::ostringstream out;
  out << "# " << kReportFormat << " metric=" << to_string(report.metric) << " dataset=" << id_token(report.dataset_id)
      << " model=" << id_token(report.model_id)
      << " higher_means_more_relevant=" << (report.higher_means_more_relevant ? "true" : "false") << "\n";
  out << "layer,metric,score,raw_acc_drop,forward_passes,backward_passes\n";
  for (std::size_t i = 0; i < report.scores.size(); ++i) {
    out << report.layers[i] << "," << to_string(report.metric) << "," << format_double(report.scores[i]) << ",";
    if (report.raw_acc_drop[i]) out << format_double(*report.raw_acc_drop[i]);
    out << "," << report.forward_passes << "," << report.backward_passes << "\n";
  }
  return out.str();
}

RelevanceReport report_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind(std::string("# ") + kReportFormat, 0) != 0) {
    throw std::runtime_error(std::string("report: first line must declare ") + kReportFormat);
  }
  RelevanceReport r;
  bool have_metric = false;
  std::istringstream header(line.substr(2 + std::string(kReportFormat).size()));
  std::string kv;
  while (header >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
    if (key == "metric") {
      r.metric = metric_kind_from_string(value);
      have_metric = true;
    } else if (key == "dataset") {
      r.dataset_id = value == "-" ? "" : value;
    } else if (key == "model") {
      r.model_id = value == "-" ? "" : value;
    } else if (key == "higher_means_more_relevant") {
      r.higher_means_more_relevant = value == "true";
    }
  }
  if (!have_metric) throw std::runtime_error("report: header lacks metric=");
  if (!std::getline(in, line) || line != "layer,metric,score,raw_acc_drop,forward_passes,backward_passes") {
    throw std::runtime_error("report: unexpected column header '" + line + "'");
  }
  std::size_t lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != 6) throw std::runtime_error("report line " + std::to_string(lineno) + ": expected 6 columns");
    if (metric_kind_from_string(cells[1]) != r.metric) {
      throw std::runtime_error("report line " + std::to_string(lineno) + ": metric differs from header");
    }
    r.layers.push_back(std::stoul(cells[0]));
    r.scores.push_back(parse_double(cells[2], "score"));
    r.raw_acc_drop.push_back(cells[3].empty() ? std::nullopt
                                              : std::optional<double>(parse_double(cells[3], "raw_acc_drop")));
    r.forward_passes = std::stoull(cells[4]);
    r.backward_passes = std::stoull(cells[5]);
  }
  return r;
}

std::string report_to_json(const RelevanceReport& report) {
  nlohmann::ordered_json doc;
  doc["format"] = kReportFormat;
  doc["metric"] = to_string(report.metric);
  doc["dataset_id"] = report.dataset_id;
  doc["model_id"] = report.model_id;
  doc["higher_means_more_relevant"] = report.higher_means_more_relevant;
  doc["forward_passes"] = report.forward_passes;
  doc["backward_passes"] = report.backward_passes;
  auto layers = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < report.scores.size(); ++i) {
    nlohmann::ordered_json row;
    row["layer"] = report.layers[i];
    row["label"] = report.layers[i] + 1;
    row["score"] = report.scores[i];
    row["raw_acc_drop"] = report.raw_acc_drop[i] ? nlohmann::ordered_json(*report.raw_acc_drop[i]) : nullptr;
    layers.push_back(row);
  }
  doc["layers"] = layers;
  return doc.dump(2) + "\n";
}

RelevanceReport report_from_json(const std::string& text) {
  try {
    const auto doc = nlohmann::json::parse(text);
    if (doc.value("format", "") != kReportFormat) {
      throw std::runtime_error(std::string("report: format must be ") + kReportFormat);
    }
    RelevanceReport r;
    r.metric = metric_kind_from_string(doc.at("metric").get<std::string>());
    r.dataset_id = doc.at("dataset_id").get<std::string>();
    r.model_id = doc.at("model_id").get<std::string>();
    r.higher_means_more_relevant = doc.at("higher_means_more_relevant").get<bool>();
    r.forward_passes = doc.at("forward_passes").get<std::uint64_t>();
    r.backward_passes = doc.at("backward_passes").get<std::uint64_t>();
    for (const auto& row : doc.at("layers")) {
      r.layers.push_back(row.at("layer").get<std::size_t>());
      r.scores.push_back(row.at("score").get<double>());
      const auto& drop = row.at("raw_acc_drop");
      r.raw_acc_drop.push_back(drop.is_null() ? std::nullopt : std::optional<double>(drop.get<double>()));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("report: malformed JSON: ") + e.what());
  }
}

void save_report(const RelevanceReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  const bool json = path.size() >= 5 && path.compare(path.size() - 5, 5, ".json") == 0;
  out << (json ? report_to_json(report) : report_to_csv(report));
  if (!out) throw std::runtime_error("failed writing " + path);
}

RelevanceReport load_report(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open report " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  const bool json = path.size() >= 5 && path.compare(path.size() - 5, 5, ".json") == 0;
  return json ? report_from_json(buf.str()) : report_from_csv(buf.str());
}

}  // namespace layerlens
