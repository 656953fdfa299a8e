#include "layerlens/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace layerlens {

std::string to_string(PruneStrategy s) { return s == PruneStrategy::kOneShot ? "one_shot" : "iterative"; }

PruneStrategy prune_strategy_from_string(const std::string& name) {
  if (name == "one_shot" || name == "oneshot" || name == "one-shot") return PruneStrategy::kOneShot;
  if (name == "iterative") return PruneStrategy::kIterative;
  throw std::invalid_argument("unknown pruning strategy '" + name + "' (expected one_shot or iterative)");
}

std::size_t PruneConfig::layers_to_remove(std::size_t n_layers) const {
  if (ratio.has_value() == count.has_value()) {
    throw std::invalid_argument("prune config: set exactly one of ratio and count");
  }
  std::size_t k = 0;
  if (ratio) {
    if (!(*ratio >= 0.0 && *ratio < 1.0)) throw std::invalid_argument("prune ratio must lie in [0, 1)");
    // the epsilon keeps ratios like 0.3 * 10 from flooring to 2
    k = static_cast<std::size_t>(std::floor(*ratio * static_cast<double>(n_layers) + 1e-9));
  } else {
    k = *count;
  }
  if (k == 0) throw std::invalid_argument("pruning would remove no layers (k = 0); nothing to do");
  if (k >= n_layers) {
    throw std::invalid_argument("cannot remove " + std::to_string(k) + " of " + std::to_string(n_layers) + " layers");
  }
  for (std::size_t p : protect)
    if (p >= n_layers) throw std::invalid_argument("protected layer " + std::to_string(p) + " is outside the model");
  if (n_layers - protect.size() < k) {
    throw std::invalid_argument("only " + std::to_string(n_layers - protect.size()) +
                                " unprotected layers for k = " + std::to_string(k));
  }
  return k;
}

std::set<std::size_t> edge_layers(std::size_t n_layers) {
  std::set<std::size_t> s;
  for (std::size_t l = 0; l < std::min<std::size_t>(2, n_layers); ++l) {
    s.insert(l);
    s.insert(n_layers - 1 - l);
  }
  return s;
}

std::vector<std::size_t> PruneTrace::removed() const {
  std::vector<std::size_t> out;
  for (const auto& s : steps) out.push_back(s.removed);
  return out;
}

namespace {

ScoreOptions options_for(const PruneConfig& cfg, std::size_t step) {
  ScoreOptions o;
  o.seed = cfg.seed + step;
  o.chance_level = cfg.chance_level;
  return o;
}

// Scores `model`, whose layers carry the original indices `alive`.
RelevanceReport score_alive(const TransformerModel& model, const std::vector<std::size_t>& alive,
                            const CalibrationDataset& d, const PruneConfig& cfg, std::size_t step) {
  RelevanceReport r = score_all(model, d, cfg.metric, options_for(cfg, step));
  r.layers = alive;
  return r;
}

// Position (within the report) of the least relevant unprotected layer;
// ties go to the lowest original index.
std::size_t least_relevant(const RelevanceReport& r, const std::set<std::size_t>& protect,
                           const std::set<std::size_t>& skip = {}) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (protect.count(r.layers[i]) || skip.count(r.layers[i])) continue;
    if (!best || r.scores[i] < r.scores[*best]) best = i;
  }
  if (!best) throw std::logic_error("no removable layer left");
  return *best;
}

PruneTrace start_trace(const TransformerModel& model, const CalibrationDataset& d, const PruneConfig& cfg) {
  PruneTrace t;
  t.metric = cfg.metric;
  t.strategy = cfg.strategy;
  t.original_layers = model.n_layers();
  t.dataset_id = d.id;
  t.initial_accuracy = evaluate_accuracy(model, d);
  return t;
}

}  // namespace

PruneResult one_shot_prune(const TransformerModel& model, const CalibrationDataset& d, const PruneConfig& cfg) {
  const std::size_t k = cfg.layers_to_remove(model.n_layers());
  PruneTrace trace = start_trace(model, d, cfg);
  trace.strategy = PruneStrategy::kOneShot;
  std::vector<std::size_t> alive(model.n_layers());
  std::iota(alive.begin(), alive.end(), 0);
  RelevanceReport report;
  try {
    report = score_alive(model, alive, d, cfg, 0);
  } catch (const IllDefinedError& e) {
    throw PruneAbortedError(e.what(), trace);
  }
  std::set<std::size_t> chosen;
  std::vector<std::size_t> removed;
  for (std::size_t s = 0; s < k; ++s) {
    const std::size_t layer = report.layers[least_relevant(report, cfg.protect, chosen)];
    chosen.insert(layer);
    removed.push_back(layer);
    const double acc = evaluate_accuracy(remove_layers(model, removed), d);
    trace.steps.push_back(PruneStep{report, layer, acc});
  }
  return PruneResult{remove_layers(model, removed), std::move(trace)};
}

PruneResult iterative_prune(const TransformerModel& model, const CalibrationDataset& d, const PruneConfig& cfg) {
  const std::size_t k = cfg.layers_to_remove(model.n_layers());
  PruneTrace trace = start_trace(model, d, cfg);
  trace.strategy = PruneStrategy::kIterative;
  std::vector<std::size_t> alive(model.n_layers());
  std::iota(alive.begin(), alive.end(), 0);
  TransformerModel current = model;
  for (std::size_t s = 0; s < k; ++s) {
    RelevanceReport report;
    try {
      report = score_alive(current, alive, d, cfg, s);
    } catch (const IllDefinedError& e) {
      throw PruneAbortedError("step " + std::to_string(s) + ": " + e.what(), trace);
    }
    const std::size_t pos = least_relevant(report, cfg.protect);
    const std::size_t layer = alive[pos];
    current = remove_layer(current, pos);
    alive.erase(alive.begin() + static_cast<std::ptrdiff_t>(pos));
    const double acc = evaluate_accuracy(current, d);
    trace.steps.push_back(PruneStep{std::move(report), layer, acc});
  }
  return PruneResult{std::move(current), std::move(trace)};
}

PruneResult prune(const TransformerModel& model, const CalibrationDataset& d, const PruneConfig& cfg) {
  return cfg.strategy == PruneStrategy::kOneShot ? one_shot_prune(model, d, cfg) : iterative_prune(model, d, cfg);
}

SubsetSearch exhaustive_best_subset(const TransformerModel& model, const CalibrationDataset& d, std::size_t k,
                                    const std::set<std::size_t>& protect) {
  std::vector<std::size_t> candidates;
  for (std::size_t l = 0; l < model.n_layers(); ++l)
    if (!protect.count(l)) candidates.push_back(l);
  if (k == 0 || k > candidates.size() || k >= model.n_layers()) {
    throw std::invalid_argument("exhaustive search: cannot remove " + std::to_string(k) + " layers");
  }
  double subsets = 1.0;
  for (std::size_t i = 0; i < k; ++i)
    subsets = subsets * static_cast<double>(candidates.size() - i) / static_cast<double>(i + 1);
  if (subsets > static_cast<double>(kMaxSubsets) + 0.5) {
    throw std::invalid_argument("exhaustive search over " + format_double(std::round(subsets)) +
                                " subsets exceeds the limit of " + std::to_string(kMaxSubsets));
  }
  SubsetSearch best;
  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), 0);
  // idx enumerates k-combinations of candidates in lexicographic order
  while (true) {
    std::vector<std::size_t> subset;
    for (std::size_t i : idx) subset.push_back(candidates[i]);
    const double acc = evaluate_accuracy(remove_layers(model, subset), d);
    if (best.evaluated == 0 || acc > best.accuracy) {
      best.accuracy = acc;
      best.removed = subset;
    }
    ++best.evaluated;
    std::size_t i = k;
    while (i > 0 && idx[i - 1] == candidates.size() - k + (i - 1)) --i;
    if (i == 0) break;
    ++idx[i - 1];
    for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
  return best;
}

std::string trace_to_jsonl(const PruneTrace& trace) {
  using nlohmann::ordered_json;
  std::ostringstream out;
  ordered_json head;
  head["format"] = kTraceFormat;
  head["metric"] = to_string(trace.metric);
  head["strategy"] = to_string(trace.strategy);
  head["original_layers"] = trace.original_layers;
  head["initial_accuracy"] = trace.initial_accuracy;
  head["dataset_id"] = trace.dataset_id;
  out << head.dump() << "\n";
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    const auto& s = trace.steps[i];
    ordered_json line;
    line["step"] = i;
    line["removed"] = s.removed;
    line["accuracy_after"] = s.accuracy_after;
    line["report"] = ordered_json::parse(report_to_json(s.report));
    out << line.dump() << "\n";
  }
  return out.str();
}

PruneTrace trace_from_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  PruneTrace t;
  bool have_header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto doc = nlohmann::json::parse(line);
      if (!have_header) {
        if (doc.value("format", "") != kTraceFormat) {
          throw std::runtime_error(std::string("format must be ") + kTraceFormat);
        }
        t.metric = metric_kind_from_string(doc.at("metric").get<std::string>());
        t.strategy = prune_strategy_from_string(doc.at("strategy").get<std::string>());
        t.original_layers = doc.at("original_layers").get<std::size_t>();
        t.initial_accuracy = doc.at("initial_accuracy").get<double>();
        t.dataset_id = doc.at("dataset_id").get<std::string>();
        have_header = true;
        continue;
      }
      if (doc.at("step").get<std::size_t>() != t.steps.size()) throw std::runtime_error("steps out of order");
      PruneStep s;
      s.removed = doc.at("removed").get<std::size_t>();
      s.accuracy_after = doc.at("accuracy_after").get<double>();
      s.report = report_from_json(doc.at("report").dump());
      t.steps.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("trace line " + std::to_string(line_no) + ": " + e.what());
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("trace line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) throw std::runtime_error("trace: missing header line");
  return t;
}

HeatmapMatrix trace_heatmap(const PruneTrace& trace) {
  HeatmapMatrix m;
  m.title = to_string(trace.metric) + " " + to_string(trace.strategy) + " pruning";
  m.scale = scale_for(trace.metric);
  const std::size_t n = trace.original_layers;
  for (std::size_t l = 0; l < n; ++l) m.col_labels.push_back(std::to_string(l + 1));
  for (std::size_t s = 0; s < trace.steps.size(); ++s) {
    m.row_labels.push_back("step " + std::to_string(s + 1));
    std::vector<double> row(n, 0.0);
    std::vector<bool> gone(n, true);
    const auto& r = trace.steps[s].report;
    for (std::size_t i = 0; i < r.size(); ++i) {
      row[r.layers[i]] = r.scores[i];
      gone[r.layers[i]] = false;
    }
    // one-shot steps share a report; mark earlier removals explicitly
    for (std::size_t p = 0; p < s; ++p) gone[trace.steps[p].removed] = true;
    m.values.insert(m.values.end(), row.begin(), row.end());
    m.removed.insert(m.removed.end(), gone.begin(), gone.end());
  }
  return m;
}

}  // namespace layerlens
