#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "layerlens/analysis.hpp"
#include "layerlens/metrics.hpp"
#include "layerlens/model.hpp"
#include "layerlens/tasks.hpp"

namespace layerlens {

inline constexpr const char* kTraceFormat = "layerlens-trace/1";

enum class PruneStrategy { kOneShot, kIterative };

std::string to_string(PruneStrategy s);
/// "one_shot" or "iterative".
PruneStrategy prune_strategy_from_string(const std::string& name);

struct PruneConfig {
  MetricKind metric = MetricKind::kCosine;
  PruneStrategy strategy = PruneStrategy::kIterative;
  /// Exactly one of ratio / count must be set. k = floor(ratio * L).
  std::optional<double> ratio;
  std::optional<std::size_t> count;
  /// Original layer indices that are never removed.
  std::set<std::size_t> protect;
  std::uint64_t seed = 0;
  std::optional<double> chance_level;

  /// Number of layers to remove from an L-layer model. Throws
  /// std::invalid_argument when k is 0, k >= L, or the protected set leaves
  /// fewer than k candidates.
  std::size_t layers_to_remove(std::size_t n_layers) const;
};

/// {0, 1, L-2, L-1}.
std::set<std::size_t> edge_layers(std::size_t n_layers);

struct PruneStep {
  /// Scores of the layers alive before this removal, keyed by original index.
  RelevanceReport report;
  std::size_t removed = 0;  // original index
  double accuracy_after = 0.0;
  bool operator==(const PruneStep&) const = default;
};

struct PruneTrace {
  MetricKind metric = MetricKind::kCosine;
  PruneStrategy strategy = PruneStrategy::kIterative;
  std::size_t original_layers = 0;
  double initial_accuracy = 0.0;
  std::string dataset_id;
  std::vector<PruneStep> steps;

  std::vector<std::size_t> removed() const;
  bool operator==(const PruneTrace&) const = default;
};

struct PruneResult {
  TransformerModel model;
  PruneTrace trace;
  double final_accuracy() const { return trace.steps.empty() ? trace.initial_accuracy : trace.steps.back().accuracy_after; }
};

/// A relevance score became ill-defined mid-run; `partial` holds the steps
/// completed so far.
class PruneAbortedError : public IllDefinedError {
 public:
  PruneAbortedError(const std::string& what, PruneTrace partial)
      : IllDefinedError(what), partial_(std::move(partial)) {}
  const PruneTrace& partial() const { return partial_; }

 private:
  PruneTrace partial_;
};

/// Scores once and removes the k least relevant layers (ties to the lowest
/// index). The trace has k steps sharing the same report.
PruneResult one_shot_prune(const TransformerModel& model, const CalibrationDataset& d, const PruneConfig& cfg);

/// Re-scores the surviving layers after every removal.
PruneResult iterative_prune(const TransformerModel& model, const CalibrationDataset& d, const PruneConfig& cfg);

PruneResult prune(const TransformerModel& model, const CalibrationDataset& d, const PruneConfig& cfg);

struct SubsetSearch {
  std::vector<std::size_t> removed;  // sorted
  double accuracy = 0.0;
  std::size_t evaluated = 0;
};

inline constexpr std::size_t kMaxSubsets = 10000;

/// Best k-subset to remove by calibration accuracy; ties go to the
/// lexicographically first subset. Throws when C(L, k) exceeds kMaxSubsets.
SubsetSearch exhaustive_best_subset(const TransformerModel& model, const CalibrationDataset& d, std::size_t k,
                                    const std::set<std::size_t>& protect = {});

/// One JSON object per line: a header, then one line per step.
std::string trace_to_jsonl(const PruneTrace& trace);
PruneTrace trace_from_jsonl(const std::string& text);

/// Steps x original layers; cells of layers removed at earlier steps are marked.
HeatmapMatrix trace_heatmap(const PruneTrace& trace);

}  // namespace layerlens
