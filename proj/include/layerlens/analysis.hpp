#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "layerlens/metrics.hpp"
#include "layerlens/trainer.hpp"

namespace layerlens {

inline constexpr const char* kHeatmapFormat = "layerlens-heatmap/1";

/// Sample Pearson correlation. Throws std::invalid_argument on unequal
/// lengths, fewer than 2 points, or zero variance.
double pearson_r(std::span<const double> x, std::span<const double> y);

enum class TiePolicy { kAverage, kOrdinal };

/// Ranks with 1 = least relevant (smallest score). kAverage gives tied
/// scores their mean rank; kOrdinal breaks ties by position (lower index
/// gets the lower rank), so the result is a permutation of 1..n.
std::vector<double> relevance_ranks(std::span<const double> scores, TiePolicy policy = TiePolicy::kAverage);

struct ConfusionMatrix {
  std::size_t n = 0;
  /// counts[i * n + j]: occurrences of (true rank i+1, metric rank j+1).
  std::vector<std::size_t> counts;
  std::size_t band = 2;
  std::size_t total = 0;
  double off_diagonal_rate = 0.0;
  /// Fraction of observations with |i - j| <= band (diagonal included).
  double near_band_rate = 0.0;
  /// Fraction with |i - j| > band.
  double severe_rate = 0.0;

  std::size_t at(std::size_t i, std::size_t j) const { return counts[i * n + j]; }
};

/// Rank agreement between a ground-truth relevance (one score vector per
/// task or model) and a metric. Ranks are ordinal so every row and column
/// sums to the number of observations.
ConfusionMatrix rank_confusion(const std::vector<std::vector<double>>& true_scores,
                               const std::vector<std::vector<double>>& metric_scores, std::size_t band = 2);

struct VarianceSummary {
  /// Per-dataset z-normalized score vectors (population statistics).
  std::vector<std::vector<double>> normalized;
  /// Per-layer population variance across datasets.
  std::vector<double> per_layer_variance;
  double mean = 0.0;
  /// Population standard deviation of per_layer_variance.
  double sd = 0.0;
};

VarianceSummary zscore_variance(const std::vector<std::vector<double>>& per_dataset_scores);
VarianceSummary zscore_variance(const std::vector<RelevanceReport>& reports);

enum class WilcoxonMethod { kAuto, kExact, kNormal };

struct WilcoxonResult {
  double w = 0.0;          // min(W+, W-)
  double w_plus = 0.0;
  double w_minus = 0.0;
  std::size_t n = 0;       // pairs with a non-zero difference
  double p_value = 1.0;    // two-sided
  bool exact = false;
};

/// Paired signed-rank test. Zero differences are dropped; tied |differences|
/// get average ranks. kAuto is exact for n <= 20 and normal (continuity and
/// tie corrected) above.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                    WilcoxonMethod method = WilcoxonMethod::kAuto);

/// 100 * (acc - r) / (1 - r), clamped below at `floor`.
double normalized_score(double acc, double r, double floor = 0.0);

enum class ColorScale { kDiverging, kSequential };

std::string to_string(ColorScale scale);

struct HeatmapMatrix {
  std::string title;
  ColorScale scale = ColorScale::kSequential;
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  /// Row-major values; ignored where `removed` is set.
  std::vector<double> values;
  std::vector<bool> removed;

  std::size_t rows() const { return row_labels.size(); }
  std::size_t cols() const { return col_labels.size(); }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
  bool is_removed(std::size_t r, std::size_t c) const { return removed[r * cols() + c]; }
  void validate() const;
  bool operator==(const HeatmapMatrix&) const = default;
};

/// Diverging (centered at 0) for accuracy-based scores, sequential otherwise.
ColorScale scale_for(MetricKind metric);

/// Rows = reports (one per dataset or model), columns = 1-based layer labels.
HeatmapMatrix reports_heatmap(const std::vector<RelevanceReport>& reports, const std::vector<std::string>& row_labels);

/// Relevance of every layer at every checkpoint of a training run.
HeatmapMatrix checkpoint_heatmap(const CheckpointSeries& series, const CalibrationDataset& data, MetricKind metric,
                                 const ScoreOptions& options = {});

std::string heatmap_to_csv(const HeatmapMatrix& m);
HeatmapMatrix heatmap_from_csv(const std::string& text);
std::string heatmap_to_svg(const HeatmapMatrix& m);

/// Writes `csv_path` always and `svg_path` when non-empty.
void emit_heatmap(const HeatmapMatrix& m, const std::string& csv_path, const std::string& svg_path = "");

}  // namespace layerlens
