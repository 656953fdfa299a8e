#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "layerlens/model.hpp"
#include "layerlens/tasks.hpp"

namespace layerlens {

inline constexpr const char* kReportFormat = "layerlens-report/1";

enum class MetricKind { kCosine, kAccuracy, kPerplexity, kOutCosine, kOutNorm, kOutJs, kTaylor, kRandom };

std::string to_string(MetricKind kind);
/// Accepts the lowercase names used on the command line and in reports
/// ("cosine", "accuracy", "perplexity", "out_cosine", "out_norm", "out_js",
/// "taylor", "random").
MetricKind metric_kind_from_string(const std::string& name);
const std::vector<MetricKind>& all_metrics();

/// The accuracy-based score is undefined when the full model is no better
/// than chance on the calibration set.
class IllDefinedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RelevanceReport {
  MetricKind metric = MetricKind::kCosine;
  /// Layer indices the scores refer to (0-based). For a pruned model these
  /// are the original indices of the surviving layers.
  std::vector<std::size_t> layers;
  std::vector<double> scores;
  /// Acc(f) - Acc(f without layer); only filled by the accuracy metric.
  std::vector<std::optional<double>> raw_acc_drop;
  std::string dataset_id;
  std::string model_id;
  std::uint64_t forward_passes = 0;
  std::uint64_t backward_passes = 0;
  bool higher_means_more_relevant = true;

  std::size_t size() const { return scores.size(); }
  double score_of(std::size_t layer) const;
  bool operator==(const RelevanceReport&) const = default;
};

struct ScoreOptions {
  /// Seed for the random metric.
  std::uint64_t seed = 0;
  /// Chance level for the accuracy metric; random_baseline(d) when unset.
  std::optional<double> chance_level;
  std::string model_id;
};

/// Fraction of instances whose restricted argmax matches the label; one
/// forward pass per instance.
double evaluate_accuracy(const TransformerModel& model, const CalibrationDataset& d, PassCounter* counter = nullptr);

/// exp of the mean next-token negative log-likelihood over every position of
/// every instance. Position j predicts token j+1; the last position predicts
/// the answer token. Requires an LM head.
double evaluate_perplexity(const TransformerModel& model, const CalibrationDataset& d,
                           PassCounter* counter = nullptr);

/// Mean over instances of the per-instance token mean of 1 - cos(X^(l), X^(l+1)).
RelevanceReport cos_sim_score(const TransformerModel& model, const CalibrationDataset& d);

/// 1 - max(acc_pruned - r, 0) / max(acc_full - r, 0). Throws IllDefinedError
/// when acc_full <= r.
double acc_based_relevance(double acc_full, double acc_pruned, double r);
double acc_based_relevance(const TransformerModel& model, std::size_t l, const CalibrationDataset& d);

double perplexity_relevance(const TransformerModel& model, std::size_t l, const CalibrationDataset& d);

/// Jensen-Shannon divergence in nats; each log argument is floored at 1e-12.
double js_divergence(std::span<const double> p, std::span<const double> q);

/// Full-vs-pruned comparison at the last position, averaged over instances.
/// `variant` must be one of OUT_COSINE, OUT_NORM, OUT_JS.
double output_similarity(const TransformerModel& model, std::size_t l, const CalibrationDataset& d,
                         MetricKind variant);

/// Sum over block l's parameters of |w * dL/dw|, with L the summed
/// last-token cross-entropy over the calibration set.
double taylor_relevance(const TransformerModel& model, std::size_t l, const CalibrationDataset& d);

RelevanceReport score_all(const TransformerModel& model, const CalibrationDataset& d, MetricKind metric,
                          const ScoreOptions& options = {});

/// Comment header line + `layer,metric,score,raw_acc_drop,forward_passes,backward_passes`.
std::string report_to_csv(const RelevanceReport& report);
RelevanceReport report_from_csv(const std::string& text);
/// JSON form; each layer also carries a 1-based label.
std::string report_to_json(const RelevanceReport& report);
RelevanceReport report_from_json(const std::string& text);

void save_report(const RelevanceReport& report, const std::string& path);
/// Format chosen from the extension (.json or anything else = CSV).
RelevanceReport load_report(const std::string& path);

/// Shortest decimal string that parses back to exactly `v`.
std::string format_double(double v);

}  // namespace layerlens
