#pragma once

#include <string>
#include <vector>

#include "layerlens/model.hpp"
#include "layerlens/tasks.hpp"

namespace layerlens {

inline constexpr const char* kCertificateFormat = "layerlens-certificate/1";

/// Parameters of the three-block counterexample models.
struct AdversarialSpec {
  double epsilon = 0.01;
  double delta = 1.0;
  std::size_t n_classes = 2;
  /// Odd C: send class y's misleading signal to (y+1) mod C instead of
  /// C-1-y, whose middle class would otherwise map to itself.
  bool relabel_odd = true;
  /// Spread the large offset M over this many irrelevant coordinates, each
  /// carrying M/sqrt(spread). Scores are unchanged.
  std::size_t spread = 1;

  /// Throws std::invalid_argument unless (1-eps)^2 > 1/2, delta > 0, C >= 2.
  void validate() const;
};

/// Score of the critical (middle) block as a function of M:
/// 1 - sqrt(delta^2 + M^2) / sqrt(2 delta^2 + M^2).
double middle_block_score(double delta, double m);

/// Unique positive M with middle_block_score(delta, M) == epsilon.
double solve_m(double delta, double epsilon);

/// The class the pruned model is steered to for true class y.
int misleading_class(int y, std::size_t n_classes, bool relabel_odd);

struct AdversarialBuild {
  TransformerModel model;
  /// The dataset the model is certified on (relabelled or re-tokenized).
  CalibrationDataset dataset;
  double m = 0.0;
  AdversarialSpec spec;
  /// 0-based index of the critical block.
  std::size_t target_layer = 1;
};

/// Binary construction: d = 2 + spread, every token embedded as
/// (0, delta, 0), all labels 0. Removing block 1 flips every prediction to 1.
AdversarialBuild build_binary(const CalibrationDataset& d, const AdversarialSpec& spec);

/// C-class construction on a labeled dataset with distinct sequences:
/// d = 2C + spread. Each distinct sequence becomes its own token.
AdversarialBuild build_multiclass(const CalibrationDataset& d, const AdversarialSpec& spec);

struct CertificateCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct Certificate {
  AdversarialSpec spec;
  double m = 0.0;
  std::size_t target_layer = 1;
  std::vector<double> layer_scores;
  double full_accuracy = 0.0;
  double pruned_accuracy = 0.0;
  std::vector<CertificateCheck> checks;

  bool passed() const;
  /// Name of the first failed condition, empty when all pass.
  std::string first_failure() const;
};

inline constexpr double kCertificateScoreTolerance = 1e-6;

/// Checks (1) the target block's cosine score is within 1e-6 of epsilon and
/// strictly the smallest, (2) full accuracy is exactly 1, (3) accuracy with
/// the target block removed is exactly 0.
Certificate verify(const TransformerModel& model, const CalibrationDataset& d, const AdversarialSpec& spec,
                   double m = 0.0, std::size_t target_layer = 1);

std::string certificate_to_json(const Certificate& cert);

}  // namespace layerlens
