#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace layerlens {

inline constexpr const char* kDatasetFormat = "layerlens-dataset/1";

enum class TaskKind { kMajority, kParity, kModSum, kLookup };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& name);

/// Synthetic task description.
///
/// Vocabulary layout: the answer tokens of the C classes are always token ids
/// 0..C-1, so a label is both a class id and the id of its answer token.
///  - MAJORITY: symbols {0,1}, odd lengths in [min_len, max_len]; label is the
///    more frequent symbol.
///  - PARITY:   symbols {0,1}; label is the XOR of all symbols.
///  - MODSUM:   digits 0..C-1 followed by an '=' marker (id C); label is the
///    digit sum mod C.
///  - LOOKUP:   "k1 v1 ... kp vp ? kj" with p in [min_len, max_len] pairs,
///    values 0..C-1, keys C..C+n_keys-1 (distinct within a prompt) and the
///    query marker C+n_keys; label is the value bound to kj.
struct TaskSpec {
  TaskKind kind = TaskKind::kMajority;
  std::size_t min_len = 3;
  std::size_t max_len = 9;
  std::size_t n_classes = 2;
  std::size_t n_keys = 0;
  std::uint64_t seed = 0;

  std::size_t vocab_size() const;
  /// Longest token sequence the task can produce.
  std::size_t max_seq() const;
  /// Number of distinct sequences the task can produce (saturates at 1e18).
  double instance_space() const;
  void validate() const;
};

/// Default specs used across the experiments.
TaskSpec default_task(TaskKind kind, std::uint64_t seed);

struct Instance {
  std::vector<int> tokens;
  int label = 0;
  std::vector<int> options;

  bool operator==(const Instance&) const = default;
};

enum class Split { kTrain, kTest };

struct CalibrationDataset {
  std::string id;
  std::string task;
  Split split = Split::kTrain;
  std::size_t n_classes = 2;
  std::size_t vocab_size = 2;
  std::size_t max_seq = 1;
  std::uint64_t seed = 0;
  std::vector<Instance> instances;

  std::size_t size() const { return instances.size(); }
  bool operator==(const CalibrationDataset&) const = default;
};

struct DatasetPair {
  CalibrationDataset train;
  CalibrationDataset test;
};

/// Deterministic given spec.seed. Train and test are disjoint, every
/// sequence is distinct, and labels are balanced to within one instance
/// per class.
DatasetPair generate(const TaskSpec& spec, std::size_t n_train, std::size_t n_test);

/// Expected accuracy of a predictor guessing uniformly among each
/// instance's answer options.
double random_baseline(const CalibrationDataset& data);

/// Expected accuracy of a predictor drawing labels from the empirical label
/// marginal (sum of squared class frequencies).
double marginal_baseline(const CalibrationDataset& data);

void save_dataset(const CalibrationDataset& data, const std::string& path);
CalibrationDataset load_dataset(const std::string& path);

}  // namespace layerlens
