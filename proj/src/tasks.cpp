#include "layerlens/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include "json.hpp"
#include "layerlens/rng.hpp"

namespace layerlens {

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kMajority: return "majority";
    case TaskKind::kParity: return "parity";
    case TaskKind::kModSum: return "modsum";
    case TaskKind::kLookup: return "lookup";
  }
  return "unknown";
}

TaskKind task_kind_from_string(const std::string& name) {
  if (name == "majority") return TaskKind::kMajority;
  if (name == "parity") return TaskKind::kParity;
  if (name == "modsum") return TaskKind::kModSum;
  if (name == "lookup") return TaskKind::kLookup;
  throw std::invalid_argument("unknown task '" + name + "' (expected majority, parity, modsum or lookup)");
}

std::size_t TaskSpec::vocab_size() const {
  switch (kind) {
    case TaskKind::kMajority:
    case TaskKind::kParity: return 2;
    case TaskKind::kModSum: return n_classes + 1;
    case TaskKind::kLookup: return n_classes + n_keys + 1;
  }
  return 0;
}

std::size_t TaskSpec::max_seq() const {
  switch (kind) {
    case TaskKind::kMajority:
    case TaskKind::kParity: return max_len;
    case TaskKind::kModSum: return max_len + 1;
    case TaskKind::kLookup: return 2 * max_len + 2;
  }
  return 0;
}

double TaskSpec::instance_space() const {
  constexpr double kCap = 1e18;
  double total = 0.0;
  for (std::size_t n = min_len; n <= max_len; ++n) {
    double count = 0.0;
    switch (kind) {
      case TaskKind::kMajority:
        count = n % 2 == 1 ? std::pow(2.0, static_cast<double>(n)) : 0.0;
        break;
      case TaskKind::kParity: count = std::pow(2.0, static_cast<double>(n)); break;
      case TaskKind::kModSum: count = std::pow(static_cast<double>(n_classes), static_cast<double>(n)); break;
      case TaskKind::kLookup: {
        // ordered distinct keys * value assignments * query choice
        double perms = 1.0;
        for (std::size_t i = 0; i < n; ++i) perms *= static_cast<double>(n_keys - i);
        count = perms * std::pow(static_cast<double>(n_classes), static_cast<double>(n)) * static_cast<double>(n);
        break;
      }
    }
    total = std::min(kCap, total + count);
  }
  return total;
}

void TaskSpec::validate() const {
  auto fail = [&](const std::string& msg) { throw std::invalid_argument(to_string(kind) + " task: " + msg); };
  if (min_len < 1 || max_len < min_len) fail("need 1 <= min_len <= max_len");
  switch (kind) {
    case TaskKind::kMajority:
      if (n_classes != 2) fail("n_classes must be 2");
      if (min_len == max_len && min_len % 2 == 0) fail("length range contains no odd length");
      break;
    case TaskKind::kParity:
      if (n_classes != 2) fail("n_classes must be 2");
      break;
    case TaskKind::kModSum:
      if (n_classes < 2) fail("modulus (n_classes) must be at least 2");
      break;
    case TaskKind::kLookup:
      if (n_classes < 2) fail("n_classes must be at least 2");
      if (n_keys < max_len) fail("n_keys must be at least max_len so keys can be distinct");
      break;
  }
}

TaskSpec default_task(TaskKind kind, std::uint64_t seed) {
  TaskSpec s;
  s.kind = kind;
  s.seed = seed;
  switch (kind) {
    case TaskKind::kMajority: s.min_len = 5; s.max_len = 9; break;
    case TaskKind::kParity: s.min_len = 3; s.max_len = 6; break;
    case TaskKind::kModSum: s.min_len = 2; s.max_len = 4; s.n_classes = 3; break;
    case TaskKind::kLookup: s.min_len = 2; s.max_len = 3; s.n_classes = 4; s.n_keys = 4; break;
  }
  return s;
}

namespace {

std::vector<int> sample_with_label(const TaskSpec& s, int label, std::mt19937_64& rng) {
  std::vector<std::size_t> lengths;
  for (std::size_t n = s.min_len; n <= s.max_len; ++n)
    if (s.kind != TaskKind::kMajority || n % 2 == 1) lengths.push_back(n);
  const std::size_t n = lengths[std::uniform_int_distribution<std::size_t>(0, lengths.size() - 1)(rng)];
  std::vector<int> tokens;
  switch (s.kind) {
    case TaskKind::kMajority: {
      std::bernoulli_distribution coin(0.5);
      int ones = 0;
      for (std::size_t i = 0; i < n; ++i) {
        tokens.push_back(coin(rng) ? 1 : 0);
        ones += tokens.back();
      }
      const int majority = 2 * ones > static_cast<int>(n) ? 1 : 0;
      if (majority != label)
        for (int& t : tokens) t = 1 - t;
      break;
    }
    case TaskKind::kParity: {
      std::bernoulli_distribution coin(0.5);
      int parity = 0;
      for (std::size_t i = 0; i < n; ++i) {
        tokens.push_back(coin(rng) ? 1 : 0);
        parity ^= tokens.back();
      }
      if (parity != label) tokens[0] ^= 1;
      break;
    }
    case TaskKind::kModSum: {
      const int m = static_cast<int>(s.n_classes);
      std::uniform_int_distribution<int> digit(0, m - 1);
      int total = 0;
      for (std::size_t i = 0; i < n; ++i) {
        tokens.push_back(digit(rng));
        total += tokens.back();
      }
      const int rest = total - tokens.back();
      tokens.back() = ((label - rest) % m + m) % m;
      tokens.push_back(m);
      break;
    }
    case TaskKind::kLookup: {
      const int c = static_cast<int>(s.n_classes);
      std::vector<int> keys(s.n_keys);
      std::iota(keys.begin(), keys.end(), c);
      std::shuffle(keys.begin(), keys.end(), rng);
      std::uniform_int_distribution<int> value(0, c - 1);
      const std::size_t query = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
      for (std::size_t i = 0; i < n; ++i) {
        tokens.push_back(keys[i]);
        tokens.push_back(i == query ? label : value(rng));
      }
      tokens.push_back(c + static_cast<int>(s.n_keys));
      tokens.push_back(keys[query]);
      break;
    }
  }
  return tokens;
}

CalibrationDataset empty_split(const TaskSpec& s, Split split) {
  CalibrationDataset d;
  d.task = to_string(s.kind);
  d.split = split;
  d.n_classes = s.n_classes;
  d.vocab_size = s.vocab_size();
  d.max_seq = s.max_seq();
  d.seed = s.seed;
  d.id = d.task + "-s" + std::to_string(s.seed) + (split == Split::kTrain ? "-train" : "-test");
  return d;
}

}  // namespace

DatasetPair generate(const TaskSpec& spec, std::size_t n_train, std::size_t n_test) {
  spec.validate();
  if (n_train < 1 || n_test < 1) throw std::invalid_argument("dataset sizes must be at least 1");
  const double needed = static_cast<double>(n_train + n_test);
  if (needed > spec.instance_space()) {
    throw std::invalid_argument("infeasible: " + std::to_string(n_train + n_test) + " distinct sequences requested but " +
                                to_string(spec.kind) + " with this length range only has " +
                                std::to_string(static_cast<long long>(spec.instance_space())));
  }
  auto rng = make_engine(spec.seed, 0x7a5c);
  std::vector<int> options(spec.n_classes);
  std::iota(options.begin(), options.end(), 0);
  std::set<std::vector<int>> seen;
  const std::size_t max_attempts = 2000 * (n_train + n_test) + 100000;
  std::size_t attempts = 0;

  auto fill = [&](CalibrationDataset& d, std::size_t count) {
    std::vector<int> labels(count);
    for (std::size_t i = 0; i < count; ++i) labels[i] = static_cast<int>(i % spec.n_classes);
    std::shuffle(labels.begin(), labels.end(), rng);
    for (int label : labels) {
      while (true) {
        if (++attempts > max_attempts) {
          throw std::invalid_argument("infeasible: could not draw enough distinct " + to_string(spec.kind) +
                                      " sequences; widen the length range or request fewer instances");
        }
        std::vector<int> tokens = sample_with_label(spec, label, rng);
        if (seen.insert(tokens).second) {
          d.instances.push_back(Instance{std::move(tokens), label, options});
          break;
        }
      }
    }
  };

  DatasetPair out{empty_split(spec, Split::kTrain), empty_split(spec, Split::kTest)};
  fill(out.train, n_train);
  fill(out.test, n_test);
  return out;
}

double random_baseline(const CalibrationDataset& data) {
  if (data.instances.empty()) throw std::invalid_argument("random baseline of an empty dataset");
  double total = 0.0;
  for (const auto& inst : data.instances) {
    if (inst.options.empty()) throw std::invalid_argument("instance without answer options");
    total += 1.0 / static_cast<double>(inst.options.size());
  }
  return total / static_cast<double>(data.instances.size());
}

double marginal_baseline(const CalibrationDataset& data) {
  if (data.instances.empty()) throw std::invalid_argument("marginal baseline of an empty dataset");
  std::vector<double> counts(data.n_classes, 0.0);
  for (const auto& inst : data.instances) counts.at(static_cast<std::size_t>(inst.label)) += 1.0;
  const double n = static_cast<double>(data.instances.size());
  double r = 0.0;
  for (double c : counts) r += (c / n) * (c / n);
  return r;
}

void save_dataset(const CalibrationDataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  nlohmann::ordered_json header;
  header["format"] = kDatasetFormat;
  header["id"] = data.id;
  header["task"] = data.task;
  header["split"] = data.split == Split::kTrain ? "train" : "test";
  header["n_classes"] = data.n_classes;
  header["vocab_size"] = data.vocab_size;
  header["max_seq"] = data.max_seq;
  header["seed"] = data.seed;
  header["size"] = data.instances.size();
  out << header.dump() << "\n";
  for (const auto& inst : data.instances) {
    nlohmann::ordered_json rec;
    rec["tokens"] = inst.tokens;
    rec["label"] = inst.label;
    rec["options"] = inst.options;
    out << rec.dump() << "\n";
  }
  if (!out) throw std::runtime_error("failed writing " + path);
}

CalibrationDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset file " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty dataset file");
  CalibrationDataset d;
  try {
    auto header = nlohmann::json::parse(line);
    if (header.value("format", "") != kDatasetFormat) {
      throw std::runtime_error(path + ": header must declare format " + kDatasetFormat);
    }
    d.id = header.at("id").get<std::string>();
    d.task = header.at("task").get<std::string>();
    d.split = header.at("split").get<std::string>() == "test" ? Split::kTest : Split::kTrain;
    d.n_classes = header.at("n_classes").get<std::size_t>();
    d.vocab_size = header.at("vocab_size").get<std::size_t>();
    d.max_seq = header.at("max_seq").get<std::size_t>();
    d.seed = header.at("seed").get<std::uint64_t>();
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      auto rec = nlohmann::json::parse(line);
      Instance inst{rec.at("tokens").get<std::vector<int>>(), rec.at("label").get<int>(),
                    rec.at("options").get<std::vector<int>>()};
      if (inst.tokens.empty() || inst.options.empty()) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": tokens and options must be non-empty");
      }
      if (inst.label < 0 || static_cast<std::size_t>(inst.label) >= d.n_classes) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": label outside 0..n_classes-1");
      }
      d.instances.push_back(std::move(inst));
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": malformed dataset record: " + e.what());
  }
  return d;
}

}  // namespace layerlens
