#include "layerlens/adversarial.hpp"

#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "layerlens/metrics.hpp"

namespace layerlens {

void AdversarialSpec::validate() const {
  if (!(delta > 0.0) || !std::isfinite(delta)) throw std::invalid_argument("delta must be positive");
  const double q = (1.0 - epsilon) * (1.0 - epsilon);
  if (!(epsilon > 0.0) || !(q > 0.5)) {
    throw std::invalid_argument("epsilon " + format_double(epsilon) +
                                " is outside the solvable range (0, 1 - 1/sqrt(2)): need (1 - epsilon)^2 > 1/2");
  }
  if (n_classes < 2) throw std::invalid_argument("n_classes must be at least 2");
  if (spread < 1) throw std::invalid_argument("spread must be at least 1");
}

double middle_block_score(double delta, double m) {
  return 1.0 - std::sqrt(delta * delta + m * m) / std::sqrt(2.0 * delta * delta + m * m);
}

double solve_m(double delta, double epsilon) {
  AdversarialSpec s;
  s.delta = delta;
  s.epsilon = epsilon;
  s.validate();
  const double q = (1.0 - epsilon) * (1.0 - epsilon);
  return delta * std::sqrt((2.0 * q - 1.0) / (1.0 - q));
}

int misleading_class(int y, std::size_t n_classes, bool relabel_odd) {
  const int c = static_cast<int>(n_classes);
  if (c % 2 == 1 && relabel_odd) return (y + 1) % c;
  return c - 1 - y;
}

namespace {

std::vector<double> zeros(std::size_t n) { return std::vector<double>(n, 0.0); }

ModelConfig construction_config(std::size_t d, std::size_t vocab, std::size_t max_seq, std::size_t n_classes) {
  ModelConfig c;
  c.n_layers = 3;
  c.d_model = d;
  c.n_heads = 1;
  c.d_ff = d;
  c.vocab_size = vocab;
  c.max_seq = max_seq;
  c.use_layernorm = false;
  c.head_kind = HeadKind::kClassifier;
  c.n_classes = n_classes;
  return c;
}

// Block whose FFN is ReLU(X W1) W2 + b2 with W1 = I; attention output is zero.
BlockWeights ffn_block(const ModelConfig& c, std::vector<double> w2, std::vector<double> b2) {
  BlockWeights b = zero_block(c);
  b.w_1 = Tensor::identity(c.d_model);
  b.w_2 = Tensor({c.d_model, c.d_model}, std::move(w2));
  b.b_2 = Tensor({c.d_model}, std::move(b2));
  return b;
}

}  // namespace

AdversarialBuild build_binary(const CalibrationDataset& data, const AdversarialSpec& spec) {
  spec.validate();
  if (spec.n_classes != 2) throw std::invalid_argument("build_binary needs n_classes = 2");
  if (data.instances.empty()) throw std::invalid_argument("build_binary: empty dataset");
  const double delta = spec.delta;
  const double m = solve_m(delta, spec.epsilon);
  const std::size_t k = spec.spread;
  const std::size_t d = 2 + k;  // coords: 0 signal, 1 constant delta, 2.. irrelevant offsets
  const double part = m / std::sqrt(static_cast<double>(k));
  const ModelConfig c = construction_config(d, data.vocab_size, data.max_seq, 2);

  std::vector<double> emb;
  for (std::size_t t = 0; t < c.vocab_size; ++t) {
    std::vector<double> row = zeros(d);
    row[1] = delta;
    emb.insert(emb.end(), row.begin(), row.end());
  }

  std::vector<double> add_m = zeros(d);
  for (std::size_t j = 0; j < k; ++j) add_m[2 + j] = part;
  std::vector<double> add_delta = zeros(d);
  add_delta[0] = delta;
  std::vector<double> amplify = zeros(d * d);
  amplify[0] = m;
  std::vector<double> remove_m = zeros(d);
  for (std::size_t j = 0; j < k; ++j) remove_m[2 + j] = -part;

  std::vector<BlockWeights> blocks = {ffn_block(c, zeros(d * d), add_m), ffn_block(c, zeros(d * d), add_delta),
                                      ffn_block(c, amplify, remove_m)};
  std::vector<double> head = zeros(d * 2);
  head[0 * 2 + 0] = 1.0;
  head[1 * 2 + 1] = 1.0;

  CalibrationDataset relabeled = data;
  relabeled.n_classes = 2;
  relabeled.id = data.id + "-allzero";
  for (auto& inst : relabeled.instances) {
    inst.label = 0;
    inst.options = {0, 1};
  }
  return AdversarialBuild{TransformerModel(c, Tensor({c.vocab_size, d}, std::move(emb)),
                                           Tensor::zeros({c.max_seq, d}), std::move(blocks),
                                           Tensor({d, 2}, std::move(head))),
                          std::move(relabeled), m, spec, 1};
}

AdversarialBuild build_multiclass(const CalibrationDataset& data, const AdversarialSpec& spec) {
  spec.validate();
  if (data.instances.empty()) throw std::invalid_argument("build_multiclass: empty dataset");
  const std::size_t C = spec.n_classes;
  const double delta = spec.delta;
  const double m = solve_m(delta, spec.epsilon);
  if (!(m > delta)) {
    // the amplified class signal M must beat the misleading signal delta
    throw std::invalid_argument("epsilon " + format_double(spec.epsilon) +
                                " gives M <= delta; the multiclass construction needs epsilon below " +
                                format_double(middle_block_score(1.0, 1.0)));
  }
  const std::size_t k = spec.spread;
  // coords: 0..C-1 class signal, C..C+k-1 irrelevant offsets, C+k..2C+k-1 label tags
  const std::size_t d = 2 * C + k;
  const std::size_t tag0 = C + k;
  const double part = m / std::sqrt(static_cast<double>(k));

  std::map<std::vector<int>, std::size_t> token_of;
  CalibrationDataset tokenized;
  tokenized.id = data.id + "-per-sequence";
  tokenized.task = data.task;
  tokenized.split = data.split;
  tokenized.n_classes = C;
  tokenized.seed = data.seed;
  tokenized.max_seq = 1;
  std::vector<int> options(C);
  std::iota(options.begin(), options.end(), 0);
  for (std::size_t i = 0; i < data.instances.size(); ++i) {
    const Instance& inst = data.instances[i];
    if (inst.label < 0 || static_cast<std::size_t>(inst.label) >= C) {
      throw std::invalid_argument("instance " + std::to_string(i) + " has label " + std::to_string(inst.label) +
                                  " outside 0.." + std::to_string(C - 1));
    }
    if (!token_of.emplace(inst.tokens, i).second) {
      throw std::invalid_argument("duplicate sequence at instance " + std::to_string(i) +
                                  "; the construction needs distinct sequences");
    }
    tokenized.instances.push_back(Instance{{static_cast<int>(i)}, inst.label, options});
  }
  tokenized.vocab_size = tokenized.instances.size();

  const ModelConfig c = construction_config(d, tokenized.vocab_size, 1, C);
  std::vector<double> emb;
  for (const auto& inst : tokenized.instances) {
    std::vector<double> row = zeros(d);
    row[tag0 + static_cast<std::size_t>(inst.label)] = delta;
    emb.insert(emb.end(), row.begin(), row.end());
  }

  std::vector<double> add_m = zeros(d);
  for (std::size_t j = 0; j < k; ++j) add_m[C + j] = part;

  // block 1: copy the label tag into its class coordinate
  std::vector<double> signal = zeros(d * d);
  for (std::size_t y = 0; y < C; ++y) signal[(tag0 + y) * d + y] = 1.0;

  // block 2: amplify the class signal to M, cancel the offsets, and plant the
  // misleading class from the label tag
  std::vector<double> amplify = zeros(d * d);
  for (std::size_t y = 0; y < C; ++y) {
    amplify[y * d + y] = (m - delta) / delta;
    const auto wrong = static_cast<std::size_t>(misleading_class(static_cast<int>(y), C, spec.relabel_odd));
    amplify[(tag0 + y) * d + wrong] += 1.0;
  }
  std::vector<double> remove_m = zeros(d);
  for (std::size_t j = 0; j < k; ++j) remove_m[C + j] = -part;

  std::vector<BlockWeights> blocks = {ffn_block(c, zeros(d * d), add_m), ffn_block(c, signal, zeros(d)),
                                      ffn_block(c, amplify, remove_m)};
  std::vector<double> head = zeros(d * C);
  for (std::size_t y = 0; y < C; ++y) head[y * C + y] = 1.0;

  return AdversarialBuild{TransformerModel(c, Tensor({c.vocab_size, d}, std::move(emb)), Tensor::zeros({1, d}),
                                           std::move(blocks), Tensor({d, C}, std::move(head))),
                          std::move(tokenized), m, spec, 1};
}

bool Certificate::passed() const {
  if (checks.empty()) return false;
  for (const auto& c : checks)
    if (!c.passed) return false;
  return true;
}

std::string Certificate::first_failure() const {
  for (const auto& c : checks)
    if (!c.passed) return c.name;
  return "";
}

Certificate verify(const TransformerModel& model, const CalibrationDataset& d, const AdversarialSpec& spec,
                   double m, std::size_t target_layer) {
  if (target_layer >= model.n_layers()) throw std::out_of_range("target layer outside the model");
  Certificate cert;
  cert.spec = spec;
  cert.m = m;
  cert.target_layer = target_layer;
  cert.layer_scores = cos_sim_score(model, d).scores;
  cert.full_accuracy = evaluate_accuracy(model, d);
  cert.pruned_accuracy = evaluate_accuracy(remove_layer(model, target_layer), d);

  const double target = cert.layer_scores[target_layer];
  bool minimal = true;
  for (std::size_t l = 0; l < cert.layer_scores.size(); ++l)
    if (l != target_layer && !(cert.layer_scores[l] > target)) minimal = false;
  const bool close = std::abs(target - spec.epsilon) <= kCertificateScoreTolerance;
  cert.checks.push_back({"target_score", close && minimal,
                         "score " + format_double(target) + " vs epsilon " + format_double(spec.epsilon) +
                             (close ? "" : " (off by more than 1e-6)") + (minimal ? "" : " (not the strict minimum)")});
  cert.checks.push_back({"full_accuracy", cert.full_accuracy == 1.0, "accuracy " + format_double(cert.full_accuracy)});
  cert.checks.push_back(
      {"pruned_accuracy", cert.pruned_accuracy == 0.0, "accuracy " + format_double(cert.pruned_accuracy)});
  return cert;
}

std::string certificate_to_json(const Certificate& cert) {
  nlohmann::ordered_json doc;
  doc["format"] = kCertificateFormat;
  doc["passed"] = cert.passed();
  doc["epsilon"] = cert.spec.epsilon;
  doc["delta"] = cert.spec.delta;
  doc["M"] = cert.m;
  doc["n_classes"] = cert.spec.n_classes;
  doc["relabel_odd"] = cert.spec.relabel_odd;
  doc["spread"] = cert.spec.spread;
  doc["target_layer"] = cert.target_layer;
  doc["layer_scores"] = cert.layer_scores;
  doc["full_accuracy"] = cert.full_accuracy;
  doc["pruned_accuracy"] = cert.pruned_accuracy;
  auto checks = nlohmann::ordered_json::array();
  for (const auto& c : cert.checks) checks.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  doc["checks"] = checks;
  return doc.dump(2) + "\n";
}

}  // namespace layerlens
