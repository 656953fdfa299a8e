#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "layerlens/tensor.hpp"

namespace layerlens {

inline constexpr const char* kModelFormat = "layerlens-model/1";

/// Malformed model document (missing field, wrong type, non-finite weight).
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Weights inconsistent with the declared configuration.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class HeadKind { kLmUnembedding, kClassifier };

std::string to_string(HeadKind kind);
HeadKind head_kind_from_string(const std::string& name);

struct ModelConfig {
  std::size_t n_layers = 1;
  std::size_t d_model = 8;
  std::size_t n_heads = 1;
  std::size_t d_ff = 16;
  std::size_t vocab_size = 2;
  std::size_t max_seq = 16;
  bool use_layernorm = true;
  HeadKind head_kind = HeadKind::kLmUnembedding;
  /// Only meaningful for the classifier head.
  std::size_t n_classes = 0;
  double ln_eps = 1e-5;

  /// Number of head outputs: vocab_size for the LM head, n_classes otherwise.
  std::size_t head_width() const;
  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Weights of one residual block. The layer-norm parameters are present iff
/// the model uses layer norm.
template <class T>
struct BlockParams {
  T w_q, w_k, w_v, w_o;
  T w_1, b_1, w_2, b_2;
  std::optional<T> ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;

  bool operator==(const BlockParams&) const = default;
};

using BlockWeights = BlockParams<Tensor>;

/// Zero block of the given width: the residual stream passes through exactly.
BlockWeights zero_block(const ModelConfig& config);

/// Forward/backward pass tally. Safe to bump from several threads.
class PassCounter {
 public:
  void add_forward(std::uint64_t n = 1) { forward_.fetch_add(n, std::memory_order_relaxed); }
  void add_backward(std::uint64_t n = 1) { backward_.fetch_add(n, std::memory_order_relaxed); }
  std::uint64_t forward_passes() const { return forward_.load(std::memory_order_relaxed); }
  std::uint64_t backward_passes() const { return backward_.load(std::memory_order_relaxed); }

 private:
  std::atomic<std::uint64_t> forward_{0};
  std::atomic<std::uint64_t> backward_{0};
};

/// Residual-stream values X^(0)..X^(L): the tensor entering each block plus
/// the final output.
struct HiddenTrace {
  std::vector<Tensor> layers;
};

struct ForwardResult {
  /// Head logits at the last position.
  std::vector<double> logits;
  std::optional<HiddenTrace> trace;
};

class TransformerModel {
 public:
  TransformerModel(ModelConfig config, Tensor embedding, Tensor positional, std::vector<BlockWeights> blocks,
                   Tensor head);

  const ModelConfig& config() const { return config_; }
  const Tensor& embedding() const { return embedding_; }
  const Tensor& positional() const { return positional_; }
  const std::vector<BlockWeights>& blocks() const { return blocks_; }
  const BlockWeights& block(std::size_t l) const { return blocks_.at(l); }
  const Tensor& head() const { return head_; }
  std::size_t n_layers() const { return blocks_.size(); }
  std::size_t parameter_count() const;

  bool operator==(const TransformerModel&) const = default;

 private:
  ModelConfig config_;
  Tensor embedding_;
  Tensor positional_;
  std::vector<BlockWeights> blocks_;
  Tensor head_;
};

/// Validates tokens against the model (length and vocabulary).
void check_tokens(const TransformerModel& model, std::span<const int> tokens);

/// Runs one block on the residual stream `x`.
Tensor apply_block(const TransformerModel& model, std::size_t l, const Tensor& x);

ForwardResult forward(const TransformerModel& model, std::span<const int> tokens, bool capture = false,
                      PassCounter* counter = nullptr);

/// Head logits at every position (n x head_width); one forward pass.
Tensor forward_all_logits(const TransformerModel& model, std::span<const int> tokens,
                          PassCounter* counter = nullptr);

/// Index of the largest logit, searched over `options` when non-empty.
/// Ties resolve to the lowest index.
int argmax_label(std::span<const double> logits, std::span<const int> options = {});

int predict(const TransformerModel& model, std::span<const int> tokens, std::span<const int> options = {},
            PassCounter* counter = nullptr);

/// Copy of `model` with block `l` (0-based) removed; the block after it reads
/// the residual stream the removed block would have read.
TransformerModel remove_layer(const TransformerModel& model, std::size_t l);

/// Copy of `model` with the listed blocks removed.
TransformerModel remove_layers(const TransformerModel& model, std::span<const std::size_t> layers);

/// Randomly initialized model (scaled Gaussian weights, unit layer norms).
TransformerModel init_model(const ModelConfig& config, std::uint64_t seed);


std::string serialize(const TransformerModel& model);
TransformerModel deserialize(const std::string& document);

void save_model(const TransformerModel& model, const std::string& path);
TransformerModel load_model(const std::string& path);

}  // namespace layerlens
