#include "layerlens/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "layerlens/block_math.hpp"
#include "layerlens/rng.hpp"

namespace layerlens {

std::string to_string(HeadKind kind) {
  return kind == HeadKind::kLmUnembedding ? "lm_unembedding" : "classifier";
}

HeadKind head_kind_from_string(const std::string& name) {
  if (name == "lm_unembedding") return HeadKind::kLmUnembedding;
  if (name == "classifier") return HeadKind::kClassifier;
  throw std::invalid_argument("unknown head kind '" + name + "'");
}

std::size_t ModelConfig::head_width() const {
  return head_kind == HeadKind::kLmUnembedding ? vocab_size : n_classes;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (n_layers < 1) fail("n_layers must be at least 1");
  if (d_model < 1 || d_ff < 1 || vocab_size < 1 || max_seq < 1) fail("dimensions must be positive");
  if (n_heads < 1 || d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (head_kind == HeadKind::kClassifier && n_classes < 2) fail("classifier head needs n_classes >= 2");
  if (!(ln_eps > 0.0)) fail("ln_eps must be positive");
}

BlockWeights zero_block(const ModelConfig& c) {
  BlockWeights b{Tensor::zeros({c.d_model, c.d_model}), Tensor::zeros({c.d_model, c.d_model}),
                 Tensor::zeros({c.d_model, c.d_model}), Tensor::zeros({c.d_model, c.d_model}),
                 Tensor::zeros({c.d_model, c.d_ff}),    Tensor::zeros({c.d_ff}),
                 Tensor::zeros({c.d_ff, c.d_model}),    Tensor::zeros({c.d_model}),
                 std::nullopt, std::nullopt, std::nullopt, std::nullopt};
  if (c.use_layernorm) {
    b.ln1_gamma = Tensor::filled({c.d_model}, 1.0);
    b.ln1_beta = Tensor::zeros({c.d_model});
    b.ln2_gamma = Tensor::filled({c.d_model}, 1.0);
    b.ln2_beta = Tensor::zeros({c.d_model});
  }
  return b;
}

namespace {

void expect_shape(const Tensor& t, const Tensor::Shape& shape, const std::string& what) {
  if (t.shape() != shape) {
    throw ShapeError(what + ": expected shape " + shape_string(shape) + ", got " + shape_string(t.shape()));
  }
}

void check_block(const ModelConfig& c, const BlockWeights& b, std::size_t l) {
  const std::string p = "blocks[" + std::to_string(l) + "].";
  const std::size_t d = c.d_model, f = c.d_ff;
  expect_shape(b.w_q, {d, d}, p + "w_q");
  expect_shape(b.w_k, {d, d}, p + "w_k");
  expect_shape(b.w_v, {d, d}, p + "w_v");
  expect_shape(b.w_o, {d, d}, p + "w_o");
  expect_shape(b.w_1, {d, f}, p + "w_1");
  expect_shape(b.b_1, {f}, p + "b_1");
  expect_shape(b.w_2, {f, d}, p + "w_2");
  expect_shape(b.b_2, {d}, p + "b_2");
  const bool has_ln = b.ln1_gamma && b.ln1_beta && b.ln2_gamma && b.ln2_beta;
  const bool any_ln = b.ln1_gamma || b.ln1_beta || b.ln2_gamma || b.ln2_beta;
  if (c.use_layernorm != has_ln || (!c.use_layernorm && any_ln)) {
    throw ShapeError(p + "layer-norm parameters must be present iff use_layernorm is set");
  }
  if (has_ln) {
    expect_shape(*b.ln1_gamma, {d}, p + "ln1_gamma");
    expect_shape(*b.ln1_beta, {d}, p + "ln1_beta");
    expect_shape(*b.ln2_gamma, {d}, p + "ln2_gamma");
    expect_shape(*b.ln2_beta, {d}, p + "ln2_beta");
  }
}

}  // namespace

TransformerModel::TransformerModel(ModelConfig config, Tensor embedding, Tensor positional,
                                   std::vector<BlockWeights> blocks, Tensor head)
    : config_(config),
      embedding_(std::move(embedding)),
      positional_(std::move(positional)),
      blocks_(std::move(blocks)),
      head_(std::move(head)) {
  config_.validate();
  if (blocks_.size() != config_.n_layers) {
    throw ShapeError("config declares " + std::to_string(config_.n_layers) + " layers but " +
                     std::to_string(blocks_.size()) + " blocks are present");
  }
  expect_shape(embedding_, {config_.vocab_size, config_.d_model}, "embedding");
  expect_shape(positional_, {config_.max_seq, config_.d_model}, "positional");
  expect_shape(head_, {config_.d_model, config_.head_width()}, "head");
  for (std::size_t l = 0; l < blocks_.size(); ++l) check_block(config_, blocks_[l], l);
}

std::size_t TransformerModel::parameter_count() const {
  std::size_t n = embedding_.size() + positional_.size() + head_.size();
  for (const auto& b : blocks_) {
    n += b.w_q.size() + b.w_k.size() + b.w_v.size() + b.w_o.size();
    n += b.w_1.size() + b.b_1.size() + b.w_2.size() + b.b_2.size();
    if (b.ln1_gamma) n += 4 * b.ln1_gamma->size();
  }
  return n;
}

void check_tokens(const TransformerModel& model, std::span<const int> tokens) {
  if (tokens.empty()) throw std::invalid_argument("empty token sequence");
  if (tokens.size() > model.config().max_seq) {
    throw std::invalid_argument("sequence of length " + std::to_string(tokens.size()) + " exceeds max_seq " +
                                std::to_string(model.config().max_seq));
  }
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= model.config().vocab_size) {
      throw std::invalid_argument("token " + std::to_string(t) + " is outside the vocabulary of size " +
                                  std::to_string(model.config().vocab_size));
    }
  }
}

Tensor apply_block(const TransformerModel& model, std::size_t l, const Tensor& x) {
  const ModelConfig& c = model.config();
  return detail::block_forward(model.block(l), x, c.n_heads, c.use_layernorm, c.ln_eps);
}

namespace {

Tensor final_hidden(const TransformerModel& model, std::span<const int> tokens, HiddenTrace* trace) {
  check_tokens(model, tokens);
  Tensor x = embed(model.embedding(), model.positional(), tokens);
  for (std::size_t l = 0; l < model.n_layers(); ++l) {
    Tensor next = apply_block(model, l, x);
    if (trace) trace->layers.push_back(std::move(x));
    x = std::move(next);
  }
  if (trace) trace->layers.push_back(x);
  return x;
}

}  // namespace

ForwardResult forward(const TransformerModel& model, std::span<const int> tokens, bool capture,
                      PassCounter* counter) {
  ForwardResult result;
  HiddenTrace trace;
  Tensor x = final_hidden(model, tokens, capture ? &trace : nullptr);
  Tensor logits = matmul(take_row(x, x.rows() - 1), model.head());
  result.logits.assign(logits.data().begin(), logits.data().end());
  if (capture) result.trace = std::move(trace);
  if (counter) counter->add_forward();
  return result;
}

Tensor forward_all_logits(const TransformerModel& model, std::span<const int> tokens, PassCounter* counter) {
  Tensor x = final_hidden(model, tokens, nullptr);
  if (counter) counter->add_forward();
  return matmul(x, model.head());
}

int argmax_label(std::span<const double> logits, std::span<const int> options) {
  if (logits.empty()) throw std::invalid_argument("argmax over empty logits");
  int best = -1;
  if (options.empty()) {
    best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i)
      if (logits[i] > logits[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    return best;
  }
  for (int o : options) {
    if (o < 0 || static_cast<std::size_t>(o) >= logits.size()) {
      throw std::invalid_argument("answer option " + std::to_string(o) + " is outside the head width");
    }
    const double v = logits[static_cast<std::size_t>(o)];
    const double bv = best < 0 ? 0.0 : logits[static_cast<std::size_t>(best)];
    if (best < 0 || v > bv || (v == bv && o < best)) best = o;
  }
  return best;
}

int predict(const TransformerModel& model, std::span<const int> tokens, std::span<const int> options,
            PassCounter* counter) {
  return argmax_label(forward(model, tokens, false, counter).logits, options);
}

TransformerModel remove_layer(const TransformerModel& model, std::size_t l) {
  const std::size_t idx[] = {l};
  return remove_layers(model, idx);
}

TransformerModel remove_layers(const TransformerModel& model, std::span<const std::size_t> layers) {
  const std::size_t n = model.n_layers();
  std::set<std::size_t> drop(layers.begin(), layers.end());
  if (drop.size() != layers.size()) throw std::invalid_argument("remove_layers: duplicate layer index");
  for (std::size_t l : drop) {
    if (l >= n) {
      throw std::out_of_range("layer index " + std::to_string(l) + " out of range for a " + std::to_string(n) +
                              "-layer model");
    }
  }
  if (drop.size() >= n) throw std::invalid_argument("cannot remove every layer of the model");
  std::vector<BlockWeights> kept;
  for (std::size_t i = 0; i < n; ++i)
    if (!drop.count(i)) kept.push_back(model.block(i));
  ModelConfig config = model.config();
  config.n_layers = kept.size();
  return TransformerModel(config, model.embedding(), model.positional(), std::move(kept), model.head());
}

TransformerModel init_model(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  auto engine = make_engine(seed, 0x1417);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](Tensor::Shape shape, double sd) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    std::vector<double> v(n);
    for (double& x : v) x = normal(engine) * sd;
    return Tensor(std::move(shape), std::move(v));
  };
  const double d = static_cast<double>(c.d_model);
  const double depth = 1.0 / std::sqrt(2.0 * static_cast<double>(c.n_layers));
  Tensor embedding = gaussian({c.vocab_size, c.d_model}, 1.0);
  Tensor positional = gaussian({c.max_seq, c.d_model}, 0.1);
  std::vector<BlockWeights> blocks;
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    BlockWeights b = zero_block(c);
    b.w_q = gaussian({c.d_model, c.d_model}, 1.0 / std::sqrt(d));
    b.w_k = gaussian({c.d_model, c.d_model}, 1.0 / std::sqrt(d));
    b.w_v = gaussian({c.d_model, c.d_model}, 1.0 / std::sqrt(d));
    b.w_o = gaussian({c.d_model, c.d_model}, depth / std::sqrt(d));
    b.w_1 = gaussian({c.d_model, c.d_ff}, 1.0 / std::sqrt(d));
    b.w_2 = gaussian({c.d_ff, c.d_model}, depth / std::sqrt(static_cast<double>(c.d_ff)));
    blocks.push_back(std::move(b));
  }
  Tensor head = gaussian({c.d_model, c.head_width()}, 1.0 / std::sqrt(d));
  return TransformerModel(c, std::move(embedding), std::move(positional), std::move(blocks), std::move(head));
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

using ojson = nlohmann::ordered_json;

ojson tensor_to_json(const Tensor& t) {
  if (t.rank() == 1) return ojson(std::vector<double>(t.data().begin(), t.data().end()));
  ojson rows = ojson::array();
  for (std::size_t r = 0; r < t.rows(); ++r) {
    auto row = t.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

const ojson& field(const ojson& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) throw SchemaError(path + ": expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError((path.empty() ? key : path + "." + key) + ": missing field");
  return *it;
}

double number_at(const ojson& v, const std::string& path) {
  if (!v.is_number()) throw SchemaError(path + ": expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw SchemaError(path + ": non-finite weight");
  return x;
}

Tensor vector_from_json(const ojson& v, const std::string& path) {
  if (!v.is_array() || v.empty()) throw SchemaError(path + ": expected a non-empty array of numbers");
  std::vector<double> data;
  data.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) data.push_back(number_at(v[i], path + "[" + std::to_string(i) + "]"));
  return Tensor::vector(std::move(data));
}

Tensor matrix_from_json(const ojson& v, const std::string& path) {
  if (!v.is_array() || v.empty()) throw SchemaError(path + ": expected a non-empty array of rows");
  std::vector<double> data;
  std::size_t cols = 0;
  for (std::size_t r = 0; r < v.size(); ++r) {
    const std::string rp = path + "[" + std::to_string(r) + "]";
    if (!v[r].is_array() || v[r].empty()) throw SchemaError(rp + ": expected a non-empty row");
    if (r == 0) cols = v[r].size();
    if (v[r].size() != cols) throw ShapeError(rp + ": ragged matrix row");
    for (std::size_t c = 0; c < cols; ++c) data.push_back(number_at(v[r][c], rp + "[" + std::to_string(c) + "]"));
  }
  return Tensor::matrix(v.size(), cols, std::move(data));
}

std::size_t size_field(const ojson& obj, const std::string& key, const std::string& path) {
  const ojson& v = field(obj, key, path);
  if (!v.is_number_unsigned()) throw SchemaError(path + "." + key + ": expected a non-negative integer");
  return v.get<std::size_t>();
}

}  // namespace

std::string serialize(const TransformerModel& model) {
  const ModelConfig& c = model.config();
  ojson doc;
  doc["format"] = kModelFormat;
  doc["config"] = {{"n_layers", c.n_layers},     {"d_model", c.d_model},
                   {"n_heads", c.n_heads},       {"d_ff", c.d_ff},
                   {"vocab_size", c.vocab_size}, {"max_seq", c.max_seq},
                   {"use_layernorm", c.use_layernorm}, {"head_kind", to_string(c.head_kind)},
                   {"n_classes", c.n_classes},   {"ln_eps", c.ln_eps}};
  doc["embedding"] = tensor_to_json(model.embedding());
  doc["positional"] = tensor_to_json(model.positional());
  ojson blocks = ojson::array();
  for (const auto& b : model.blocks()) {
    ojson jb;
    jb["w_q"] = tensor_to_json(b.w_q);
    jb["w_k"] = tensor_to_json(b.w_k);
    jb["w_v"] = tensor_to_json(b.w_v);
    jb["w_o"] = tensor_to_json(b.w_o);
    jb["w_1"] = tensor_to_json(b.w_1);
    jb["b_1"] = tensor_to_json(b.b_1);
    jb["w_2"] = tensor_to_json(b.w_2);
    jb["b_2"] = tensor_to_json(b.b_2);
    if (b.ln1_gamma) {
      jb["ln1_gamma"] = tensor_to_json(*b.ln1_gamma);
      jb["ln1_beta"] = tensor_to_json(*b.ln1_beta);
      jb["ln2_gamma"] = tensor_to_json(*b.ln2_gamma);
      jb["ln2_beta"] = tensor_to_json(*b.ln2_beta);
    }
    blocks.push_back(std::move(jb));
  }
  doc["blocks"] = std::move(blocks);
  doc["head"] = tensor_to_json(model.head());
  return doc.dump() + "\n";
}

TransformerModel deserialize(const std::string& document) {
  ojson doc;
  try {
    doc = ojson::parse(document);
  } catch (const ojson::exception& e) {
    // parse errors and out-of-range numbers such as 1e999
    throw SchemaError(std::string("model document is not valid JSON: ") + e.what());
  }
  const ojson& format = field(doc, "format", "");
  if (!format.is_string() || format.get<std::string>() != kModelFormat) {
    throw SchemaError(std::string("format: expected \"") + kModelFormat + "\"");
  }
  const ojson& jc = field(doc, "config", "");
  ModelConfig c;
  c.n_layers = size_field(jc, "n_layers", "config");
  c.d_model = size_field(jc, "d_model", "config");
  c.n_heads = size_field(jc, "n_heads", "config");
  c.d_ff = size_field(jc, "d_ff", "config");
  c.vocab_size = size_field(jc, "vocab_size", "config");
  c.max_seq = size_field(jc, "max_seq", "config");
  c.n_classes = size_field(jc, "n_classes", "config");
  const ojson& ln = field(jc, "use_layernorm", "config");
  if (!ln.is_boolean()) throw SchemaError("config.use_layernorm: expected a boolean");
  c.use_layernorm = ln.get<bool>();
  const ojson& hk = field(jc, "head_kind", "config");
  if (!hk.is_string()) throw SchemaError("config.head_kind: expected a string");
  try {
    c.head_kind = head_kind_from_string(hk.get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw SchemaError(std::string("config.head_kind: ") + e.what());
  }
  c.ln_eps = number_at(field(jc, "ln_eps", "config"), "config.ln_eps");

  Tensor embedding = matrix_from_json(field(doc, "embedding", ""), "embedding");
  Tensor positional = matrix_from_json(field(doc, "positional", ""), "positional");
  const ojson& jblocks = field(doc, "blocks", "");
  if (!jblocks.is_array()) throw SchemaError("blocks: expected an array");
  std::vector<BlockWeights> blocks;
  for (std::size_t l = 0; l < jblocks.size(); ++l) {
    const std::string p = "blocks[" + std::to_string(l) + "]";
    const ojson& jb = jblocks[l];
    auto mat = [&](const char* k) { return matrix_from_json(field(jb, k, p), p + "." + k); };
    auto vec = [&](const char* k) { return vector_from_json(field(jb, k, p), p + "." + k); };
    BlockWeights b{mat("w_q"), mat("w_k"), mat("w_v"), mat("w_o"), mat("w_1"), vec("b_1"), mat("w_2"), vec("b_2"),
                   std::nullopt, std::nullopt, std::nullopt, std::nullopt};
    if (c.use_layernorm) {
      b.ln1_gamma = vec("ln1_gamma");
      b.ln1_beta = vec("ln1_beta");
      b.ln2_gamma = vec("ln2_gamma");
      b.ln2_beta = vec("ln2_beta");
    }
    blocks.push_back(std::move(b));
  }
  Tensor head = matrix_from_json(field(doc, "head", ""), "head");
  return TransformerModel(c, std::move(embedding), std::move(positional), std::move(blocks), std::move(head));
}

void save_model(const TransformerModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << serialize(model);
  if (!out) throw std::runtime_error("failed writing " + path);
}

TransformerModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

}  // namespace layerlens
