#include "layerlens/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "layerlens/metrics.hpp"
#include "layerlens/rng.hpp"

namespace layerlens {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("train config: " + msg); };
  if (batch_size < 1) fail("batch_size must be at least 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be non-negative");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) fail("adam betas must lie in (0, 1)");
  if (!(adam_eps > 0.0)) fail("adam eps must be positive");
  if (!(grad_clip >= 0.0)) fail("grad_clip must be non-negative");
}

namespace {

void check_coverage(const TransformerModel& model, const CalibrationDataset& data) {
  if (data.instances.empty()) throw std::invalid_argument("training data is empty");
  const std::size_t width = model.config().head_width();
  for (std::size_t i = 0; i < data.instances.size(); ++i) {
    const Instance& inst = data.instances[i];
    check_tokens(model, inst.tokens);
    for (int o : inst.options) {
      if (o < 0 || static_cast<std::size_t>(o) >= width) {
        throw std::invalid_argument("instance " + std::to_string(i) + ": option " + std::to_string(o) +
                                    " is not covered by a head of width " + std::to_string(width));
      }
    }
    if (inst.label < 0 || static_cast<std::size_t>(inst.label) >= width) {
      throw std::invalid_argument("instance " + std::to_string(i) + ": label outside the head");
    }
  }
}

class Adam {
 public:
  Adam(const TransformerModel& model, const TrainConfig& hyper) : hyper_(hyper) {
    for (const Tensor* t : parameter_list(model)) {
      values_.emplace_back(t->data().begin(), t->data().end());
      m_.emplace_back(t->size(), 0.0);
      v_.emplace_back(t->size(), 0.0);
    }
  }

  void step(std::vector<std::vector<double>>& grads, double scale) {
    double norm2 = 0.0;
    for (auto& g : grads)
      for (double& x : g) {
        x *= scale;
        norm2 += x * x;
      }
    const double norm = std::sqrt(norm2);
    const double clip = hyper_.grad_clip > 0.0 && norm > hyper_.grad_clip ? hyper_.grad_clip / norm : 1.0;
    ++t_;
    const double c1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < values_.size(); ++p) {
      for (std::size_t k = 0; k < values_[p].size(); ++k) {
        const double g = grads[p][k] * clip;
        m_[p][k] = hyper_.beta1 * m_[p][k] + (1.0 - hyper_.beta1) * g;
        v_[p][k] = hyper_.beta2 * v_[p][k] + (1.0 - hyper_.beta2) * g * g;
        values_[p][k] -= hyper_.learning_rate * (m_[p][k] / c1) / (std::sqrt(v_[p][k] / c2) + hyper_.adam_eps);
      }
    }
  }

  const std::vector<std::vector<double>>& values() const { return values_; }

 private:
  TrainConfig hyper_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> values_, m_, v_;
};

// Runs `epochs` epochs; calls on_step(step, model) after each optimizer step
// and on_epoch(epoch, model, mean_loss) after each epoch.
template <class OnStep, class OnEpoch>
TransformerModel run_epochs(TransformerModel model, const CalibrationDataset& data, const TrainConfig& hyper,
                            std::size_t epochs, OnStep&& on_step, OnEpoch&& on_epoch) {
  Adam adam(model, hyper);
  auto rng = make_engine(hyper.seed, 0x5417);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
      const std::size_t end = std::min(order.size(), start + hyper.batch_size);
      std::vector<Instance> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(data.instances[order[i]]);
      GradientSum g;
      try {
        g = gradient_sum(model, batch, hyper.loss);
      } catch (const NumericError& e) {
        throw DivergenceError(step + 1, e.what());
      }
      if (!std::isfinite(g.loss)) throw DivergenceError(step + 1, "loss is not finite");
      epoch_loss += g.loss;
      adam.step(g.grads, 1.0 / static_cast<double>(batch.size()));
      ++step;
      try {
        model = with_parameters(model, adam.values());
      } catch (const NumericError& e) {
        throw DivergenceError(step, e.what());
      }
      on_step(step, model);
    }
    on_epoch(epoch, model, epoch_loss / static_cast<double>(data.size()));
  }
  return model;
}

Checkpoint make_checkpoint(std::size_t step, const TransformerModel& model, const CalibrationDataset& data) {
  return Checkpoint{step, serialize(model), evaluate_accuracy(model, data)};
}

}  // namespace

TrainResult train(const ModelConfig& config, const CalibrationDataset& data, const TrainConfig& hyper) {
  return train_from(init_model(config, hyper.seed), data, hyper);
}

TrainResult train_from(const TransformerModel& initial, const CalibrationDataset& data, const TrainConfig& hyper) {
  hyper.validate();
  check_coverage(initial, data);
  CheckpointSeries series;
  std::vector<double> losses;
  if (hyper.checkpoint_every > 0) series.checkpoints.push_back(make_checkpoint(0, initial, data));
  std::size_t last_step = 0;
  TransformerModel model = run_epochs(
      initial, data, hyper, hyper.epochs,
      [&](std::size_t step, const TransformerModel& m) {
        last_step = step;
        if (hyper.checkpoint_every > 0 && step % hyper.checkpoint_every == 0)
          series.checkpoints.push_back(make_checkpoint(step, m, data));
      },
      [&](std::size_t, const TransformerModel&, double loss) { losses.push_back(loss); });
  if (series.checkpoints.empty() || series.checkpoints.back().step != last_step)
    series.checkpoints.push_back(make_checkpoint(last_step, model, data));
  return TrainResult{std::move(model), std::move(series), std::move(losses)};
}

HealResult heal(const TransformerModel& model, const CalibrationDataset& data, const TrainConfig& hyper) {
  hyper.validate();
  check_coverage(model, data);
  HealResult result{model, {evaluate_accuracy(model, data)}, 0};
  double best = result.curve[0];
  run_epochs(
      model, data, hyper, hyper.epochs, [](std::size_t, const TransformerModel&) {},
      [&](std::size_t epoch, const TransformerModel& m, double) {
        const double acc = evaluate_accuracy(m, data);
        result.curve.push_back(acc);
        if (acc > best) {
          best = acc;
          result.best_epoch = epoch;
          result.model = m;
        }
      });
  return result;
}

void save_checkpoints(const CheckpointSeries& series, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(std::filesystem::path(dir) / "series.csv", std::ios::binary);
  if (!csv) throw std::runtime_error("cannot write series.csv in " + dir);
  csv << "# layerlens-series/1\n";
  csv << "step,train_acc\n";
  for (const auto& c : series.checkpoints) {
    const auto path = std::filesystem::path(dir) / ("ckpt_" + std::to_string(c.step) + ".json");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << c.model;
    csv << c.step << "," << format_double(c.train_accuracy) << "\n";
  }
}

CheckpointSeries load_checkpoints(const std::string& dir) {
  std::ifstream csv(std::filesystem::path(dir) / "series.csv", std::ios::binary);
  if (!csv) throw std::runtime_error("no series.csv in " + dir);
  CheckpointSeries series;
  std::string line;
  while (std::getline(csv, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("step,", 0) == 0) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error("series.csv: malformed line '" + line + "'");
    Checkpoint c;
    c.step = std::stoul(line.substr(0, comma));
    c.train_accuracy = std::stod(line.substr(comma + 1));
    const auto path = std::filesystem::path(dir) / ("ckpt_" + std::to_string(c.step) + ".json");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("missing checkpoint " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    c.model = buf.str();
    if (!series.checkpoints.empty() && c.step <= series.checkpoints.back().step) {
      throw std::runtime_error("series.csv: steps must be strictly increasing");
    }
    series.checkpoints.push_back(std::move(c));
  }
  return series;
}

}  // namespace layerlens
