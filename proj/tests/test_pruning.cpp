#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "layerlens/pruning.hpp"
#include "layerlens/trainer.hpp"

using namespace layerlens;

namespace {

// d = 2 classifier whose block l adds biases[l] to the residual stream; every
// token embeds to `embed`. Labels are all 0 with options {0, 1}.
TransformerModel bias_stack(const std::vector<std::vector<double>>& biases, std::vector<double> embed) {
  ModelConfig c;
  c.n_layers = biases.size();
  c.d_model = 2;
  c.n_heads = 1;
  c.d_ff = 2;
  c.vocab_size = 2;
  c.max_seq = 3;
  c.use_layernorm = false;
  c.head_kind = HeadKind::kClassifier;
  c.n_classes = 2;
  std::vector<BlockWeights> blocks;
  for (const auto& b : biases) {
    BlockWeights w = zero_block(c);
    w.b_2 = Tensor({2}, b);
    blocks.push_back(w);
  }
  std::vector<double> emb = embed;
  emb.insert(emb.end(), embed.begin(), embed.end());
  return TransformerModel(c, Tensor({2, 2}, emb), Tensor::zeros({3, 2}), blocks, Tensor::identity(2));
}

CalibrationDataset all_zero_labels(std::size_t n) {
  CalibrationDataset d;
  d.id = "zeros";
  d.n_classes = 2;
  d.vocab_size = 2;
  d.max_seq = 3;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<int> t{static_cast<int>(i % 2), static_cast<int>(i / 2 % 2)};
    d.instances.push_back({t, 0, {0, 1}});
  }
  return d;
}

const DatasetPair& majority() {
  static const DatasetPair pair = generate(default_task(TaskKind::kMajority, 9), 128, 64);
  return pair;
}

const TransformerModel& trained() {
  static const TransformerModel model = [] {
    const auto& d = majority();
    ModelConfig c;
    c.n_layers = 5;
    c.d_model = 12;
    c.n_heads = 2;
    c.d_ff = 24;
    c.vocab_size = d.train.vocab_size;
    c.max_seq = d.train.max_seq;
    TrainConfig t;
    t.epochs = 25;
    t.seed = 4;
    return train(c, d.train, t).model;
  }();
  return model;
}

PruneConfig config(MetricKind metric, PruneStrategy s, std::size_t k) {
  PruneConfig c;
  c.metric = metric;
  c.strategy = s;
  c.count = k;
  return c;
}

}  // namespace

TEST_CASE("number of layers to remove") {
  PruneConfig c;
  c.ratio = 0.25;
  CHECK(c.layers_to_remove(8) == 2);
  c.ratio = 0.3;
  CHECK(c.layers_to_remove(10) == 3);
  c.ratio = 0.5;
  CHECK(c.layers_to_remove(7) == 3);
  c.ratio = 0.1;
  CHECK_THROWS_AS(c.layers_to_remove(4), std::invalid_argument);
  c.ratio = 0.0;
  CHECK_THROWS_WITH_AS(c.layers_to_remove(8), doctest::Contains("no layers"), std::invalid_argument);
  c.ratio = 1.0;
  CHECK_THROWS_AS(c.layers_to_remove(8), std::invalid_argument);
  c.ratio.reset();
  CHECK_THROWS_AS(c.layers_to_remove(4), std::invalid_argument);
  c.count = 4;
  CHECK_THROWS_AS(c.layers_to_remove(4), std::invalid_argument);
  c.count = 2;
  c.protect = {0, 1, 2};
  CHECK_THROWS_AS(c.layers_to_remove(4), std::invalid_argument);
  c.protect = {9};
  CHECK_THROWS_AS(c.layers_to_remove(4), std::invalid_argument);
  c.ratio = 0.5;
  c.protect.clear();
  CHECK_THROWS_AS(c.layers_to_remove(4), std::invalid_argument);
  CHECK(edge_layers(8) == std::set<std::size_t>{0, 1, 6, 7});
  CHECK(prune_strategy_from_string("one_shot") == PruneStrategy::kOneShot);
  CHECK_THROWS_AS(prune_strategy_from_string("greedy"), std::invalid_argument);
}

TEST_CASE("ties go to the lowest original index") {
  const TransformerModel m = bias_stack({{0, 0}, {0, 0}, {0, 0}, {0, 0}}, {1, 0});
  const CalibrationDataset d = all_zero_labels(4);
  const PruneResult it = iterative_prune(m, d, config(MetricKind::kCosine, PruneStrategy::kIterative, 2));
  CHECK(it.trace.removed() == std::vector<std::size_t>{0, 1});
  CHECK(it.trace.steps[1].report.layers == std::vector<std::size_t>{1, 2, 3});
  const PruneResult os = one_shot_prune(m, d, config(MetricKind::kCosine, PruneStrategy::kOneShot, 2));
  CHECK(os.trace.removed() == std::vector<std::size_t>{0, 1});

  PruneConfig protect = config(MetricKind::kCosine, PruneStrategy::kIterative, 2);
  protect.protect = {0, 2};
  CHECK(iterative_prune(m, d, protect).trace.removed() == std::vector<std::size_t>{1, 3});
}

TEST_CASE("pruning removes the lowest-scoring layers") {
  const TransformerModel m = bias_stack({{0.5, 0.5}, {0, 4}, {0.1, 0}, {1, 1}}, {1, 0});
  const CalibrationDataset d = all_zero_labels(4);
  const RelevanceReport r = cos_sim_score(m, d);
  std::vector<std::size_t> order{0, 1, 2, 3};
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return r.scores[a] < r.scores[b]; });
  REQUIRE(r.scores[order[0]] < r.scores[order[1]]);
  REQUIRE(r.scores[order[1]] < r.scores[order[2]]);
  const PruneResult os = one_shot_prune(m, d, config(MetricKind::kCosine, PruneStrategy::kOneShot, 2));
  CHECK(os.trace.removed() == std::vector<std::size_t>{order[0], order[1]});
  CHECK(os.model.n_layers() == 2);
  CHECK(os.trace.steps[0].report == os.trace.steps[1].report);
  CHECK(os.trace.steps[0].report.layers == std::vector<std::size_t>{0, 1, 2, 3});
}

TEST_CASE("iterative trace replays from scratch") {
  const auto& d = majority().test;
  for (MetricKind metric : {MetricKind::kCosine, MetricKind::kAccuracy, MetricKind::kTaylor, MetricKind::kRandom}) {
    CAPTURE(to_string(metric));
    PruneConfig cfg = config(metric, PruneStrategy::kIterative, 2);
    cfg.seed = 12;
    const PruneResult res = iterative_prune(trained(), d, cfg);
    REQUIRE(res.trace.steps.size() == 2);
    std::vector<std::size_t> removed;
    std::vector<std::size_t> alive{0, 1, 2, 3, 4};
    for (std::size_t s = 0; s < 2; ++s) {
      const auto& step = res.trace.steps[s];
      const TransformerModel current = remove_layers(trained(), removed);
      ScoreOptions o;
      o.seed = cfg.seed + s;
      const RelevanceReport fresh = score_all(current, d, metric, o);
      CHECK(step.report.scores == fresh.scores);
      CHECK(step.report.layers == alive);
      const auto pos = static_cast<std::size_t>(
          std::min_element(fresh.scores.begin(), fresh.scores.end()) - fresh.scores.begin());
      CHECK(step.removed == alive[pos]);
      removed.push_back(step.removed);
      alive.erase(alive.begin() + static_cast<std::ptrdiff_t>(pos));
      CHECK(step.accuracy_after == evaluate_accuracy(remove_layers(trained(), removed), d));
    }
    CHECK(res.model.n_layers() == 3);
    CHECK(res.final_accuracy() == evaluate_accuracy(res.model, d));
  }
}

TEST_CASE("iterative accuracy pruning is at least as good as one-shot") {
  const auto& d = majority().test;
  const auto it = iterative_prune(trained(), d, config(MetricKind::kAccuracy, PruneStrategy::kIterative, 2));
  const auto os = one_shot_prune(trained(), d, config(MetricKind::kAccuracy, PruneStrategy::kOneShot, 2));
  CHECK(it.final_accuracy() >= os.final_accuracy());
}

TEST_CASE("exhaustive search finds the best subset") {
  const auto& d = majority().test;
  const SubsetSearch best = exhaustive_best_subset(trained(), d, 2);
  CHECK(best.evaluated == 10);
  double oracle = -1.0;
  std::vector<std::size_t> oracle_set;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = i + 1; j < 5; ++j) {
      const std::vector<std::size_t> s{i, j};
      const double acc = evaluate_accuracy(remove_layers(trained(), s), d);
      if (acc > oracle) {
        oracle = acc;
        oracle_set = s;
      }
    }
  CHECK(best.accuracy == oracle);
  CHECK(best.removed == oracle_set);
  const auto it = iterative_prune(trained(), d, config(MetricKind::kAccuracy, PruneStrategy::kIterative, 2));
  CHECK(best.accuracy >= it.final_accuracy());

  const SubsetSearch guarded = exhaustive_best_subset(trained(), d, 1, {0, 1, 2, 3});
  CHECK(guarded.removed == std::vector<std::size_t>{4});
  CHECK(guarded.evaluated == 1);

  std::vector<std::vector<double>> twenty(20, {0, 0});
  CHECK_THROWS_AS(exhaustive_best_subset(bias_stack(twenty, {1, 0}), all_zero_labels(2), 5), std::invalid_argument);
  CHECK_NOTHROW(exhaustive_best_subset(bias_stack(twenty, {1, 0}), all_zero_labels(2), 3));
}

TEST_CASE("an ill-defined score aborts with the completed steps") {
  // full model logits (3, 2.5) are correct; removing any block gives (2, 2.5)
  const TransformerModel m = bias_stack({{1, 0}, {1, 0}, {1, 0}}, {0, 2.5});
  const CalibrationDataset d = all_zero_labels(4);
  PruneConfig cfg = config(MetricKind::kAccuracy, PruneStrategy::kIterative, 2);
  try {
    iterative_prune(m, d, cfg);
    FAIL("expected an ill-defined score");
  } catch (const PruneAbortedError& e) {
    REQUIRE(e.partial().steps.size() == 1);
    CHECK(e.partial().steps[0].removed == 0);
    CHECK(e.partial().steps[0].accuracy_after == 0.0);
    CHECK(std::string(e.what()).find("ill-defined") != std::string::npos);
  }
}

TEST_CASE("trace jsonl round trip and heatmap") {
  const auto& d = majority().test;
  const auto res = iterative_prune(trained(), d, config(MetricKind::kAccuracy, PruneStrategy::kIterative, 2));
  const std::string text = trace_to_jsonl(res.trace);
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
  CHECK(trace_from_jsonl(text) == res.trace);
  CHECK_THROWS(trace_from_jsonl("{\"format\":\"other\"}\n"));

  const HeatmapMatrix h = trace_heatmap(res.trace);
  CHECK(h.rows() == 2);
  CHECK(h.cols() == 5);
  CHECK(h.scale == ColorScale::kDiverging);
  const std::size_t first = res.trace.steps[0].removed;
  CHECK_FALSE(h.is_removed(0, first));
  CHECK(h.is_removed(1, first));
  CHECK(heatmap_from_csv(heatmap_to_csv(h)) == h);

  const auto os = one_shot_prune(trained(), d, config(MetricKind::kCosine, PruneStrategy::kOneShot, 2));
  const HeatmapMatrix ho = trace_heatmap(os.trace);
  CHECK(ho.is_removed(1, os.trace.steps[0].removed));
  CHECK(trace_from_jsonl(trace_to_jsonl(os.trace)) == os.trace);
}
