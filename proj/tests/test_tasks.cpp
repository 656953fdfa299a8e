#include <cstdio>
#include <filesystem>
#include <map>
#include <set>

#include "doctest.h"
#include "layerlens/tasks.hpp"

using namespace layerlens;

namespace {

// Independent label oracle: recomputes each label from the raw tokens.
int oracle_label(const TaskSpec& s, const std::vector<int>& t) {
  switch (s.kind) {
    case TaskKind::kMajority: {
      int ones = 0;
      for (int x : t) ones += x == 1;
      return ones * 2 > static_cast<int>(t.size()) ? 1 : 0;
    }
    case TaskKind::kParity: {
      int p = 0;
      for (int x : t) p ^= x;
      return p;
    }
    case TaskKind::kModSum: {
      REQUIRE(t.back() == static_cast<int>(s.n_classes));
      int total = 0;
      for (std::size_t i = 0; i + 1 < t.size(); ++i) total += t[i];
      return total % static_cast<int>(s.n_classes);
    }
    case TaskKind::kLookup: {
      const int marker = static_cast<int>(s.n_classes + s.n_keys);
      REQUIRE(t[t.size() - 2] == marker);
      std::map<int, int> table;
      for (std::size_t i = 0; i + 2 < t.size(); i += 2) table[t[i]] = t[i + 1];
      REQUIRE(table.count(t.back()) == 1);
      return table[t.back()];
    }
  }
  return -1;
}

TaskSpec lookup_spec() {
  TaskSpec s;
  s.kind = TaskKind::kLookup;
  s.min_len = 2;
  s.max_len = 4;
  s.n_classes = 3;
  s.n_keys = 5;
  s.seed = 99;
  return s;
}

}  // namespace

TEST_CASE("majority of length 9") {
  TaskSpec s;
  s.kind = TaskKind::kMajority;
  s.min_len = s.max_len = 9;
  s.seed = 1;
  const auto data = generate(s, 40, 10);
  CHECK(data.train.n_classes == 2);
  for (const auto& inst : data.train.instances) {
    CHECK(inst.tokens.size() == 9);
    CHECK(inst.options == std::vector<int>{0, 1});
    CHECK(inst.label == oracle_label(s, inst.tokens));
  }
}

TEST_CASE("generation is deterministic") {
  for (TaskKind k : {TaskKind::kMajority, TaskKind::kParity, TaskKind::kModSum, TaskKind::kLookup}) {
    const TaskSpec s = default_task(k, 17);
    const auto a = generate(s, 30, 12);
    const auto b = generate(s, 30, 12);
    CHECK(a.train == b.train);
    CHECK(a.test == b.test);
    const auto c = generate(default_task(k, 18), 30, 12);
    CHECK(!(a.train == c.train));
  }
}

TEST_CASE("labels, distinctness, disjointness and balance") {
  std::vector<TaskSpec> specs;
  for (TaskKind k : {TaskKind::kMajority, TaskKind::kParity, TaskKind::kModSum, TaskKind::kLookup})
    specs.push_back(default_task(k, 5));
  specs.push_back(lookup_spec());
  for (const TaskSpec& s : specs) {
    CAPTURE(to_string(s.kind));
    const auto data = generate(s, 61, 23);
    std::set<std::vector<int>> seen;
    std::size_t mismatches = 0;
    for (const auto* split : {&data.train, &data.test}) {
      std::vector<int> per_class(s.n_classes, 0);
      for (const auto& inst : split->instances) {
        CHECK(seen.insert(inst.tokens).second);
        mismatches += inst.label != oracle_label(s, inst.tokens);
        per_class.at(static_cast<std::size_t>(inst.label))++;
        CHECK(inst.tokens.size() <= s.max_seq());
        for (int t : inst.tokens) CHECK(static_cast<std::size_t>(t) < s.vocab_size());
      }
      const auto [lo, hi] = std::minmax_element(per_class.begin(), per_class.end());
      CHECK(*hi - *lo <= 1);
    }
    CHECK(mismatches == 0);
    CHECK(seen.size() == 84);
  }
}

TEST_CASE("infeasible requests and invalid specs") {
  TaskSpec s;
  s.kind = TaskKind::kParity;
  s.min_len = s.max_len = 2;  // only 4 sequences
  CHECK_NOTHROW(generate(s, 2, 2));
  CHECK_THROWS_AS(generate(s, 3, 2), std::invalid_argument);
  CHECK_THROWS_AS(generate(s, 0, 2), std::invalid_argument);

  TaskSpec bad = default_task(TaskKind::kLookup, 1);
  bad.n_keys = 2;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  TaskSpec even = default_task(TaskKind::kMajority, 1);
  even.min_len = even.max_len = 4;
  CHECK_THROWS_AS(even.validate(), std::invalid_argument);
  TaskSpec modsum = default_task(TaskKind::kModSum, 1);
  modsum.n_classes = 1;
  CHECK_THROWS_AS(modsum.validate(), std::invalid_argument);
  CHECK_THROWS_AS(task_kind_from_string("sorting"), std::invalid_argument);
}

TEST_CASE("random baseline") {
  CalibrationDataset d;
  d.n_classes = 4;
  d.instances = {{{1}, 0, {0, 1}}, {{2}, 1, {0, 1}}};
  CHECK(random_baseline(d) == 0.5);
  d.instances = {{{1}, 0, {0, 1, 2, 3}}, {{2}, 1, {0, 1, 2, 3}}};
  CHECK(random_baseline(d) == 0.25);
  d.instances = {{{1}, 0, {0, 1}}, {{2}, 1, {0, 1, 2, 3}}};
  CHECK(random_baseline(d) == doctest::Approx(0.375).epsilon(1e-15));
  d.instances.clear();
  CHECK_THROWS_AS(random_baseline(d), std::invalid_argument);
}

TEST_CASE("marginal baseline") {
  CalibrationDataset d;
  d.n_classes = 2;
  d.instances = {{{1}, 0, {0, 1}}, {{2}, 0, {0, 1}}, {{3}, 0, {0, 1}}, {{4}, 1, {0, 1}}};
  CHECK(marginal_baseline(d) == doctest::Approx(0.75 * 0.75 + 0.25 * 0.25));
}

TEST_CASE("dataset file round trip") {
  const auto data = generate(lookup_spec(), 20, 5);
  const auto path = std::filesystem::temp_directory_path() / "layerlens_dataset_test.jsonl";
  save_dataset(data.test, path.string());
  CHECK(load_dataset(path.string()) == data.test);
  std::filesystem::remove(path);
  CHECK_THROWS(load_dataset("/nonexistent/file.jsonl"));
}
