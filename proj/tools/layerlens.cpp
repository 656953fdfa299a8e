// layerlens: generate data, train, score, prune, certify, and analyze.
//
// Every command writes into its --out directory together with a
// manifest.json. Exit codes: 0 success, 1 runtime or certificate failure,
// 2 usage error.

#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "layerlens/adversarial.hpp"
#include "layerlens/analysis.hpp"
#include "layerlens/metrics.hpp"
#include "layerlens/model.hpp"
#include "layerlens/pruning.hpp"
#include "layerlens/tasks.hpp"
#include "layerlens/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace layerlens;

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr const char* kManifestFormat = "layerlens-manifest/1";

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

// Collects what a command read and wrote, then emits the manifest.
class Run {
 public:
  Run(CLI::App* cmd, std::string out_dir, std::uint64_t seed) : cmd_(cmd), dir_(std::move(out_dir)), seed_(seed) {
    fs::create_directories(dir_);
  }

  fs::path path(const std::string& name) const { return fs::path(dir_) / name; }

  void input(const std::string& p) { inputs_.push_back(p); }

  void output(const std::string& name, const std::string& text) {
    write_file(path(name), text);
    outputs_.push_back(name);
  }
  void output_written(const std::string& name) { outputs_.push_back(name); }

  void finish() const {
    json m;
    m["format"] = kManifestFormat;
    m["tool"] = "layerlens";
    m["version"] = kVersion;
    m["command"] = cmd_->get_name();
    json flags = json::object();
    for (const CLI::Option* opt : cmd_->get_options()) {
      const std::string name = opt->get_single_name();
      if (name == "help") continue;
      if (opt->count() > 0) {
        const auto& r = opt->results();
        flags[name] = r.size() == 1 ? json(r[0]) : json(r);
      } else {
        flags[name] = opt->get_default_str();
      }
    }
    m["flags"] = flags;
    m["seed"] = seed_;
    json in = json::array();
    for (const auto& p : inputs_) in.push_back({{"path", p}, {"sha256", sha256_hex(read_file(p))}});
    m["inputs"] = in;
    m["outputs"] = outputs_;
    write_file(path("manifest.json"), m.dump(2) + "\n");
  }

 private:
  CLI::App* cmd_;
  std::string dir_;
  std::uint64_t seed_;
  std::vector<std::string> inputs_;
  std::vector<std::string> outputs_;
};

// ---- generate / train ----

struct TaskFlags {
  std::string task;
  std::uint64_t seed = 0;
  std::size_t n_train = 256;
  std::size_t n_test = 128;
  std::optional<std::size_t> min_len, max_len, classes, keys;

  void add(CLI::App* cmd) {
    cmd->add_option("--task", task, "majority | parity | modsum | lookup")->required();
    cmd->add_option("--seed", seed, "Seed for data, initialization, and shuffling");
    cmd->add_option("--n-train", n_train, "Training instances");
    cmd->add_option("--n-test", n_test, "Test instances");
    cmd->add_option("--min-len", min_len, "Override the task's minimum length");
    cmd->add_option("--max-len", max_len, "Override the task's maximum length");
    cmd->add_option("--classes", classes, "Number of classes (modsum, lookup)");
    cmd->add_option("--keys", keys, "Number of keys (lookup)");
  }

  TaskSpec spec() const {
    TaskSpec s = default_task(task_kind_from_string(task), seed);
    if (min_len) s.min_len = *min_len;
    if (max_len) s.max_len = *max_len;
    if (classes) s.n_classes = *classes;
    if (keys) s.n_keys = *keys;
    s.validate();
    return s;
  }
};

struct GenerateCmd {
  TaskFlags task;
  std::string out;

  void add(CLI::App& app) {
    cmd = app.add_subcommand("generate", "Generate a train/test pair of a synthetic task");
    task.add(cmd);
    cmd->add_option("--out", out, "Output directory")->required();
  }
  int run() {
    const DatasetPair pair = generate(task.spec(), task.n_train, task.n_test);
    Run r(cmd, out, task.seed);
    save_dataset(pair.train, r.path("train.jsonl").string());
    save_dataset(pair.test, r.path("test.jsonl").string());
    r.output_written("train.jsonl");
    r.output_written("test.jsonl");
    r.finish();
    std::cout << "wrote " << pair.train.size() << " train / " << pair.test.size() << " test instances to " << out
              << "\n";
    return 0;
  }
  CLI::App* cmd = nullptr;
};

struct TrainCmd {
  TaskFlags task;
  std::size_t layers = 4, d_model = 32, heads = 2;
  std::optional<std::size_t> d_ff;
  bool no_layernorm = false;
  TrainConfig hyper;
  std::string out;

  void add(CLI::App& app) {
    cmd = app.add_subcommand("train", "Generate task data and train a model on it");
    task.add(cmd);
    cmd->add_option("--layers", layers, "Number of blocks");
    cmd->add_option("--d-model", d_model, "Residual width");
    cmd->add_option("--heads", heads, "Attention heads");
    cmd->add_option("--d-ff", d_ff, "FFN width (default 2 * d-model)");
    cmd->add_flag("--no-layernorm", no_layernorm, "Disable layer norm");
    cmd->add_option("--epochs", hyper.epochs, "Training epochs");
    cmd->add_option("--batch-size", hyper.batch_size, "Mini-batch size");
    cmd->add_option("--lr", hyper.learning_rate, "Adam learning rate");
    cmd->add_option("--grad-clip", hyper.grad_clip, "Global gradient-norm cap (0 disables)");
    cmd->add_option("--checkpoint-every", hyper.checkpoint_every, "Steps between checkpoints (0: final only)");
    cmd->add_option("--out", out, "Output directory")->required();
  }
  int run() {
    const DatasetPair data = generate(task.spec(), task.n_train, task.n_test);
    ModelConfig c;
    c.n_layers = layers;
    c.d_model = d_model;
    c.n_heads = heads;
    c.d_ff = d_ff.value_or(2 * d_model);
    c.vocab_size = data.train.vocab_size;
    c.max_seq = data.train.max_seq;
    c.use_layernorm = !no_layernorm;
    c.validate();
    hyper.seed = task.seed;
    const TrainResult res = train(c, data.train, hyper);

    Run r(cmd, out, task.seed);
    save_dataset(data.train, r.path("train.jsonl").string());
    save_dataset(data.test, r.path("test.jsonl").string());
    r.output_written("train.jsonl");
    r.output_written("test.jsonl");
    r.output("model.json", serialize(res.model));
    save_checkpoints(res.series, out);
    r.output_written("series.csv");
    for (const auto& ck : res.series.checkpoints) r.output_written("ckpt_" + std::to_string(ck.step) + ".json");
    std::string losses = "# layerlens-loss/1\nepoch,loss\n";
    for (std::size_t e = 0; e < res.epoch_loss.size(); ++e)
      losses += std::to_string(e + 1) + "," + format_double(res.epoch_loss[e]) + "\n";
    r.output("loss.csv", losses);
    r.finish();
    std::cout << "train accuracy " << format_double(evaluate_accuracy(res.model, data.train)) << ", test accuracy "
              << format_double(evaluate_accuracy(res.model, data.test)) << "\n";
    return 0;
  }
  CLI::App* cmd = nullptr;
};

// ---- score ----

struct ScoreCmd {
  std::string model, data, metric, out, format = "csv";
  std::uint64_t seed = 0;
  std::optional<double> chance;

  void add(CLI::App& app) {
    cmd = app.add_subcommand("score", "Score every layer of a model with one relevance metric");
    cmd->add_option("--model", model, "Model file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--data", data, "Calibration dataset (.jsonl)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--metric", metric, "cosine | accuracy | perplexity | out_cosine | out_norm | out_js | taylor | random")
        ->required();
    cmd->add_option("--format", format, "csv | json")->check(CLI::IsMember({"csv", "json"}));
    cmd->add_option("--seed", seed, "Seed for the random metric");
    cmd->add_option("--chance", chance, "Chance level for the accuracy metric (default: uniform over options)");
    cmd->add_option("--out", out, "Output directory")->required();
  }
  int run() {
    const MetricKind kind = metric_kind_from_string(metric);
    const TransformerModel m = load_model(model);
    const CalibrationDataset d = load_dataset(data);
    ScoreOptions o;
    o.seed = seed;
    o.chance_level = chance;
    o.model_id = fs::path(model).filename().string();
    const RelevanceReport rep = score_all(m, d, kind, o);
    Run r(cmd, out, seed);
    r.input(model);
    r.input(data);
    const std::string name = "report." + format;
    r.output(name, format == "json" ? report_to_json(rep) : report_to_csv(rep));
    r.finish();
    std::cout << "scored " << rep.size() << " layers with " << to_string(kind) << ": " << rep.forward_passes
              << " forward, " << rep.backward_passes << " backward passes\n";
    return 0;
  }
  CLI::App* cmd = nullptr;
};

// ---- prune ----

struct PruneCmd {
  std::string model, data, heal_data, metric, strategy = "iterative", out;
  std::optional<double> ratio;
  std::optional<std::size_t> k;
  std::uint64_t seed = 0;
  std::optional<double> chance;
  bool protect_edges = false;
  std::vector<std::size_t> protect;
  std::size_t heal_epochs = 0;
  double heal_lr = 1e-3;

  void add(CLI::App& app) {
    cmd = app.add_subcommand("prune", "Remove the least relevant layers, optionally followed by healing");
    cmd->add_option("--model", model, "Model file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--data", data, "Calibration dataset (.jsonl)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--metric", metric, "Relevance metric")->required();
    cmd->add_option("--strategy", strategy, "iterative | one_shot (oneshot)");
    auto* r = cmd->add_option("--ratio", ratio, "Fraction of layers to remove");
    auto* kk = cmd->add_option("--k", k, "Number of layers to remove");
    r->excludes(kk);
    cmd->add_option("--seed", seed, "Seed for the random metric and healing");
    cmd->add_option("--chance", chance, "Chance level for the accuracy metric");
    cmd->add_flag("--protect-edges", protect_edges, "Never remove the first two and last two layers");
    cmd->add_option("--protect", protect, "Original layer indices that are never removed");
    cmd->add_option("--heal-epochs", heal_epochs, "Fine-tuning epochs after pruning (0: no healing)");
    cmd->add_option("--heal-lr", heal_lr, "Learning rate for healing");
    cmd->add_option("--heal-data", heal_data, "Healing dataset (default: --data)")->check(CLI::ExistingFile);
    cmd->add_option("--out", out, "Output directory")->required();
  }
  int run() {
    if (!ratio && !k) throw CLI::ValidationError("prune", "one of --ratio or --k is required");
    const TransformerModel m = load_model(model);
    const CalibrationDataset d = load_dataset(data);
    PruneConfig cfg;
    cfg.metric = metric_kind_from_string(metric);
    cfg.strategy = prune_strategy_from_string(strategy);
    cfg.ratio = ratio;
    cfg.count = k;
    cfg.seed = seed;
    cfg.chance_level = chance;
    cfg.protect.insert(protect.begin(), protect.end());
    if (protect_edges) {
      const auto edges = edge_layers(m.n_layers());
      cfg.protect.insert(edges.begin(), edges.end());
    }
    cfg.layers_to_remove(m.n_layers());  // validate before any work

    Run r(cmd, out, seed);
    r.input(model);
    r.input(data);
    std::optional<PruneResult> done;
    try {
      done = prune(m, d, cfg);
    } catch (const PruneAbortedError& e) {
      r.output("trace.jsonl", trace_to_jsonl(e.partial()));
      r.finish();
      throw;
    }
    const PruneResult& res = *done;
    r.output("pruned_model.json", serialize(res.model));
    r.output("trace.jsonl", trace_to_jsonl(res.trace));
    emit_heatmap(trace_heatmap(res.trace), r.path("heatmap.csv").string(), r.path("heatmap.svg").string());
    r.output_written("heatmap.csv");
    r.output_written("heatmap.svg");

    json summary;
    summary["format"] = "layerlens-prune-summary/1";
    summary["metric"] = to_string(cfg.metric);
    summary["strategy"] = to_string(cfg.strategy);
    summary["removed"] = res.trace.removed();
    summary["initial_accuracy"] = res.trace.initial_accuracy;
    summary["pruned_accuracy"] = res.final_accuracy();
    if (heal_epochs > 0) {
      CalibrationDataset hd = d;
      if (!heal_data.empty()) {
        hd = load_dataset(heal_data);
        r.input(heal_data);
      }
      TrainConfig t;
      t.epochs = heal_epochs;
      t.learning_rate = heal_lr;
      t.seed = seed;
      const HealResult h = heal(res.model, hd, t);
      r.output("healed_model.json", serialize(h.model));
      std::string curve = "# layerlens-heal/1\nepoch,accuracy\n";
      for (std::size_t e = 0; e < h.curve.size(); ++e) curve += std::to_string(e) + "," + format_double(h.curve[e]) + "\n";
      r.output("heal_curve.csv", curve);
      summary["heal_best_epoch"] = h.best_epoch;
      summary["healed_accuracy"] = h.curve[h.best_epoch];
      summary["healed_calibration_accuracy"] = evaluate_accuracy(h.model, d);
    }
    r.output("summary.json", summary.dump(2) + "\n");
    r.finish();
    std::cout << "removed";
    for (std::size_t l : res.trace.removed()) std::cout << " " << l;
    std::cout << "; accuracy " << format_double(res.trace.initial_accuracy) << " -> "
              << format_double(res.final_accuracy()) << "\n";
    return 0;
  }
  CLI::App* cmd = nullptr;
};

// ---- adversarial ----

struct AdversarialCmd {
  AdversarialSpec spec;
  std::size_t n = 16;
  std::uint64_t seed = 0;
  bool no_relabel = false;
  std::string data, out;

  void add(CLI::App& app) {
    cmd = app.add_subcommand("adversarial", "Build and certify a model whose near-identity layer is critical");
    cmd->add_option("--epsilon", spec.epsilon, "Target cosine score of the critical layer")->required();
    cmd->add_option("--classes", spec.n_classes, "Number of classes");
    cmd->add_option("--n", n, "Number of calibration instances");
    cmd->add_option("--delta", spec.delta, "Size of the critical signal");
    cmd->add_option("--spread", spec.spread, "Coordinates the large offset is spread over");
    cmd->add_flag("--no-relabel", no_relabel, "For odd class counts, keep the C-1-y misleading class");
    cmd->add_option("--seed", seed, "Seed for the generated calibration data");
    cmd->add_option("--data", data, "Use this dataset instead of generated data")->check(CLI::ExistingFile);
    cmd->add_option("--out", out, "Output directory")->required();
  }
  int run() {
    spec.relabel_odd = !no_relabel;
    spec.validate();
    CalibrationDataset base;
    if (!data.empty()) {
      base = load_dataset(data);
    } else {
      TaskSpec t = default_task(TaskKind::kModSum, seed);
      t.n_classes = spec.n_classes;
      t.max_len = 6;
      base = generate(t, n, 1).train;
    }
    const AdversarialBuild b = spec.n_classes == 2 ? build_binary(base, spec) : build_multiclass(base, spec);
    const Certificate cert = verify(b.model, b.dataset, spec, b.m, b.target_layer);

    Run r(cmd, out, seed);
    if (!data.empty()) r.input(data);
    r.output("model.json", serialize(b.model));
    save_dataset(b.dataset, r.path("dataset.jsonl").string());
    r.output_written("dataset.jsonl");
    r.output("certificate.json", certificate_to_json(cert));
    r.finish();
    if (!cert.passed()) {
      std::cerr << "certificate FAILED: " << cert.first_failure() << "\n";
      return 1;
    }
    std::cout << "certificate passed: M = " << format_double(b.m) << ", layer " << b.target_layer << " score "
              << format_double(cert.layer_scores[b.target_layer]) << "\n";
    return 0;
  }
  CLI::App* cmd = nullptr;
};

// ---- analyze ----

struct AnalyzeCmd {
  std::vector<std::string> reports, against, labels;
  std::string mode, out;
  std::size_t band = 2;

  void add(CLI::App& app) {
    cmd = app.add_subcommand("analyze", "Compare relevance reports");
    cmd->add_option("--reports", reports, "Report files")->required()->check(CLI::ExistingFile);
    cmd->add_option("--against", against,
                    "Second report set (ground truth for confusion; paired for correlation and wilcoxon)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--mode", mode, "correlation | confusion | variance | wilcoxon | heatmap")
        ->required()
        ->check(CLI::IsMember({"correlation", "confusion", "variance", "wilcoxon", "heatmap"}));
    cmd->add_option("--band", band, "Near-diagonal band for confusion");
    cmd->add_option("--labels", labels, "Row labels for heatmap mode");
    cmd->add_option("--out", out, "Output directory")->required();
  }

  static std::vector<RelevanceReport> load_all(const std::vector<std::string>& paths) {
    std::vector<RelevanceReport> v;
    for (const auto& p : paths) v.push_back(load_report(p));
    return v;
  }

  static void check_layers(const std::vector<RelevanceReport>& a, const std::vector<RelevanceReport>& b) {
    if (a.size() != b.size()) throw std::runtime_error("--reports and --against must have the same number of files");
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i].layers != b[i].layers) {
        throw std::runtime_error("incompatible layer sets in report pair " + std::to_string(i));
      }
  }

  std::vector<RelevanceReport> need_against() const {
    if (against.empty()) throw CLI::ValidationError("analyze", "--mode " + mode + " needs --against");
    return load_all(against);
  }

  int run() {
    const auto a = load_all(reports);
    for (const auto& rep : a)
      if (rep.layers != a.front().layers && mode != "heatmap") {
        throw std::runtime_error("incompatible layer sets across --reports");
      }
    std::vector<RelevanceReport> b;
    if (mode == "correlation" || mode == "confusion" || mode == "wilcoxon") {
      b = need_against();
      check_layers(a, b);
    }
    Run r(cmd, out, 0);
    for (const auto& p : reports) r.input(p);
    for (const auto& p : against) r.input(p);

    if (mode == "correlation") {
      std::string csv = "# layerlens-correlation/1\nreport,against,pearson_r\n";
      std::vector<double> xs, ys;
      for (std::size_t i = 0; i < a.size(); ++i) {
        csv += reports[i] + "," + against[i] + "," + format_double(pearson_r(a[i].scores, b[i].scores)) + "\n";
        xs.insert(xs.end(), a[i].scores.begin(), a[i].scores.end());
        ys.insert(ys.end(), b[i].scores.begin(), b[i].scores.end());
      }
      csv += "pooled,pooled," + format_double(pearson_r(xs, ys)) + "\n";
      r.output("correlation.csv", csv);
    } else if (mode == "confusion") {
      std::vector<std::vector<double>> truth, metric;
      for (std::size_t i = 0; i < a.size(); ++i) {
        metric.push_back(a[i].scores);
        truth.push_back(b[i].scores);
      }
      const ConfusionMatrix cm = rank_confusion(truth, metric, band);
      std::string csv = "# layerlens-confusion/1 rows=true_rank cols=metric_rank\ntrue_rank";
      for (std::size_t j = 0; j < cm.n; ++j) csv += "," + std::to_string(j + 1);
      csv += "\n";
      for (std::size_t i = 0; i < cm.n; ++i) {
        csv += std::to_string(i + 1);
        for (std::size_t j = 0; j < cm.n; ++j) csv += "," + std::to_string(cm.at(i, j));
        csv += "\n";
      }
      r.output("confusion.csv", csv);
      json s;
      s["format"] = "layerlens-confusion-summary/1";
      s["observations"] = cm.total;
      s["band"] = cm.band;
      s["off_diagonal_rate"] = cm.off_diagonal_rate;
      s["near_band_rate"] = cm.near_band_rate;
      s["severe_rate"] = cm.severe_rate;
      r.output("confusion_summary.json", s.dump(2) + "\n");
      std::cout << "misranking rate " << format_double(cm.off_diagonal_rate) << "\n";
    } else if (mode == "variance") {
      const VarianceSummary v = zscore_variance(a);
      std::string csv = "# layerlens-variance/1\nlayer,variance\n";
      for (std::size_t l = 0; l < v.per_layer_variance.size(); ++l)
        csv += std::to_string(a.front().layers[l]) + "," + format_double(v.per_layer_variance[l]) + "\n";
      r.output("variance.csv", csv);
      json s;
      s["format"] = "layerlens-variance-summary/1";
      s["mean"] = v.mean;
      s["sd"] = v.sd;
      r.output("variance_summary.json", s.dump(2) + "\n");
    } else if (mode == "wilcoxon") {
      const VarianceSummary va = zscore_variance(a), vb = zscore_variance(b);
      const WilcoxonResult w = wilcoxon_signed_rank(va.per_layer_variance, vb.per_layer_variance);
      json s;
      s["format"] = "layerlens-wilcoxon/1";
      s["W"] = w.w;
      s["W_plus"] = w.w_plus;
      s["W_minus"] = w.w_minus;
      s["n"] = w.n;
      s["p_value"] = w.p_value;
      s["exact"] = w.exact;
      s["mean_variance_reports"] = va.mean;
      s["mean_variance_against"] = vb.mean;
      r.output("wilcoxon.json", s.dump(2) + "\n");
      std::cout << "W = " << format_double(w.w) << ", p = " << format_double(w.p_value) << "\n";
    } else {
      std::vector<std::string> rows = labels;
      if (rows.empty())
        for (const auto& p : reports) rows.push_back(fs::path(p).stem().string());
      if (rows.size() != a.size()) throw CLI::ValidationError("analyze", "--labels needs one label per report");
      emit_heatmap(reports_heatmap(a, rows), r.path("heatmap.csv").string(), r.path("heatmap.svg").string());
      r.output_written("heatmap.csv");
      r.output_written("heatmap.svg");
    }
    r.finish();
    return 0;
  }
  CLI::App* cmd = nullptr;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"layerlens: layer relevance scoring and pruning for small transformers"};
  app.set_version_flag("--version", kVersion);
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  GenerateCmd gen;
  TrainCmd tr;
  ScoreCmd sc;
  PruneCmd pr;
  AdversarialCmd adv;
  AnalyzeCmd an;
  gen.add(app);
  tr.add(app);
  sc.add(app);
  pr.add(app);
  adv.add(app);
  an.add(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen.cmd->parsed()) return gen.run();
    if (tr.cmd->parsed()) return tr.run();
    if (sc.cmd->parsed()) return sc.run();
    if (pr.cmd->parsed()) return pr.run();
    if (adv.cmd->parsed()) return adv.run();
    if (an.cmd->parsed()) return an.run();
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    // bad flag values detected by the library (unknown metric, ratio out of range, ...)
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
