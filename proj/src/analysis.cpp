#include "layerlens/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace layerlens {

double pearson_r(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson_r: inputs differ in length");
  if (x.size() < 2) throw std::invalid_argument("pearson_r: need at least 2 points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw std::invalid_argument("pearson_r: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> relevance_ranks(std::span<const double> scores, TiePolicy policy) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> ranks(scores.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    for (std::size_t t = i; t <= j; ++t) {
      ranks[order[t]] = policy == TiePolicy::kOrdinal ? static_cast<double>(t + 1)
                                                      : (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    }
    i = j + 1;
  }
  return ranks;
}

ConfusionMatrix rank_confusion(const std::vector<std::vector<double>>& true_scores,
                               const std::vector<std::vector<double>>& metric_scores, std::size_t band) {
  if (true_scores.size() != metric_scores.size() || true_scores.empty()) {
    throw std::invalid_argument("rank_confusion: need the same non-zero number of score vectors");
  }
  ConfusionMatrix cm;
  cm.n = true_scores.front().size();
  cm.band = band;
  cm.counts.assign(cm.n * cm.n, 0);
  std::size_t off = 0, near = 0;
  for (std::size_t s = 0; s < true_scores.size(); ++s) {
    if (true_scores[s].size() != cm.n || metric_scores[s].size() != cm.n) {
      throw std::invalid_argument("rank_confusion: score vector " + std::to_string(s) + " has the wrong length");
    }
    const auto tr = relevance_ranks(true_scores[s], TiePolicy::kOrdinal);
    const auto mr = relevance_ranks(metric_scores[s], TiePolicy::kOrdinal);
    for (std::size_t l = 0; l < cm.n; ++l) {
      const auto i = static_cast<std::size_t>(tr[l]) - 1;
      const auto j = static_cast<std::size_t>(mr[l]) - 1;
      ++cm.counts[i * cm.n + j];
      ++cm.total;
      const std::size_t dist = i > j ? i - j : j - i;
      if (dist != 0) ++off;
      if (dist <= band) ++near;
    }
  }
  const double total = static_cast<double>(cm.total);
  cm.off_diagonal_rate = static_cast<double>(off) / total;
  cm.near_band_rate = static_cast<double>(near) / total;
  cm.severe_rate = 1.0 - cm.near_band_rate;
  return cm;
}

VarianceSummary zscore_variance(const std::vector<std::vector<double>>& per_dataset_scores) {
  if (per_dataset_scores.empty()) throw std::invalid_argument("zscore_variance: no score vectors");
  const std::size_t n = per_dataset_scores.front().size();
  if (n < 2) throw std::invalid_argument("zscore_variance: need at least 2 layers");
  VarianceSummary out;
  for (std::size_t s = 0; s < per_dataset_scores.size(); ++s) {
    const auto& v = per_dataset_scores[s];
    if (v.size() != n) throw std::invalid_argument("zscore_variance: score vectors differ in length");
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    if (sd == 0.0) {
      throw std::invalid_argument("zscore_variance: score vector " + std::to_string(s) + " is constant");
    }
    std::vector<double> z(n);
    for (std::size_t l = 0; l < n; ++l) z[l] = (v[l] - mean) / sd;
    out.normalized.push_back(std::move(z));
  }
  const double k = static_cast<double>(out.normalized.size());
  for (std::size_t l = 0; l < n; ++l) {
    double mean = 0.0;
    for (const auto& z : out.normalized) mean += z[l];
    mean /= k;
    double var = 0.0;
    for (const auto& z : out.normalized) var += (z[l] - mean) * (z[l] - mean);
    out.per_layer_variance.push_back(var / k);
  }
  const auto& pv = out.per_layer_variance;
  out.mean = std::accumulate(pv.begin(), pv.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double x : pv) var += (x - out.mean) * (x - out.mean);
  out.sd = std::sqrt(var / static_cast<double>(n));
  return out;
}

VarianceSummary zscore_variance(const std::vector<RelevanceReport>& reports) {
  std::vector<std::vector<double>> scores;
  for (const auto& r : reports) {
    if (!scores.empty() && r.layers != reports.front().layers) {
      throw std::invalid_argument("zscore_variance: reports cover different layers");
    }
    scores.push_back(r.scores);
  }
  return zscore_variance(scores);
}

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b, WilcoxonMethod method) {
  if (a.size() != b.size()) throw std::invalid_argument("wilcoxon: samples differ in length");
  std::vector<double> diffs;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] - b[i] != 0.0) diffs.push_back(a[i] - b[i]);
  WilcoxonResult r;
  r.n = diffs.size();
  if (r.n == 0) throw std::invalid_argument("wilcoxon: all paired differences are zero");
  std::vector<double> mags(diffs.size());
  for (std::size_t i = 0; i < diffs.size(); ++i) mags[i] = std::abs(diffs[i]);
  const auto ranks = relevance_ranks(mags, TiePolicy::kAverage);
  for (std::size_t i = 0; i < diffs.size(); ++i) (diffs[i] > 0 ? r.w_plus : r.w_minus) += ranks[i];
  r.w = std::min(r.w_plus, r.w_minus);

  r.exact = method == WilcoxonMethod::kExact || (method == WilcoxonMethod::kAuto && r.n <= 20);
  if (r.exact) {
    // Average ranks are multiples of 1/2, so work with doubled ranks.
    std::vector<std::size_t> twice(ranks.size());
    std::size_t total = 0;
    for (std::size_t i = 0; i < ranks.size(); ++i) {
      twice[i] = static_cast<std::size_t>(std::llround(2.0 * ranks[i]));
      total += twice[i];
    }
    std::vector<double> ways(total + 1, 0.0);
    ways[0] = 1.0;
    for (std::size_t t : twice)
      for (std::size_t s = total; s >= t; --s) {
        ways[s] += ways[s - t];
        if (s == t) break;
      }
    const auto limit = static_cast<std::size_t>(std::llround(2.0 * r.w));
    double below = 0.0;
    for (std::size_t s = 0; s <= limit; ++s) below += ways[s];
    r.p_value = std::min(1.0, 2.0 * below / std::pow(2.0, static_cast<double>(r.n)));
  } else {
    const double n = static_cast<double>(r.n);
    std::vector<double> sorted = mags;
    std::sort(sorted.begin(), sorted.end());
    double tie_term = 0.0;
    for (std::size_t i = 0; i < sorted.size();) {
      std::size_t j = i;
      while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i);
      tie_term += t * t * t - t;
      i = j;
    }
    const double mean = n * (n + 1.0) / 4.0;
    const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if (!(var > 0.0)) {
      r.p_value = 1.0;
    } else {
      const double z = std::min(0.0, r.w - mean + 0.5) / std::sqrt(var);
      r.p_value = std::min(1.0, 2.0 * normal_cdf(z));
    }
  }
  return r;
}

double normalized_score(double acc, double r, double floor) {
  if (!(r < 1.0)) throw std::invalid_argument("normalized_score: chance level must be below 1");
  return std::max(floor, 100.0 * (acc - r) / (1.0 - r));
}

std::string to_string(ColorScale scale) { return scale == ColorScale::kDiverging ? "diverging" : "sequential"; }

void HeatmapMatrix::validate() const {
  const std::size_t cells = rows() * cols();
  if (values.size() != cells || removed.size() != cells) {
    throw std::invalid_argument("heatmap: expected " + std::to_string(cells) + " cells");
  }
  for (std::size_t i = 0; i < cells; ++i)
    if (!removed[i] && !std::isfinite(values[i])) throw std::invalid_argument("heatmap: non-finite cell value");
}

ColorScale scale_for(MetricKind metric) {
  return metric == MetricKind::kAccuracy ? ColorScale::kDiverging : ColorScale::kSequential;
}

namespace {

std::vector<std::string> layer_labels(std::size_t n) {
  std::vector<std::string> labels;
  for (std::size_t l = 0; l < n; ++l) labels.push_back(std::to_string(l + 1));
  return labels;
}

}  // namespace

HeatmapMatrix reports_heatmap(const std::vector<RelevanceReport>& reports, const std::vector<std::string>& row_labels) {
  if (reports.empty() || reports.size() != row_labels.size()) {
    throw std::invalid_argument("reports_heatmap: need one label per report");
  }
  HeatmapMatrix m;
  m.title = to_string(reports.front().metric);
  m.scale = scale_for(reports.front().metric);
  m.row_labels = row_labels;
  std::size_t width = 0;
  for (const auto& r : reports)
    for (std::size_t l : r.layers) width = std::max(width, l + 1);
  m.col_labels = layer_labels(width);
  m.values.assign(reports.size() * width, 0.0);
  m.removed.assign(reports.size() * width, true);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    for (std::size_t k = 0; k < reports[i].layers.size(); ++k) {
      m.values[i * width + reports[i].layers[k]] = reports[i].scores[k];
      m.removed[i * width + reports[i].layers[k]] = false;
    }
  }
  return m;
}

HeatmapMatrix checkpoint_heatmap(const CheckpointSeries& series, const CalibrationDataset& data, MetricKind metric,
                                 const ScoreOptions& options) {
  if (series.checkpoints.empty()) throw std::invalid_argument("checkpoint_heatmap: empty series");
  std::vector<RelevanceReport> reports;
  std::vector<std::string> labels;
  for (const auto& c : series.checkpoints) {
    reports.push_back(score_all(deserialize(c.model), data, metric, options));
    labels.push_back("step " + std::to_string(c.step));
  }
  HeatmapMatrix m = reports_heatmap(reports, labels);
  m.title = to_string(metric) + " over training";
  return m;
}

std::string heatmap_to_csv(const HeatmapMatrix& m) {
  m.validate();
  std::ostringstream out;
  out << "# " << kHeatmapFormat << " scale=" << to_string(m.scale) << "\n";
  out << "# title=" << m.title << "\n";
  out << "row";
  for (const auto& c : m.col_labels) out << "," << c;
  out << "\n";
  for (std::size_t r = 0; r < m.rows(); ++r) {
    out << m.row_labels[r];
    for (std::size_t c = 0; c < m.cols(); ++c) out << "," << (m.is_removed(r, c) ? "x" : format_double(m.at(r, c)));
    out << "\n";
  }
  return out.str();
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, ',')) fields.push_back(cur);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

HeatmapMatrix heatmap_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  HeatmapMatrix m;
  bool have_format = false, have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("# title=", 0) == 0) {
      m.title = line.substr(8);
      continue;
    }
    if (line[0] == '#') {
      if (line.find(kHeatmapFormat) == std::string::npos) throw std::runtime_error("heatmap csv: unknown format");
      have_format = true;
      m.scale = line.find("scale=diverging") != std::string::npos ? ColorScale::kDiverging : ColorScale::kSequential;
      continue;
    }
    auto fields = split_csv(line);
    if (!have_header) {
      if (fields.empty() || fields[0] != "row") throw std::runtime_error("heatmap csv: missing header row");
      m.col_labels.assign(fields.begin() + 1, fields.end());
      have_header = true;
      continue;
    }
    if (fields.size() != m.cols() + 1) throw std::runtime_error("heatmap csv: ragged row '" + line + "'");
    m.row_labels.push_back(fields[0]);
    for (std::size_t c = 1; c < fields.size(); ++c) {
      const bool gone = fields[c] == "x";
      m.removed.push_back(gone);
      m.values.push_back(gone ? 0.0 : std::stod(fields[c]));
    }
  }
  if (!have_format || !have_header) throw std::runtime_error("heatmap csv: missing header");
  m.validate();
  return m;
}

namespace {

struct Rgb {
  double r, g, b;
};

Rgb mix(Rgb a, Rgb b, double t) { return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t}; }

std::string hex(Rgb c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(std::lround(c.r)), static_cast<int>(std::lround(c.g)),
                static_cast<int>(std::lround(c.b)));
  return buf;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string heatmap_to_svg(const HeatmapMatrix& m) {
  m.validate();
  constexpr int cell = 28, left = 90, top = 40, bottom = 30;
  const int width = left + static_cast<int>(m.cols()) * cell + 20;
  const int height = top + static_cast<int>(m.rows()) * cell + bottom;

  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    if (m.removed[i]) continue;
    lo = any ? std::min(lo, m.values[i]) : m.values[i];
    hi = any ? std::max(hi, m.values[i]) : m.values[i];
    any = true;
  }
  const double span = std::max(std::abs(lo), std::abs(hi));
  const Rgb white{255, 255, 255}, red{215, 48, 39}, green{26, 152, 80}, navy{8, 48, 107};
  auto color = [&](double v) {
    if (m.scale == ColorScale::kDiverging) {
      if (span == 0.0) return white;
      return v >= 0 ? mix(white, red, v / span) : mix(white, green, -v / span);
    }
    if (hi == lo) return white;
    return mix(white, navy, (v - lo) / (hi - lo));
  };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<text x=\"" << left << "\" y=\"20\" font-size=\"13\">" << escape_xml(m.title) << "</text>\n";
  for (std::size_t c = 0; c < m.cols(); ++c) {
    out << "<text x=\"" << left + static_cast<int>(c) * cell + cell / 2 << "\" y=\"" << top - 5
        << "\" text-anchor=\"middle\">" << escape_xml(m.col_labels[c]) << "</text>\n";
  }
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const int y = top + static_cast<int>(r) * cell;
    out << "<text x=\"" << left - 6 << "\" y=\"" << y + cell / 2 + 4 << "\" text-anchor=\"end\">"
        << escape_xml(m.row_labels[r]) << "</text>\n";
    for (std::size_t c = 0; c < m.cols(); ++c) {
      const int x = left + static_cast<int>(c) * cell;
      if (m.is_removed(r, c)) {
        out << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell
            << "\" fill=\"#bdbdbd\" stroke=\"#ffffff\"/>\n";
        out << "<path d=\"M" << x + 6 << " " << y + 6 << "L" << x + cell - 6 << " " << y + cell - 6 << "M"
            << x + cell - 6 << " " << y + 6 << "L" << x + 6 << " " << y + cell - 6
            << "\" stroke=\"#636363\" stroke-width=\"2\"/>\n";
      } else {
        out << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\""
            << hex(color(m.at(r, c))) << "\" stroke=\"#ffffff\"><title>" << format_double(m.at(r, c))
            << "</title></rect>\n";
      }
    }
  }
  const int legend_y = top + static_cast<int>(m.rows()) * cell + 18;
  out << "<text x=\"" << left << "\" y=\"" << legend_y << "\">" << to_string(m.scale) << " scale, range ["
      << fixed(any ? (m.scale == ColorScale::kDiverging ? -span : lo) : 0.0, 4) << ", "
      << fixed(any ? (m.scale == ColorScale::kDiverging ? span : hi) : 0.0, 4) << "]</text>\n";
  out << "</svg>\n";
  return out.str();
}

void emit_heatmap(const HeatmapMatrix& m, const std::string& csv_path, const std::string& svg_path) {
  {
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + csv_path);
    out << heatmap_to_csv(m);
  }
  if (!svg_path.empty()) {
    std::ofstream out(svg_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + svg_path);
    out << heatmap_to_svg(m);
  }
}

}  // namespace layerlens
