#include "ssk/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <boost/math/distributions/students_t.hpp>

#include "ssk/log.hpp"
#include "ssk/rng.hpp"

namespace ssk {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes) : c_(num_classes), counts_(num_classes * num_classes, 0) {
  if (num_classes == 0) throw std::invalid_argument("ConfusionMatrix: zero classes");
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t s = 0;
  for (auto v : counts_) s += v;
  return s;
}

void ConfusionMatrix::accumulate(std::span<const std::uint8_t> gt, std::span<const std::uint8_t> pred) {
  if (gt.size() != pred.size()) {
    throw std::invalid_argument("ConfusionMatrix: " + std::to_string(gt.size()) + " annotated vs " +
                                std::to_string(pred.size()) + " predicted pixels");
  }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] >= c_ || pred[i] >= c_) {
      throw std::invalid_argument("ConfusionMatrix: class index " + std::to_string(std::max(gt[i], pred[i])) +
                                  " >= " + std::to_string(c_));
    }
  }
  for (std::size_t i = 0; i < gt.size(); ++i) ++counts_[gt[i] * c_ + pred[i]];
}

void ConfusionMatrix::accumulate(const MaskFrame& gt, const MaskFrame& pred) {
  if (gt.width != pred.width || gt.height != pred.height) {
    throw std::invalid_argument("ConfusionMatrix: resolution mismatch " + std::to_string(gt.width) + "x" +
                                std::to_string(gt.height) + " vs " + std::to_string(pred.width) + "x" +
                                std::to_string(pred.height));
  }
  accumulate(gt.labels, pred.labels);
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.c_ != c_) throw std::invalid_argument("ConfusionMatrix::merge: class count mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

IouResult mean_iou(const ConfusionMatrix& cm, bool exclude_background) {
  const std::size_t C = cm.num_classes();
  IouResult r;
  r.per_class.assign(C, kNaN);
  r.included.assign(C, false);
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < C; ++i) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < C; ++j) {
      row += cm(i, j);
      col += cm(j, i);
    }
    const std::uint64_t uni = row + col - cm(i, i);
    if (uni == 0) continue;
    r.per_class[i] = double(cm(i, i)) / double(uni);
    if (exclude_background && i == 0) continue;
    r.included[i] = true;
    sum += r.per_class[i];
    ++n;
  }
  if (n == 0) throw std::invalid_argument("mean_iou: no included class has a nonzero union");
  r.miou = sum / double(n);
  return r;
}

std::vector<double> temporal_improvement_profile(const std::vector<std::vector<double>>& model,
                                                 const std::vector<std::vector<double>>& baseline) {
  if (model.size() != baseline.size() || model.empty()) {
    throw std::invalid_argument("temporal_improvement_profile: clip counts differ or are zero");
  }
  const std::size_t T = model.front().size();
  std::vector<double> sum(T, 0.0);
  std::vector<std::size_t> n(T, 0);
  for (std::size_t c = 0; c < model.size(); ++c) {
    if (model[c].size() != T || baseline[c].size() != T) {
      throw std::invalid_argument("temporal_improvement_profile: clip " + std::to_string(c) +
                                  " has a different frame count");
    }
    for (std::size_t t = 0; t < T; ++t) {
      const double d = model[c][t] - baseline[c][t];
      if (std::isnan(d)) continue;
      sum[t] += d;
      ++n[t];
    }
  }
  for (std::size_t t = 0; t < T; ++t) sum[t] = n[t] ? sum[t] / double(n[t]) : kNaN;
  return sum;
}

SignificanceResult grouped_significance(std::span<const double> a, std::span<const double> b, double alpha,
                                        Tail tail) {
  if (a.size() != b.size()) throw std::invalid_argument("grouped_significance: unpaired group vectors");
  if (a.size() < 2) throw std::invalid_argument("grouped_significance: need at least 2 groups");
  const std::size_t G = a.size();
  std::vector<double> d(G);
  double mean = 0;
  for (std::size_t i = 0; i < G; ++i) mean += (d[i] = a[i] - b[i]);
  mean /= double(G);
  double ss = 0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / double(G - 1));

  SignificanceResult r;
  r.mean_diff = mean;
  r.df = G - 1;
  if (tail != Tail::TwoSided) r.test = tail == Tail::Greater ? "paired t-test (one-sided, a > b)"
                                                             : "paired t-test (one-sided, a < b)";
  const bool all_zero = std::all_of(d.begin(), d.end(), [](double v) { return v == 0.0; });
  if (all_zero) {
    r.p_value = 1.0;
  } else if (sd == 0.0) {
    r.t_stat = mean > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    const bool against = (tail == Tail::Greater && mean < 0) || (tail == Tail::Less && mean > 0);
    r.p_value = against ? 1.0 : 0.0;
  } else {
    r.t_stat = mean / (sd / std::sqrt(double(G)));
    const boost::math::students_t dist(double(r.df));
    switch (tail) {
      case Tail::TwoSided:
        r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t_stat)));
        break;
      case Tail::Greater:
        r.p_value = boost::math::cdf(boost::math::complement(dist, r.t_stat));
        break;
      case Tail::Less:
        r.p_value = boost::math::cdf(dist, r.t_stat);
        break;
    }
  }
  r.significant = r.p_value < alpha;
  return r;
}

std::vector<SubjectRow> per_subject_report(const std::vector<std::pair<std::string, double>>& results) {
  std::vector<SubjectRow> rows;
  std::vector<std::vector<double>> values;
  for (const auto& [subject, v] : results) {
    auto it = std::find_if(rows.begin(), rows.end(), [&](const SubjectRow& r) { return r.subject == subject; });
    std::size_t idx = it - rows.begin();
    if (it == rows.end()) {
      rows.push_back({subject});
      values.emplace_back();
    }
    if (!std::isnan(v)) values[idx].push_back(v);
  }
  std::vector<SubjectRow> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& v = values[i];
    if (v.empty()) {
      log_warn("per_subject_report: subject '" + rows[i].subject + "' has no scored frames; skipped");
      continue;
    }
    SubjectRow r = rows[i];
    r.frames = v.size();
    for (double x : v) r.mean += x;
    r.mean /= double(v.size());
    double ss = 0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.stddev = std::sqrt(ss / double(v.size()));
    out.push_back(r);
  }
  return out;
}

std::vector<std::vector<std::string>> group_split(std::vector<std::string> clip_ids, std::size_t groups,
                                                  std::uint64_t seed) {
  if (groups == 0 || groups > clip_ids.size()) {
    throw std::invalid_argument("group_split: cannot split " + std::to_string(clip_ids.size()) + " clips into " +
                                std::to_string(groups) + " groups");
  }
  std::stable_sort(clip_ids.begin(), clip_ids.end());
  Rng rng(seed);
  rng.shuffle(clip_ids);
  std::vector<std::vector<std::string>> out(groups);
  const std::size_t base = clip_ids.size() / groups, extra = clip_ids.size() % groups;
  std::size_t k = 0;
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t n = base + (g < extra ? 1 : 0);
    for (std::size_t i = 0; i < n; ++i) out[g].push_back(clip_ids[k++]);
  }
  return out;
}

namespace {

std::string pct(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(2) << 100.0 * v;
  return ss.str();
}

std::vector<std::vector<std::string>> table_cells(const std::vector<std::pair<std::string, IouResult>>& rows,
                                                  std::span<const std::string_view> names) {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"model", "mIoU"};
  for (auto n : names) header.emplace_back(n);
  cells.push_back(header);
  for (const auto& [label, r] : rows) {
    if (r.per_class.size() != names.size()) {
      throw std::invalid_argument("iou table: result for '" + label + "' has " +
                                  std::to_string(r.per_class.size()) + " classes, expected " +
                                  std::to_string(names.size()));
    }
    std::vector<std::string> line{label, pct(r.miou)};
    for (double v : r.per_class) line.push_back(pct(v));
    cells.push_back(line);
  }
  return cells;
}

}  // namespace

std::string iou_table_csv(const std::vector<std::pair<std::string, IouResult>>& rows,
                          std::span<const std::string_view> class_names) {
  std::ostringstream out;
  for (const auto& line : table_cells(rows, class_names)) {
    for (std::size_t i = 0; i < line.size(); ++i) out << (i ? "," : "") << line[i];
    out << '\n';
  }
  return out.str();
}

std::string iou_table_ascii(const std::vector<std::pair<std::string, IouResult>>& rows,
                            std::span<const std::string_view> class_names) {
  const auto cells = table_cells(rows, class_names);
  std::vector<std::size_t> width(cells.front().size(), 0);
  for (const auto& line : cells)
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  std::ostringstream out;
  auto rule = [&] {
    for (auto w : width) out << '+' << std::string(w + 2, '-');
    out << "+\n";
  };
  rule();
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t i = 0; i < cells[r].size(); ++i) {
      out << "| " << (i == 0 ? std::left : std::right) << std::setw(int(width[i])) << cells[r][i] << ' ';
    }
    out << "|\n";
    if (r == 0) rule();
  }
  rule();
  return out.str();
}

nlohmann::json to_json(const IouResult& r, std::span<const std::string_view> class_names) {
  nlohmann::json j;
  j["miou"] = r.miou;
  j["per_class"] = nlohmann::json::object();
  for (std::size_t i = 0; i < r.per_class.size(); ++i) {
    const std::string key = i < class_names.size() ? std::string(class_names[i]) : std::to_string(i);
    j["per_class"][key] = std::isnan(r.per_class[i]) ? nlohmann::json(nullptr) : nlohmann::json(r.per_class[i]);
  }
  return j;
}

nlohmann::json to_json(const SignificanceResult& r) {
  return {{"test", r.test},
          {"p_value", r.p_value},
          {"t_stat", std::isfinite(r.t_stat) ? nlohmann::json(r.t_stat) : nlohmann::json(nullptr)},
          {"mean_diff", r.mean_diff},
          {"df", r.df},
          {"significant", r.significant}};
}

}  // namespace ssk
