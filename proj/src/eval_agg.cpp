#include "epg/eval_agg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace epg::eval {

void write_scores_csv(const ScoreSet& scores, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << "subject,phase,hour,segment,p_bl,p_epg,label\n";
  char line[256];
  for (const auto& r : scores.rows) {
    std::snprintf(line, sizeof(line), "%s,%s,%d,%d,%.9g,%.9g,%d\n", r.subject.c_str(),
                  io::to_string(r.phase), r.hour, r.segment, r.p_bl, r.p_epg,
                  static_cast<int>(r.label));
    out << line;
  }
}

ScoreSet read_scores_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scores CSV: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("scores CSV is empty: " + path.string());
  ScoreSet scores;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 7)
      throw std::runtime_error("scores CSV line " + std::to_string(line_no) + ": expected 7 fields");
    ScoreRow r;
    r.subject = fields[0];
    r.phase = io::phase_from_string(fields[1]);
    r.hour = std::stoi(fields[2]);
    r.segment = std::stoi(fields[3]);
    r.p_bl = std::stof(fields[4]);
    r.p_epg = std::stof(fields[5]);
    r.label = static_cast<uint8_t>(std::stoi(fields[6]));
    scores.rows.push_back(std::move(r));
  }
  return scores;
}

ScoreSet score_segments(net::Model& model, const std::vector<pre::Segment>& segments,
                        int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("score_segments: batch_size must be >= 1");
  ad::tune_allocator_for_graphs();
  model.mode = net::Mode::Eval;
  const int64_t seg_len = model.config.input_len;

  ScoreSet scores;
  scores.rows.reserve(segments.size());
  for (size_t start = 0; start < segments.size(); start += batch_size) {
    const size_t n = std::min<size_t>(batch_size, segments.size() - start);
    ad::Tensor batch({static_cast<int64_t>(n), seg_len, 1});
    for (size_t i = 0; i < n; ++i) {
      const auto& seg = segments[start + i];
      if (static_cast<int64_t>(seg.values.size()) != seg_len)
        throw std::invalid_argument("score_segments: segment length does not match model input");
      std::copy(seg.values.begin(), seg.values.end(), batch.data.begin() + i * seg_len);
    }
    ad::Tensor probs = model.forward_probs(batch);
    for (size_t i = 0; i < n; ++i) {
      const auto& seg = segments[start + i];
      ScoreRow r;
      r.subject = seg.subject_id;
      r.phase = seg.phase;
      r.hour = seg.hour_index;
      r.segment = seg.segment_index;
      r.p_bl = probs.data[i * 2 + 0];
      r.p_epg = probs.data[i * 2 + 1];
      r.label = static_cast<uint8_t>(seg.label);
      scores.rows.push_back(std::move(r));
    }
  }
  return scores;
}

std::vector<AggregatedScore> aggregate(const ScoreSet& scores, double window_seconds,
                                       double seg_seconds) {
  if (window_seconds < seg_seconds)
    throw std::invalid_argument("aggregate: window must be at least one segment long");
  const double ratio = window_seconds / seg_seconds;
  const int expected = static_cast<int>(std::llround(ratio));
  if (std::abs(ratio - expected) > 1e-9)
    throw std::invalid_argument("aggregate: window must be a whole number of segments");

  // Windows never span two subjects, two hours, or the phase boundary.
  struct Key {
    std::string subject;
    io::Phase phase;
    int hour;
    int window;
    bool operator<(const Key& o) const {
      return std::tie(subject, phase, hour, window) <
             std::tie(o.subject, o.phase, o.hour, o.window);
    }
  };
  struct Acc {
    double p_bl = 0.0, p_epg = 0.0;
    int n = 0;
    uint8_t label = 0;
  };
  std::map<Key, Acc> windows;
  for (const auto& r : scores.rows) {
    Key key{r.subject, r.phase, r.hour, r.segment / expected};
    auto& acc = windows[key];
    acc.p_bl += r.p_bl;
    acc.p_epg += r.p_epg;
    ++acc.n;
    acc.label = r.label;
  }

  std::vector<AggregatedScore> out;
  out.reserve(windows.size());
  for (const auto& [key, acc] : windows) {
    double total = acc.p_bl + acc.p_epg;
    if (total <= 0.0) continue;  // empty window: skipped
    AggregatedScore w;
    w.subject = key.subject;
    w.phase = key.phase;
    w.hour = key.hour;
    w.window_index = key.window;
    w.window_seconds = window_seconds;
    w.n_segments = acc.n;
    w.expected_segments = expected;
    w.p_bl = acc.p_bl / total;
    w.p_epg = acc.p_epg / total;
    w.label = acc.label;
    w.low_coverage = acc.n < (expected + 1) / 2;
    out.push_back(std::move(w));
  }
  return out;
}

RocResult roc_auc(const std::vector<std::pair<double, int>>& score_label) {
  int64_t n_pos = 0, n_neg = 0;
  for (const auto& [s, y] : score_label) (y == 1 ? n_pos : n_neg) += 1;
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument("roc_auc: both classes must be present");

  std::vector<std::pair<double, int>> sorted = score_label;
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });

  RocResult roc;
  roc.thresholds.push_back(std::numeric_limits<double>::infinity());
  roc.tpr.push_back(0.0);
  roc.fpr.push_back(0.0);

  int64_t tp = 0, fp = 0;
  double auc_area = 0.0;  // in units of pos*neg pairs
  size_t i = 0;
  while (i < sorted.size()) {
    double score = sorted[i].first;
    int64_t tied_pos = 0, tied_neg = 0;
    while (i < sorted.size() && sorted[i].first == score) {
      (sorted[i].second == 1 ? tied_pos : tied_neg) += 1;
      ++i;
    }
    // Trapezoid over the tie group: diagonal step credits half the ties.
    auc_area += static_cast<double>(tied_neg) * (static_cast<double>(tp) + tied_pos / 2.0);
    tp += tied_pos;
    fp += tied_neg;
    roc.thresholds.push_back(score);
    roc.tpr.push_back(static_cast<double>(tp) / static_cast<double>(n_pos));
    roc.fpr.push_back(static_cast<double>(fp) / static_cast<double>(n_neg));
  }
  roc.auc = auc_area / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
  return roc;
}

SenSpe sen_spe(const std::vector<std::pair<double, int>>& score_label, double threshold) {
  if (!std::isfinite(threshold)) throw std::invalid_argument("sen_spe: threshold must be finite");
  int64_t tp = 0, fn = 0, tn = 0, fp = 0;
  for (const auto& [s, y] : score_label) {
    bool pred_pos = s >= threshold;
    if (y == 1)
      (pred_pos ? tp : fn) += 1;
    else
      (pred_pos ? fp : tn) += 1;
  }
  SenSpe out;
  if (tp + fn > 0) out.sensitivity = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (tn + fp > 0) out.specificity = static_cast<double>(tn) / static_cast<double>(tn + fp);
  return out;
}

std::vector<SweepRow> aggregation_sweep(const ScoreSet& scores,
                                        const std::vector<double>& windows_seconds, bool pooled,
                                        double seg_seconds) {
  if (windows_seconds.empty()) throw std::invalid_argument("aggregation_sweep: no windows");

  std::vector<SweepRow> rows;
  for (double window : windows_seconds) {
    auto aggregated = aggregate(scores, window, seg_seconds);
    std::map<std::string, std::vector<std::pair<double, int>>> per_fold;
    for (const auto& w : aggregated)
      per_fold[w.subject].emplace_back(w.p_epg, static_cast<int>(w.label));

    SweepRow row;
    row.window_seconds = window;
    if (pooled) {
      std::vector<std::pair<double, int>> all;
      for (auto& [subject, sl] : per_fold) all.insert(all.end(), sl.begin(), sl.end());
      row.mean_auc = roc_auc(all).auc;
      row.std_auc = 0.0;
      row.n_folds = static_cast<int>(per_fold.size());
    } else {
      std::vector<double> aucs;
      for (auto& [subject, sl] : per_fold) aucs.push_back(roc_auc(sl).auc);
      double mean = 0.0;
      for (double a : aucs) mean += a;
      mean /= static_cast<double>(aucs.size());
      double var = 0.0;
      for (double a : aucs) var += (a - mean) * (a - mean);
      row.mean_auc = mean;
      row.std_auc = aucs.size() > 1 ? std::sqrt(var / static_cast<double>(aucs.size() - 1)) : 0.0;
      row.n_folds = static_cast<int>(aucs.size());
    }
    rows.push_back(row);
  }
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << "window_s,mean_auc,std_auc\n";
  char line[128];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%.9g,%.9g,%.9g\n", r.window_seconds, r.mean_auc, r.std_auc);
    out << line;
  }
}

CohensD cohens_d(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2)
    throw std::invalid_argument("cohens_d: need at least two values per sample");
  auto mean_of = [](std::span<const double> s) {
    double m = 0.0;
    for (double v : s) m += v;
    return m / static_cast<double>(s.size());
  };
  auto ss_of = [](std::span<const double> s, double m) {
    double ss = 0.0;
    for (double v : s) ss += (v - m) * (v - m);
    return ss;
  };
  const double ma = mean_of(a), mb = mean_of(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double pooled_var = (ss_of(a, ma) + ss_of(b, mb)) / (na + nb - 2.0);
  CohensD out;
  if (pooled_var <= 0.0) return out;  // undefined
  out.d = (ma - mb) / std::sqrt(pooled_var);
  out.defined = true;
  return out;
}

namespace {

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

// Midranks of the pooled sample; also returns the tie-group sizes.
std::vector<double> midranks(const std::vector<double>& pooled, std::vector<int64_t>& tie_sizes) {
  const size_t n = pooled.size();
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&pooled](size_t i, size_t j) { return pooled[i] < pooled[j]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && pooled[order[j]] == pooled[order[i]]) ++j;
    double rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (size_t k = i; k < j; ++k) ranks[order[k]] = rank;
    if (j - i > 1) tie_sizes.push_back(static_cast<int64_t>(j - i));
    i = j;
  }
  return ranks;
}

double u_from_ranks(const std::vector<double>& ranks, const std::vector<size_t>& a_idx) {
  double rank_sum = 0.0;
  for (size_t i : a_idx) rank_sum += ranks[i];
  double na = static_cast<double>(a_idx.size());
  return rank_sum - na * (na + 1.0) / 2.0;
}

}  // namespace

RankSumResult rank_sum_test(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty())
    throw std::invalid_argument("rank_sum_test: both samples must be nonempty");
  const size_t na = a.size(), nb = b.size(), n = na + nb;

  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::vector<int64_t> tie_sizes;
  std::vector<double> ranks = midranks(pooled, tie_sizes);

  std::vector<size_t> a_idx(na);
  for (size_t i = 0; i < na; ++i) a_idx[i] = i;
  RankSumResult res;
  res.u = u_from_ranks(ranks, a_idx);
  const double mu = static_cast<double>(na) * static_cast<double>(nb) / 2.0;

  if (n <= 12) {
    // Exact permutation distribution of U over all assignments.
    res.exact = true;
    const double observed = std::abs(res.u - mu);
    int64_t total = 0, at_least = 0;
    std::vector<size_t> comb(na);
    for (size_t i = 0; i < na; ++i) comb[i] = i;
    while (true) {
      double u = u_from_ranks(ranks, comb);
      ++total;
      if (std::abs(u - mu) >= observed - 1e-12) ++at_least;
      // next lexicographic combination
      int64_t k = static_cast<int64_t>(na) - 1;
      while (k >= 0 && comb[k] == n - na + k) --k;
      if (k < 0) break;
      ++comb[k];
      for (size_t j = k + 1; j < na; ++j) comb[j] = comb[j - 1] + 1;
    }
    res.p = static_cast<double>(at_least) / static_cast<double>(total);
    return res;
  }

  double tie_term = 0.0;
  for (int64_t t : tie_sizes) tie_term += static_cast<double>(t) * t * t - t;
  const double nn = static_cast<double>(n);
  double var = (static_cast<double>(na) * nb / 12.0) *
               ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
  if (var <= 0.0) {
    res.p = 1.0;  // everything tied
    return res;
  }
  double diff = res.u - mu;
  double cc = diff > 0 ? -0.5 : (diff < 0 ? 0.5 : 0.0);  // continuity correction
  double z = (diff + cc) / std::sqrt(var);
  res.p = std::min(1.0, 2.0 * normal_sf(std::abs(z)));
  return res;
}

namespace {

// Continued fraction for the regularized incomplete beta (Lentz's method).
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16;
  constexpr double kFpMin = 1e-300;

  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double ibeta_reg(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  double ln_pre = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                  b * std::log1p(-x);
  double pre = std::exp(ln_pre);
  if (x < (a + 1.0) / (a + b + 2.0)) return pre * betacf(a, b, x) / a;
  return 1.0 - pre * betacf(b, a, 1.0 - x) / b;
}

AnovaResult anova_f(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2)
    throw std::invalid_argument("anova_f: need at least two values per group");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  auto mean_of = [](std::span<const double> s) {
    double m = 0.0;
    for (double v : s) m += v;
    return m / static_cast<double>(s.size());
  };
  auto ss_of = [](std::span<const double> s, double m) {
    double ss = 0.0;
    for (double v : s) ss += (v - m) * (v - m);
    return ss;
  };
  const double ma = mean_of(a), mb = mean_of(b);
  const double grand = (na * ma + nb * mb) / (na + nb);
  const double ss_between = na * (ma - grand) * (ma - grand) + nb * (mb - grand) * (mb - grand);
  const double ss_within = ss_of(a, ma) + ss_of(b, mb);
  const double df_between = 1.0;
  const double df_within = na + nb - 2.0;

  AnovaResult res;
  if (ss_within <= 0.0) {
    if (ss_between <= 0.0) {
      res.degenerate = true;  // identical constant groups
      res.f = 0.0;
      res.p = 1.0;
      return res;
    }
    res.f = std::numeric_limits<double>::infinity();
    res.p = 0.0;
    return res;
  }
  res.f = (ss_between / df_between) / (ss_within / df_within);
  // Survival function of F(d1, d2).
  res.p = ibeta_reg(df_within / 2.0, df_between / 2.0,
                    df_within / (df_within + df_between * res.f));
  return res;
}

AveragedRoc average_roc(const std::vector<RocResult>& curves, int grid_points) {
  if (curves.empty()) throw std::invalid_argument("average_roc: no curves");
  if (grid_points < 2) throw std::invalid_argument("average_roc: need at least two grid points");
  AveragedRoc out;
  out.fpr.resize(grid_points);
  out.tpr.assign(grid_points, 0.0);
  for (int g = 0; g < grid_points; ++g)
    out.fpr[g] = static_cast<double>(g) / static_cast<double>(grid_points - 1);

  for (const auto& roc : curves) {
    for (int g = 0; g < grid_points; ++g) {
      double x = out.fpr[g];
      // Linear interpolation along the fold's ROC polyline.
      double tpr = 1.0;
      for (size_t i = 1; i < roc.fpr.size(); ++i) {
        if (roc.fpr[i] >= x) {
          double x0 = roc.fpr[i - 1], x1 = roc.fpr[i];
          double y0 = roc.tpr[i - 1], y1 = roc.tpr[i];
          tpr = (x1 > x0) ? y0 + (y1 - y0) * (x - x0) / (x1 - x0) : std::max(y0, y1);
          break;
        }
      }
      out.tpr[g] += tpr;
    }
  }
  for (auto& t : out.tpr) t /= static_cast<double>(curves.size());
  return out;
}

}  // namespace epg::eval
