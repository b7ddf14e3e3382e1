#include "epg/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>

#include "epg/common.hpp"
#include "epg/eval_agg.hpp"
#include "epg/fft.hpp"

namespace epg::spectral {

PsdResult welch_psd(std::span<const float> signal, double fs, int window_len, double overlap) {
  if (fs <= 0.0) throw std::invalid_argument("welch_psd: fs must be positive");
  if (window_len < 8 || (window_len & (window_len - 1)) != 0)
    throw std::invalid_argument("welch_psd: window_len must be a power of two >= 8");
  if (static_cast<size_t>(window_len) > signal.size())
    throw std::invalid_argument("welch_psd: window longer than signal");
  if (overlap < 0.0 || overlap >= 1.0)
    throw std::invalid_argument("welch_psd: overlap must be in [0, 1)");

  const size_t n = static_cast<size_t>(window_len);
  const size_t hop = std::max<size_t>(1, n - static_cast<size_t>(std::floor(n * overlap)));
  const size_t n_freq = n / 2 + 1;

  // Periodic Hann window.
  std::vector<double> window(n);
  double u = 0.0;
  for (size_t i = 0; i < n; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n));
    u += window[i] * window[i];
  }
  const double scale = 1.0 / (fs * u);

  std::vector<double> acc(n_freq, 0.0);
  std::vector<std::complex<double>> buf(n);
  size_t n_windows = 0;
  for (size_t start = 0; start + n <= signal.size(); start += hop) {
    double mean = 0.0;
    for (size_t i = 0; i < n; ++i) mean += signal[start + i];
    mean /= static_cast<double>(n);
    for (size_t i = 0; i < n; ++i)
      buf[i] = std::complex<double>((signal[start + i] - mean) * window[i], 0.0);
    dsp::fft_inplace(buf, false);
    for (size_t k = 0; k < n_freq; ++k) {
      double p = std::norm(buf[k]) * scale;
      if (k != 0 && k != n / 2) p *= 2.0;  // one-sided
      acc[k] += p;
    }
    ++n_windows;
  }

  PsdResult out;
  out.frequencies_hz.resize(n_freq);
  out.psd.resize(n_freq);
  for (size_t k = 0; k < n_freq; ++k) {
    out.frequencies_hz[k] = static_cast<double>(k) * fs / static_cast<double>(n);
    out.psd[k] = acc[k] / static_cast<double>(n_windows);
  }
  return out;
}

Spectrum welch_log_power(const pre::Segment& segment, double fs, int window_len, double overlap) {
  PsdResult psd = welch_psd(segment.values, fs, window_len, overlap);
  Spectrum s;
  s.frequencies_hz = std::move(psd.frequencies_hz);
  s.log_power.resize(psd.psd.size());
  for (size_t i = 0; i < psd.psd.size(); ++i)
    s.log_power[i] = std::log10(std::max(psd.psd[i], 1e-12));
  s.ref.subject = segment.subject_id;
  s.ref.phase = segment.phase;
  s.ref.hour = segment.hour_index;
  s.ref.segment = segment.segment_index;
  s.ref.true_label = segment.label;
  return s;
}

std::vector<SegmentRef> select_certain(const eval::ScoreSet& scores, double threshold) {
  if (!(threshold > 0.5 && threshold < 1.0))
    throw std::invalid_argument("select_certain: threshold must be in (0.5, 1)");
  std::vector<SegmentRef> out;
  for (const auto& row : scores.rows) {
    int winner = row.p_epg >= row.p_bl ? 1 : 0;
    double conf = winner == 1 ? row.p_epg : row.p_bl;
    if (conf > threshold) {
      SegmentRef ref;
      ref.subject = row.subject;
      ref.phase = row.phase;
      ref.hour = row.hour;
      ref.segment = row.segment;
      ref.true_label = row.label;
      ref.predicted_class = winner;
      ref.confidence = conf;
      out.push_back(std::move(ref));
    }
  }
  return out;
}

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::vector<std::vector<double>> kmeanspp_seed(const std::vector<std::vector<double>>& points,
                                               int k, Rng& rng) {
  std::vector<std::vector<double>> centroids;
  centroids.push_back(points[rng.uniform_index(points.size())]);
  std::vector<double> d2(points.size());
  while (static_cast<int>(centroids.size()) < k) {
    double total = 0.0;
    for (size_t i = 0; i < points.size(); ++i) {
      double best = std::numeric_limits<double>::max();
      for (const auto& c : centroids) best = std::min(best, sq_dist(points[i], c));
      d2[i] = best;
      total += best;
    }
    size_t pick = 0;
    if (total > 0.0) {
      double r = rng.uniform() * total;
      double run = 0.0;
      for (size_t i = 0; i < points.size(); ++i) {
        run += d2[i];
        if (run >= r) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.uniform_index(points.size());
    }
    centroids.push_back(points[pick]);
  }
  return centroids;
}

}  // namespace

KmeansResult kmeans(const std::vector<std::vector<double>>& points, int k, uint64_t seed,
                    int max_iters) {
  if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
  if (points.empty() || static_cast<size_t>(k) > points.size())
    throw std::invalid_argument("kmeans: need at least k points");
  const size_t dim = points.front().size();
  for (const auto& p : points)
    if (p.size() != dim) throw std::invalid_argument("kmeans: inconsistent point dimensions");

  Rng rng(mix_key(seed, 0x6b6d65616e73ULL));
  KmeansResult res;
  res.centroids = kmeanspp_seed(points, k, rng);
  res.assignments.assign(points.size(), -1);

  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    for (size_t i = 0; i < points.size(); ++i) {
      int best = 0;
      double best_d = sq_dist(points[i], res.centroids[0]);
      for (int c = 1; c < k; ++c) {
        double d = sq_dist(points[i], res.centroids[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (res.assignments[i] != best) {
        res.assignments[i] = best;
        changed = true;
      }
    }
    res.iterations = iter + 1;
    if (!changed && iter > 0) break;

    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<int> counts(k, 0);
    for (size_t i = 0; i < points.size(); ++i) {
      int c = res.assignments[i];
      ++counts[c];
      for (size_t j = 0; j < dim; ++j) sums[c][j] += points[i][j];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // Re-seed an empty cluster at the point farthest from its centroid.
        size_t far = 0;
        double far_d = -1.0;
        for (size_t i = 0; i < points.size(); ++i) {
          double d = sq_dist(points[i], res.centroids[res.assignments[i]]);
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        res.centroids[c] = points[far];
        continue;
      }
      for (size_t j = 0; j < dim; ++j) res.centroids[c][j] = sums[c][j] / counts[c];
    }
    if (!changed) break;
  }

  res.inertia = 0.0;
  for (size_t i = 0; i < points.size(); ++i)
    res.inertia += sq_dist(points[i], res.centroids[res.assignments[i]]);
  return res;
}

std::vector<std::pair<int, double>> elbow_curve(const std::vector<std::vector<double>>& points,
                                                const std::vector<int>& k_range, int restarts,
                                                uint64_t seed) {
  std::vector<std::pair<int, double>> out;
  for (int k : k_range) {
    if (k < 1 || static_cast<size_t>(k) > points.size())
      throw std::invalid_argument("elbow_curve: k out of range [1, n]");
    double best = std::numeric_limits<double>::max();
    for (int r = 0; r < restarts; ++r) {
      auto res = kmeans(points, k, mix_key(seed, static_cast<uint64_t>(k), static_cast<uint64_t>(r)));
      best = std::min(best, res.inertia);
    }
    out.emplace_back(k, best);
  }
  return out;
}

ClusterReport cluster_spectra(const std::vector<Spectrum>& spectra, int k, uint64_t seed,
                              double band_low_hz, double band_high_hz,
                              const std::vector<int>& elbow_range) {
  if (spectra.empty()) throw std::invalid_argument("cluster_spectra: no spectra");
  const auto& freqs = spectra.front().frequencies_hz;

  std::vector<size_t> band_bins;
  for (size_t i = 0; i < freqs.size(); ++i)
    if (freqs[i] >= band_low_hz && freqs[i] <= band_high_hz) band_bins.push_back(i);
  if (band_bins.empty()) throw std::invalid_argument("cluster_spectra: empty frequency band");

  std::vector<std::vector<double>> points;
  points.reserve(spectra.size());
  for (const auto& s : spectra) {
    if (s.frequencies_hz.size() != freqs.size())
      throw std::invalid_argument("cluster_spectra: inconsistent frequency grids");
    std::vector<double> p(band_bins.size());
    for (size_t j = 0; j < band_bins.size(); ++j) p[j] = s.log_power[band_bins[j]];
    points.push_back(std::move(p));
  }

  auto km = kmeans(points, k, seed);

  ClusterReport report;
  report.k = k;
  report.assignments = km.assignments;
  report.frequencies_hz.reserve(band_bins.size());
  for (size_t b : band_bins) report.frequencies_hz.push_back(freqs[b]);

  report.clusters.assign(k, ClusterSummary{});
  for (auto& c : report.clusters) {
    c.mean_log_power.assign(band_bins.size(), 0.0);
    c.std_log_power.assign(band_bins.size(), 0.0);
  }
  std::vector<int> label1(k, 0);
  for (size_t i = 0; i < spectra.size(); ++i) {
    auto& c = report.clusters[km.assignments[i]];
    ++c.count;
    if (spectra[i].ref.true_label == 1) ++label1[km.assignments[i]];
    for (size_t j = 0; j < band_bins.size(); ++j) c.mean_log_power[j] += points[i][j];
  }
  for (int c = 0; c < k; ++c) {
    auto& cs = report.clusters[c];
    if (cs.count == 0) continue;
    for (auto& m : cs.mean_log_power) m /= cs.count;
    cs.pct_label1 = 100.0 * label1[c] / cs.count;
    cs.pct_label0 = 100.0 - cs.pct_label1;
  }
  for (size_t i = 0; i < spectra.size(); ++i) {
    auto& cs = report.clusters[km.assignments[i]];
    for (size_t j = 0; j < band_bins.size(); ++j) {
      double d = points[i][j] - cs.mean_log_power[j];
      cs.std_log_power[j] += d * d;
    }
  }
  for (auto& cs : report.clusters) {
    if (cs.count == 0) continue;
    for (auto& s : cs.std_log_power) s = std::sqrt(s / cs.count);
  }

  if (!elbow_range.empty()) report.elbow = elbow_curve(points, elbow_range, 5, seed);
  return report;
}

}  // namespace epg::spectral
