#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "epg/eeg_io.hpp"
#include "epg/preprocess.hpp"

namespace epg::eval {
struct ScoreSet;
}

namespace epg::spectral {

struct SegmentRef {
  std::string subject;
  io::Phase phase = io::Phase::BL;
  int hour = 0;
  int segment = 0;
  int true_label = 0;
  int predicted_class = 0;
  double confidence = 0.0;
};

struct Spectrum {
  std::vector<double> frequencies_hz;
  std::vector<double> log_power;  // log10 of PSD, floored at 1e-12
  SegmentRef ref;
};

struct PsdResult {
  std::vector<double> frequencies_hz;
  std::vector<double> psd;  // one-sided density, unit^2 per Hz
};

// Welch averaged periodogram: Hann window, per-window mean removal,
// density scaling. window_len must be a power of two and fit the signal.
PsdResult welch_psd(std::span<const float> signal, double fs, int window_len = 512,
                    double overlap = 0.5);

Spectrum welch_log_power(const pre::Segment& segment, double fs = 512.0, int window_len = 512,
                         double overlap = 0.5);

// Segments whose winning-class softmax probability exceeds the threshold.
std::vector<SegmentRef> select_certain(const eval::ScoreSet& scores, double threshold = 0.999);

struct KmeansResult {
  std::vector<int> assignments;
  std::vector<std::vector<double>> centroids;
  double inertia = 0.0;
  int iterations = 0;
};

// Lloyd iterations with k-means++ seeding; stops when assignments are stable
// or after max_iters.
KmeansResult kmeans(const std::vector<std::vector<double>>& points, int k, uint64_t seed,
                    int max_iters = 300);

// Best-of-`restarts` inertia for every k in k_range.
std::vector<std::pair<int, double>> elbow_curve(const std::vector<std::vector<double>>& points,
                                                const std::vector<int>& k_range, int restarts = 5,
                                                uint64_t seed = 0);

struct ClusterSummary {
  int count = 0;
  double pct_label0 = 0.0;  // true-label percentages, sum to 100 per cluster
  double pct_label1 = 0.0;
  std::vector<double> mean_log_power;
  std::vector<double> std_log_power;
};

struct ClusterReport {
  int k = 0;
  std::vector<int> assignments;
  std::vector<ClusterSummary> clusters;
  std::vector<double> frequencies_hz;  // band-restricted grid used for clustering
  std::vector<std::pair<int, double>> elbow;
};

// Restricts spectra to [band_low, band_high], clusters them, and summarizes
// per-cluster class mix and mean spectra. elbow_range may be empty.
ClusterReport cluster_spectra(const std::vector<Spectrum>& spectra, int k, uint64_t seed,
                              double band_low_hz = 0.5, double band_high_hz = 160.0,
                              const std::vector<int>& elbow_range = {});

}  // namespace epg::spectral
