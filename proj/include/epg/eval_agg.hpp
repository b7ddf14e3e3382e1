#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "epg/eeg_io.hpp"
#include "epg/model.hpp"
#include "epg/preprocess.hpp"

namespace epg::eval {

// One softmax pair per scored segment, with provenance.
struct ScoreRow {
  std::string subject;
  io::Phase phase = io::Phase::BL;
  int hour = 0;
  int segment = 0;
  float p_bl = 0.0f;
  float p_epg = 0.0f;
  uint8_t label = 0;
};

struct ScoreSet {
  std::vector<ScoreRow> rows;
};

// CSV with header subject,phase,hour,segment,p_bl,p_epg,label.
void write_scores_csv(const ScoreSet& scores, const std::filesystem::path& path);
ScoreSet read_scores_csv(const std::filesystem::path& path);

// Eval-mode scoring of a segment list; deterministic.
ScoreSet score_segments(net::Model& model, const std::vector<pre::Segment>& segments,
                        int batch_size = 64);

struct AggregatedScore {
  std::string subject;
  io::Phase phase = io::Phase::BL;
  int hour = 0;
  int window_index = 0;
  double window_seconds = 0.0;
  int n_segments = 0;
  int expected_segments = 0;
  double p_bl = 0.0;
  double p_epg = 0.0;
  uint8_t label = 0;
  bool low_coverage = false;  // fewer than half the expected segments survived
};

// Sums softmax pairs over aligned non-overlapping windows within each
// (subject, phase, hour) timeline and renormalizes the pair to sum to 1.
std::vector<AggregatedScore> aggregate(const ScoreSet& scores, double window_seconds,
                                       double seg_seconds = 5.0);

struct RocResult {
  std::vector<double> thresholds;
  std::vector<double> tpr;
  std::vector<double> fpr;
  double auc = 0.0;
};

// Threshold sweep over distinct scores; AUC by trapezoid, which equals the
// Mann-Whitney statistic U/(n+ * n-) including tie credit.
RocResult roc_auc(const std::vector<std::pair<double, int>>& score_label);

struct SenSpe {
  std::optional<double> sensitivity;
  std::optional<double> specificity;
};

// EPG (label 1) is the positive class; predicted positive when score >= threshold.
SenSpe sen_spe(const std::vector<std::pair<double, int>>& score_label, double threshold);

struct SweepRow {
  double window_seconds = 0.0;
  double mean_auc = 0.0;
  double std_auc = 0.0;
  int n_folds = 0;
};

// For each window: aggregate, then AUC per fold (= per subject); mean/std
// across folds. pooled=true computes one AUC over all folds' scores instead.
std::vector<SweepRow> aggregation_sweep(const ScoreSet& scores,
                                        const std::vector<double>& windows_seconds,
                                        bool pooled = false, double seg_seconds = 5.0);
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);

struct CohensD {
  double d = 0.0;
  bool defined = false;  // false when the pooled variance is zero
};
CohensD cohens_d(std::span<const double> a, std::span<const double> b);

struct RankSumResult {
  double u = 0.0;  // Mann-Whitney U for sample a, with midrank tie handling
  double p = 1.0;  // two-sided
  bool exact = false;
};
// Exact permutation enumeration when na+nb <= 12, else normal approximation
// with tie-corrected variance and continuity correction.
RankSumResult rank_sum_test(std::span<const double> a, std::span<const double> b);

struct AnovaResult {
  double f = 0.0;
  double p = 1.0;
  bool degenerate = false;  // zero within-group variance with equal means
};
AnovaResult anova_f(std::span<const double> a, std::span<const double> b);

// Vertical ROC averaging over a uniform FPR grid.
struct AveragedRoc {
  std::vector<double> fpr;
  std::vector<double> tpr;
};
AveragedRoc average_roc(const std::vector<RocResult>& curves, int grid_points = 101);

// Regularized incomplete beta function (used for F-distribution tails);
// exposed for direct verification.
double ibeta_reg(double a, double b, double x);

}  // namespace epg::eval
