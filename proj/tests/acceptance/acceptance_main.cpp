// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Criteria 4 and 5 share a single leave-one-out training run on a
// synthetic dataset; everything else is property-based against independent
// oracles.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <vector>

#include "epg/common.hpp"
#include "epg/eval_agg.hpp"
#include "epg/gradcheck.hpp"
#include "epg/model.hpp"
#include "epg/preprocess.hpp"
#include "epg/spectral.hpp"
#include "epg/synthgen.hpp"
#include "epg/train.hpp"
#include "../support/metrics.hpp"

using namespace epg;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, const char* name, bool pass, const std::string& detail,
            double seconds) {
  std::printf("%s criterion %2d (%s): %s  [%.1f s]\n", pass ? "PASS" : "FAIL", criterion, name,
              detail.c_str(), seconds);
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double run_timed(const std::function<bool(std::string&)>& body, int criterion, const char* name) {
  auto start = std::chrono::steady_clock::now();
  std::string detail;
  bool pass = false;
  try {
    pass = body(detail);
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
  }
  double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  report(criterion, name, pass, detail, seconds);
  return seconds;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// ---- criterion 1: shape oracle ----
bool shape_oracle(std::string& detail) {
  net::NetConfig cfg;
  auto model = net::Model::build(cfg, 1);
  auto rows = model.describe();
  const std::vector<int64_t> expect_len = {2560, 2560, 1280, 1280, 640, 640, 320, 320,
                                           160,  160,  80,   80,   40,  40,  20,  20};
  const std::vector<int64_t> expect_ch = {16, 16, 16, 16, 16, 32, 32, 32,
                                          32, 64, 64, 64, 64, 128, 128, 128};
  if (rows.size() != 17) {
    detail = "expected 17 rows, got " + std::to_string(rows.size());
    return false;
  }
  for (size_t i = 0; i < 16; ++i) {
    if (rows[i].out_len != expect_len[i] || rows[i].out_channels != expect_ch[i]) {
      detail = "row " + rows[i].name + ": got [" + std::to_string(rows[i].out_len) + ",1," +
               std::to_string(rows[i].out_channels) + "]";
      return false;
    }
  }
  if (rows.back().out_len != 2) {
    detail = "dense output " + std::to_string(rows.back().out_len);
    return false;
  }
  // Every populated published cell appears at its place in the cascade.
  for (int64_t cell : {2560, 1280, 640, 320, 160, 80, 40, 20}) {
    bool found = false;
    for (size_t i = 0; i < 16; ++i) found = found || rows[i].out_len == cell;
    if (!found) {
      detail = "length cell " + std::to_string(cell) + " missing";
      return false;
    }
  }
  for (int64_t cell : {16, 32, 64, 128}) {
    bool found = false;
    for (size_t i = 0; i < 16; ++i) found = found || rows[i].out_channels == cell;
    if (!found) {
      detail = "channel cell " + std::to_string(cell) + " missing";
      return false;
    }
  }
  detail = "all 16 stage shapes + dense output match exactly";
  return true;
}

// ---- criterion 2: gradient suite ----
bool gradient_suite(std::string& detail) {
  auto reports = ad::run_gradient_checks();
  double worst = 0.0;
  std::string worst_name;
  for (const auto& r : reports) {
    if (r.max_rel_error / r.tolerance > worst) {
      worst = r.max_rel_error / r.tolerance;
      worst_name = r.name;
    }
    if (!r.pass) {
      detail = r.name + " max rel err " + std::to_string(r.max_rel_error) + " exceeds " +
               std::to_string(r.tolerance);
      return false;
    }
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%zu checks passed; worst %s at %.0f%% of tolerance",
                reports.size(), worst_name.c_str(), 100.0 * worst);
  detail = buf;
  return true;
}

// ---- criterion 3: aggregation oracle ----
bool aggregation_oracle(std::string& detail) {
  Rng rng(0x0a99);
  const double eps = 0.02;
  const int windows_per_class = 10000;
  double worst_gap = 0.0;
  char worst[96] = "";

  for (double d : {0.1, 0.2, 0.5}) {
    for (int n : {1, 12, 24, 720}) {
      std::vector<std::pair<double, int>> aggregated;
      aggregated.reserve(2 * windows_per_class);
      const int batch_windows = std::max(1, 4000 / n) * 1;  // bound rows per batch
      int produced = 0;
      while (produced < windows_per_class) {
        int todo = std::min(batch_windows, windows_per_class - produced);
        eval::ScoreSet scores;
        scores.rows.reserve(static_cast<size_t>(2 * todo * n));
        for (int w = 0; w < todo; ++w) {
          for (int i = 0; i < n; ++i) {
            eval::ScoreRow r0;
            r0.subject = "mc";
            r0.phase = io::Phase::BL;
            r0.hour = w;
            r0.segment = i;
            double p0 = std::clamp(0.5 + eps * rng.normal(), 0.0, 1.0);
            r0.p_epg = static_cast<float>(p0);
            r0.p_bl = static_cast<float>(1.0 - p0);
            r0.label = 0;
            scores.rows.push_back(r0);

            eval::ScoreRow r1 = r0;
            r1.phase = io::Phase::EPG;
            double p1 = std::clamp(0.5 + eps * (rng.normal() + d), 0.0, 1.0);
            r1.p_epg = static_cast<float>(p1);
            r1.p_bl = static_cast<float>(1.0 - p1);
            r1.label = 1;
            scores.rows.push_back(r1);
          }
        }
        for (const auto& w : eval::aggregate(scores, n * 5.0))
          aggregated.emplace_back(w.p_epg, static_cast<int>(w.label));
        produced += todo;
      }
      double auc = eval::roc_auc(aggregated).auc;
      double expected = normal_cdf(d * std::sqrt(static_cast<double>(n)) / std::sqrt(2.0));
      double gap = std::abs(auc - expected);
      if (gap > worst_gap) {
        worst_gap = gap;
        std::snprintf(worst, sizeof(worst), "d=%.1f N=%d: AUC %.4f vs Phi %.4f", d, n, auc,
                      expected);
      }
      if (gap > 0.02) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "d=%.1f N=%d: AUC %.4f vs expected %.4f (|gap| %.4f > 0.02)",
                      d, n, auc, expected, gap);
        detail = buf;
        return false;
      }
    }
  }
  char buf[192];
  std::snprintf(buf, sizeof(buf), "12 (d, N) cells within 0.02 of Phi(d sqrt(N)/sqrt(2)); worst %s",
                worst);
  detail = buf;
  return true;
}

// ---- criteria 4 + 5: synthetic Task A / Task B analogues (one shared run) ----
struct TaskRunResults {
  bool ran = false;
  std::string error;
  double task_a_seg_auc = 0.0;     // mean over folds, 5 s segments
  double task_a_2m_auc = 0.0;      // mean over folds, 2-minute windows
  std::map<double, double> task_b_auc;  // window seconds -> mean over folds
  double seconds = 0.0;
};

TaskRunResults run_tasks() {
  TaskRunResults out;
  auto start = std::chrono::steady_clock::now();
  try {
    synth::SynthConfig synth_cfg;
    synth_cfg.seed = 0xee65;
    auto data_dir = fs::temp_directory_path() / "epg_acceptance_data";
    auto out_dir = fs::temp_directory_path() / "epg_acceptance_runs";
    fs::remove_all(data_dir);
    fs::remove_all(out_dir);
    auto manifest = synth::generate_dataset(synth_cfg, 4, 3, 2, data_dir);

    train::LooOptions options;
    options.net = net::NetConfig::toy();
    options.train.hours_per_phase = 2;
    options.train.batch_size = 32;
    options.train.lr = 1e-3;
    options.train.max_epochs = 2;
    options.train.patience = 1;
    options.train.seed = 7;

    const std::vector<double> windows = {5.0, 30.0, 60.0, 120.0};

    options.group = io::Group::PPS;
    options.out_dir = out_dir / "task_a";
    auto task_a = train::run_loo(manifest, options);

    eval::ScoreSet a_scores;
    for (const auto& fold : task_a)
      a_scores.rows.insert(a_scores.rows.end(), fold.test_scores.rows.begin(),
                           fold.test_scores.rows.end());
    out.task_a_seg_auc = eval::aggregation_sweep(a_scores, {5.0}).front().mean_auc;
    out.task_a_2m_auc = eval::aggregation_sweep(a_scores, {120.0}).front().mean_auc;

    options.group = io::Group::Control;
    options.out_dir = out_dir / "task_b";
    auto task_b = train::run_loo(manifest, options);

    eval::ScoreSet b_scores;
    for (const auto& fold : task_b)
      b_scores.rows.insert(b_scores.rows.end(), fold.test_scores.rows.begin(),
                           fold.test_scores.rows.end());
    for (const auto& row : eval::aggregation_sweep(b_scores, windows))
      out.task_b_auc[row.window_seconds] = row.mean_auc;

    fs::remove_all(data_dir);
    fs::remove_all(out_dir);
    out.ran = true;
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

// ---- criterion 6: AUC = Mann-Whitney identity ----
bool auc_u_identity(std::string& detail) {
  Rng rng(0x06);
  for (int trial = 0; trial < 1000; ++trial) {
    int na = 1 + static_cast<int>(rng.uniform_index(10));
    int nb = 1 + static_cast<int>(rng.uniform_index(10));
    std::vector<double> a(na), b(nb);
    std::vector<std::pair<double, int>> sl;
    for (auto& v : a) {
      v = std::round(rng.normal() * 4.0) / 4.0;  // ties likely
      sl.emplace_back(v, 1);
    }
    for (auto& v : b) {
      v = std::round(rng.normal() * 4.0) / 4.0;
      sl.emplace_back(v, 0);
    }
    double auc = eval::roc_auc(sl).auc;
    double u = eval::rank_sum_test(a, b).u;
    double gap = std::abs(auc - u / (static_cast<double>(na) * nb));
    if (gap > 1e-12) {
      detail = "trial " + std::to_string(trial) + ": |AUC - U/(n+n-)| = " + std::to_string(gap);
      return false;
    }
  }
  detail = "1000 random score sets: trapezoid AUC == U/(n+ n-) within 1e-12";
  return true;
}

// ---- criterion 7: statistics oracles ----
bool statistics_oracles(std::string& detail) {
  Rng rng(0x07);

  // Rank-sum exact p vs independent permutation enumeration.
  auto u_pairs = [](const std::vector<double>& x, const std::vector<double>& y) {
    double u = 0.0;
    for (double xi : x)
      for (double yj : y) u += xi > yj ? 1.0 : (xi == yj ? 0.5 : 0.0);
    return u;
  };
  for (int trial = 0; trial < 30; ++trial) {
    size_t na = 2 + rng.uniform_index(4), nb = 2 + rng.uniform_index(4);
    std::vector<double> a(na), b(nb);
    for (auto& v : a) v = std::round(rng.normal() * 2.0) / 2.0;
    for (auto& v : b) v = std::round(rng.normal() * 2.0) / 2.0;

    auto got = eval::rank_sum_test(a, b);
    const double mu = static_cast<double>(na) * nb / 2.0;
    const double observed = std::abs(u_pairs(a, b) - mu);
    std::vector<double> pooled(a.begin(), a.end());
    pooled.insert(pooled.end(), b.begin(), b.end());
    std::vector<int> mask(pooled.size(), 0);
    std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(na), 1);
    std::sort(mask.begin(), mask.end());
    long long total = 0, at_least = 0;
    do {
      std::vector<double> pa, pb;
      for (size_t i = 0; i < pooled.size(); ++i) (mask[i] ? pa : pb).push_back(pooled[i]);
      ++total;
      if (std::abs(u_pairs(pa, pb) - mu) >= observed - 1e-12) ++at_least;
    } while (std::next_permutation(mask.begin(), mask.end()));
    double expect = static_cast<double>(at_least) / static_cast<double>(total);
    if (!got.exact || std::abs(got.p - expect) > 1e-12) {
      detail = "rank-sum exact p " + std::to_string(got.p) + " vs enumeration " +
               std::to_string(expect);
      return false;
    }
  }

  // ANOVA F == squared pooled t.
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(5 + rng.uniform_index(40)), b(5 + rng.uniform_index(40));
    for (auto& v : a) v = rng.normal() + 0.4;
    for (auto& v : b) v = rng.normal() * 1.3;
    auto res = eval::anova_f(a, b);
    auto mean = [](const std::vector<double>& s) {
      double m = 0;
      for (double v : s) m += v;
      return m / s.size();
    };
    double ma = mean(a), mb = mean(b), ssa = 0, ssb = 0;
    for (double v : a) ssa += (v - ma) * (v - ma);
    for (double v : b) ssb += (v - mb) * (v - mb);
    double sp2 = (ssa + ssb) / (a.size() + b.size() - 2.0);
    double t = (ma - mb) / std::sqrt(sp2 * (1.0 / a.size() + 1.0 / b.size()));
    if (std::abs(res.f - t * t) > 1e-9) {
      detail = "ANOVA F " + std::to_string(res.f) + " vs t^2 " + std::to_string(t * t);
      return false;
    }
  }

  // Large-shift ANOVA p-value reaches at least the published magnitude.
  {
    std::vector<double> lo(100), hi(100);
    for (size_t i = 0; i < 100; ++i) {
      lo[i] = rng.normal();
      hi[i] = rng.normal() + 10.0;
    }
    auto res = eval::anova_f(hi, lo);
    if (!(res.p < 1e-25)) {
      detail = "shift-10 ANOVA p " + std::to_string(res.p) + " not below 1e-25";
      return false;
    }
  }

  // Cohen's d against the direct formula.
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(3 + rng.uniform_index(20)), b(3 + rng.uniform_index(20));
    for (auto& v : a) v = rng.normal() * 2.0 + 1.0;
    for (auto& v : b) v = rng.normal();
    auto got = eval::cohens_d(a, b);
    auto mean = [](const std::vector<double>& s) {
      double m = 0;
      for (double v : s) m += v;
      return m / s.size();
    };
    double ma = mean(a), mb = mean(b), ssa = 0, ssb = 0;
    for (double v : a) ssa += (v - ma) * (v - ma);
    for (double v : b) ssb += (v - mb) * (v - mb);
    double expect = (ma - mb) / std::sqrt((ssa + ssb) / (a.size() + b.size() - 2.0));
    if (!got.defined || std::abs(got.d - expect) > 1e-12) {
      detail = "Cohen's d " + std::to_string(got.d) + " vs formula " + std::to_string(expect);
      return false;
    }
  }

  detail = "rank-sum (30 exact cases), ANOVA F=t^2 (50), shift-10 p<1e-25, Cohen's d (50)";
  return true;
}

// ---- criterion 8: DSP spec ----
bool dsp_spec(std::string& detail) {
  auto sine = [](double freq, double seconds) {
    io::EegRecord rec;
    rec.sampling_rate_hz = 512;
    rec.samples.resize(static_cast<size_t>(seconds * 512));
    for (size_t i = 0; i < rec.samples.size(); ++i)
      rec.samples[i] = static_cast<float>(std::sin(2.0 * M_PI * freq * i / 512.0));
    return rec;
  };
  auto central_rms = [](const std::vector<float>& x) {
    size_t lo = x.size() / 4, hi = 3 * x.size() / 4;
    double acc = 0.0;
    for (size_t i = lo; i < hi; ++i) acc += static_cast<double>(x[i]) * x[i];
    return std::sqrt(acc / static_cast<double>(hi - lo));
  };

  auto in50 = sine(50.0, 20.0);
  double atten50 = -20.0 * std::log10(central_rms(pre::notch(in50).samples) /
                                      central_rms(in50.samples));
  if (atten50 < 40.0) {
    detail = "notch at 50 Hz only " + std::to_string(atten50) + " dB";
    return false;
  }
  double worst_side = 0.0;
  for (double f : {40.0, 60.0}) {
    auto in = sine(f, 20.0);
    double atten = -20.0 * std::log10(central_rms(pre::notch(in).samples) /
                                      central_rms(in.samples));
    worst_side = std::max(worst_side, atten);
    if (atten > 3.0) {
      detail = "notch costs " + std::to_string(atten) + " dB at " + std::to_string(f) + " Hz";
      return false;
    }
  }
  auto in10 = sine(10.0, 20.0);
  double ripple10 = std::abs(20.0 * std::log10(central_rms(pre::bandpass(in10).samples) /
                                               central_rms(in10.samples)));
  if (ripple10 > 1.0) {
    detail = "band-pass ripple at 10 Hz is " + std::to_string(ripple10) + " dB";
    return false;
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "notch 50 Hz %.0f dB, 40/60 Hz cost <= %.2f dB, 10 Hz ripple %.3f dB", atten50,
                worst_side, ripple10);
  detail = buf;
  return true;
}

// ---- criterion 9: clustering recovery ----
bool clustering_recovery(std::string& detail) {
  // Four synthetic log-power spectrum families with bumps in different bands.
  Rng rng(0x09);
  std::vector<spectral::Spectrum> spectra;
  std::vector<int> truth;
  const double bump_center[4] = {10.0, 45.0, 90.0, 140.0};
  for (int family = 0; family < 4; ++family) {
    for (int i = 0; i < 50; ++i) {
      spectral::Spectrum s;
      for (int f = 0; f <= 256; ++f) {
        s.frequencies_hz.push_back(f);
        double v = -1.5 - 0.012 * f + 0.05 * rng.normal();
        double z = (f - bump_center[family]) / 6.0;
        v += 2.0 * std::exp(-0.5 * z * z);
        s.log_power.push_back(v);
      }
      spectra.push_back(std::move(s));
      truth.push_back(family);
    }
  }
  auto report = spectral::cluster_spectra(spectra, 4, 0x1234, 0.5, 160.0, {1, 2, 3, 4, 5, 6});
  double ari = testsupport::adjusted_rand_index(truth, report.assignments);
  if (ari < 0.99) {
    detail = "ARI " + std::to_string(ari) + " below 0.99";
    return false;
  }
  const auto& elbow = report.elbow;
  int best_k = 0;
  double best_dd = -1e300;
  for (size_t i = 1; i + 1 < elbow.size(); ++i) {
    double dd = elbow[i - 1].second - 2.0 * elbow[i].second + elbow[i + 1].second;
    if (dd > best_dd) {
      best_dd = dd;
      best_k = elbow[i].first;
    }
  }
  if (best_k != 4) {
    detail = "elbow second-difference peaks at k=" + std::to_string(best_k) + ", expected 4";
    return false;
  }
  char buf[96];
  std::snprintf(buf, sizeof(buf), "ARI %.4f, elbow second-difference peaks at k=4", ari);
  detail = buf;
  return true;
}

// ---- criterion 10: preprocessing contracts ----
bool preprocessing_contracts(std::string& detail) {
  Rng rng(0x10);
  io::EegRecord rec;
  rec.subject_id = "P01";
  rec.phase = io::Phase::BL;
  rec.sampling_rate_hz = 512;
  rec.samples.resize(512 * 3600);
  for (auto& v : rec.samples) v = static_cast<float>(rng.normal() * 50.0);
  auto segs = pre::preprocess_hour(rec);
  if (segs.size() != 720) {
    detail = "clean hour gave " + std::to_string(segs.size()) + " segments, expected 720";
    return false;
  }
  for (const auto& s : segs) {
    if (s.values.size() != 2560) {
      detail = "segment length " + std::to_string(s.values.size());
      return false;
    }
    for (float v : s.values)
      if (std::isnan(v)) {
        detail = "NaN survived in an accepted segment";
        return false;
      }
  }

  io::EegRecord edge;
  edge.sampling_rate_hz = 512;
  edge.samples.assign(2560 * 2, 1.0f);
  const float nan = std::numeric_limits<float>::quiet_NaN();
  for (size_t i = 0; i < 512; ++i) edge.samples[i] = nan;                  // exactly 20%
  for (size_t i = 2560; i < 2560 + 512 + 26; ++i) edge.samples[i] = nan;   // 21%
  auto edge_segs = pre::segment_hour(edge);
  if (edge_segs.size() != 1 || edge_segs[0].segment_index != 0) {
    detail = "loss-rule boundary: expected only the 20% window to survive";
    return false;
  }
  for (float v : edge_segs[0].values)
    if (std::isnan(v)) {
      detail = "kept window still contains NaN";
      return false;
    }
  detail = "720 x 2560 NaN-free segments; 20% kept, 21% dropped";
  return true;
}

}  // namespace

int main() {
  std::printf("=== acceptance suite ===\n");
  run_timed(shape_oracle, 1, "shape oracle");
  run_timed(gradient_suite, 2, "gradient suite");
  run_timed(aggregation_oracle, 3, "aggregation oracle");

  TaskRunResults tasks = run_tasks();
  {
    std::string detail;
    bool pass = false;
    if (!tasks.ran) {
      detail = "run failed: " + tasks.error;
    } else {
      char buf[192];
      std::snprintf(buf, sizeof(buf),
                    "4 PPS folds: per-segment AUC %.3f (>= 0.70), 2-min AUC %.3f (>= 0.95)",
                    tasks.task_a_seg_auc, tasks.task_a_2m_auc);
      detail = buf;
      pass = tasks.task_a_seg_auc >= 0.70 && tasks.task_a_2m_auc >= 0.95;
    }
    report(4, "synthetic Task A analogue", pass, detail, tasks.seconds);
  }
  {
    std::string detail;
    bool pass = false;
    if (!tasks.ran) {
      detail = "run failed: " + tasks.error;
    } else {
      pass = true;
      detail = "3 control folds:";
      for (const auto& [window, auc] : tasks.task_b_auc) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), " %gs=%.3f", window, auc);
        detail += buf;
        pass = pass && auc >= 0.40 && auc <= 0.60;
      }
      detail += " (each within [0.40, 0.60])";
    }
    report(5, "synthetic Task B analogue", pass, detail, 0.0);
  }

  run_timed(auc_u_identity, 6, "AUC = Mann-Whitney identity");
  run_timed(statistics_oracles, 7, "statistics oracles");
  run_timed(dsp_spec, 8, "DSP spec");
  run_timed(clustering_recovery, 9, "clustering recovery");
  run_timed(preprocessing_contracts, 10, "preprocessing contracts");

  std::printf("=== %d/10 criteria passed ===\n", 10 - g_failures);
  return g_failures == 0 ? 0 : 1;
}
