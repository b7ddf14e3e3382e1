// epg: synthetic-EEG epileptogenesis detection pipeline.
//
// Subcommands: synth, preprocess, train, eval, sweep, cluster, gradcheck,
// describe. Every pipeline stage writes its resolved configuration and a run
// manifest listing all produced files into --out.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "epg/eeg_io.hpp"
#include "epg/eval_agg.hpp"
#include "epg/gradcheck.hpp"
#include "epg/model.hpp"
#include "epg/preprocess.hpp"
#include "epg/spectral.hpp"
#include "epg/synthgen.hpp"
#include "epg/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace epg;

namespace {

// Atomic file write: temp file in the same directory, then rename.
void atomic_write(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
    out << content;
  }
  fs::rename(tmp, path);
}

class RunOutputs {
 public:
  RunOutputs(std::string command, fs::path out_dir)
      : command_(std::move(command)), out_dir_(std::move(out_dir)) {
    fs::create_directories(out_dir_);
  }
  void note(const fs::path& p) { outputs_.insert(fs::relative(p, out_dir_).generic_string()); }
  void write(const fs::path& p, const std::string& content) {
    atomic_write(p, content);
    note(p);
  }
  void finalize(const json& resolved_config) {
    write(out_dir_ / "resolved_config.json", resolved_config.dump(2) + "\n");
    json manifest;
    manifest["command"] = command_;
    manifest["config"] = resolved_config;
    manifest["outputs"] = std::vector<std::string>(outputs_.begin(), outputs_.end());
    atomic_write(out_dir_ / "run_manifest.json", manifest.dump(2) + "\n");
  }
  const fs::path& dir() const { return out_dir_; }

 private:
  std::string command_;
  fs::path out_dir_;
  std::set<std::string> outputs_;
};

// "5s" / "2m" / "1h" -> seconds.
double parse_window(const std::string& token) {
  if (token.size() < 2) throw std::runtime_error("bad window '" + token + "' (use e.g. 30s, 2m, 1h)");
  char unit = token.back();
  double value = std::stod(token.substr(0, token.size() - 1));
  switch (unit) {
    case 's': return value;
    case 'm': return value * 60.0;
    case 'h': return value * 3600.0;
    default: throw std::runtime_error("bad window unit in '" + token + "' (use s, m or h)");
  }
}

std::vector<double> parse_window_list(const std::string& csv) {
  std::vector<double> out;
  std::string token;
  std::istringstream ss(csv);
  while (std::getline(ss, token, ',')) out.push_back(parse_window(token));
  if (out.empty()) throw std::runtime_error("empty window list");
  return out;
}

json load_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path.string());
  json doc;
  in >> doc;
  return doc;
}

// Config-file values override flags.
template <typename T>
void override_from(const json& doc, const char* key, T& value) {
  if (doc.contains(key)) value = doc[key].get<T>();
}

io::DatasetManifest load_data_manifest(const fs::path& data) {
  fs::path manifest_path = fs::is_directory(data) ? data / "manifest.json" : data;
  return io::load_manifest(manifest_path);
}

json synth_config_json(const synth::SynthConfig& c) {
  return json{{"seed", c.seed},
              {"rate", c.sampling_rate_hz},
              {"alpha", c.background_decay_exponent},
              {"background_rms", c.background_rms_uv},
              {"peak_hz", c.epg_peak_hz},
              {"harmonics", c.epg_harmonics},
              {"band_gain_db", c.epg_band_gain_db},
              {"band_low_hz", c.epg_band_low_hz},
              {"band_high_hz", c.epg_band_high_hz},
              {"event_rate", c.epg_event_rate_per_min},
              {"burst_amp", c.epg_burst_relative_amp},
              {"dropout_frac", c.dropout_fraction}};
}

json filter_json(const pre::FilterSpec& f) {
  return json{{"band_low", f.band_low_hz},
              {"band_high", f.band_high_hz},
              {"notch", f.notch_hz},
              {"notch_q", f.notch_q},
              {"order", f.filter_order}};
}

json train_config_json(const train::TrainConfig& t) {
  return json{{"hours", t.hours_per_phase}, {"val_fraction", t.val_fraction},
              {"batch", t.batch_size},      {"lr", t.lr},
              {"epochs", t.max_epochs},     {"patience", t.patience},
              {"seed", t.seed},             {"filter", filter_json(t.filter)}};
}

void add_synth_flags(CLI::App* cmd, synth::SynthConfig& c) {
  cmd->add_option("--seed", c.seed, "Generator seed");
  cmd->add_option("--rate", c.sampling_rate_hz, "Sampling rate in Hz");
  cmd->add_option("--alpha", c.background_decay_exponent, "Background 1/f^alpha exponent");
  cmd->add_option("--band-gain-db", c.epg_band_gain_db, "EPG gain over the 20-100 Hz band");
  cmd->add_option("--event-rate", c.epg_event_rate_per_min, "EPG bursts per minute");
  cmd->add_option("--burst-amp", c.epg_burst_relative_amp, "Burst amplitude / background RMS");
  cmd->add_option("--peak-hz", c.epg_peak_hz, "EPG peak frequency");
  cmd->add_option("--harmonics", c.epg_harmonics, "Number of harmonics above the peak");
  cmd->add_option("--dropout-frac", c.dropout_fraction, "Fraction of samples lost to dropout");
}

void apply_synth_json(const json& doc, synth::SynthConfig& c) {
  override_from(doc, "seed", c.seed);
  override_from(doc, "rate", c.sampling_rate_hz);
  override_from(doc, "alpha", c.background_decay_exponent);
  override_from(doc, "band_gain_db", c.epg_band_gain_db);
  override_from(doc, "event_rate", c.epg_event_rate_per_min);
  override_from(doc, "burst_amp", c.epg_burst_relative_amp);
  override_from(doc, "peak_hz", c.epg_peak_hz);
  override_from(doc, "harmonics", c.epg_harmonics);
  override_from(doc, "dropout_frac", c.dropout_fraction);
}

void add_filter_flags(CLI::App* cmd, pre::FilterSpec& f, double& mad, double& seg_s,
                      double& max_loss) {
  cmd->add_option("--band-low", f.band_low_hz, "Band-pass low corner (Hz)");
  cmd->add_option("--band-high", f.band_high_hz, "Band-pass high corner (Hz)");
  cmd->add_option("--notch", f.notch_hz, "Notch center (Hz)");
  cmd->add_option("--notch-q", f.notch_q, "Notch quality factor");
  cmd->add_option("--order", f.filter_order, "Butterworth order per band edge");
  cmd->add_option("--mad-mult", mad, "Outlier threshold in MADs");
  cmd->add_option("--seg-seconds", seg_s, "Segment length in seconds");
  cmd->add_option("--max-loss", max_loss, "Maximum tolerated NaN fraction per segment");
}

net::NetConfig net_preset(const std::string& name) {
  if (name == "toy") return net::NetConfig::toy();
  if (name == "paper") return net::NetConfig{};
  throw std::runtime_error("unknown net preset '" + name + "' (use toy or paper)");
}

// ---- subcommand handlers ----

int run_synth(const fs::path& out, int pps, int ctrl, int hours, synth::SynthConfig config,
              const std::optional<fs::path>& config_file) {
  if (config_file) apply_synth_json(load_json_file(*config_file), config);
  RunOutputs run("synth", out);
  auto manifest = synth::generate_dataset(config, pps, ctrl, hours, out);
  for (const auto& e : manifest.entries) run.note(out / e.file);
  run.note(out / "manifest.json");

  json resolved = synth_config_json(config);
  resolved["pps"] = pps;
  resolved["ctrl"] = ctrl;
  resolved["hours"] = hours;
  run.finalize(resolved);
  std::printf("synth: wrote %zu records to %s\n", manifest.entries.size(), out.string().c_str());
  return 0;
}

int run_preprocess(const fs::path& data, const fs::path& out, pre::FilterSpec filter, double mad,
                   double seg_seconds, double max_loss,
                   const std::optional<fs::path>& config_file) {
  if (config_file) {
    auto doc = load_json_file(*config_file);
    override_from(doc, "band_low", filter.band_low_hz);
    override_from(doc, "band_high", filter.band_high_hz);
    override_from(doc, "notch", filter.notch_hz);
    override_from(doc, "notch_q", filter.notch_q);
    override_from(doc, "order", filter.filter_order);
    override_from(doc, "mad_mult", mad);
    override_from(doc, "seg_seconds", seg_seconds);
    override_from(doc, "max_loss", max_loss);
  }
  auto manifest = load_data_manifest(data);
  RunOutputs run("preprocess", out);

  json index = json::array();
  size_t total_segments = 0;
  for (const auto& e : manifest.entries) {
    auto rec = io::read_record(manifest.resolve(e));
    rec.subject_id = e.subject_id;
    rec.phase = e.phase;
    rec.hour_index = e.hour_index;
    auto segments = pre::preprocess_hour(rec, filter, mad, seg_seconds, max_loss);
    char name[96];
    std::snprintf(name, sizeof(name), "%s_%s_%03d.segb", e.subject_id.c_str(),
                  io::to_string(e.phase), e.hour_index);
    if (!segments.empty()) {
      pre::write_segment_batch(segments, out / name);
      run.note(out / name);
    }
    total_segments += segments.size();
    index.push_back({{"subject_id", e.subject_id},
                     {"phase", io::to_string(e.phase)},
                     {"hour_index", e.hour_index},
                     {"segments", segments.size()},
                     {"file", segments.empty() ? "" : name}});
  }
  run.write(out / "segments_index.json", index.dump(2) + "\n");

  json resolved = filter_json(filter);
  resolved["mad_mult"] = mad;
  resolved["seg_seconds"] = seg_seconds;
  resolved["max_loss"] = max_loss;
  resolved["data"] = data.string();
  run.finalize(resolved);
  std::printf("preprocess: %zu segments from %zu records\n", total_segments,
              manifest.entries.size());
  return 0;
}

int run_train(const fs::path& data, const fs::path& out, const std::string& group_name,
              const std::string& preset, train::TrainConfig tcfg,
              const std::optional<fs::path>& config_file) {
  if (config_file) {
    auto doc = load_json_file(*config_file);
    override_from(doc, "hours", tcfg.hours_per_phase);
    override_from(doc, "val_fraction", tcfg.val_fraction);
    override_from(doc, "batch", tcfg.batch_size);
    override_from(doc, "lr", tcfg.lr);
    override_from(doc, "epochs", tcfg.max_epochs);
    override_from(doc, "patience", tcfg.patience);
    override_from(doc, "seed", tcfg.seed);
  }
  io::Group group = group_name == "pps" ? io::Group::PPS
                    : group_name == "control"
                        ? io::Group::Control
                        : throw std::runtime_error("unknown group '" + group_name +
                                                   "' (use pps or control)");
  auto manifest = load_data_manifest(data);
  RunOutputs run("train", out);

  train::LooOptions options;
  options.group = group;
  options.net = net_preset(preset);
  options.train = tcfg;
  options.out_dir = out;
  auto results = train::run_loo(manifest, options);

  eval::ScoreSet combined;
  json summary = json::array();
  for (const auto& fold : results) {
    run.note(fold.checkpoint_path);
    run.note(out / ("metrics_" + fold.held_out_subject + ".csv"));
    run.note(out / ("scores_" + fold.held_out_subject + ".csv"));
    combined.rows.insert(combined.rows.end(), fold.test_scores.rows.begin(),
                         fold.test_scores.rows.end());
    summary.push_back({{"held_out_subject", fold.held_out_subject},
                       {"best_epoch", fold.best_epoch},
                       {"best_val_auc", fold.best_val_auc},
                       {"epochs_run", fold.epochs.size()},
                       {"test_segments", fold.test_scores.rows.size()}});
  }
  eval::write_scores_csv(combined, out / "scores.csv");
  run.note(out / "scores.csv");
  run.write(out / "summary.json", summary.dump(2) + "\n");

  json resolved = train_config_json(tcfg);
  resolved["group"] = group_name;
  resolved["preset"] = preset;
  resolved["data"] = data.string();
  run.finalize(resolved);
  std::printf("train: %zu folds complete, combined scores in %s\n", results.size(),
              (out / "scores.csv").string().c_str());
  return 0;
}

int run_eval(const fs::path& scores_path, const fs::path& out, const std::string& window_token,
             double threshold) {
  auto scores = eval::read_scores_csv(scores_path);
  double window = parse_window(window_token);
  RunOutputs run("eval", out);

  std::map<std::string, std::vector<std::pair<double, int>>> seg_by_fold;
  for (const auto& r : scores.rows)
    seg_by_fold[r.subject].emplace_back(r.p_epg, static_cast<int>(r.label));
  auto aggregated = eval::aggregate(scores, window);
  std::map<std::string, std::vector<std::pair<double, int>>> agg_by_fold;
  for (const auto& w : aggregated)
    agg_by_fold[w.subject].emplace_back(w.p_epg, static_cast<int>(w.label));

  std::ostringstream metrics;
  metrics << "fold,auc_segment,auc_aggregated,sen,spe\n";
  std::ostringstream roc_csv;
  roc_csv << "fold,fpr,tpr\n";
  std::vector<eval::RocResult> seg_curves;
  char line[256];
  for (const auto& [fold, seg_sl] : seg_by_fold) {
    auto seg_roc = eval::roc_auc(seg_sl);
    seg_curves.push_back(seg_roc);
    const auto& agg_sl = agg_by_fold.at(fold);
    auto agg_roc = eval::roc_auc(agg_sl);
    auto m = eval::sen_spe(agg_sl, threshold);
    std::snprintf(line, sizeof(line), "%s,%.6g,%.6g,%.6g,%.6g\n", fold.c_str(), seg_roc.auc,
                  agg_roc.auc, m.sensitivity.value_or(-1.0), m.specificity.value_or(-1.0));
    metrics << line;
    for (size_t i = 0; i < seg_roc.fpr.size(); ++i) {
      std::snprintf(line, sizeof(line), "%s,%.6g,%.6g\n", fold.c_str(), seg_roc.fpr[i],
                    seg_roc.tpr[i]);
      roc_csv << line;
    }
  }
  auto mean_curve = eval::average_roc(seg_curves, 101);
  for (size_t i = 0; i < mean_curve.fpr.size(); ++i) {
    std::snprintf(line, sizeof(line), "mean,%.6g,%.6g\n", mean_curve.fpr[i], mean_curve.tpr[i]);
    roc_csv << line;
  }
  run.write(out / "metrics.csv", metrics.str());
  run.write(out / "roc.csv", roc_csv.str());

  run.finalize(json{{"scores", scores_path.string()},
                    {"window_s", window},
                    {"threshold", threshold}});
  std::printf("eval: %zu folds evaluated at window %s\n", seg_by_fold.size(),
              window_token.c_str());
  return 0;
}

int run_sweep(const fs::path& scores_path, const fs::path& out, const std::string& windows_csv,
              bool pooled) {
  auto scores = eval::read_scores_csv(scores_path);
  auto windows = parse_window_list(windows_csv);
  RunOutputs run("sweep", out);
  auto rows = eval::aggregation_sweep(scores, windows, pooled);
  eval::write_sweep_csv(rows, out / "sweep.csv");
  run.note(out / "sweep.csv");
  run.finalize(json{{"scores", scores_path.string()},
                    {"windows", windows_csv},
                    {"pooled", pooled}});
  std::printf("sweep: %zu windows written to %s\n", rows.size(),
              (out / "sweep.csv").string().c_str());
  return 0;
}

int run_cluster(const fs::path& scores_path, const fs::path& data, const fs::path& out,
                double threshold, int k, int k_min, int k_max, uint64_t seed) {
  auto scores = eval::read_scores_csv(scores_path);
  auto manifest = load_data_manifest(data);
  RunOutputs run("cluster", out);

  auto certain = spectral::select_certain(scores, threshold);
  if (certain.empty())
    throw std::runtime_error("no segments exceed the certainty threshold " +
                             std::to_string(threshold));

  std::map<std::tuple<std::string, io::Phase, int>, std::vector<pre::Segment>> cache;
  std::vector<spectral::Spectrum> spectra;
  for (const auto& ref : certain) {
    auto key = std::make_tuple(ref.subject, ref.phase, ref.hour);
    auto it = cache.find(key);
    if (it == cache.end()) {
      const auto* entry = manifest.find(ref.subject, ref.phase, ref.hour);
      if (!entry)
        throw std::runtime_error("scores reference " + ref.subject + "/" +
                                 io::to_string(ref.phase) + "/h" + std::to_string(ref.hour) +
                                 " which is not in the manifest");
      auto rec = io::read_record(manifest.resolve(*entry));
      rec.subject_id = ref.subject;
      rec.phase = ref.phase;
      rec.hour_index = ref.hour;
      it = cache.emplace(key, pre::preprocess_hour(rec)).first;
    }
    for (const auto& seg : it->second) {
      if (seg.segment_index == ref.segment) {
        spectra.push_back(spectral::welch_log_power(seg));
        spectra.back().ref = ref;
        break;
      }
    }
  }

  std::vector<int> k_range;
  for (int kk = k_min; kk <= k_max && kk <= static_cast<int>(spectra.size()); ++kk)
    k_range.push_back(kk);
  auto report = spectral::cluster_spectra(spectra, k, seed, 0.5, 160.0, k_range);

  json doc;
  doc["k"] = report.k;
  doc["n_segments"] = spectra.size();
  doc["certainty_threshold"] = threshold;
  doc["clusters"] = json::array();
  for (int c = 0; c < report.k; ++c) {
    const auto& cl = report.clusters[c];
    doc["clusters"].push_back({{"cluster", c + 1},
                               {"count", cl.count},
                               {"pct_bl", cl.pct_label0},
                               {"pct_epg", cl.pct_label1}});
  }
  doc["elbow"] = json::array();
  for (const auto& [kk, inertia] : report.elbow)
    doc["elbow"].push_back({{"k", kk}, {"inertia", inertia}});
  run.write(out / "cluster_report.json", doc.dump(2) + "\n");

  std::ostringstream csv;
  csv << "cluster,freq_hz,mean_log_power,std_log_power\n";
  char line[160];
  for (int c = 0; c < report.k; ++c) {
    for (size_t i = 0; i < report.frequencies_hz.size(); ++i) {
      std::snprintf(line, sizeof(line), "%d,%.6g,%.6g,%.6g\n", c + 1, report.frequencies_hz[i],
                    report.clusters[c].mean_log_power[i], report.clusters[c].std_log_power[i]);
      csv << line;
    }
  }
  run.write(out / "cluster_spectra.csv", csv.str());

  run.finalize(json{{"scores", scores_path.string()},
                    {"data", data.string()},
                    {"threshold", threshold},
                    {"k", k},
                    {"seed", seed}});
  std::printf("cluster: %zu certain segments into %d clusters\n", spectra.size(), k);
  return 0;
}

int run_gradcheck() {
  auto reports = ad::run_gradient_checks();
  bool ok = ad::all_pass(reports);
  for (const auto& r : reports)
    std::printf("%-32s max_rel_err %.3e  tol %.0e  %s\n", r.name.c_str(), r.max_rel_error,
                r.tolerance, r.pass ? "pass" : "FAIL");
  std::printf("gradcheck: %s\n", ok ? "all checks passed" : "FAILURES detected");
  return ok ? 0 : 1;
}

int run_describe(const std::string& preset, const std::string& format) {
  auto cfg = net_preset(preset);
  auto model = net::Model::build(cfg, 0);
  auto rows = model.describe();
  std::printf("%s", (format == "csv" ? net::describe_csv(rows) : net::describe_json(rows) + "\n").c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic-EEG epileptogenesis detection pipeline"};
  app.require_subcommand(1);

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset");
  fs::path synth_out;
  int pps = 7, ctrl = 3, hours = 25;
  synth::SynthConfig synth_cfg;
  std::optional<fs::path> synth_config_file;
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();
  synth_cmd->add_option("--pps", pps, "Number of PPS subjects");
  synth_cmd->add_option("--ctrl", ctrl, "Number of control subjects");
  synth_cmd->add_option("--hours", hours, "Hours per phase per subject");
  add_synth_flags(synth_cmd, synth_cfg);
  synth_cmd->add_option("--config", synth_config_file, "JSON config (overrides flags)");

  // preprocess
  auto* pre_cmd = app.add_subcommand("preprocess", "Records -> segment batches");
  fs::path pre_data, pre_out;
  pre::FilterSpec filter;
  double mad_mult = 8.0, seg_seconds = 5.0, max_loss = 0.2;
  std::optional<fs::path> pre_config_file;
  pre_cmd->add_option("--data", pre_data, "Dataset directory or manifest path")->required();
  pre_cmd->add_option("--out", pre_out, "Output directory")->required();
  add_filter_flags(pre_cmd, filter, mad_mult, seg_seconds, max_loss);
  pre_cmd->add_option("--config", pre_config_file, "JSON config (overrides flags)");

  // train
  auto* train_cmd = app.add_subcommand("train", "Leave-one-out training for a group");
  fs::path train_data, train_out;
  std::string group = "pps", preset = "toy";
  train::TrainConfig tcfg;
  std::optional<fs::path> train_config_file;
  train_cmd->add_option("--data", train_data, "Dataset directory or manifest path")->required();
  train_cmd->add_option("--out", train_out, "Output directory")->required();
  train_cmd->add_option("--group", group, "Subject group: pps (Task A) or control (Task B)");
  train_cmd->add_option("--preset", preset, "Net preset: toy or paper");
  train_cmd->add_option("--hours", tcfg.hours_per_phase, "Training hours sampled per phase");
  train_cmd->add_option("--epochs", tcfg.max_epochs, "Maximum epochs");
  train_cmd->add_option("--patience", tcfg.patience, "Early-stopping patience (epochs)");
  train_cmd->add_option("--batch", tcfg.batch_size, "Batch size");
  train_cmd->add_option("--lr", tcfg.lr, "Adam learning rate");
  train_cmd->add_option("--val-fraction", tcfg.val_fraction, "Validation fraction");
  train_cmd->add_option("--seed", tcfg.seed, "Training seed");
  train_cmd->add_option("--config", train_config_file, "JSON config (overrides flags)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "ScoreSet -> ROC and SEN/SPE tables");
  fs::path eval_scores, eval_out;
  std::string eval_window = "1h";
  double eval_threshold = 0.5;
  eval_cmd->add_option("--scores", eval_scores, "ScoreSet CSV")->required();
  eval_cmd->add_option("--out", eval_out, "Output directory")->required();
  eval_cmd->add_option("--window", eval_window, "Aggregation window (e.g. 5s, 2m, 1h)");
  eval_cmd->add_option("--threshold", eval_threshold, "Decision threshold on aggregated scores");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "Aggregation-length AUC table");
  fs::path sweep_scores, sweep_out;
  std::string windows = "5s,30s,1m,2m,5m,10m,20m,30m,60m";
  bool pooled = false;
  sweep_cmd->add_option("--scores", sweep_scores, "ScoreSet CSV")->required();
  sweep_cmd->add_option("--out", sweep_out, "Output directory")->required();
  sweep_cmd->add_option("--windows", windows, "Comma-separated window list");
  sweep_cmd->add_flag("--pooled", pooled, "Pool folds into one AUC instead of mean/std");

  // cluster
  auto* cluster_cmd = app.add_subcommand("cluster", "Cluster spectra of high-certainty segments");
  fs::path cluster_scores, cluster_data, cluster_out;
  double certainty = 0.999;
  int k = 4, k_min = 1, k_max = 8;
  uint64_t cluster_seed = 0;
  cluster_cmd->add_option("--scores", cluster_scores, "ScoreSet CSV")->required();
  cluster_cmd->add_option("--data", cluster_data, "Dataset directory or manifest path")->required();
  cluster_cmd->add_option("--out", cluster_out, "Output directory")->required();
  cluster_cmd->add_option("--threshold", certainty, "Certainty threshold");
  cluster_cmd->add_option("--k", k, "Cluster count for the report");
  cluster_cmd->add_option("--k-min", k_min, "Elbow curve lower k");
  cluster_cmd->add_option("--k-max", k_max, "Elbow curve upper k");
  cluster_cmd->add_option("--seed", cluster_seed, "Clustering seed");

  // gradcheck
  app.add_subcommand("gradcheck", "Finite-difference verification of the autodiff engine");

  // describe
  auto* describe_cmd = app.add_subcommand("describe", "Print the layer table for a net preset");
  std::string describe_preset = "paper", describe_format = "json";
  describe_cmd->add_option("--preset", describe_preset, "Net preset: toy or paper");
  describe_cmd->add_option("--format", describe_format, "json or csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (app.got_subcommand(synth_cmd))
      return run_synth(synth_out, pps, ctrl, hours, synth_cfg, synth_config_file);
    if (app.got_subcommand(pre_cmd))
      return run_preprocess(pre_data, pre_out, filter, mad_mult, seg_seconds, max_loss,
                            pre_config_file);
    if (app.got_subcommand(train_cmd))
      return run_train(train_data, train_out, group, preset, tcfg, train_config_file);
    if (app.got_subcommand(eval_cmd))
      return run_eval(eval_scores, eval_out, eval_window, eval_threshold);
    if (app.got_subcommand(sweep_cmd)) return run_sweep(sweep_scores, sweep_out, windows, pooled);
    if (app.got_subcommand(cluster_cmd))
      return run_cluster(cluster_scores, cluster_data, cluster_out, certainty, k, k_min, k_max,
                         cluster_seed);
    if (app.got_subcommand("gradcheck")) return run_gradcheck();
    if (app.got_subcommand(describe_cmd)) return run_describe(describe_preset, describe_format);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
