#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "epg/eeg_io.hpp"
#include "epg/eval_agg.hpp"
#include "epg/model.hpp"
#include "epg/preprocess.hpp"

namespace epg::train {

struct TrainConfig {
  int hours_per_phase = 25;
  double val_fraction = 0.1;
  int batch_size = 32;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int max_epochs = 50;
  int patience = 5;
  uint64_t seed = 1;

  double seg_seconds = 5.0;
  double max_loss_fraction = 0.2;
  double mad_multiplier = 8.0;
  pre::FilterSpec filter;

  void validate() const;
};

struct Fold {
  std::string held_out_subject;
  std::vector<std::string> train_subjects;
};

// One fold per subject of the group; training excludes the held-out subject
// entirely. Requires >= 2 subjects.
std::vector<Fold> loo_folds(const io::DatasetManifest& manifest, io::Group group);

struct HourRef {
  std::string subject;
  io::Phase phase = io::Phase::BL;
  int hour_index = 0;
  std::filesystem::path file;
};

struct SampleResult {
  std::vector<HourRef> hours;
  std::vector<std::string> warnings;  // subjects with fewer hours than requested
};

// Deterministically samples up to n_hours per subject for the phase; if a
// subject has fewer, all its hours are taken and a warning is recorded.
SampleResult sample_hours(const io::DatasetManifest& manifest,
                          const std::vector<std::string>& subjects, io::Phase phase, int n_hours,
                          uint64_t seed);

// Stratified split: |val| = round(val_fraction * N), class proportions kept
// as close as rounding allows. Throws when a class is absent.
std::pair<std::vector<pre::Segment>, std::vector<pre::Segment>> split_train_val(
    std::vector<pre::Segment> segments, double val_fraction, uint64_t seed);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_auc = 0.0;
};

struct FoldResult {
  std::string held_out_subject;
  std::filesystem::path checkpoint_path;
  std::vector<EpochLog> epochs;
  int best_epoch = 0;
  double best_val_auc = 0.0;
  eval::ScoreSet test_scores;  // filled by run_loo
  TrainConfig config_used;
};

// Adam on softmax cross-entropy with early stopping on validation AUC; the
// best-validation-AUC parameters are restored into the model and saved to
// checkpoint_path. Aborts with a diagnostic if the loss stops being finite.
FoldResult train_fold(net::Model& model, const std::vector<pre::Segment>& train_segments,
                      const std::vector<pre::Segment>& val_segments, const TrainConfig& config,
                      const std::filesystem::path& checkpoint_path);

void write_epoch_csv(const std::vector<EpochLog>& epochs, const std::filesystem::path& path);

struct LooOptions {
  io::Group group = io::Group::PPS;
  net::NetConfig net;
  TrainConfig train;
  std::filesystem::path out_dir;
};

// Full leave-one-out run for a group: per fold, sample hours from the
// training subjects, preprocess, split, train, then score every segment of
// the held-out subject with the best checkpoint.
std::vector<FoldResult> run_loo(const io::DatasetManifest& manifest, const LooOptions& options);

}  // namespace epg::train
