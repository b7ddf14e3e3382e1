#include "epg/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "epg/common.hpp"

namespace epg::train {

void TrainConfig::validate() const {
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw std::invalid_argument("train config: val_fraction must be in (0, 1)");
  if (patience > max_epochs)
    throw std::invalid_argument("train config: patience must not exceed max_epochs");
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("train config: max_epochs must be >= 1");
  if (hours_per_phase < 1) throw std::invalid_argument("train config: hours_per_phase must be >= 1");
  if (lr <= 0.0) throw std::invalid_argument("train config: lr must be positive");
}

std::vector<Fold> loo_folds(const io::DatasetManifest& manifest, io::Group group) {
  auto subjects = manifest.subjects(group);
  std::sort(subjects.begin(), subjects.end());
  if (subjects.size() < 2)
    throw std::invalid_argument("loo_folds: group " + std::string(io::to_string(group)) +
                                " needs at least 2 subjects, found " +
                                std::to_string(subjects.size()));
  std::vector<Fold> folds;
  for (const auto& held : subjects) {
    Fold fold;
    fold.held_out_subject = held;
    for (const auto& s : subjects)
      if (s != held) fold.train_subjects.push_back(s);
    folds.push_back(std::move(fold));
  }
  return folds;
}

SampleResult sample_hours(const io::DatasetManifest& manifest,
                          const std::vector<std::string>& subjects, io::Phase phase, int n_hours,
                          uint64_t seed) {
  if (n_hours < 1) throw std::invalid_argument("sample_hours: n_hours must be >= 1");
  SampleResult result;
  for (const auto& subject : subjects) {
    std::vector<const io::ManifestEntry*> available;
    for (const auto& e : manifest.entries)
      if (e.subject_id == subject && e.phase == phase) available.push_back(&e);
    std::sort(available.begin(), available.end(),
              [](const auto* a, const auto* b) { return a->hour_index < b->hour_index; });

    if (static_cast<int>(available.size()) < n_hours)
      result.warnings.push_back(subject + "/" + io::to_string(phase) + ": only " +
                                std::to_string(available.size()) + " of " +
                                std::to_string(n_hours) + " requested hours available");

    Rng rng(mix_key(seed, fnv1a64(subject), static_cast<uint64_t>(phase)));
    rng.shuffle(available.begin(), available.end());
    size_t take = std::min<size_t>(available.size(), static_cast<size_t>(n_hours));
    for (size_t i = 0; i < take; ++i) {
      const auto* e = available[i];
      result.hours.push_back({e->subject_id, e->phase, e->hour_index, manifest.resolve(*e)});
    }
  }
  return result;
}

std::pair<std::vector<pre::Segment>, std::vector<pre::Segment>> split_train_val(
    std::vector<pre::Segment> segments, double val_fraction, uint64_t seed) {
  const size_t n = segments.size();
  if (n < 10) throw std::invalid_argument("split_train_val: need at least 10 segments");
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw std::invalid_argument("split_train_val: val_fraction must be in (0, 1)");

  std::vector<size_t> idx0, idx1;
  for (size_t i = 0; i < n; ++i) (segments[i].label == 1 ? idx1 : idx0).push_back(i);
  if (idx0.empty() || idx1.empty())
    throw std::invalid_argument("split_train_val: cannot stratify, only one class present");

  Rng rng(mix_key(seed, 0x73706c6974ULL));
  rng.shuffle(idx0.begin(), idx0.end());
  rng.shuffle(idx1.begin(), idx1.end());

  // Total validation size is round(frac*N); per-class quotas by largest
  // remainder so stratification is as even as rounding allows.
  const size_t n_val = static_cast<size_t>(std::llround(val_fraction * static_cast<double>(n)));
  double q0 = static_cast<double>(n_val) * idx0.size() / static_cast<double>(n);
  double q1 = static_cast<double>(n_val) * idx1.size() / static_cast<double>(n);
  size_t v0 = static_cast<size_t>(std::floor(q0));
  size_t v1 = static_cast<size_t>(std::floor(q1));
  while (v0 + v1 < n_val) {
    if (q0 - static_cast<double>(v0) >= q1 - static_cast<double>(v1) && v0 < idx0.size())
      ++v0;
    else
      ++v1;
  }
  v0 = std::min(v0, idx0.size());
  v1 = std::min(v1, idx1.size());

  std::vector<pre::Segment> train_out, val_out;
  train_out.reserve(n - v0 - v1);
  val_out.reserve(v0 + v1);
  for (size_t i = 0; i < idx0.size(); ++i)
    (i < v0 ? val_out : train_out).push_back(std::move(segments[idx0[i]]));
  for (size_t i = 0; i < idx1.size(); ++i)
    (i < v1 ? val_out : train_out).push_back(std::move(segments[idx1[i]]));
  return {std::move(train_out), std::move(val_out)};
}

namespace {

ad::Tensor batch_tensor(const std::vector<const pre::Segment*>& segments, int64_t seg_len) {
  ad::Tensor batch({static_cast<int64_t>(segments.size()), seg_len, 1});
  for (size_t i = 0; i < segments.size(); ++i) {
    if (static_cast<int64_t>(segments[i]->values.size()) != seg_len)
      throw std::invalid_argument("train: segment length does not match net input_len");
    std::copy(segments[i]->values.begin(), segments[i]->values.end(),
              batch.data.begin() + static_cast<int64_t>(i) * seg_len);
  }
  return batch;
}

struct ValMetrics {
  double loss = 0.0;
  double auc = 0.5;
};

ValMetrics validate_model(net::Model& model, const std::vector<pre::Segment>& val, int batch_size) {
  model.mode = net::Mode::Eval;
  const int64_t seg_len = model.config.input_len;
  std::vector<std::pair<double, int>> score_label;
  score_label.reserve(val.size());
  double loss = 0.0;
  for (size_t start = 0; start < val.size(); start += batch_size) {
    size_t count = std::min<size_t>(batch_size, val.size() - start);
    std::vector<const pre::Segment*> ptrs(count);
    for (size_t i = 0; i < count; ++i) ptrs[i] = &val[start + i];
    ad::Tensor probs = model.forward_probs(batch_tensor(ptrs, seg_len));
    for (size_t i = 0; i < count; ++i) {
      int label = val[start + i].label;
      double p = probs.data[i * 2 + label];
      loss -= std::log(std::max(p, 1e-30));
      score_label.emplace_back(probs.data[i * 2 + 1], label);
    }
  }
  ValMetrics metrics;
  metrics.loss = loss / static_cast<double>(val.size());
  metrics.auc = eval::roc_auc(score_label).auc;
  return metrics;
}

}  // namespace

FoldResult train_fold(net::Model& model, const std::vector<pre::Segment>& train_segments,
                      const std::vector<pre::Segment>& val_segments, const TrainConfig& config,
                      const std::filesystem::path& checkpoint_path) {
  config.validate();
  ad::tune_allocator_for_graphs();
  if (train_segments.empty() || val_segments.empty())
    throw std::invalid_argument("train_fold: empty train or validation set");

  const int64_t seg_len = model.config.input_len;
  auto params = model.params();

  FoldResult result;
  result.checkpoint_path = checkpoint_path;
  result.config_used = config;

  std::vector<size_t> order(train_segments.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<ad::NamedTensor> best_state;
  double best_auc = -1.0;
  int best_epoch = 0;
  int epochs_since_improvement = 0;
  uint64_t step = 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    Rng shuffle_rng(mix_key(config.seed, 0x65706f6368ULL, static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order.begin(), order.end());

    model.mode = net::Mode::Train;
    double epoch_loss = 0.0;
    size_t n_batches = 0;
    for (size_t start = 0; start < order.size(); start += config.batch_size) {
      size_t count = std::min<size_t>(config.batch_size, order.size() - start);
      std::vector<const pre::Segment*> ptrs(count);
      std::vector<int> labels(count);
      for (size_t i = 0; i < count; ++i) {
        ptrs[i] = &train_segments[order[start + i]];
        labels[i] = ptrs[i]->label;
      }
      auto logits = model.forward_logits(batch_tensor(ptrs, seg_len), net::Mode::Train, ++step);
      auto [loss, probs] = ad::softmax_cross_entropy<float>(logits, labels);
      double loss_value = loss->value.data[0];
      if (!std::isfinite(loss_value))
        throw std::runtime_error("training diverged: loss is not finite at epoch " +
                                 std::to_string(epoch) + ", batch " + std::to_string(n_batches) +
                                 " (try a lower learning rate)");
      ad::backward<float>(loss);
      ad::adam_step<float>(params, config.lr, config.beta1, config.beta2, config.adam_eps);
      epoch_loss += loss_value;
      ++n_batches;
    }
    epoch_loss /= static_cast<double>(n_batches);

    ValMetrics val = validate_model(model, val_segments, config.batch_size);
    result.epochs.push_back({epoch, epoch_loss, val.loss, val.auc});

    if (val.auc > best_auc + 1e-9) {
      best_auc = val.auc;
      best_epoch = epoch;
      best_state = model.state();
      epochs_since_improvement = 0;
    } else {
      ++epochs_since_improvement;
    }
    if (epochs_since_improvement >= config.patience) break;
  }

  model.load_state(best_state);
  result.best_epoch = best_epoch;
  result.best_val_auc = best_auc;
  if (!checkpoint_path.empty()) ad::save_checkpoint(checkpoint_path, best_state);
  return result;
}

void write_epoch_csv(const std::vector<EpochLog>& epochs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << "epoch,train_loss,val_loss,val_auc\n";
  char line[128];
  for (const auto& e : epochs) {
    std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g\n", e.epoch, e.train_loss, e.val_loss,
                  e.val_auc);
    out << line;
  }
}

std::vector<FoldResult> run_loo(const io::DatasetManifest& manifest, const LooOptions& options) {
  options.train.validate();
  std::filesystem::create_directories(options.out_dir);
  auto folds = loo_folds(manifest, options.group);

  const auto phases = options.group == io::Group::PPS
                          ? std::vector<io::Phase>{io::Phase::BL, io::Phase::EPG}
                          : std::vector<io::Phase>{io::Phase::EarlyCtrl, io::Phase::LateCtrl};

  // Hours are shared across folds; preprocess each at most once.
  std::map<std::tuple<std::string, io::Phase, int>, std::vector<pre::Segment>> segment_cache;
  auto segments_for = [&](const HourRef& ref) -> const std::vector<pre::Segment>& {
    auto key = std::make_tuple(ref.subject, ref.phase, ref.hour_index);
    auto it = segment_cache.find(key);
    if (it != segment_cache.end()) return it->second;
    auto record = io::read_record(ref.file);
    record.subject_id = ref.subject;
    record.phase = ref.phase;
    record.hour_index = ref.hour_index;
    auto segments =
        pre::preprocess_hour(record, options.train.filter, options.train.mad_multiplier,
                             options.train.seg_seconds, options.train.max_loss_fraction);
    return segment_cache.emplace(key, std::move(segments)).first->second;
  };

  std::vector<FoldResult> results;
  for (size_t f = 0; f < folds.size(); ++f) {
    const auto& fold = folds[f];

    std::vector<pre::Segment> pool;
    for (io::Phase phase : phases) {
      auto sampled = sample_hours(manifest, fold.train_subjects, phase,
                                  options.train.hours_per_phase, options.train.seed);
      for (const auto& ref : sampled.hours) {
        const auto& segs = segments_for(ref);
        pool.insert(pool.end(), segs.begin(), segs.end());
      }
    }
    auto [train_set, val_set] =
        split_train_val(std::move(pool), options.train.val_fraction,
                        mix_key(options.train.seed, fnv1a64(fold.held_out_subject)));

    auto model = net::Model::build(options.net,
                                   mix_key(options.train.seed, 0x6d6f64656cULL, f));
    auto checkpoint = options.out_dir / ("ckpt_" + fold.held_out_subject + ".ckpt");
    FoldResult result = train_fold(model, train_set, val_set, options.train, checkpoint);
    result.held_out_subject = fold.held_out_subject;
    write_epoch_csv(result.epochs, options.out_dir / ("metrics_" + fold.held_out_subject + ".csv"));

    // Test on every hour of the held-out subject.
    std::vector<pre::Segment> test_segments;
    for (const auto& e : manifest.entries) {
      if (e.subject_id != fold.held_out_subject) continue;
      const auto& segs = segments_for({e.subject_id, e.phase, e.hour_index, manifest.resolve(e)});
      test_segments.insert(test_segments.end(), segs.begin(), segs.end());
    }
    result.test_scores = eval::score_segments(model, test_segments);
    eval::write_scores_csv(result.test_scores,
                           options.out_dir / ("scores_" + fold.held_out_subject + ".csv"));
    results.push_back(std::move(result));
  }
  return results;
}

}  // namespace epg::train
