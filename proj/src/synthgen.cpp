#include "epg/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>

#include "epg/common.hpp"
#include "epg/fft.hpp"

namespace epg::synth {

namespace {

constexpr int kSecondsPerHour = 3600;

uint64_t hour_key(const SynthConfig& config, const std::string& subject_id, io::Phase phase,
                  int hour_index) {
  return mix_key(config.seed, fnv1a64(subject_id), static_cast<uint64_t>(phase),
                 static_cast<uint64_t>(hour_index));
}

// 1/f^alpha Gaussian background synthesized in the frequency domain. The
// normalization constant comes from the expected (not realized) spectrum, so
// an EPG band gain shifts band power without touching out-of-band scale.
std::vector<float> background_hour(const SynthConfig& config, Rng& rng, bool epg_contrast) {
  const size_t n = static_cast<size_t>(kSecondsPerHour) * config.sampling_rate_hz;
  const size_t nfft = dsp::next_power_of_two(n);
  const double fs = config.sampling_rate_hz;
  const double alpha = config.background_decay_exponent;

  std::vector<double> amp(nfft / 2 + 1, 0.0);
  double expected_power = 0.0;  // E[x_t^2] for unit-scale amplitudes
  for (size_t k = 1; k <= nfft / 2; ++k) {
    double f = static_cast<double>(k) * fs / static_cast<double>(nfft);
    amp[k] = std::pow(f, -alpha / 2.0);
    expected_power += (k == nfft / 2 ? 1.0 : 2.0) * amp[k] * amp[k];
  }
  expected_power /= static_cast<double>(nfft) * static_cast<double>(nfft);
  const double scale = config.background_rms_uv / std::sqrt(expected_power);
  for (auto& a : amp) a *= scale;

  if (epg_contrast && config.epg_band_gain_db != 0.0) {
    const double gain = std::pow(10.0, config.epg_band_gain_db / 20.0);
    for (size_t k = 1; k <= nfft / 2; ++k) {
      double f = static_cast<double>(k) * fs / static_cast<double>(nfft);
      if (f >= config.epg_band_low_hz && f <= config.epg_band_high_hz) amp[k] *= gain;
    }
  }

  std::vector<std::complex<double>> spec(nfft, {0.0, 0.0});
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  for (size_t k = 1; k < nfft / 2; ++k) {
    double re = rng.normal() * inv_sqrt2;
    double im = rng.normal() * inv_sqrt2;
    spec[k] = std::complex<double>(re, im) * amp[k];
    spec[nfft - k] = std::conj(spec[k]);
  }
  spec[nfft / 2] = std::complex<double>(rng.normal() * amp[nfft / 2], 0.0);

  dsp::fft_inplace(spec, true);
  std::vector<float> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = static_cast<float>(spec[i].real());
  return out;
}

// Hann-windowed sinusoid packets at the peak frequency and its harmonics,
// superimposed at the configured Poisson rate.
void add_bursts(const SynthConfig& config, Rng& rng, std::vector<float>& samples) {
  if (config.epg_event_rate_per_min <= 0.0 || config.epg_burst_relative_amp <= 0.0) return;
  const double fs = config.sampling_rate_hz;
  const int n_bursts = rng.poisson(config.epg_event_rate_per_min * 60.0);
  const double base_amp = config.epg_burst_relative_amp * config.background_rms_uv;

  for (int b = 0; b < n_bursts; ++b) {
    double dur_s = rng.uniform(0.5, 2.0);
    size_t len = static_cast<size_t>(dur_s * fs);
    double t0 = rng.uniform(0.0, kSecondsPerHour - dur_s);
    size_t start = static_cast<size_t>(t0 * fs);
    std::vector<double> phases(static_cast<size_t>(config.epg_harmonics) + 1);
    for (auto& p : phases) p = rng.uniform(0.0, 2.0 * M_PI);

    for (size_t i = 0; i < len && start + i < samples.size(); ++i) {
      double env = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(len));
      double t = static_cast<double>(i) / fs;
      double v = 0.0;
      for (int h = 0; h <= config.epg_harmonics; ++h) {
        double f = config.epg_peak_hz * (h + 1);
        v += base_amp / (h + 1.0) * std::sin(2.0 * M_PI * f * t + phases[h]);
      }
      samples[start + i] += static_cast<float>(env * v);
    }
  }
}

// Contiguous NaN runs mimicking transmission dropout.
void add_dropout(const SynthConfig& config, Rng& rng, std::vector<float>& samples) {
  if (config.dropout_fraction <= 0.0) return;
  const double fs = config.sampling_rate_hz;
  const size_t target = static_cast<size_t>(config.dropout_fraction * samples.size());
  const float nan = std::numeric_limits<float>::quiet_NaN();
  size_t lost = 0;
  int guard = 0;
  while (lost < target && guard++ < 1'000'000) {
    size_t run = static_cast<size_t>(rng.uniform(0.25, 5.0) * fs);
    run = std::min(run, target - lost + run / 4);  // don't badly overshoot
    size_t start = rng.uniform_index(samples.size());
    for (size_t i = start; i < std::min(start + run, samples.size()); ++i) {
      if (!std::isnan(samples[i])) {
        samples[i] = nan;
        ++lost;
      }
    }
  }
}

}  // namespace

void SynthConfig::validate() const {
  const double nyquist = sampling_rate_hz / 2.0;
  if (sampling_rate_hz == 0) throw std::invalid_argument("synth config: sampling rate must be positive");
  if (epg_peak_hz * (epg_harmonics + 1) >= nyquist)
    throw std::invalid_argument("synth config: peak frequency and harmonics must stay below Nyquist");
  if (epg_harmonics < 0) throw std::invalid_argument("synth config: harmonics must be >= 0");
  if (dropout_fraction < 0.0 || dropout_fraction >= 1.0)
    throw std::invalid_argument("synth config: dropout_fraction must be in [0, 1)");
  if (epg_event_rate_per_min < 0.0)
    throw std::invalid_argument("synth config: event rate must be >= 0");
  if (background_rms_uv <= 0.0) throw std::invalid_argument("synth config: background RMS must be positive");
}

io::EegRecord generate_hour(const SynthConfig& config, const std::string& subject_id,
                            io::Phase phase, int hour_index) {
  config.validate();
  if (hour_index < 0) throw std::invalid_argument("generate_hour: hour_index must be >= 0");

  Rng rng(hour_key(config, subject_id, phase, hour_index));
  const bool epg_contrast = (phase == io::Phase::EPG);

  io::EegRecord rec;
  rec.subject_id = subject_id;
  rec.phase = phase;
  rec.hour_index = hour_index;
  rec.sampling_rate_hz = config.sampling_rate_hz;
  rec.samples = background_hour(config, rng, epg_contrast);
  if (epg_contrast) add_bursts(config, rng, rec.samples);
  add_dropout(config, rng, rec.samples);
  return rec;
}

std::vector<io::ManifestEntry> plan_dataset(int n_pps_subjects, int n_ctrl_subjects,
                                            int hours_per_phase) {
  if (n_pps_subjects < 0 || n_ctrl_subjects < 0 || n_pps_subjects + n_ctrl_subjects < 1)
    throw std::invalid_argument("plan_dataset: need at least one subject");
  if (hours_per_phase < 1) throw std::invalid_argument("plan_dataset: hours_per_phase must be >= 1");

  std::vector<io::ManifestEntry> entries;
  auto emit = [&entries, hours_per_phase](const std::string& subject, io::Group group,
                                          io::Phase phase) {
    for (int h = 0; h < hours_per_phase; ++h) {
      char name[64];
      std::snprintf(name, sizeof(name), "%s_%s_%03d.eegr", subject.c_str(), io::to_string(phase), h);
      entries.push_back({subject, group, phase, h, name});
    }
  };
  for (int s = 0; s < n_pps_subjects; ++s) {
    char subject[16];
    std::snprintf(subject, sizeof(subject), "P%02d", s + 1);
    emit(subject, io::Group::PPS, io::Phase::BL);
    emit(subject, io::Group::PPS, io::Phase::EPG);
  }
  for (int s = 0; s < n_ctrl_subjects; ++s) {
    char subject[16];
    std::snprintf(subject, sizeof(subject), "C%02d", s + 1);
    emit(subject, io::Group::Control, io::Phase::EarlyCtrl);
    emit(subject, io::Group::Control, io::Phase::LateCtrl);
  }
  return entries;
}

io::DatasetManifest generate_dataset(const SynthConfig& config, int n_pps_subjects,
                                     int n_ctrl_subjects, int hours_per_phase,
                                     const std::filesystem::path& out_dir) {
  config.validate();
  std::filesystem::create_directories(out_dir);

  io::DatasetManifest manifest;
  manifest.root = out_dir;
  manifest.entries = plan_dataset(n_pps_subjects, n_ctrl_subjects, hours_per_phase);
  for (const auto& e : manifest.entries) {
    auto rec = generate_hour(config, e.subject_id, e.phase, e.hour_index);
    io::write_record(rec, out_dir / e.file);
  }
  io::write_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

}  // namespace epg::synth
