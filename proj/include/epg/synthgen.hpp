#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "epg/eeg_io.hpp"

namespace epg::synth {

// Knobs of the synthetic EEG generator. BL-like hours are pure 1/f^alpha
// background; EPG-like hours add a broadband gain over the configured band
// plus transient oscillatory bursts at the peak frequency and its harmonics.
struct SynthConfig {
  uint64_t seed = 0x5eed;
  uint32_t sampling_rate_hz = 512;
  double background_decay_exponent = 1.0;  // power ~ 1/f^alpha
  double background_rms_uv = 50.0;
  double epg_peak_hz = 22.0;
  int epg_harmonics = 2;  // 2 -> bursts also at 44 and 66 Hz
  double epg_band_gain_db = 6.0;
  double epg_band_low_hz = 20.0;
  double epg_band_high_hz = 100.0;
  double epg_event_rate_per_min = 12.0;
  double epg_burst_relative_amp = 2.0;  // burst amplitude as multiple of background RMS
  double dropout_fraction = 0.0;

  void validate() const;
};

// One hour of samples (3600 x rate), deterministic in (config, subject,
// phase, hour). EPG gets the oscillatory contrast; BL, EarlyCtrl and
// LateCtrl are drawn from the identical background distribution.
io::EegRecord generate_hour(const SynthConfig& config, const std::string& subject_id,
                            io::Phase phase, int hour_index);

// The dataset layout (subjects x phases x hours) without any I/O. PPS
// subjects get BL/EPG phases, controls get EarlyCtrl/LateCtrl.
std::vector<io::ManifestEntry> plan_dataset(int n_pps_subjects, int n_ctrl_subjects,
                                            int hours_per_phase);

// Writes records plus manifest.json into out_dir and returns the manifest.
io::DatasetManifest generate_dataset(const SynthConfig& config, int n_pps_subjects,
                                     int n_ctrl_subjects, int hours_per_phase,
                                     const std::filesystem::path& out_dir);

}  // namespace epg::synth
