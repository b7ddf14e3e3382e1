#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "epg/eeg_io.hpp"

namespace epg::pre {

// Corner frequencies and notch parameters of the preprocessing chain.
struct FilterSpec {
  double band_low_hz = 0.5;
  double band_high_hz = 160.0;
  double notch_hz = 50.0;
  double notch_q = 30.0;
  int filter_order = 4;  // per band edge; must be even

  void validate(double sampling_rate_hz) const;
};

// A fixed-length labeled window, the network's input unit. Accepted segments
// are NaN-free; `segment_index` is the temporal position within the hour
// (gaps from discarded windows keep their index).
struct Segment {
  std::string subject_id;
  io::Phase phase = io::Phase::BL;
  int hour_index = 0;
  int segment_index = 0;
  double start_offset_s = 0.0;
  std::vector<float> values;
  int label = 0;
};

// Second-order IIR section, direct form II transposed coefficients.
struct Biquad {
  double b0, b1, b2, a1, a2;
};

std::vector<Biquad> butterworth_lowpass_sos(int order, double cutoff_hz, double fs);
std::vector<Biquad> butterworth_highpass_sos(int order, double cutoff_hz, double fs);
Biquad notch_biquad(double center_hz, double q, double fs);

// Zero-phase (forward-backward) filtering of a contiguous NaN-free run,
// with odd-symmetric edge extension of `padlen` samples.
void filtfilt(std::span<float> run, const std::vector<Biquad>& sections, int padlen);

// Band-pass per FilterSpec. NaN runs are preserved; each contiguous valid run
// is filtered independently, and runs shorter than 3x filter_order pass
// through unchanged.
io::EegRecord bandpass(const io::EegRecord& record, const FilterSpec& spec = {});
io::EegRecord notch(const io::EegRecord& record, const FilterSpec& spec = {});

// Replaces samples with |x - median| > multiplier * MAD by the NaN loss
// sentinel. Median/MAD are computed over the record's valid samples. MAD == 0
// disables the rule.
io::EegRecord remove_outliers(const io::EegRecord& record, double mad_multiplier = 8.0);

// Non-overlapping windows of seg_seconds. Windows whose NaN fraction exceeds
// max_loss_fraction (strictly) are discarded; survivors get NaNs repaired by
// linear interpolation (edges held). The trailing partial window is dropped.
std::vector<Segment> segment_hour(const io::EegRecord& record, double seg_seconds = 5.0,
                                  double max_loss_fraction = 0.2);

// bandpass -> notch -> remove_outliers -> segment_hour.
std::vector<Segment> preprocess_hour(const io::EegRecord& record, const FilterSpec& spec = {},
                                     double mad_multiplier = 8.0, double seg_seconds = 5.0,
                                     double max_loss_fraction = 0.2);

// Flat binary segment batch: magic "SEGB", u32 count, u32 seg_len,
// count*seg_len little-endian binary32 values, then count u8 labels.
void write_segment_batch(const std::vector<Segment>& segments, const std::filesystem::path& path);

struct SegmentBatch {
  uint32_t seg_len = 0;
  std::vector<float> values;   // count * seg_len, row-major
  std::vector<uint8_t> labels; // count
  size_t count() const { return labels.size(); }
};
SegmentBatch read_segment_batch(const std::filesystem::path& path);

}  // namespace epg::pre
