#include "epg/preprocess.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace epg::pre {

namespace {

bool is_lost(float v) { return std::isnan(v); }

// (start, length) of contiguous NaN-free runs.
std::vector<std::pair<size_t, size_t>> valid_runs(const std::vector<float>& x) {
  std::vector<std::pair<size_t, size_t>> runs;
  size_t i = 0;
  while (i < x.size()) {
    if (is_lost(x[i])) {
      ++i;
      continue;
    }
    size_t start = i;
    while (i < x.size() && !is_lost(x[i])) ++i;
    runs.emplace_back(start, i - start);
  }
  return runs;
}

double median_inplace(std::vector<double>& v) {
  const size_t n = v.size();
  auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(v.begin(), mid, v.end());
  double m = *mid;
  if (n % 2 == 0) {
    auto lo = std::max_element(v.begin(), mid);
    m = 0.5 * (m + *lo);
  }
  return m;
}

void apply_sos_forward(std::span<double> x, const std::vector<Biquad>& sections) {
  for (const auto& s : sections) {
    double z1 = 0.0, z2 = 0.0;  // transposed direct form II state
    for (double& v : x) {
      double in = v;
      double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
  }
}

}  // namespace

void FilterSpec::validate(double fs) const {
  const double nyquist = fs / 2.0;
  if (!(band_low_hz > 0.0 && band_low_hz < band_high_hz && band_high_hz < nyquist))
    throw std::invalid_argument("filter spec: need 0 < band_low < band_high < Nyquist");
  if (!(notch_hz > band_low_hz && notch_hz < band_high_hz))
    throw std::invalid_argument("filter spec: notch frequency must lie inside the pass band");
  if (notch_q <= 0.0) throw std::invalid_argument("filter spec: notch_q must be positive");
  if (filter_order < 2 || filter_order % 2 != 0)
    throw std::invalid_argument("filter spec: filter_order must be a positive even integer");
}

std::vector<Biquad> butterworth_lowpass_sos(int order, double cutoff_hz, double fs) {
  if (order < 2 || order % 2 != 0) throw std::invalid_argument("butterworth: order must be even");
  const double w0 = 2.0 * M_PI * cutoff_hz / fs;
  const double cw = std::cos(w0), sw = std::sin(w0);
  std::vector<Biquad> sos;
  for (int i = 0; i < order / 2; ++i) {
    // Butterworth pole-pair Q values for the analog prototype.
    double theta = M_PI * (2.0 * i + 1.0) / (2.0 * order);
    double q = 1.0 / (2.0 * std::cos(theta));
    double alpha = sw / (2.0 * q);
    double a0 = 1.0 + alpha;
    Biquad s;
    s.b0 = (1.0 - cw) / 2.0 / a0;
    s.b1 = (1.0 - cw) / a0;
    s.b2 = (1.0 - cw) / 2.0 / a0;
    s.a1 = (-2.0 * cw) / a0;
    s.a2 = (1.0 - alpha) / a0;
    sos.push_back(s);
  }
  return sos;
}

std::vector<Biquad> butterworth_highpass_sos(int order, double cutoff_hz, double fs) {
  if (order < 2 || order % 2 != 0) throw std::invalid_argument("butterworth: order must be even");
  const double w0 = 2.0 * M_PI * cutoff_hz / fs;
  const double cw = std::cos(w0), sw = std::sin(w0);
  std::vector<Biquad> sos;
  for (int i = 0; i < order / 2; ++i) {
    double theta = M_PI * (2.0 * i + 1.0) / (2.0 * order);
    double q = 1.0 / (2.0 * std::cos(theta));
    double alpha = sw / (2.0 * q);
    double a0 = 1.0 + alpha;
    Biquad s;
    s.b0 = (1.0 + cw) / 2.0 / a0;
    s.b1 = -(1.0 + cw) / a0;
    s.b2 = (1.0 + cw) / 2.0 / a0;
    s.a1 = (-2.0 * cw) / a0;
    s.a2 = (1.0 - alpha) / a0;
    sos.push_back(s);
  }
  return sos;
}

Biquad notch_biquad(double center_hz, double q, double fs) {
  const double w0 = 2.0 * M_PI * center_hz / fs;
  const double cw = std::cos(w0), sw = std::sin(w0);
  const double alpha = sw / (2.0 * q);
  const double a0 = 1.0 + alpha;
  Biquad s;
  s.b0 = 1.0 / a0;
  s.b1 = -2.0 * cw / a0;
  s.b2 = 1.0 / a0;
  s.a1 = -2.0 * cw / a0;
  s.a2 = (1.0 - alpha) / a0;
  return s;
}

void filtfilt(std::span<float> run, const std::vector<Biquad>& sections, int padlen) {
  const size_t n = run.size();
  if (n < 2) return;
  const size_t pad = std::min<size_t>(static_cast<size_t>(std::max(padlen, 0)), n - 1);

  // Odd-symmetric extension on both ends damps edge transients.
  std::vector<double> ext(n + 2 * pad);
  for (size_t i = 0; i < pad; ++i) ext[i] = 2.0 * run[0] - run[pad - i];
  for (size_t i = 0; i < n; ++i) ext[pad + i] = run[i];
  for (size_t i = 0; i < pad; ++i) ext[pad + n + i] = 2.0 * run[n - 1] - run[n - 2 - i];

  apply_sos_forward(ext, sections);
  std::reverse(ext.begin(), ext.end());
  apply_sos_forward(ext, sections);
  std::reverse(ext.begin(), ext.end());

  for (size_t i = 0; i < n; ++i) run[i] = static_cast<float>(ext[pad + i]);
}

namespace {

io::EegRecord filter_per_run(const io::EegRecord& record, const std::vector<Biquad>& sections,
                             int min_run, int padlen) {
  io::EegRecord out = record;
  for (auto [start, len] : valid_runs(out.samples)) {
    if (len < static_cast<size_t>(min_run)) continue;  // too short, pass through
    filtfilt(std::span<float>(out.samples.data() + start, len), sections, padlen);
  }
  return out;
}

}  // namespace

io::EegRecord bandpass(const io::EegRecord& record, const FilterSpec& spec) {
  spec.validate(record.sampling_rate_hz);
  auto sos = butterworth_highpass_sos(spec.filter_order, spec.band_low_hz, record.sampling_rate_hz);
  auto lp = butterworth_lowpass_sos(spec.filter_order, spec.band_high_hz, record.sampling_rate_hz);
  sos.insert(sos.end(), lp.begin(), lp.end());
  // Edge padding sized to the slowest corner's settling time.
  int padlen = static_cast<int>(3.0 * record.sampling_rate_hz / spec.band_low_hz);
  return filter_per_run(record, sos, 3 * spec.filter_order, padlen);
}

io::EegRecord notch(const io::EegRecord& record, const FilterSpec& spec) {
  spec.validate(record.sampling_rate_hz);
  std::vector<Biquad> sos{notch_biquad(spec.notch_hz, spec.notch_q, record.sampling_rate_hz)};
  int padlen = static_cast<int>(3.0 * record.sampling_rate_hz * spec.notch_q / spec.notch_hz);
  return filter_per_run(record, sos, 3 * spec.filter_order, padlen);
}

io::EegRecord remove_outliers(const io::EegRecord& record, double mad_multiplier) {
  if (mad_multiplier <= 0.0) throw std::invalid_argument("remove_outliers: multiplier must be positive");
  std::vector<double> valid;
  valid.reserve(record.samples.size());
  for (float v : record.samples)
    if (!is_lost(v)) valid.push_back(v);
  if (valid.empty())
    throw std::invalid_argument("remove_outliers: record has no valid samples");

  double med = median_inplace(valid);
  for (double& v : valid) v = std::abs(v - med);
  double mad = median_inplace(valid);

  io::EegRecord out = record;
  if (mad == 0.0) return out;  // rule disabled for constant signals
  const double limit = mad_multiplier * mad;
  for (float& v : out.samples) {
    if (!is_lost(v) && std::abs(static_cast<double>(v) - med) > limit)
      v = std::numeric_limits<float>::quiet_NaN();
  }
  return out;
}

std::vector<Segment> segment_hour(const io::EegRecord& record, double seg_seconds,
                                  double max_loss_fraction) {
  if (record.samples.empty()) throw std::invalid_argument("segment_hour: record has no samples");
  const size_t seg_len = static_cast<size_t>(std::llround(seg_seconds * record.sampling_rate_hz));
  if (seg_len == 0) throw std::invalid_argument("segment_hour: segment length is zero");

  std::vector<Segment> out;
  const size_t n_windows = record.samples.size() / seg_len;  // trailing partial dropped
  for (size_t w = 0; w < n_windows; ++w) {
    const float* src = record.samples.data() + w * seg_len;
    size_t lost = 0;
    for (size_t i = 0; i < seg_len; ++i)
      if (is_lost(src[i])) ++lost;
    double frac = static_cast<double>(lost) / static_cast<double>(seg_len);
    if (frac > max_loss_fraction) continue;  // strictly more than the budget

    Segment seg;
    seg.subject_id = record.subject_id;
    seg.phase = record.phase;
    seg.hour_index = record.hour_index;
    seg.segment_index = static_cast<int>(w);
    seg.start_offset_s = static_cast<double>(w) * seg_seconds;
    seg.label = io::class_label(record.phase);
    seg.values.assign(src, src + seg_len);

    if (lost > 0) {
      // Linear interpolation between valid neighbors; edges held.
      auto& v = seg.values;
      size_t i = 0;
      while (i < seg_len) {
        if (!is_lost(v[i])) {
          ++i;
          continue;
        }
        size_t gap_start = i;
        while (i < seg_len && is_lost(v[i])) ++i;
        size_t gap_end = i;  // one past the gap
        if (gap_start == 0 && gap_end == seg_len) break;  // cannot happen: frac <= 0.2 < 1
        if (gap_start == 0) {
          std::fill(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(gap_end), v[gap_end]);
        } else if (gap_end == seg_len) {
          std::fill(v.begin() + static_cast<std::ptrdiff_t>(gap_start), v.end(), v[gap_start - 1]);
        } else {
          float left = v[gap_start - 1], right = v[gap_end];
          double span = static_cast<double>(gap_end - gap_start + 1);
          for (size_t j = gap_start; j < gap_end; ++j) {
            double t = static_cast<double>(j - gap_start + 1) / span;
            v[j] = static_cast<float>(left + t * (right - left));
          }
        }
      }
    }
    out.push_back(std::move(seg));
  }
  return out;
}

std::vector<Segment> preprocess_hour(const io::EegRecord& record, const FilterSpec& spec,
                                     double mad_multiplier, double seg_seconds,
                                     double max_loss_fraction) {
  if (record.samples.empty()) throw std::invalid_argument("preprocess_hour: record has no samples");
  io::EegRecord filtered = notch(bandpass(record, spec), spec);
  filtered = remove_outliers(filtered, mad_multiplier);
  return segment_hour(filtered, seg_seconds, max_loss_fraction);
}

void write_segment_batch(const std::vector<Segment>& segments, const std::filesystem::path& path) {
  if (segments.empty()) throw std::invalid_argument("write_segment_batch: no segments");
  const uint32_t seg_len = static_cast<uint32_t>(segments.front().values.size());
  for (const auto& s : segments)
    if (s.values.size() != seg_len)
      throw std::invalid_argument("write_segment_batch: inconsistent segment lengths");

  std::string buf;
  buf.reserve(12 + segments.size() * (seg_len * 4 + 1));
  buf.append("SEGB", 4);
  auto put_u32 = [&buf](uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  put_u32(static_cast<uint32_t>(segments.size()));
  put_u32(seg_len);
  for (const auto& s : segments)
    for (float v : s.values) put_u32(std::bit_cast<uint32_t>(v));
  for (const auto& s : segments) buf.push_back(static_cast<char>(s.label));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

SegmentBatch read_segment_batch(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open segment batch: " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  if (buf.size() < 12 || std::memcmp(p, "SEGB", 4) != 0)
    throw std::runtime_error("segment batch " + path.string() + ": bad magic");
  auto get_u32 = [p](size_t off) {
    return static_cast<uint32_t>(p[off]) | (static_cast<uint32_t>(p[off + 1]) << 8) |
           (static_cast<uint32_t>(p[off + 2]) << 16) | (static_cast<uint32_t>(p[off + 3]) << 24);
  };
  SegmentBatch batch;
  uint32_t count = get_u32(4);
  batch.seg_len = get_u32(8);
  size_t expect = 12 + static_cast<size_t>(count) * batch.seg_len * 4 + count;
  if (buf.size() != expect)
    throw std::runtime_error("segment batch " + path.string() + ": truncated payload");
  batch.values.resize(static_cast<size_t>(count) * batch.seg_len);
  for (size_t i = 0; i < batch.values.size(); ++i)
    batch.values[i] = std::bit_cast<float>(get_u32(12 + i * 4));
  batch.labels.assign(p + 12 + batch.values.size() * 4, p + expect);
  return batch;
}

}  // namespace epg::pre
