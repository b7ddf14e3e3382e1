#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace epg::io {

// Recording phases. BL/EPG belong to stimulated subjects, EarlyCtrl/LateCtrl
// to control subjects.
enum class Phase { BL, EPG, EarlyCtrl, LateCtrl };
enum class Group { PPS, Control };

const char* to_string(Phase phase);
const char* to_string(Group group);
Phase phase_from_string(std::string_view s);
Group group_from_string(std::string_view s);

// Class label: 0 for BL/EarlyCtrl, 1 for EPG/LateCtrl.
int class_label(Phase phase);
Group group_of(Phase phase);

// One continuous single-channel recording. A lost sample is encoded as a
// quiet NaN, both in memory and on disk.
struct EegRecord {
  std::string subject_id;
  Phase phase = Phase::BL;
  int hour_index = 0;
  uint32_t sampling_rate_hz = 512;
  std::vector<float> samples;

  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sampling_rate_hz;
  }
  void validate() const;  // throws std::invalid_argument on violation
};

// Record file layout: magic "EEGR", u16 version (=1), u32 sampling_rate,
// u16 reserved, u64 sample_count, then little-endian IEEE-754 binary32
// samples. Byte-deterministic; NaN payloads are preserved bit-exactly.
void write_record(const EegRecord& record, const std::filesystem::path& path);
EegRecord read_record(const std::filesystem::path& path);

struct ManifestEntry {
  std::string subject_id;
  Group group = Group::PPS;
  Phase phase = Phase::BL;
  int hour_index = 0;
  std::filesystem::path file;  // relative to the manifest directory
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::filesystem::path root;  // directory the manifest was loaded from

  std::vector<std::string> subjects(Group group) const;
  const ManifestEntry* find(const std::string& subject, Phase phase, int hour) const;
  std::filesystem::path resolve(const ManifestEntry& e) const { return root / e.file; }
};

// Loads and eagerly validates a manifest (JSON array of entries). All
// violations are collected and reported together, not just the first.
DatasetManifest load_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

bool operator==(const ManifestEntry& a, const ManifestEntry& b);
bool operator==(const DatasetManifest& a, const DatasetManifest& b);

}  // namespace epg::io
