#include "epg/eeg_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace epg::io {

namespace {

constexpr char kMagic[4] = {'E', 'E', 'G', 'R'};
constexpr uint16_t kVersion = 1;

void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}
void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint16_t get_u16(const unsigned char* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }
uint32_t get_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
uint64_t get_u64(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

}  // namespace

const char* to_string(Phase phase) {
  switch (phase) {
    case Phase::BL: return "BL";
    case Phase::EPG: return "EPG";
    case Phase::EarlyCtrl: return "EarlyCtrl";
    case Phase::LateCtrl: return "LateCtrl";
  }
  return "?";
}

const char* to_string(Group group) { return group == Group::PPS ? "PPS" : "Control"; }

Phase phase_from_string(std::string_view s) {
  if (s == "BL") return Phase::BL;
  if (s == "EPG") return Phase::EPG;
  if (s == "EarlyCtrl") return Phase::EarlyCtrl;
  if (s == "LateCtrl") return Phase::LateCtrl;
  throw std::invalid_argument("unknown phase label: '" + std::string(s) + "'");
}

Group group_from_string(std::string_view s) {
  if (s == "PPS") return Group::PPS;
  if (s == "Control") return Group::Control;
  throw std::invalid_argument("unknown group label: '" + std::string(s) + "'");
}

int class_label(Phase phase) {
  return (phase == Phase::EPG || phase == Phase::LateCtrl) ? 1 : 0;
}

Group group_of(Phase phase) {
  return (phase == Phase::BL || phase == Phase::EPG) ? Group::PPS : Group::Control;
}

void EegRecord::validate() const {
  if (sampling_rate_hz == 0) throw std::invalid_argument("record: sampling_rate_hz must be positive");
  if (samples.empty()) throw std::invalid_argument("record: samples must not be empty");
}

void write_record(const EegRecord& record, const std::filesystem::path& path) {
  record.validate();
  std::string buf;
  buf.reserve(20 + record.samples.size() * 4);
  buf.append(kMagic, 4);
  put_u16(buf, kVersion);
  put_u32(buf, record.sampling_rate_hz);
  put_u16(buf, 0);  // reserved
  put_u64(buf, record.samples.size());
  for (float v : record.samples) {
    uint32_t bits = std::bit_cast<uint32_t>(v);
    put_u32(buf, bits);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

EegRecord read_record(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open record file: " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());

  if (buf.size() < 20)
    throw std::runtime_error("record file " + path.string() + ": truncated header");
  if (std::memcmp(p, kMagic, 4) != 0)
    throw std::runtime_error("record file " + path.string() + ": bad magic (expected \"EEGR\")");
  uint16_t version = get_u16(p + 4);
  if (version != kVersion)
    throw std::runtime_error("record file " + path.string() + ": unsupported version " +
                             std::to_string(version));
  EegRecord rec;
  rec.sampling_rate_hz = get_u32(p + 6);
  if (rec.sampling_rate_hz == 0)
    throw std::runtime_error("record file " + path.string() + ": sampling_rate is zero");
  uint64_t count = get_u64(p + 12);
  if (buf.size() != 20 + count * 4)
    throw std::runtime_error("record file " + path.string() +
                             ": truncated payload (sample_count does not match file size)");
  rec.samples.resize(count);
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t bits = get_u32(p + 20 + i * 4);
    rec.samples[i] = std::bit_cast<float>(bits);
  }
  return rec;
}

std::vector<std::string> DatasetManifest::subjects(Group group) const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (e.group == group && seen.insert(e.subject_id).second) out.push_back(e.subject_id);
  }
  return out;
}

const ManifestEntry* DatasetManifest::find(const std::string& subject, Phase phase, int hour) const {
  for (const auto& e : entries) {
    if (e.subject_id == subject && e.phase == phase && e.hour_index == hour) return &e;
  }
  return nullptr;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const std::exception& e) {
    throw std::runtime_error("manifest " + path.string() + ": JSON parse error: " + e.what());
  }
  if (!doc.is_array()) throw std::runtime_error("manifest " + path.string() + ": expected a JSON array");

  DatasetManifest manifest;
  manifest.root = path.parent_path();
  std::vector<std::string> violations;
  std::map<std::tuple<std::string, std::string, int>, int> keys;

  for (size_t i = 0; i < doc.size(); ++i) {
    const auto& obj = doc[i];
    auto where = "entry " + std::to_string(i);
    try {
      ManifestEntry e;
      e.subject_id = obj.at("subject_id").get<std::string>();
      e.group = group_from_string(obj.at("group").get<std::string>());
      e.phase = phase_from_string(obj.at("phase").get<std::string>());
      e.hour_index = obj.at("hour_index").get<int>();
      e.file = obj.at("file").get<std::string>();

      if (e.hour_index < 0) violations.push_back(where + ": hour_index must be >= 0");
      if (group_of(e.phase) != e.group)
        violations.push_back(where + ": phase " + to_string(e.phase) +
                             " is not valid for group " + to_string(e.group));
      auto key = std::make_tuple(e.subject_id, std::string(to_string(e.phase)), e.hour_index);
      if (!keys.emplace(key, static_cast<int>(i)).second)
        violations.push_back(where + ": duplicate key (" + e.subject_id + ", " +
                             to_string(e.phase) + ", " + std::to_string(e.hour_index) + ")");
      auto full = manifest.root / e.file;
      if (!std::filesystem::exists(full)) {
        violations.push_back(where + ": file does not exist: " + full.string());
      } else {
        try {
          read_record(full);  // header + payload must parse
        } catch (const std::exception& ex) {
          violations.push_back(where + ": " + ex.what());
        }
      }
      manifest.entries.push_back(std::move(e));
    } catch (const std::exception& ex) {
      violations.push_back(where + ": " + ex.what());
    }
  }

  if (!violations.empty()) {
    std::ostringstream msg;
    msg << "manifest " << path.string() << ": " << violations.size() << " violation(s):";
    for (const auto& v : violations) msg << "\n  - " << v;
    throw std::runtime_error(msg.str());
  }
  return manifest;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& e : manifest.entries) {
    doc.push_back({{"subject_id", e.subject_id},
                   {"group", to_string(e.group)},
                   {"phase", to_string(e.phase)},
                   {"hour_index", e.hour_index},
                   {"file", e.file.generic_string()}});
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << doc.dump(2) << "\n";
}

bool operator==(const ManifestEntry& a, const ManifestEntry& b) {
  return a.subject_id == b.subject_id && a.group == b.group && a.phase == b.phase &&
         a.hour_index == b.hour_index && a.file == b.file;
}

bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
  return a.entries == b.entries;
}

}  // namespace epg::io
