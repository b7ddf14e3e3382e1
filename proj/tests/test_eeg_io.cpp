#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>

#include "epg/eeg_io.hpp"

using namespace epg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  auto dir = fs::temp_directory_path() / "epg_io_test";
  fs::create_directories(dir);
  return dir;
}

io::EegRecord sample_record(size_t n = 2560) {
  io::EegRecord rec;
  rec.subject_id = "P01";
  rec.phase = io::Phase::BL;
  rec.hour_index = 3;
  rec.sampling_rate_hz = 512;
  rec.samples.resize(n);
  for (size_t i = 0; i < n; ++i) rec.samples[i] = static_cast<float>(std::sin(0.01 * i));
  return rec;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("record round trip is bit exact, including NaN positions") {
  auto dir = temp_dir();
  auto rec = sample_record();
  rec.samples[100] = std::numeric_limits<float>::quiet_NaN();
  rec.samples[101] = std::numeric_limits<float>::quiet_NaN();
  auto path = dir / "roundtrip.eegr";
  io::write_record(rec, path);
  auto back = io::read_record(path);

  CHECK(back.sampling_rate_hz == rec.sampling_rate_hz);
  REQUIRE(back.samples.size() == rec.samples.size());
  for (size_t i = 0; i < rec.samples.size(); ++i) {
    CHECK(std::bit_cast<uint32_t>(back.samples[i]) == std::bit_cast<uint32_t>(rec.samples[i]));
  }
  CHECK(std::isnan(back.samples[100]));
  CHECK(std::isnan(back.samples[101]));
  CHECK(back.duration_seconds() == doctest::Approx(5.0));
}

TEST_CASE("two writes of the same record produce identical bytes") {
  auto dir = temp_dir();
  auto rec = sample_record();
  io::write_record(rec, dir / "a.eegr");
  io::write_record(rec, dir / "b.eegr");
  CHECK(slurp(dir / "a.eegr") == slurp(dir / "b.eegr"));
}

TEST_CASE("empty-samples record is rejected before write") {
  io::EegRecord rec;
  rec.sampling_rate_hz = 512;
  CHECK_THROWS_AS(io::write_record(rec, temp_dir() / "never.eegr"), std::invalid_argument);
}

TEST_CASE("wrong magic yields a format error naming the field") {
  auto dir = temp_dir();
  auto path = dir / "badmagic.eegr";
  std::ofstream(path, std::ios::binary) << "NOPE" << std::string(16, '\0');
  CHECK_THROWS_WITH_AS(io::read_record(path), doctest::Contains("magic"), std::runtime_error);
}

TEST_CASE("truncated payload is rejected") {
  auto dir = temp_dir();
  auto rec = sample_record(16);
  auto path = dir / "trunc.eegr";
  io::write_record(rec, path);
  auto bytes = slurp(path);
  std::ofstream(path, std::ios::binary | std::ios::trunc)
      << bytes.substr(0, bytes.size() - 5);
  CHECK_THROWS_WITH_AS(io::read_record(path), doctest::Contains("truncated"), std::runtime_error);
}

TEST_CASE("unsupported version is rejected") {
  auto dir = temp_dir();
  auto rec = sample_record(4);
  auto path = dir / "version.eegr";
  io::write_record(rec, path);
  auto bytes = slurp(path);
  bytes[4] = 9;  // version field
  std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes;
  CHECK_THROWS_WITH_AS(io::read_record(path), doctest::Contains("version"), std::runtime_error);
}

TEST_CASE("manifest round trip groups subjects correctly") {
  auto dir = temp_dir() / "manifest_ok";
  fs::create_directories(dir);
  io::DatasetManifest manifest;
  manifest.root = dir;
  for (int s = 1; s <= 7; ++s) {
    for (auto phase : {io::Phase::BL, io::Phase::EPG}) {
      char subject[8], file[64];
      std::snprintf(subject, sizeof(subject), "P%02d", s);
      std::snprintf(file, sizeof(file), "%s_%s.eegr", subject, io::to_string(phase));
      auto rec = sample_record(512);
      rec.subject_id = subject;
      rec.phase = phase;
      io::write_record(rec, dir / file);
      manifest.entries.push_back({subject, io::Group::PPS, phase, 0, file});
    }
  }
  io::write_manifest(manifest, dir / "manifest.json");
  auto loaded = io::load_manifest(dir / "manifest.json");
  CHECK(loaded.entries.size() == 14);
  CHECK(loaded.subjects(io::Group::PPS).size() == 7);
  CHECK(loaded.subjects(io::Group::Control).empty());

  // Loading is pure: a second load yields an equal structure.
  auto again = io::load_manifest(dir / "manifest.json");
  CHECK(loaded == again);
}

TEST_CASE("manifest validation reports every violation") {
  auto dir = temp_dir() / "manifest_bad";
  fs::create_directories(dir);
  auto rec = sample_record(512);
  io::write_record(rec, dir / "ok.eegr");

  std::ofstream(dir / "manifest.json") << R"([
    {"subject_id":"P01","group":"PPS","phase":"BL","hour_index":0,"file":"ok.eegr"},
    {"subject_id":"P01","group":"PPS","phase":"BL","hour_index":0,"file":"ok.eegr"},
    {"subject_id":"P02","group":"PPS","phase":"BL","hour_index":1,"file":"missing.eegr"},
    {"subject_id":"P03","group":"PPS","phase":"Wrong","hour_index":0,"file":"ok.eegr"}
  ])";
  try {
    io::load_manifest(dir / "manifest.json");
    FAIL("expected validation error");
  } catch (const std::runtime_error& e) {
    std::string msg = e.what();
    CHECK(msg.find("duplicate key (P01, BL, 0)") != std::string::npos);
    CHECK(msg.find("missing.eegr") != std::string::npos);
    CHECK(msg.find("Wrong") != std::string::npos);
  }
}

TEST_CASE("manifest rejects phase labels outside the subject group") {
  auto dir = temp_dir() / "manifest_phase";
  fs::create_directories(dir);
  io::write_record(sample_record(512), dir / "ok.eegr");
  std::ofstream(dir / "manifest.json") << R"([
    {"subject_id":"C01","group":"Control","phase":"BL","hour_index":0,"file":"ok.eegr"}
  ])";
  CHECK_THROWS_WITH_AS(io::load_manifest(dir / "manifest.json"),
                       doctest::Contains("not valid for group"), std::runtime_error);
}

TEST_CASE("phase and label helpers") {
  CHECK(io::class_label(io::Phase::BL) == 0);
  CHECK(io::class_label(io::Phase::EarlyCtrl) == 0);
  CHECK(io::class_label(io::Phase::EPG) == 1);
  CHECK(io::class_label(io::Phase::LateCtrl) == 1);
  CHECK(io::phase_from_string("EPG") == io::Phase::EPG);
  CHECK_THROWS(io::phase_from_string("epg"));
}
