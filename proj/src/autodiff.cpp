#include "epg/autodiff.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace epg::ad {

void tune_allocator_for_graphs() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)done;
#endif
}

namespace {

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

struct Reader {
  const unsigned char* p;
  size_t remaining;
  std::string where;

  void need(size_t n) {
    if (remaining < n) throw std::runtime_error("checkpoint " + where + ": truncated");
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(p[0] | (p[1] << 8));
    p += 2;
    remaining -= 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
    p += 4;
    remaining -= 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    p += 8;
    remaining -= 8;
    return v;
  }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p), n);
    p += n;
    remaining -= n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::string buf;
  buf.append("CKPT", 4);
  put_u16(buf, 1);
  put_u32(buf, static_cast<uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put_u16(buf, static_cast<uint16_t>(t.name.size()));
    buf.append(t.name);
    put_u32(buf, static_cast<uint32_t>(t.shape.size()));
    for (int64_t d : t.shape) put_u64(buf, static_cast<uint64_t>(d));
    for (float v : t.data) put_u32(buf, std::bit_cast<uint32_t>(v));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("checkpoint write failed: " + path.string());
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r{reinterpret_cast<const unsigned char*>(buf.data()), buf.size(), path.string()};

  if (r.str(4) != "CKPT")
    throw std::runtime_error("checkpoint " + path.string() + ": bad magic (expected \"CKPT\")");
  uint16_t version = r.u16();
  if (version != 1)
    throw std::runtime_error("checkpoint " + path.string() + ": unsupported version " +
                             std::to_string(version));
  uint32_t count = r.u32();
  std::vector<NamedTensor> tensors(count);
  for (auto& t : tensors) {
    uint16_t name_len = r.u16();
    t.name = r.str(name_len);
    uint32_t rank = r.u32();
    int64_t numel = 1;
    t.shape.resize(rank);
    for (auto& d : t.shape) {
      d = static_cast<int64_t>(r.u64());
      numel *= d;
    }
    t.data.resize(static_cast<size_t>(numel));
    for (auto& v : t.data) v = std::bit_cast<float>(r.u32());
  }
  return tensors;
}

}  // namespace epg::ad
