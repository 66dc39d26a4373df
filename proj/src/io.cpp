#include "duplex/io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace duplex::io {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr uint32_t kFormatVersion = 1;

void put_u16(std::ostream& os, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<char*>(b), 2);
}

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<char*>(b), 8);
}

void put_f32(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

float get_f32(std::istream& is) {
  const uint32_t bits = get_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  return os;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path.string());
  return is;
}

void check_magic(std::istream& is, const char expect[4], const fs::path& path) {
  char m[4];
  is.read(m, 4);
  if (!is || std::memcmp(m, expect, 4) != 0)
    throw std::runtime_error("bad magic in " + path.string());
}

}  // namespace

void write_features(const fs::path& path, const FeatureSequence& f) {
  auto os = open_out(path);
  os.write("DLXF", 4);
  put_u32(os, kFormatVersion);
  put_u32(os, static_cast<uint32_t>(f.num_frames));
  put_u32(os, static_cast<uint32_t>(f.dim));
  for (double v : f.data) put_f32(os, static_cast<float>(v));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

FeatureSequence read_features(const fs::path& path, int frame_period_ms) {
  auto is = open_in(path);
  check_magic(is, "DLXF", path);
  const uint32_t version = get_u32(is);
  if (version != kFormatVersion)
    throw std::runtime_error("unsupported feature file version in " + path.string());
  FeatureSequence f;
  f.num_frames = static_cast<int>(get_u32(is));
  f.dim = static_cast<int>(get_u32(is));
  f.frame_period_ms = frame_period_ms;
  f.data.resize(static_cast<size_t>(f.num_frames) * f.dim);
  for (auto& v : f.data) v = static_cast<double>(get_f32(is));
  if (!is) throw std::runtime_error("truncated feature file: " + path.string());
  return f;
}

void write_arrays(const fs::path& path, const std::vector<NamedArray>& arrays,
                  const char magic[4]) {
  auto os = open_out(path);
  os.write(magic, 4);
  put_u32(os, kFormatVersion);
  put_u64(os, arrays.size());
  for (const auto& a : arrays) {
    if (a.name.size() > UINT16_MAX) throw std::invalid_argument("parameter name too long");
    if (a.shape.size() > UINT8_MAX) throw std::invalid_argument("parameter rank too large");
    put_u16(os, static_cast<uint16_t>(a.name.size()));
    os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    os.put(static_cast<char>(a.shape.size()));
    for (int d : a.shape) put_u32(os, static_cast<uint32_t>(d));
    for (double v : a.data) put_f32(os, static_cast<float>(v));
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::vector<NamedArray> read_arrays(const fs::path& path, const char magic[4]) {
  auto is = open_in(path);
  check_magic(is, magic, path);
  const uint32_t version = get_u32(is);
  if (version != kFormatVersion)
    throw std::runtime_error("unsupported checkpoint version in " + path.string());
  const uint64_t count = get_u64(is);
  std::vector<NamedArray> out;
  out.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    NamedArray a;
    const uint16_t name_len = get_u16(is);
    a.name.resize(name_len);
    is.read(a.name.data(), name_len);
    const int rank = is.get();
    int64_t n = 1;
    for (int r = 0; r < rank; ++r) {
      a.shape.push_back(static_cast<int>(get_u32(is)));
      n *= a.shape.back();
    }
    a.data.resize(static_cast<size_t>(n));
    for (auto& v : a.data) v = static_cast<double>(get_f32(is));
    if (!is) throw std::runtime_error("truncated checkpoint: " + path.string());
    out.push_back(std::move(a));
  }
  return out;
}

void save_checkpoint(const fs::path& path, const tensor::ParameterMap& params) {
  std::vector<NamedArray> arrays;
  arrays.reserve(params.items().size());
  for (const auto& [name, t] : params.items())
    arrays.push_back({name, t.shape(), t.value()});
  write_arrays(path, arrays);
}

LoadReport load_checkpoint(const fs::path& path, tensor::ParameterMap& params) {
  LoadReport report;
  auto arrays = read_arrays(path);
  for (auto& a : arrays) {
    tensor::Tensor* t = params.find(a.name);
    if (!t) {
      report.unused_in_file.push_back(a.name);
      continue;
    }
    if (t->shape() != a.shape)
      throw std::runtime_error("checkpoint shape mismatch for " + a.name);
    t->mutable_value() = std::move(a.data);
    report.loaded.push_back(a.name);
  }
  for (const auto& [name, t] : params.items()) {
    bool found = false;
    for (const auto& l : report.loaded)
      if (l == name) {
        found = true;
        break;
      }
    if (!found) report.missing_in_file.push_back(name);
  }
  return report;
}

void write_manifest(const fs::path& path, const std::vector<ManifestRecord>& recs) {
  auto os = open_out(path);
  for (const auto& r : recs) {
    json j;
    j["id"] = r.id;
    j["tokens"] = r.tokens ? json(*r.tokens) : json(nullptr);
    j["feature_file"] = r.feature_file ? json(*r.feature_file) : json(nullptr);
    j["num_frames"] = r.num_frames ? json(*r.num_frames) : json(nullptr);
    os << j.dump() << "\n";
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::vector<ManifestRecord> read_manifest(const fs::path& path) {
  auto is = open_in(path);
  std::vector<ManifestRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    ManifestRecord r;
    r.id = j.at("id").get<std::string>();
    if (!j.at("tokens").is_null()) r.tokens = j.at("tokens").get<TokenSeq>();
    if (!j.at("feature_file").is_null())
      r.feature_file = j.at("feature_file").get<std::string>();
    if (!j.at("num_frames").is_null()) r.num_frames = j.at("num_frames").get<int>();
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

void write_split(const fs::path& dir, const std::string& name,
                 const std::vector<corpus::Utterance>& split) {
  std::vector<ManifestRecord> recs;
  recs.reserve(split.size());
  for (const auto& u : split) {
    ManifestRecord r;
    r.id = u.id;
    if (u.has_text) r.tokens = u.tokens;
    if (u.has_audio) {
      const std::string rel = "features/" + u.id + ".dlxf";
      write_features(dir / rel, u.features);
      r.feature_file = rel;
      r.num_frames = u.features.num_frames;
    }
    recs.push_back(std::move(r));
  }
  write_manifest(dir / (name + ".jsonl"), recs);
}

}  // namespace

void write_corpus(const fs::path& dir, const corpus::GeneratedCorpus& c) {
  fs::create_directories(dir / "features");
  write_split(dir, "s", c.s);
  write_split(dir, "ua", c.ua);
  write_split(dir, "ut", c.ut);
  write_split(dir, "test_clean", c.test_clean);
  write_split(dir, "test_other", c.test_other);
}

void write_tail_set(const fs::path& dir, const std::vector<corpus::Utterance>& tail) {
  fs::create_directories(dir / "features");
  write_split(dir, "tail", tail);
}

LoadedSplit load_split(const fs::path& dir, const std::string& name, int frame_period_ms,
                       bool skip_missing) {
  LoadedSplit out;
  const auto recs = read_manifest(dir / (name + ".jsonl"));
  out.utts.reserve(recs.size());
  for (const auto& r : recs) {
    corpus::Utterance u;
    u.id = r.id;
    if (r.tokens) {
      u.tokens = *r.tokens;
      u.has_text = true;
    }
    if (r.feature_file) {
      const fs::path fpath = dir / *r.feature_file;
      if (!fs::exists(fpath)) {
        if (skip_missing) {
          ++out.skipped_missing_features;
          continue;
        }
        throw std::runtime_error("missing feature file: " + fpath.string());
      }
      u.features = read_features(fpath, frame_period_ms);
      u.has_audio = true;
    }
    out.utts.push_back(std::move(u));
  }
  return out;
}

uint64_t corpus_content_hash(const fs::path& dir) {
  static const char* kSplits[] = {"s", "ua", "ut", "test_clean", "test_other"};
  uint64_t h = 1469598103934665603ull;
  for (const char* name : kSplits) {
    const fs::path p = dir / (std::string(name) + ".jsonl");
    if (!fs::exists(p)) continue;
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    h = fnv1a64(ss.str(), h);
  }
  return h;
}

std::string hex64(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace duplex::io
