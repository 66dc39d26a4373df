#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "duplex/corpus.hpp"
#include "duplex/frontend.hpp"
#include "duplex/tensor.hpp"
#include "duplex/vocab.hpp"

namespace duplex::io {

// ---- feature files ("DLXF") --------------------------------------------------
// Little-endian: magic "DLXF", u32 version, u32 num_frames, u32 dim, then
// 32-bit floats row major. The frame period is corpus-level configuration and
// is not stored.

void write_features(const std::filesystem::path& path, const FeatureSequence& f);
FeatureSequence read_features(const std::filesystem::path& path, int frame_period_ms);

// ---- checkpoints ("DLXA") ------------------------------------------------------
// Little-endian: magic, u32 version, u64 parameter count, then per parameter:
// u16 name length, UTF-8 name, u8 rank, u32 dims, 32-bit floats.

struct NamedArray {
  std::string name;
  std::vector<int> shape;
  std::vector<double> data;
};

void write_arrays(const std::filesystem::path& path, const std::vector<NamedArray>& arrays,
                  const char magic[4] = "DLXA");
std::vector<NamedArray> read_arrays(const std::filesystem::path& path,
                                    const char magic[4] = "DLXA");

void save_checkpoint(const std::filesystem::path& path, const tensor::ParameterMap& params);

struct LoadReport {
  std::vector<std::string> loaded;
  std::vector<std::string> missing_in_file;   // params not present in the file
  std::vector<std::string> unused_in_file;    // file entries with no matching param
};

// Assigns every file entry whose name and shape match a parameter. Shape
// mismatch on a matching name is an error.
LoadReport load_checkpoint(const std::filesystem::path& path, tensor::ParameterMap& params);

// ---- manifests (JSON lines) -----------------------------------------------------

struct ManifestRecord {
  std::string id;
  std::optional<TokenSeq> tokens;
  std::optional<std::string> feature_file;
  std::optional<int> num_frames;
};

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& recs);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);

// ---- corpus directory -------------------------------------------------------------

// Writes s/ua/ut/test_clean/test_other manifests plus feature files under
// features/. Audio-only records are serialized without transcripts.
void write_corpus(const std::filesystem::path& dir, const corpus::GeneratedCorpus& c);

// Writes a tail split (manifest tail.jsonl + features) into an existing
// corpus directory.
void write_tail_set(const std::filesystem::path& dir, const std::vector<corpus::Utterance>& tail);

// Loads a split by manifest name ("s", "ut", "tail", ...). Features are read
// eagerly; a missing feature file raises unless `skip_missing` is set, in
// which case the record is dropped and counted.
struct LoadedSplit {
  std::vector<corpus::Utterance> utts;
  int skipped_missing_features = 0;
};
LoadedSplit load_split(const std::filesystem::path& dir, const std::string& name,
                       int frame_period_ms, bool skip_missing = false);

// FNV-1a over the split manifests, in fixed order. Identifies corpus content.
uint64_t corpus_content_hash(const std::filesystem::path& dir);

std::string hex64(uint64_t h);

}  // namespace duplex::io
