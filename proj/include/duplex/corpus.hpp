#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "duplex/frontend.hpp"
#include "duplex/rng.hpp"
#include "duplex/vocab.hpp"

namespace duplex::corpus {

struct SplitSizes {
  int s = 200;
  int ua = 2000;
  int ut = 10000;
  int test_clean = 100;
  int test_other = 100;
};

struct CorpusSpec {
  int vocab_size = 60;
  double zipf_exponent = 1.7;            // paired pool S (and U_A, tests)
  double zipf_exponent_unpaired_text = 0.7;  // flatter, so tail tokens are common in U_T
  int sentence_len_min = 3;
  int sentence_len_max = 12;
  int frames_per_token_min = 2;
  int frames_per_token_max = 5;
  int feature_dim = 16;
  int frame_period_ms = 10;
  double noise_sigma = 0.3;
  double noise_sigma_other = 0.6;        // test-other analog, strictly noisier
  double speaker_gain_min = 0.8;
  double speaker_gain_max = 1.25;
  SplitSizes sizes;
  uint64_t seed = 1234;

  void validate() const;
};

struct TailSetConfig {
  double tau = 1e-3;   // desk-scale threshold
  int target_size = 50;

  // Reference operating point of the original evaluation protocol, kept in
  // the config for documentation and full-scale runs.
  double reference_tau = 0.00001;
  int reference_target_size = 10000;
};

struct Utterance {
  std::string id;
  TokenSeq tokens;           // empty when the record is audio-only on disk
  FeatureSequence features;  // empty when the record is text-only
  bool has_text = false;
  bool has_audio = false;
};

// Deterministic per-token prototype table plus gain/noise synthesis.
class Synthesizer {
 public:
  Synthesizer(const CorpusSpec& spec, const Vocabulary& vocab);

  // Concatenated prototypes with a per-utterance gain and i.i.d. Gaussian
  // noise, both drawn from `rng`.
  FeatureSequence synthesize(const TokenSeq& y, Rng& rng) const;

  // Gain 1, sigma 0: the exact prototype concatenation.
  FeatureSequence synthesize_clean(const TokenSeq& y) const;

  int frames_for_token(int id) const;
  int total_frames(const TokenSeq& y) const;

 private:
  FeatureSequence render(const TokenSeq& y, double gain, double sigma, Rng* rng) const;

  const CorpusSpec spec_;
  int vocab_size_ = 0;
  std::vector<int> durations_;            // per token id
  std::vector<std::vector<double>> prototypes_;  // per token id, frames*dim
};

struct GeneratedCorpus {
  Vocabulary vocab;
  std::vector<Utterance> s;
  std::vector<Utterance> ua;          // transcripts kept in memory, never serialized
  std::vector<Utterance> ut;
  std::vector<Utterance> test_clean;
  std::vector<Utterance> test_other;
};

// Samples all five splits. U_T is drawn with the flatter exponent so tail
// tokens are over-represented relative to S.
GeneratedCorpus generate_splits(const CorpusSpec& spec);

// Relative unigram frequencies over observed tokens; they sum to 1.
std::map<int, double> unigram_frequencies(const std::vector<TokenSeq>& texts);

class EmptyTailSetError : public std::runtime_error {
 public:
  explicit EmptyTailSetError(const std::string& what) : std::runtime_error(what) {}
};

// Transcripts from `ut_texts` containing at least one token with frequency
// < tau in `s_texts` and > tau in `ut_texts`, uniformly sampled without
// replacement up to target_size and paired with synthesized audio.
// Throws EmptyTailSetError when nothing qualifies.
std::vector<Utterance> build_tail_set(const std::vector<TokenSeq>& s_texts,
                                      const std::vector<TokenSeq>& ut_texts,
                                      const TailSetConfig& cfg, const Synthesizer& synth,
                                      Rng& rng);

// Convenience: token sequences of a split.
std::vector<TokenSeq> texts_of(const std::vector<Utterance>& split);

}  // namespace duplex::corpus
