#include "duplex/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace duplex::corpus {

void CorpusSpec::validate() const {
  if (vocab_size < 2) throw std::invalid_argument("corpus: vocab_size must be >= 2");
  if (sentence_len_min < 1 || sentence_len_max < sentence_len_min)
    throw std::invalid_argument("corpus: bad sentence length range");
  if (frames_per_token_min < 1 || frames_per_token_max < frames_per_token_min)
    throw std::invalid_argument("corpus: bad frames-per-token range");
  if (noise_sigma < 0.0) throw std::invalid_argument("corpus: noise_sigma must be >= 0");
  if (noise_sigma_other <= noise_sigma)
    throw std::invalid_argument("corpus: test-other noise must exceed test-clean noise");
  if (sizes.s <= 0 || sizes.ua <= 0 || sizes.ut <= 0 || sizes.test_clean <= 0 ||
      sizes.test_other <= 0)
    throw std::invalid_argument("corpus: split sizes must be positive");
  if (speaker_gain_max < speaker_gain_min)
    throw std::invalid_argument("corpus: bad speaker gain range");
}

Synthesizer::Synthesizer(const CorpusSpec& spec, const Vocabulary& vocab)
    : spec_(spec), vocab_size_(vocab.size()) {
  Rng rng = Rng::with_seed(spec.seed).fork("prototypes");
  durations_.resize(vocab_size_, 0);
  prototypes_.resize(vocab_size_);
  for (int id = 1; id < vocab_size_; ++id) {
    durations_[id] = static_cast<int>(
        rng.uniform_int(spec.frames_per_token_min, spec.frames_per_token_max));
    auto& proto = prototypes_[id];
    proto.resize(static_cast<size_t>(durations_[id]) * spec.feature_dim);
    for (auto& v : proto) v = rng.gaussian();
  }
}

int Synthesizer::frames_for_token(int id) const {
  if (id <= 0 || id >= vocab_size_) throw std::out_of_range("synthesizer: unknown token id");
  return durations_[id];
}

int Synthesizer::total_frames(const TokenSeq& y) const {
  int total = 0;
  for (int id : y) total += frames_for_token(id);
  return total;
}

FeatureSequence Synthesizer::render(const TokenSeq& y, double gain, double sigma,
                                    Rng* rng) const {
  if (y.empty()) throw std::invalid_argument("synthesizer: empty token sequence");
  FeatureSequence out;
  out.dim = spec_.feature_dim;
  out.frame_period_ms = spec_.frame_period_ms;
  out.data.reserve(static_cast<size_t>(total_frames(y)) * out.dim);
  for (int id : y) {
    if (id <= 0 || id >= vocab_size_) throw std::out_of_range("synthesizer: unknown token id");
    const auto& proto = prototypes_[id];
    for (double v : proto) {
      double x = v * gain;
      if (sigma > 0.0) x += rng->gaussian() * sigma;
      out.data.push_back(x);
    }
    out.num_frames += durations_[id];
  }
  return out;
}

FeatureSequence Synthesizer::synthesize(const TokenSeq& y, Rng& rng) const {
  const double gain = rng.uniform(spec_.speaker_gain_min, spec_.speaker_gain_max);
  return render(y, gain, spec_.noise_sigma, &rng);
}

FeatureSequence Synthesizer::synthesize_clean(const TokenSeq& y) const {
  return render(y, 1.0, 0.0, nullptr);
}

namespace {

// Zipf sampler over token ids 1..V-1, rank = id.
class ZipfSampler {
 public:
  ZipfSampler(int vocab_size, double exponent) {
    cumulative_.reserve(vocab_size - 1);
    double total = 0.0;
    for (int id = 1; id < vocab_size; ++id) {
      total += std::pow(static_cast<double>(id), -exponent);
      cumulative_.push_back(total);
    }
    for (auto& c : cumulative_) c /= total;
  }

  int sample(Rng& rng) const {
    const double u = rng.uniform();
    const auto it = std::lower_bound(cumulative_.begin(), cumulative_.end(), u);
    return static_cast<int>(it - cumulative_.begin()) + 1;
  }

 private:
  std::vector<double> cumulative_;
};

TokenSeq sample_sentence(const CorpusSpec& spec, const ZipfSampler& zipf, Rng& rng) {
  const int len = static_cast<int>(rng.uniform_int(spec.sentence_len_min, spec.sentence_len_max));
  TokenSeq y(len);
  for (auto& t : y) t = zipf.sample(rng);
  return y;
}

std::string make_id(const char* prefix, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s-%06d", prefix, index);
  return buf;
}

}  // namespace

GeneratedCorpus generate_splits(const CorpusSpec& spec) {
  spec.validate();
  GeneratedCorpus out;
  out.vocab = Vocabulary::synthetic(spec.vocab_size);
  Synthesizer synth(spec, out.vocab);

  const ZipfSampler zipf_s(spec.vocab_size, spec.zipf_exponent);
  const ZipfSampler zipf_ut(spec.vocab_size, spec.zipf_exponent_unpaired_text);
  const Rng master = Rng::with_seed(spec.seed);

  auto fill = [&](std::vector<Utterance>& split, const char* prefix, int count,
                  const ZipfSampler& zipf, bool text, bool audio, double sigma_override) {
    Rng rng = master.fork(prefix);
    CorpusSpec local = spec;
    if (sigma_override >= 0.0) local.noise_sigma = sigma_override;
    Synthesizer local_synth(local, out.vocab);
    split.reserve(count);
    for (int i = 0; i < count; ++i) {
      Utterance u;
      u.id = make_id(prefix, i);
      u.tokens = sample_sentence(spec, zipf, rng);
      u.has_text = text;
      if (audio) {
        u.features = local_synth.synthesize(u.tokens, rng);
        u.has_audio = true;
      }
      split.push_back(std::move(u));
    }
  };

  fill(out.s, "s", spec.sizes.s, zipf_s, true, true, -1.0);
  // U_A records keep their generating transcript in memory only; serialization
  // drops it (the manifest writer emits tokens: null for audio-only records).
  fill(out.ua, "ua", spec.sizes.ua, zipf_s, false, true, -1.0);
  fill(out.ut, "ut", spec.sizes.ut, zipf_ut, true, false, -1.0);
  fill(out.test_clean, "tc", spec.sizes.test_clean, zipf_s, true, true, -1.0);
  fill(out.test_other, "to", spec.sizes.test_other, zipf_s, true, true, spec.noise_sigma_other);
  return out;
}

std::map<int, double> unigram_frequencies(const std::vector<TokenSeq>& texts) {
  if (texts.empty()) throw std::invalid_argument("unigram_frequencies: empty collection");
  std::map<int, double> freq;
  int64_t total = 0;
  for (const auto& y : texts)
    for (int id : y) {
      freq[id] += 1.0;
      ++total;
    }
  if (total == 0) throw std::invalid_argument("unigram_frequencies: no tokens");
  for (auto& [id, f] : freq) f /= static_cast<double>(total);
  return freq;
}

std::vector<Utterance> build_tail_set(const std::vector<TokenSeq>& s_texts,
                                      const std::vector<TokenSeq>& ut_texts,
                                      const TailSetConfig& cfg, const Synthesizer& synth,
                                      Rng& rng) {
  if (cfg.tau <= 0.0 || cfg.tau >= 1.0) throw std::invalid_argument("tail set: tau in (0,1)");
  if (cfg.target_size < 1) throw std::invalid_argument("tail set: target_size >= 1");

  const auto freq_s = unigram_frequencies(s_texts);
  const auto freq_ut = unigram_frequencies(ut_texts);
  auto freq_of = [](const std::map<int, double>& m, int id) {
    const auto it = m.find(id);
    return it == m.end() ? 0.0 : it->second;
  };
  auto qualifies = [&](int id) {
    return freq_of(freq_s, id) < cfg.tau && freq_of(freq_ut, id) > cfg.tau;
  };

  std::vector<size_t> candidates;
  for (size_t i = 0; i < ut_texts.size(); ++i)
    for (int id : ut_texts[i])
      if (qualifies(id)) {
        candidates.push_back(i);
        break;
      }
  if (candidates.empty())
    throw EmptyTailSetError("no transcript satisfies the tail predicate at tau=" +
                            std::to_string(cfg.tau));

  // Fisher-Yates prefix shuffle = uniform sample without replacement.
  const size_t want = std::min<size_t>(candidates.size(), cfg.target_size);
  for (size_t i = 0; i < want; ++i) {
    const size_t j = i + rng.uniform_int(candidates.size() - i);
    std::swap(candidates[i], candidates[j]);
  }
  candidates.resize(want);
  std::sort(candidates.begin(), candidates.end());

  std::vector<Utterance> out;
  out.reserve(want);
  for (size_t k = 0; k < candidates.size(); ++k) {
    Utterance u;
    u.id = make_id("tail", static_cast<int>(k));
    u.tokens = ut_texts[candidates[k]];
    u.features = synth.synthesize(u.tokens, rng);
    u.has_text = true;
    u.has_audio = true;
    out.push_back(std::move(u));
  }
  return out;
}

std::vector<TokenSeq> texts_of(const std::vector<Utterance>& split) {
  std::vector<TokenSeq> out;
  out.reserve(split.size());
  for (const auto& u : split) out.push_back(u.tokens);
  return out;
}

}  // namespace duplex::corpus
