#include "duplex/frontend.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>

namespace duplex::frontend {

FeatureSequence stack_frames(const FeatureSequence& x, int stack, int stride) {
  if (stack < 1 || stride < 1) throw std::invalid_argument("stack_frames: stack/stride >= 1");
  FeatureSequence out;
  out.dim = x.dim * stack;
  out.frame_period_ms = x.frame_period_ms * stride;
  // anchors k*stride with k*stride >= stack-1
  int first_k = (stack - 1 + stride - 1) / stride;
  for (int k = first_k; static_cast<int64_t>(k) * stride < x.num_frames; ++k) {
    const int anchor = k * stride;
    for (int w = 0; w < stack; ++w) {
      const int src = anchor - (stack - 1) + w;
      out.data.insert(out.data.end(), x.frame(src), x.frame(src) + x.dim);
    }
    out.num_frames += 1;
  }
  return out;
}

FeatureSequence spec_augment(const FeatureSequence& x, const SpecAugmentConfig& cfg, Rng& rng) {
  if (cfg.freq_mask_param < 0 || cfg.num_time_masks < 0 || cfg.time_mask_param < 0)
    throw std::invalid_argument("spec_augment: negative mask parameter");
  FeatureSequence out = x;
  if (out.empty()) return out;

  const int fmax = std::min(cfg.freq_mask_param, out.dim);
  const int f = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(fmax) + 1));
  const int f0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(out.dim - f) + 1));
  for (int t = 0; t < out.num_frames; ++t)
    for (int d = f0; d < f0 + f; ++d) out.at(t, d) = cfg.mask_value;

  const int tmax_bound = std::min(cfg.time_mask_param, out.num_frames);
  for (int i = 0; i < cfg.num_time_masks; ++i) {
    const int w = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(tmax_bound) + 1));
    const int t0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(out.num_frames - w) + 1));
    for (int t = t0; t < t0 + w; ++t)
      for (int d = 0; d < out.dim; ++d) out.at(t, d) = cfg.mask_value;
  }
  return out;
}

}  // namespace duplex::frontend
