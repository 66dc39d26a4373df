#pragma once

#include <vector>

#include "duplex/rng.hpp"

namespace duplex {

// A time x dim matrix of real-valued feature frames, row major.
struct FeatureSequence {
  std::vector<double> data;
  int num_frames = 0;
  int dim = 0;
  int frame_period_ms = 10;

  double& at(int t, int d) { return data[static_cast<size_t>(t) * dim + d]; }
  double at(int t, int d) const { return data[static_cast<size_t>(t) * dim + d]; }
  const double* frame(int t) const { return data.data() + static_cast<size_t>(t) * dim; }
  bool empty() const { return num_frames == 0; }

  static FeatureSequence zeros(int num_frames, int dim, int frame_period_ms = 10) {
    FeatureSequence f;
    f.num_frames = num_frames;
    f.dim = dim;
    f.frame_period_ms = frame_period_ms;
    f.data.assign(static_cast<size_t>(num_frames) * dim, 0.0);
    return f;
  }
};

struct SpecAugmentConfig {
  int freq_mask_param = 27;   // F: max frequency-mask width
  int num_time_masks = 10;
  int time_mask_param = 40;   // max time-mask width, clamped to sequence length
  double mask_value = 0.0;
};

namespace frontend {

// Concatenates `stack` consecutive frames ending at every stride-th anchor.
// Output frame k covers input frames [k*stride-(stack-1) .. k*stride]; anchors
// without full left coverage are dropped, so short inputs give empty output.
// Output dim = stack * input dim, frame period multiplied by stride.
FeatureSequence stack_frames(const FeatureSequence& x, int stack, int stride);

// One frequency mask of width ~ U{0..F} plus num_time_masks time masks of
// width ~ U{0..T_max}, all positions uniform, masked cells set to mask_value.
// Pure: the input is copied, widths are clamped to the available extent.
FeatureSequence spec_augment(const FeatureSequence& x, const SpecAugmentConfig& cfg, Rng& rng);

}  // namespace frontend
}  // namespace duplex
