#pragma once

// Attention-map diagnostics for the visual encoder. A map is the weight the
// class token (query row 0) puts on each instance key, averaged over heads
// and over an evaluation set. For VanillaConcat and ExactDecomposed this is
// the instance block of the softmax over [X, P] (already scaled by f); for
// the approximate modes it is softmax(X, X), which is what they apply to
// instance values.

#include <cstddef>
#include <span>
#include <vector>

#include "dpl/toyvlm/dual_encoder.hpp"
#include "dpl/toyvlm/synthetic_task.hpp"

namespace dpl {

struct VisualModel {
  const DualEncoder* model = nullptr;
  const PromptBank* bank = nullptr;
  AttentionMode mode = AttentionMode::VanillaConcat;
  MixingOverride mixing;
};

// One map of length N per layer. Throws Error(InvalidShape) for an empty
// eval set.
std::vector<std::vector<double>> cls_attention_maps(const VisualModel& m, std::span<const Sample> eval_set);

// Per layer, mean absolute difference between the two averaged maps, each
// model running end to end. Throws Error(InvalidShape) when the models
// disagree on layer count or sequence length.
std::vector<double> attention_map_distance(const VisualModel& a, const VisualModel& b,
                                           std::span<const Sample> eval_set);

// Same distance, but at every layer b's attention is evaluated on a's
// layer input (b keeps its own prompts). This isolates the instance-instance
// component: for DA and DASR against a prompt-free model it is exactly 0.
std::vector<double> instance_map_distance(const VisualModel& a, const VisualModel& b,
                                          std::span<const Sample> eval_set);

struct LayerHfProfile {
  std::size_t layer = 0;  // 1-based
  // lambda(x_i, P) / lambda(x_i, X), head-major, averaged over the eval set.
  // Empty when the layer ran without prompts.
  std::vector<double> ratios;
  double mean = 0.0;
};

std::vector<LayerHfProfile> hf_ratio_layers(const VisualModel& m, std::span<const Sample> eval_set);

}  // namespace dpl
