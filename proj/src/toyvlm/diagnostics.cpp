#include "dpl/toyvlm/diagnostics.hpp"

#include <cmath>
#include <string>

#include "dpl/error.hpp"

namespace dpl {
namespace {

std::vector<LayerTrace> trace_of(const VisualModel& m, const Sample& s) {
  if (m.model == nullptr || m.bank == nullptr) fail(ErrorKind::State, "visual model is not set");
  ad::Tape tape;
  ad::Binder binder(tape);
  EncodeSettings settings = image_settings(*m.model, m.mode);
  settings.mixing = m.mixing;
  std::vector<LayerTrace> trace;
  encode_image(binder, *m.model, s.patches, *m.bank, settings, &trace);
  return trace;
}

void require_samples(std::span<const Sample> eval_set) {
  if (eval_set.empty()) fail(ErrorKind::InvalidShape, "attention diagnostics need a non-empty eval set");
}

// Adds the head-averaged query-0 row of each head's weights into acc.
void accumulate_cls_row(const std::vector<Tensor2D>& heads, std::vector<double>& acc) {
  const std::size_t n = heads.front().cols();
  if (acc.empty()) acc.assign(n, 0.0);
  for (const Tensor2D& w : heads) {
    for (std::size_t k = 0; k < n; ++k) acc[k] += w(0, k) / static_cast<double>(heads.size());
  }
}

double mean_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    fail(ErrorKind::InvalidShape, "attention maps have different lengths " + std::to_string(a.size()) + " and " +
                                      std::to_string(b.size()));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += std::abs(a[i] - b[i]);
  return total / static_cast<double>(a.size());
}

std::vector<double> per_layer_distance(const std::vector<std::vector<double>>& a,
                                       const std::vector<std::vector<double>>& b) {
  if (a.size() != b.size()) fail(ErrorKind::InvalidShape, "models have different layer counts");
  std::vector<double> out;
  for (std::size_t l = 0; l < a.size(); ++l) out.push_back(mean_abs_diff(a[l], b[l]));
  return out;
}

void divide(std::vector<std::vector<double>>& maps, std::size_t count) {
  for (auto& m : maps) {
    for (auto& v : m) v /= static_cast<double>(count);
  }
}

}  // namespace

std::vector<std::vector<double>> cls_attention_maps(const VisualModel& m, std::span<const Sample> eval_set) {
  require_samples(eval_set);
  std::vector<std::vector<double>> maps;
  for (const Sample& s : eval_set) {
    const auto trace = trace_of(m, s);
    maps.resize(trace.size());
    for (std::size_t l = 0; l < trace.size(); ++l) accumulate_cls_row(trace[l].instance_weights, maps[l]);
  }
  divide(maps, eval_set.size());
  return maps;
}

std::vector<double> attention_map_distance(const VisualModel& a, const VisualModel& b,
                                           std::span<const Sample> eval_set) {
  return per_layer_distance(cls_attention_maps(a, eval_set), cls_attention_maps(b, eval_set));
}

std::vector<double> instance_map_distance(const VisualModel& a, const VisualModel& b,
                                          std::span<const Sample> eval_set) {
  require_samples(eval_set);
  if (a.model->visual.blocks.size() != b.model->visual.blocks.size()) {
    fail(ErrorKind::InvalidShape, "models have different layer counts");
  }
  std::vector<std::vector<double>> maps_a;
  std::vector<std::vector<double>> maps_b;
  for (const Sample& s : eval_set) {
    const auto ta = trace_of(a, s);
    const auto tb = trace_of(b, s);
    maps_a.resize(ta.size());
    maps_b.resize(ta.size());
    for (std::size_t l = 0; l < ta.size(); ++l) {
      accumulate_cls_row(ta[l].instance_weights, maps_a[l]);
      ad::Tape tape;
      ad::Binder binder(tape);
      const AttentionParams params = bind_attention(binder, b.model->visual.blocks[l].attn, false);
      const ad::Var x = tape.constant(ta[l].x_attn_in);
      const ad::Var p = tb[l].p_attn_in.rows() > 0 ? tape.constant(tb[l].p_attn_in) : ad::Var();
      MaskSpec mask;
      if (b.model->config.visual.mask == MaskPolicy::Causal) {
        mask.keys = causal_mask(x.rows(), p.valid() ? p.rows() : 0, PromptPlacement::AfterInstances);
      }
      const auto r = ad::prompt_attention(x, p, params, b.mode, mask, b.mixing);
      std::vector<Tensor2D> heads;
      for (const ad::Var& w : r.instance_weights) heads.push_back(w.value());
      accumulate_cls_row(heads, maps_b[l]);
    }
  }
  divide(maps_a, eval_set.size());
  divide(maps_b, eval_set.size());
  return per_layer_distance(maps_a, maps_b);
}

std::vector<LayerHfProfile> hf_ratio_layers(const VisualModel& m, std::span<const Sample> eval_set) {
  require_samples(eval_set);
  std::vector<LayerHfProfile> out;
  for (const Sample& s : eval_set) {
    const auto trace = trace_of(m, s);
    out.resize(trace.size());
    for (std::size_t l = 0; l < trace.size(); ++l) {
      out[l].layer = l + 1;
      if (trace[l].p_attn_in.rows() == 0) continue;
      const auto ratios = hf_ratio_profile(trace[l].x_attn_in, trace[l].p_attn_in, m.model->visual.blocks[l].attn);
      if (out[l].ratios.empty()) out[l].ratios.assign(ratios.size(), 0.0);
      for (std::size_t i = 0; i < ratios.size(); ++i) out[l].ratios[i] += ratios[i];
    }
  }
  for (auto& layer : out) {
    double total = 0.0;
    for (auto& r : layer.ratios) {
      r /= static_cast<double>(eval_set.size());
      total += r;
    }
    if (!layer.ratios.empty()) layer.mean = total / static_cast<double>(layer.ratios.size());
  }
  return out;
}

}  // namespace dpl
