#pragma once

// Few-shot prompt training on the synthetic base-to-new task. The backbone
// is pretrained once per seed (contrastive fitting on unshifted data of all
// classes), then frozen; only prompt banks are optimised.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dpl/toyvlm/dual_encoder.hpp"
#include "dpl/toyvlm/synthetic_task.hpp"
#include "dpl/trainer/schedule.hpp"

namespace dpl {

inline constexpr int kMetricsSchemaVersion = 1;

struct PromptConfig {
  std::size_t visual_depth = 3;
  std::size_t visual_length = 2;
  std::size_t text_depth = 3;
  std::size_t text_length = 4;
  FlowPolicy flow = FlowPolicy::Propagate;
  double text_std = 0.02;
  std::string init_phrase = "a photo of a";
};

struct PretrainConfig {
  // Every step draws a fresh batch of unshifted samples over all classes.
  std::size_t steps = 1000;
  std::size_t batch_size = 20;
  double lr = 0.01;  // Adam
  std::string template_text = "a photo of a [CLS]";
};

struct ExperimentSpec {
  std::uint64_t seed = 1;
  DualEncoderConfig model;
  TaskConfig task;
  PromptConfig prompts;
  PretrainConfig pretrain;
  TrainConfig train;
  AttentionMode mode = AttentionMode::DASR;
  bool lctp = true;
  std::string lctp_template = "a photo of a [CLS]";
  std::string plain_template = "[CLS]";

  // Throws Error(Configuration) or Error(Template).
  void validate() const;
};

// Task with its seed taken from the experiment.
SyntheticTask make_task(const ExperimentSpec& spec);
Vocabulary make_vocabulary(const ExperimentSpec& spec, const SyntheticTask& task);
// Random init followed by the pretraining stage. losses receives one entry
// per step when non-null.
DualEncoder pretrain_backbone(const ExperimentSpec& spec, const SyntheticTask& task,
                              std::vector<double>* losses = nullptr);

struct PromptBanks {
  PromptBank visual;
  PromptBank textual;

  std::size_t parameter_count() const noexcept { return visual.parameter_count() + textual.parameter_count(); }

  bool operator==(const PromptBanks&) const = default;
};

PromptBanks build_banks(const ExperimentSpec& spec, const DualEncoder& model);
PromptBanks empty_banks(const DualEncoder& model);
TokenSeq training_template(const ExperimentSpec& spec);

struct Accuracy {
  double base = 0.0;  // percent
  double novel = 0.0;
};

// Base samples are classified among base classes, new among new classes.
Accuracy evaluate(const DualEncoder& model, const SyntheticTask& task, const PromptBanks& banks,
                  AttentionMode mode, const TokenSeq& template_tokens, std::span<const Sample> base_test,
                  std::span<const Sample> new_test);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double lr_visual = 0.0;
  double lr_textual = 0.0;
  double base_acc = 0.0;
  double new_acc = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct RunMetrics {
  std::uint64_t seed = 0;
  AttentionMode mode = AttentionMode::VanillaConcat;
  bool lctp = false;
  std::vector<EpochRecord> epochs;
  // Handcrafted template, no prompts.
  double zero_shot_base = 0.0;
  double zero_shot_new = 0.0;
  // Banks as built, before any update.
  double initial_base = 0.0;
  double initial_new = 0.0;
  double base_acc = 0.0;
  double new_acc = 0.0;
  double harmonic_mean = 0.0;
  std::size_t parameter_count = 0;
  std::uint64_t backbone_checksum = 0;

  bool operator==(const RunMetrics&) const = default;
};

// Updates banks in place. Throws Error(Divergence) on a non-finite prompt,
// loss or gradient and Error(State) if anything but a prompt would be updated or
// the backbone changed.
RunMetrics train_prompts(const DualEncoder& model, const SyntheticTask& task, PromptBanks& banks,
                         const ExperimentSpec& spec);

// Pretrain, build banks, train. The trained banks are returned through
// banks_out when non-null.
RunMetrics run_experiment(const ExperimentSpec& spec, PromptBanks* banks_out = nullptr);

struct GridCell {
  AttentionMode mode = AttentionMode::VanillaConcat;
  bool lctp = false;
  std::string label;
};

// MPL -> +DA -> +SR -> +LC.
std::vector<GridCell> ladder_cells();

struct GridRow {
  GridCell cell;
  RunMetrics metrics;
  PromptBanks banks;  // after training
};

// One backbone and one set of initial banks shared by every cell.
std::vector<GridRow> run_ablation_grid(std::span<const GridCell> cells, const ExperimentSpec& spec);

// One "epoch" record per epoch followed by one "summary" record.
std::vector<nlohmann::json> metrics_records(const RunMetrics& metrics, std::string_view label);

}  // namespace dpl
