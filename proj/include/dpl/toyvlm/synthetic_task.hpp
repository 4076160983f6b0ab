#pragma once

// Synthetic base-to-new classification task. Each class owns a unit-norm
// prototype u_c. A sample is a sequence of patches
//   patch_j = signal * Q_j u_c + noise * e_j,   e_j ~ N(0, I)
// where the Q_j are fixed random orthogonal maps shared by all classes.
// Downstream samples (everything except pretraining data) use D u_c, D
// rotating by domain_shift in the planes (1,2), (3,4), ...; new classes use
// R D u_c, R rotating by shift_angle in the planes (0,1), (2,3), ...
// Nothing is stored: the
// task is a pure function of its config and seed.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpl/numerics/rng.hpp"
#include "dpl/numerics/tensor.hpp"
#include "dpl/prompting/text_layout.hpp"

namespace dpl {

struct TaskConfig {
  std::size_t num_classes = 10;
  std::size_t num_patches = 8;
  std::size_t patch_dim = 8;
  double signal = 1.0;
  double noise = 0.6;
  double domain_shift = 0.5;  // radians
  double shift_angle = 0.3;   // radians
  std::size_t shots = 4;
  std::size_t test_per_class = 60;
  std::uint64_t seed = 1;

  // Throws Error(Configuration).
  void validate() const;
};

struct Sample {
  Tensor2D patches;
  std::size_t label = 0;  // global class index
};

enum class SampleSplit : std::uint64_t { Train = 1, BaseTest = 2, NewTest = 3, Pretrain = 4 };

class SyntheticTask {
 public:
  explicit SyntheticTask(const TaskConfig& config);

  const TaskConfig& config() const noexcept { return config_; }
  std::size_t num_classes() const noexcept { return config_.num_classes; }
  const std::vector<std::size_t>& base_classes() const noexcept { return base_; }
  const std::vector<std::size_t>& new_classes() const noexcept { return new_; }
  bool is_new(std::size_t cls) const;

  const TokenSeq& class_name(std::size_t cls) const { return names_.at(cls); }
  const std::vector<TokenSeq>& class_names() const noexcept { return names_; }
  std::vector<TokenSeq> class_names(const std::vector<std::size_t>& classes) const;
  // Every word any class name uses.
  std::vector<std::string> name_words() const;

  const std::vector<double>& prototype(std::size_t cls) const { return prototypes_.at(cls); }

  // One noisy sample of the class. apply_shift selects downstream data
  // (domain shift, plus the new-class shift); pretraining data has neither.
  Sample draw(std::size_t cls, RngStream& rng, bool apply_shift = true) const;
  // per_class samples per class in class order, from the split's own stream.
  std::vector<Sample> samples(SampleSplit split, const std::vector<std::size_t>& classes,
                              std::size_t per_class, bool apply_shift = true) const;
  std::vector<std::size_t> all_classes() const;

  std::vector<Sample> train_set() const { return samples(SampleSplit::Train, base_, config_.shots); }
  std::vector<Sample> base_test_set() const {
    return samples(SampleSplit::BaseTest, base_, config_.test_per_class);
  }
  std::vector<Sample> new_test_set() const {
    return samples(SampleSplit::NewTest, new_, config_.test_per_class);
  }

 private:
  TaskConfig config_;
  std::vector<std::size_t> base_;
  std::vector<std::size_t> new_;
  std::vector<TokenSeq> names_;
  std::vector<std::vector<double>> prototypes_;
  std::vector<Tensor2D> patch_maps_;  // Q_j, patch_dim x patch_dim
};

nlohmann::json to_json(const TaskConfig& config);
// Throws Error(Configuration) on unknown keys or bad values.
TaskConfig task_config_from_json(const nlohmann::json& j);

// Snapshot = schema version + config (which carries the seed).
nlohmann::json snapshot(const SyntheticTask& task);
SyntheticTask restore(const nlohmann::json& snapshot);

}  // namespace dpl
