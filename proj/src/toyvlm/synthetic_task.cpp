#include "dpl/toyvlm/synthetic_task.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "dpl/error.hpp"

namespace dpl {
namespace {

constexpr int kSnapshotSchema = 1;

constexpr std::uint64_t kPrototypeStream = 0x70726f746fULL;
constexpr std::uint64_t kSplitStream = 0x73706c6974ULL;
constexpr std::uint64_t kMapStream = 0x6d6170ULL;

const std::vector<std::string>& name_pool() {
  static const std::vector<std::string> pool{
      "heron", "maple", "quartz", "otter", "tulip", "falcon", "cedar", "lynx",   "coral",  "ember",
      "willow", "badger", "orchid", "granite", "sparrow", "fern", "walrus", "poppy", "slate", "marten",
      "aster", "kestrel", "juniper", "basalt", "ibis",  "lotus"};
  return pool;
}

std::vector<double> unit_vector(std::size_t dim, RngStream& rng) {
  std::vector<double> v(dim);
  double norm = 0.0;
  while (norm < 1e-6) {
    norm = 0.0;
    for (auto& e : v) {
      e = rng.normal();
      norm += e * e;
    }
    norm = std::sqrt(norm);
  }
  for (auto& e : v) e /= norm;
  return v;
}

// Orthonormal rows by Gram-Schmidt over Gaussian draws.
Tensor2D random_orthogonal(std::size_t dim, RngStream& rng) {
  Tensor2D q(dim, dim);
  for (std::size_t r = 0; r < dim; ++r) {
    double norm = 0.0;
    std::vector<double> v;
    while (norm < 1e-6) {
      v.assign(dim, 0.0);
      for (auto& e : v) e = rng.normal();
      for (std::size_t prev = 0; prev < r; ++prev) {
        double dot = 0.0;
        for (std::size_t c = 0; c < dim; ++c) dot += v[c] * q(prev, c);
        for (std::size_t c = 0; c < dim; ++c) v[c] -= dot * q(prev, c);
      }
      norm = 0.0;
      for (double e : v) norm += e * e;
      norm = std::sqrt(norm);
    }
    for (std::size_t c = 0; c < dim; ++c) q(r, c) = v[c] / norm;
  }
  return q;
}

// Rotation by angle in the planes (first, first+1), (first+2, first+3), ...
std::vector<double> rotated(const std::vector<double>& u, double angle, std::size_t first) {
  std::vector<double> out = u;
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  for (std::size_t i = first; i + 1 < u.size(); i += 2) {
    out[i] = c * u[i] - s * u[i + 1];
    out[i + 1] = s * u[i] + c * u[i + 1];
  }
  return out;
}

}  // namespace

void TaskConfig::validate() const {
  if (num_classes < 2 || num_classes % 2 != 0) {
    fail(ErrorKind::Configuration, "task.num_classes must be even and at least 2");
  }
  if (num_patches == 0 || patch_dim == 0) fail(ErrorKind::Configuration, "task patches must be non-empty");
  if (shots == 0 || test_per_class == 0) fail(ErrorKind::Configuration, "task shots and test_per_class must be positive");
  if (!std::isfinite(signal) || !std::isfinite(noise) || noise < 0.0 || !std::isfinite(shift_angle) ||
      !std::isfinite(domain_shift)) {
    fail(ErrorKind::Configuration, "task signal, noise and shifts must be finite with noise >= 0");
  }
}

SyntheticTask::SyntheticTask(const TaskConfig& config) : config_(config) {
  config_.validate();
  const RngStream root(config_.seed);

  RngStream split_rng = root.fork(kSplitStream);
  std::vector<std::size_t> order(config_.num_classes);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[split_rng.below(i)]);
  const std::size_t half = config_.num_classes / 2;
  base_.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(half));
  new_.assign(order.begin() + static_cast<std::ptrdiff_t>(half), order.end());
  std::sort(base_.begin(), base_.end());
  std::sort(new_.begin(), new_.end());

  const auto& pool = name_pool();
  for (std::size_t c = 0; c < config_.num_classes; ++c) {
    names_.push_back({c < pool.size() ? pool[c] : "class" + std::to_string(c)});
  }

  RngStream proto_rng = root.fork(kPrototypeStream);
  for (std::size_t c = 0; c < config_.num_classes; ++c) {
    prototypes_.push_back(unit_vector(config_.patch_dim, proto_rng));
  }
  RngStream map_rng = root.fork(kMapStream);
  for (std::size_t j = 0; j < config_.num_patches; ++j) {
    patch_maps_.push_back(random_orthogonal(config_.patch_dim, map_rng));
  }
}

bool SyntheticTask::is_new(std::size_t cls) const {
  if (cls >= config_.num_classes) fail(ErrorKind::InvalidShape, "class index out of range");
  return std::binary_search(new_.begin(), new_.end(), cls);
}

std::vector<TokenSeq> SyntheticTask::class_names(const std::vector<std::size_t>& classes) const {
  std::vector<TokenSeq> out;
  out.reserve(classes.size());
  for (std::size_t c : classes) out.push_back(class_name(c));
  return out;
}

std::vector<std::string> SyntheticTask::name_words() const {
  std::vector<std::string> words;
  for (const auto& name : names_) words.insert(words.end(), name.begin(), name.end());
  return words;
}

Sample SyntheticTask::draw(std::size_t cls, RngStream& rng, bool apply_shift) const {
  std::vector<double> u = prototypes_[cls];
  if (apply_shift) {
    u = rotated(u, config_.domain_shift, 1);
    if (is_new(cls)) u = rotated(u, config_.shift_angle, 0);
  }
  const std::size_t d = config_.patch_dim;
  Sample s{Tensor2D(config_.num_patches, d), cls};
  for (std::size_t j = 0; j < config_.num_patches; ++j) {
    const Tensor2D& q = patch_maps_[j];
    for (std::size_t r = 0; r < d; ++r) {
      double v = 0.0;
      for (std::size_t c = 0; c < d; ++c) v += q(r, c) * u[c];
      s.patches(j, r) = config_.signal * v + config_.noise * rng.normal();
    }
  }
  return s;
}

std::vector<Sample> SyntheticTask::samples(SampleSplit split, const std::vector<std::size_t>& classes,
                                           std::size_t per_class, bool apply_shift) const {
  RngStream rng = RngStream(config_.seed).fork(static_cast<std::uint64_t>(split));
  std::vector<Sample> out;
  out.reserve(classes.size() * per_class);
  for (std::size_t c : classes) {
    for (std::size_t k = 0; k < per_class; ++k) out.push_back(draw(c, rng, apply_shift));
  }
  return out;
}

std::vector<std::size_t> SyntheticTask::all_classes() const {
  std::vector<std::size_t> out(config_.num_classes);
  std::iota(out.begin(), out.end(), 0);
  return out;
}

nlohmann::json to_json(const TaskConfig& c) {
  return {{"num_classes", c.num_classes}, {"num_patches", c.num_patches}, {"patch_dim", c.patch_dim},
          {"signal", c.signal},           {"noise", c.noise},             {"domain_shift", c.domain_shift}, {"shift_angle", c.shift_angle},
          {"shots", c.shots},             {"test_per_class", c.test_per_class}, {"seed", c.seed}};
}

TaskConfig task_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrorKind::Configuration, "task config must be an object");
  TaskConfig c;
  static const std::set<std::string> known{"num_classes", "num_patches", "patch_dim", "signal", "noise",
                                           "domain_shift", "shift_angle", "shots", "test_per_class", "seed"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) fail(ErrorKind::Configuration, "unknown key task." + key);
  }
  try {
    c.num_classes = j.value("num_classes", c.num_classes);
    c.num_patches = j.value("num_patches", c.num_patches);
    c.patch_dim = j.value("patch_dim", c.patch_dim);
    c.signal = j.value("signal", c.signal);
    c.noise = j.value("noise", c.noise);
    c.domain_shift = j.value("domain_shift", c.domain_shift);
    c.shift_angle = j.value("shift_angle", c.shift_angle);
    c.shots = j.value("shots", c.shots);
    c.test_per_class = j.value("test_per_class", c.test_per_class);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Configuration, std::string("task config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json snapshot(const SyntheticTask& task) {
  return {{"schema", kSnapshotSchema}, {"config", to_json(task.config())}};
}

SyntheticTask restore(const nlohmann::json& snap) {
  if (!snap.is_object() || snap.value("schema", 0) != kSnapshotSchema || !snap.contains("config")) {
    fail(ErrorKind::Format, "unrecognised task snapshot");
  }
  return SyntheticTask(task_config_from_json(snap.at("config")));
}

}  // namespace dpl
