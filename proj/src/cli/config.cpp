#include "dpl/cli/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "dpl/error.hpp"

namespace dpl::cli {
namespace {

using nlohmann::json;

// Reads fields from one object, collecting unknown keys and type errors
// instead of stopping at the first.
class Reader {
 public:
  Reader(const json& j, std::string prefix, std::vector<std::string>& problems)
      : j_(j), prefix_(std::move(prefix)), problems_(problems) {
    if (!j_.is_object()) problems_.push_back(prefix_ + " (expected an object)");
  }

  ~Reader() {
    if (!j_.is_object()) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) problems_.push_back(prefix_ + key + " (unknown key)");
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      problems_.push_back(prefix_ + key + " (wrong type)");
    }
  }

  // Sub-object, or null when absent.
  const json* section(const char* key) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) return nullptr;
    return &j_.at(key);
  }

  template <typename Parse, typename T>
  void parsed(const char* key, T& out, Parse parse) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) return;
    try {
      out = parse(j_.at(key).get<std::string>());
    } catch (const json::exception&) {
      problems_.push_back(prefix_ + key + " (wrong type)");
    } catch (const Error& e) {
      problems_.push_back(prefix_ + key + " (" + e.what() + ")");
    }
  }

  std::string prefix() const { return prefix_; }

 private:
  const json& j_;
  std::string prefix_;
  std::vector<std::string>& problems_;
  std::set<std::string> seen_;
};

json encoder_json(const EncoderConfig& e) {
  return {{"num_layers", e.num_layers},
          {"model_dim", e.model_dim},
          {"num_heads", e.num_heads},
          {"mlp_hidden_dim", e.mlp_hidden_dim},
          {"mask", to_string(e.mask)}};
}

void read_encoder(const json* j, const std::string& prefix, EncoderConfig& e, std::vector<std::string>& problems) {
  if (j == nullptr) return;
  Reader r(*j, prefix, problems);
  r.get("num_layers", e.num_layers);
  r.get("model_dim", e.model_dim);
  r.get("num_heads", e.num_heads);
  r.get("mlp_hidden_dim", e.mlp_hidden_dim);
  r.parsed("mask", e.mask, parse_mask_policy);
}

json cell_json(const GridCell& c) { return {{"mode", to_string(c.mode)}, {"lctp", c.lctp}, {"label", c.label}}; }

}  // namespace

ExperimentConfig default_config() { return {}; }

json to_json(const ExperimentConfig& c) {
  const ExperimentSpec& s = c.spec;
  json task = dpl::to_json(s.task);
  // Seed and patch shape come from the top level and the model.
  task.erase("seed");
  task.erase("num_patches");
  task.erase("patch_dim");
  json grid = {{"cells", json::array()}, {"seeds", c.grid.seeds}};
  for (const auto& cell : c.grid.cells) grid["cells"].push_back(cell_json(cell));
  return {
      {"schema_version", kConfigSchemaVersion},
      {"seed", s.seed},
      {"model",
       {{"visual", encoder_json(s.model.visual)},
        {"text", encoder_json(s.model.text)},
        {"num_patches", s.model.num_patches},
        {"patch_dim", s.model.patch_dim},
        {"embed_dim", s.model.embed_dim},
        {"text_context", s.model.text_context},
        {"logit_scale", s.model.logit_scale}}},
      {"task", task},
      {"prompts",
       {{"visual_depth", s.prompts.visual_depth},
        {"visual_length", s.prompts.visual_length},
        {"text_depth", s.prompts.text_depth},
        {"text_length", s.prompts.text_length},
        {"flow", to_string(s.prompts.flow)},
        {"text_std", s.prompts.text_std},
        {"init_phrase", s.prompts.init_phrase}}},
      {"pretrain",
       {{"steps", s.pretrain.steps},
        {"batch_size", s.pretrain.batch_size},
        {"lr", s.pretrain.lr},
        {"template", s.pretrain.template_text}}},
      {"train",
       {{"epochs", s.train.epochs},
        {"batch_size", s.train.batch_size},
        {"lr_visual", s.train.lr_visual},
        {"lr_textual", s.train.lr_textual},
        {"warmup_lr", s.train.warmup_lr},
        {"warmup_epochs", s.train.warmup_epochs},
        {"momentum", s.train.momentum}}},
      {"method",
       {{"mode", to_string(s.mode)},
        {"lctp", s.lctp},
        {"lctp_template", s.lctp_template},
        {"plain_template", s.plain_template}}},
      {"grid", grid},
      {"output", {{"dir", c.out_dir.generic_string()}}},
  };
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c = default_config();
  ExperimentSpec& s = c.spec;
  std::vector<std::string> problems;
  {
    Reader root(j, "", problems);
    int schema = kConfigSchemaVersion;
    root.get("schema_version", schema);
    if (schema != kConfigSchemaVersion) problems.push_back("schema_version (unsupported version)");
    root.get("seed", s.seed);

    if (const json* m = root.section("model")) {
      Reader r(*m, "model.", problems);
      read_encoder(r.section("visual"), "model.visual.", s.model.visual, problems);
      read_encoder(r.section("text"), "model.text.", s.model.text, problems);
      r.get("num_patches", s.model.num_patches);
      r.get("patch_dim", s.model.patch_dim);
      r.get("embed_dim", s.model.embed_dim);
      r.get("text_context", s.model.text_context);
      r.get("logit_scale", s.model.logit_scale);
    }
    if (const json* t = root.section("task")) {
      Reader r(*t, "task.", problems);
      r.get("num_classes", s.task.num_classes);
      r.get("signal", s.task.signal);
      r.get("noise", s.task.noise);
      r.get("domain_shift", s.task.domain_shift);
      r.get("shift_angle", s.task.shift_angle);
      r.get("shots", s.task.shots);
      r.get("test_per_class", s.task.test_per_class);
    }
    if (const json* p = root.section("prompts")) {
      Reader r(*p, "prompts.", problems);
      r.get("visual_depth", s.prompts.visual_depth);
      r.get("visual_length", s.prompts.visual_length);
      r.get("text_depth", s.prompts.text_depth);
      r.get("text_length", s.prompts.text_length);
      r.parsed("flow", s.prompts.flow, parse_flow_policy);
      r.get("text_std", s.prompts.text_std);
      r.get("init_phrase", s.prompts.init_phrase);
    }
    if (const json* p = root.section("pretrain")) {
      Reader r(*p, "pretrain.", problems);
      r.get("steps", s.pretrain.steps);
      r.get("batch_size", s.pretrain.batch_size);
      r.get("lr", s.pretrain.lr);
      r.get("template", s.pretrain.template_text);
    }
    if (const json* t = root.section("train")) {
      Reader r(*t, "train.", problems);
      r.get("epochs", s.train.epochs);
      r.get("batch_size", s.train.batch_size);
      r.get("lr_visual", s.train.lr_visual);
      r.get("lr_textual", s.train.lr_textual);
      r.get("warmup_lr", s.train.warmup_lr);
      r.get("warmup_epochs", s.train.warmup_epochs);
      r.get("momentum", s.train.momentum);
    }
    if (const json* m = root.section("method")) {
      Reader r(*m, "method.", problems);
      r.parsed("mode", s.mode, parse_attention_mode);
      r.get("lctp", s.lctp);
      r.get("lctp_template", s.lctp_template);
      r.get("plain_template", s.plain_template);
    }
    if (const json* g = root.section("grid")) {
      Reader r(*g, "grid.", problems);
      r.get("seeds", c.grid.seeds);
      if (const json* cells = r.section("cells")) {
        if (!cells->is_array()) {
          problems.push_back("grid.cells (expected an array)");
        } else {
          for (std::size_t i = 0; i < cells->size(); ++i) {
            Reader cr((*cells)[i], "grid.cells[" + std::to_string(i) + "].", problems);
            GridCell cell;
            cr.parsed("mode", cell.mode, parse_attention_mode);
            cr.get("lctp", cell.lctp);
            cr.get("label", cell.label);
            if (cell.label.empty()) cell.label = std::string(to_string(cell.mode)) + (cell.lctp ? "+lctp" : "");
            c.grid.cells.push_back(cell);
          }
        }
      }
    }
    if (const json* o = root.section("output")) {
      Reader r(*o, "output.", problems);
      std::string dir = c.out_dir.generic_string();
      r.get("dir", dir);
      c.out_dir = dir;
    }
  }
  if (!problems.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& p : problems) msg += "\n  " + p;
    fail(ErrorKind::Configuration, msg);
  }
  s.task.num_patches = s.model.num_patches;
  s.task.patch_dim = s.model.patch_dim;
  s.task.seed = s.seed;
  s.model.visual.attention_mode = s.model.text.attention_mode = s.mode;
  try {
    s.validate();
  } catch (const Error& e) {
    fail(ErrorKind::Configuration, std::string("invalid configuration: ") + e.what());
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::NotFound, "config file not found: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Configuration, "config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

std::string config_hash(const ExperimentConfig& config) {
  // Where results are written does not change them.
  json j = to_json(config);
  j.erase("output");
  const std::string canonical = j.dump();
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char ch : canonical) {
    h ^= ch;
    h *= 0x100000001B3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace dpl::cli
