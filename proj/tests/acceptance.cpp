// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpl/attention/attention.hpp"
#include "dpl/cli/config.hpp"
#include "dpl/cli/verify.hpp"
#include "dpl/error.hpp"
#include "dpl/numerics/rng.hpp"
#include "dpl/prompting/prompt_bank.hpp"
#include "dpl/toyvlm/dual_encoder.hpp"
#include "dpl/trainer/schedule.hpp"
#include "dpl/trainer/trainer.hpp"

using namespace dpl;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool ok = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond && ok) detail = what;
    ok = ok && cond;
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

// 1. ExactDecomposed reproduces VanillaConcat and f + h = 1.
Outcome exact_decomposition() {
  const auto t0 = Clock::now();
  Outcome o;
  static constexpr std::size_t kHeads[] = {1, 2, 4};
  const RngStream root(2024);
  double worst = 0.0, worst_mass = 0.0;
  for (std::size_t i = 0; i < 100; ++i) {
    RngStream rng = root.fork(i);
    const std::size_t n = 2 + rng.below(31);
    const std::size_t m = 1 + rng.below(8);
    const std::size_t heads = kHeads[rng.below(3)];
    const std::size_t d = heads * (1 + rng.below(4));
    const Tensor2D x = rng.normal_tensor(n, d, 1.0);
    const Tensor2D p = rng.normal_tensor(m, d, 1.0);
    const AttentionWeights w = AttentionWeights::random(d, heads, rng, rng.uniform(0.2, 1.2));
    const auto v = prompt_attention_forward(x, p, w, AttentionMode::VanillaConcat);
    const auto e = prompt_attention_forward(x, p, w, AttentionMode::ExactDecomposed);
    worst = std::max({worst, max_abs_diff(v.x_out, e.x_out), max_abs_diff(v.p_out, e.p_out)});
    for (const auto& h : e.report->heads) {
      for (std::size_t q = 0; q < h.f.size(); ++q) worst_mass = std::max(worst_mass, std::abs(h.f[q] + h.h[q] - 1.0));
    }
  }
  const double secs = seconds_since(t0);
  o.require(worst < 1e-10, "max abs error " + fmt("%.3g", worst));
  o.require(worst_mass <= 1e-12, "f+h off by " + fmt("%.3g", worst_mass));
  o.require(secs < 10.0, "runtime " + fmt("%.1f s", secs));
  if (o.ok) o.detail = "max abs " + fmt("%.2g", worst) + ", |f+h-1| " + fmt("%.2g", worst_mass) + ", " + fmt("%.2f s", secs);
  return o;
}

// 2. Reverse mode against central differences, every mode, the full dual
// encoder, all projection weights and prompts. The seed is the verify default.
Outcome gradient_audit() {
  const auto t0 = Clock::now();
  Outcome o;
  cli::VerifyOptions opt;
  opt.all_projection_weights = true;
  std::string summary;
  for (const cli::CheckResult& c : cli::run_gradient_audit(opt)) {
    o.require(c.passed, c.name + " " + fmt("%.3g", c.max_error) + " at " + c.detail);
    summary += c.name + " " + fmt("%.2g", c.max_error) + ", ";
  }
  const double secs = seconds_since(t0);
  o.require(secs < 60.0, "runtime " + fmt("%.1f s", secs));
  if (o.ok) o.detail = summary + "seed " + std::to_string(opt.seed) + ", " + fmt("%.1f s", secs);
  return o;
}

DualEncoder four_layer_model(std::uint64_t seed) {
  DualEncoderConfig cfg;
  cfg.visual = {4, 8, 2, 16, AttentionMode::VanillaConcat, MaskPolicy::Bidirectional};
  cfg.text = {4, 8, 2, 16, AttentionMode::VanillaConcat, MaskPolicy::Bidirectional};
  cfg.num_patches = 4;
  cfg.patch_dim = 4;
  cfg.embed_dim = 6;
  cfg.text_context = 8;
  RngStream rng(seed);
  return DualEncoder::random(cfg, Vocabulary({"a", "photo", "of", "cat"}), rng);
}

// 3. Instance-instance attention ignores the prompt bank in DA and DASR.
Outcome decoupling() {
  Outcome o;
  const DualEncoder model = four_layer_model(11);
  RngStream rng(12);
  const Tensor2D img = rng.normal_tensor(4, 4, 1.0);
  std::size_t compared = 0;
  for (FlowPolicy flow : {FlowPolicy::Discard, FlowPolicy::Propagate}) {
    for (std::size_t depth : {3, 4}) {
      const PromptBank a = build_bank({Modality::Visual, depth, 3, 8, 4, flow}, {}, rng);
      const PromptBank b = build_bank({Modality::Visual, depth, 5, 8, 4, flow}, {}, rng);
      for (AttentionMode mode : {AttentionMode::DA, AttentionMode::DASR}) {
        const EncodeSettings st = image_settings(model, mode);
        std::vector<LayerTrace> ta, tb;
        {
          ad::Tape tape;
          ad::Binder binder(tape);
          encode_image(binder, model, img, a, st, &ta);
          encode_image(binder, model, img, b, st, &tb);
        }
        const std::string where = std::string(to_string(mode)) + " " + std::string(to_string(flow)) +
                                  " depth " + std::to_string(depth);
        // Layer 1 sees the same X end to end.
        for (std::size_t h = 0; h < ta[0].instance_weights.size(); ++h) {
          o.require(bitwise_equal(ta[0].instance_weights[h], tb[0].instance_weights[h]), where + " layer 1 trace");
        }
        // Every layer: same X, the two banks' prompts.
        for (std::size_t l = 0; l < ta.size(); ++l) {
          ad::Tape tape;
          ad::Binder binder(tape);
          const ad::Var x = tape.constant(ta[l].x_in);
          const auto run = [&](const Tensor2D& p) {
            return transformer_block(binder, model.visual.blocks[l], x,
                                     p.rows() > 0 ? tape.constant(p) : ad::Var(), st);
          };
          // Discard leaves the layers past the bank depth prompt-free.
          const bool prompted = l < depth || flow == FlowPolicy::Propagate;
          if (prompted) {
            o.require(ta[l].p_in.rows() > 0 && tb[l].p_in.rows() > 0 && !bitwise_equal(ta[l].p_in, tb[l].p_in),
                      where + " layer " + std::to_string(l + 1) + " prompts not distinct");
          }
          const BlockOutput ra = run(ta[l].p_in);
          const BlockOutput rb = run(tb[l].p_in);
          for (std::size_t h = 0; h < ra.instance_weights.size(); ++h) {
            o.require(bitwise_equal(ra.instance_weights[h].value(), rb.instance_weights[h].value()),
                      where + " layer " + std::to_string(l + 1));
            ++compared;
          }
        }
      }
    }
  }
  if (o.ok) o.detail = std::to_string(compared) + " per-head matrices bitwise identical over 4 layers";
  return o;
}

// 4. Prompt parameter counts of the reference configurations.
Outcome parameter_accounting() {
  Outcome o;
  struct Case {
    std::size_t vd, vl, td, tl, expected;
    double kilo;
  };
  const Case cases[] = {{9, 8, 9, 4, 73728, 72.0}, {4, 8, 4, 4, 32768, 32.0}, {9, 4, 9, 2, 36864, 36.0}};
  for (const Case& c : cases) {
    const BankSpec specs[] = {{Modality::Visual, c.vd, c.vl, 768, 12, FlowPolicy::Discard},
                              {Modality::Textual, c.td, c.tl, 512, 12, FlowPolicy::Discard}};
    const std::size_t n = count_parameters(specs);
    o.require(n == c.expected && to_kilo(n) == c.kilo, "got " + std::to_string(n));
  }
  if (o.ok) o.detail = "73728 (72K), 32768 (32K), 36864 (36K)";
  return o;
}

// 5. H column of the base-to-new average table.
Outcome harmonic_means() {
  Outcome o;
  struct Row {
    const char* method;
    double base, novel, h;
  };
  const Row rows[] = {{"CLIP", 69.34, 74.22, 71.70},  {"CoOp", 82.69, 63.22, 71.66},
                      {"CoCoOp", 80.47, 71.69, 75.83}, {"ProGrad", 81.89, 71.85, 76.54},
                      {"ProDA", 81.56, 72.30, 76.65},  {"MaPLe", 82.28, 75.14, 78.55},
                      {"DPL", 83.42, 75.76, 79.40}};
  double worst = 0.0;
  for (const Row& r : rows) {
    const double err = std::abs(harmonic_mean(r.base, r.novel) - r.h);
    worst = std::max(worst, err);
    o.require(err <= 0.01, std::string(r.method) + " off by " + fmt("%.4f", err));
  }
  if (o.ok) o.detail = "7 rows, max deviation " + fmt("%.4f", worst);
  return o;
}

// 6. Empty banks reproduce the prompt-free encoder; sigma = 0 removes prompts
// from instance forwarding.
Outcome zero_shot_recovery() {
  Outcome o;
  const DualEncoder model = four_layer_model(21);
  RngStream rng(22);
  const Tensor2D img = rng.normal_tensor(4, 4, 1.0);
  const TokenSeq tmpl{"a", "photo", "of", "a", "[CLS]"};
  for (FlowPolicy flow : {FlowPolicy::Discard, FlowPolicy::Propagate}) {
    const PromptBank nv = PromptBank::empty(Modality::Visual, 4, flow);
    const PromptBank nt = PromptBank::empty(Modality::Textual, 4, flow);
    const Tensor2D ref_img = encode_image(model, img, nv, AttentionMode::VanillaConcat);
    const Tensor2D ref_txt = encode_text(model, {"cat"}, tmpl, nt, AttentionMode::VanillaConcat);
    for (AttentionMode mode : all_attention_modes()) {
      o.require(bitwise_equal(encode_image(model, img, nv, mode), ref_img), std::string(to_string(mode)) + " image");
      o.require(bitwise_equal(encode_text(model, {"cat"}, tmpl, nt, mode), ref_txt), std::string(to_string(mode)) + " text");
    }
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    const std::size_t n = 2 + rng.below(31), m = 1 + rng.below(8);
    const Tensor2D x = rng.normal_tensor(n, 8, 1.0);
    const Tensor2D p = rng.normal_tensor(m, 8, 1.0);
    const AttentionWeights w = AttentionWeights::random(8, 2, rng, 1.0);
    MixingOverride zero;
    zero.sigma = 0.0;
    const auto r = prompt_attention_forward(x, p, w, AttentionMode::DA, {}, zero);
    worst = std::max(worst, max_abs_diff(r.x_out, attend(x, x, w)));
  }
  o.require(worst <= 1e-12, "sigma = 0 off by " + fmt("%.3g", worst));
  if (o.ok) o.detail = "bitwise for all modes and both flows, sigma = 0 within " + fmt("%.2g", worst);
  return o;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size() / 2;
  return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

// Pinned after calibration; the observed top-minus-vanilla gaps were 24.7
// (seeds 1..5) and 11.7 (seeds 6..10).
constexpr double kLadderMargin = 5.0;

// 7. Median new-class accuracy climbs the ablation ladder.
Outcome generalization_ladder() {
  const auto t0 = Clock::now();
  Outcome o;
  const std::vector<GridCell> cells = ladder_cells();
  std::map<std::string, std::vector<double>> novel;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ExperimentSpec spec;
    spec.seed = seed;
    for (const GridRow& row : run_ablation_grid(cells, spec)) novel[row.cell.label].push_back(row.metrics.new_acc);
  }
  std::vector<double> med;
  std::string line;
  for (const GridCell& c : cells) {
    med.push_back(median(novel[c.label]));
    line += c.label + " " + fmt("%.2f", med.back()) + " ";
  }
  for (std::size_t i = 1; i < med.size(); ++i) o.require(med[i - 1] <= med[i], "not monotone: " + line);
  const double gap = med.back() - med.front();
  o.require(gap > kLadderMargin, "gap " + fmt("%.2f", gap) + " below margin: " + line);
  const double secs = seconds_since(t0);
  o.require(secs < 600.0, "runtime " + fmt("%.0f s", secs));
  if (o.ok) o.detail = line + "gap " + fmt("%.2f", gap) + " > " + fmt("%.1f", kLadderMargin) + ", " + fmt("%.0f s", secs);
  return o;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + DPL_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Relative path -> contents for every file under dir.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  if (!fs::exists(dir)) return files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = read_file(e.path());
  }
  return files;
}

// 8. Same command, config and seed twice: byte-identical outputs.
Outcome cli_determinism() {
  Outcome o;
  const fs::path root = fs::temp_directory_path() / "dpl_acceptance_cli";
  fs::remove_all(root);
  fs::create_directories(root);

  json cfg = cli::to_json(cli::default_config());
  for (const char* side : {"visual", "text"}) {
    cfg["model"][side]["num_layers"] = 2;
    cfg["model"][side]["model_dim"] = 8;
    cfg["model"][side]["mlp_hidden_dim"] = 16;
  }
  cfg["model"]["num_patches"] = 4;
  cfg["model"]["patch_dim"] = 4;
  cfg["model"]["embed_dim"] = 6;
  cfg["model"]["text_context"] = 8;
  cfg["task"]["num_classes"] = 4;
  cfg["task"]["test_per_class"] = 6;
  cfg["prompts"]["visual_depth"] = 2;
  cfg["prompts"]["text_depth"] = 2;
  cfg["pretrain"]["steps"] = 30;
  cfg["train"]["epochs"] = 3;
  cfg["grid"]["cells"] = json::array({{{"mode", "VanillaConcat"}, {"lctp", false}, {"label", "MPL"}},
                                      {{"mode", "DASR"}, {"lctp", true}, {"label", "+LC"}}});
  cfg["grid"]["seeds"] = {3, 4};
  {
    std::ofstream out(root / "config.json");
    out << cfg.dump(2);
  }
  const std::string config = "--config \"" + (root / "config.json").string() + "\"";

  struct Command {
    std::string name;
    std::function<std::string(const fs::path&)> args;
  };
  const std::vector<Command> commands = {
      {"train", [&](const fs::path& d) { return "train " + config + " --out \"" + d.string() + "\""; }},
      {"params", [&](const fs::path& d) { return "params " + config + " --out \"" + d.string() + "\""; }},
      {"diagnose", [&](const fs::path& d) { return "diagnose " + config + " --out \"" + d.string() + "\""; }},
      {"verify", [&](const fs::path& d) { return "verify --out \"" + d.string() + "\""; }},
  };
  std::size_t files = 0;
  for (const Command& c : commands) {
    // Identical command lines, so the output directory is cleared in between.
    const fs::path dir = root / c.name;
    const int ca = run_cli(c.args(dir), root / (c.name + "_a.log"));
    const auto sa = snapshot(dir);
    fs::remove_all(dir);
    const int cb = run_cli(c.args(dir), root / (c.name + "_b.log"));
    const auto sb = snapshot(dir);
    o.require(ca == 0 && cb == 0, c.name + " exited " + std::to_string(ca) + "/" + std::to_string(cb));
    if (ca != 0 || cb != 0) continue;
    o.require(!sa.empty(), c.name + " wrote nothing");
    o.require(sa == sb, c.name + " outputs differ");
    files += sa.size();
    if (c.name == "train") o.require(sa.count("metrics.jsonl") == 1, "train wrote no metrics.jsonl");
  }
  fs::remove_all(root);
  if (o.ok) o.detail = "train, params, diagnose, verify: " + std::to_string(files) + " files byte-identical";
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    Outcome (*run)();
  };
  const Criterion criteria[] = {
      {"exact decomposition oracle", exact_decomposition},
      {"gradient audit", gradient_audit},
      {"decoupling invariant", decoupling},
      {"parameter accounting", parameter_accounting},
      {"harmonic-mean metric", harmonic_means},
      {"zero-shot recovery", zero_shot_recovery},
      {"generalization ladder", generalization_ladder},
      {"CLI determinism", cli_determinism},
  };
  int failures = 0;
  int index = 0;
  for (const Criterion& c : criteria) {
    ++index;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.ok = false;
      o.detail = std::string("threw: ") + e.what();
    }
    std::printf("%s %d %s: %s\n", o.ok ? "PASS" : "FAIL", index, c.name, o.detail.c_str());
    std::fflush(stdout);
    failures += o.ok ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
