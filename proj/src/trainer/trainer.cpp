#include "dpl/trainer/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <unordered_set>

#include "dpl/error.hpp"

namespace dpl {
namespace {

constexpr std::uint64_t kModelStream = 0x6d6f64656cULL;
constexpr std::uint64_t kBankStream = 0x62616e6bULL;
constexpr std::uint64_t kPretrainStream = 0x70726574ULL;
constexpr std::uint64_t kShuffleStream = 0x73687566ULL;

std::vector<std::size_t> permutation(std::size_t n, RngStream& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

// Position of each global class inside the given class list.
std::vector<std::size_t> local_labels(std::span<const Sample> samples, const std::vector<std::size_t>& classes) {
  std::vector<std::size_t> out;
  for (const Sample& s : samples) {
    std::size_t k = 0;
    while (k < classes.size() && classes[k] != s.label) ++k;
    if (k == classes.size()) fail(ErrorKind::InvalidShape, "sample label outside the class list");
    out.push_back(k);
  }
  return out;
}

struct AdamSlot {
  Tensor2D m;
  Tensor2D v;
};

void adam_update(Tensor2D& p, const Tensor2D& g, AdamSlot& slot, double lr, std::size_t t) {
  constexpr double b1 = 0.9;
  constexpr double b2 = 0.999;
  constexpr double eps = 1e-8;
  if (slot.m.size() == 0) {
    slot.m = Tensor2D(p.rows(), p.cols());
    slot.v = Tensor2D(p.rows(), p.cols());
  }
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  auto pv = p.values();
  auto mv = slot.m.values();
  auto vv = slot.v.values();
  const auto gv = g.values();
  for (std::size_t i = 0; i < pv.size(); ++i) {
    mv[i] = b1 * mv[i] + (1.0 - b1) * gv[i];
    vv[i] = b2 * vv[i] + (1.0 - b2) * gv[i] * gv[i];
    pv[i] -= lr * (mv[i] / c1) / (std::sqrt(vv[i] / c2) + eps);
  }
}

double percent(std::size_t correct, std::size_t total) {
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

double accuracy_among(const DualEncoder& model, const SyntheticTask& task, const PromptBanks& banks,
                      AttentionMode mode, const TokenSeq& template_tokens, std::span<const Sample> samples,
                      const std::vector<std::size_t>& classes) {
  if (samples.empty()) return 0.0;
  std::vector<Tensor2D> rows;
  for (std::size_t c : classes) rows.push_back(encode_text(model, task.class_name(c), template_tokens, banks.textual, mode));
  const Tensor2D text = concat_rows(rows);
  const auto labels = local_labels(samples, classes);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Tensor2D img = encode_image(model, samples[i].patches, banks.visual, mode);
    const Tensor2D scores = classify(img, text, model.config.logit_scale);
    if (argmax(scores.row(0)) == labels[i]) ++correct;
  }
  return percent(correct, samples.size());
}

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

void ExperimentSpec::validate() const {
  model.validate();
  task.validate();
  train.validate();
  if (task.num_patches != model.num_patches || task.patch_dim != model.patch_dim) {
    fail(ErrorKind::Configuration, "task patch shape must match model.num_patches and model.patch_dim");
  }
  const auto check_bank = [](std::size_t depth, std::size_t length, std::size_t layers, const char* name) {
    if (length > 0 && (depth == 0 || depth > layers)) {
      fail(ErrorKind::Configuration, std::string("prompts.") + name + "_depth must lie in [1, encoder layers]");
    }
  };
  check_bank(prompts.visual_depth, prompts.visual_length, model.visual.num_layers, "visual");
  check_bank(prompts.text_depth, prompts.text_length, model.text.num_layers, "text");
  if (pretrain.batch_size == 0) fail(ErrorKind::Configuration, "pretrain.batch_size must be positive");
  if (!(pretrain.lr > 0.0)) fail(ErrorKind::Configuration, "pretrain.lr must be positive");
  // Templates must parse and fit the text context.
  const PromptBank probe = PromptBank::empty(Modality::Textual, model.text.model_dim);
  for (const std::string& t : {lctp_template, plain_template, pretrain.template_text}) {
    const auto layout = assemble_text_input({"x"}, tokenize(t), probe);
    if (layout.manual_prompt_tokens.size() + 1 > model.text_context) {
      fail(ErrorKind::Configuration, "template '" + t + "' does not fit model.text_context");
    }
  }
}

SyntheticTask make_task(const ExperimentSpec& spec) {
  TaskConfig tc = spec.task;
  tc.seed = spec.seed;
  return SyntheticTask(tc);
}

Vocabulary make_vocabulary(const ExperimentSpec& spec, const SyntheticTask& task) {
  std::vector<std::string> words = task.name_words();
  for (const std::string& text : {spec.lctp_template, spec.plain_template, spec.pretrain.template_text,
                                  spec.prompts.init_phrase}) {
    for (auto& tok : tokenize(text)) {
      if (tok != kClassSlot) words.push_back(tok);
    }
  }
  return Vocabulary(std::move(words));
}

DualEncoder pretrain_backbone(const ExperimentSpec& spec, const SyntheticTask& task, std::vector<double>* losses) {
  spec.validate();
  RngStream model_rng = RngStream(spec.seed).fork(kModelStream);
  DualEncoder model = DualEncoder::random(spec.model, make_vocabulary(spec, task), model_rng);

  const PretrainConfig& pc = spec.pretrain;
  const auto classes = task.all_classes();
  const auto names = task.class_names(classes);
  const TokenSeq tmpl = tokenize(pc.template_text);
  const PromptBanks none = empty_banks(model);

  std::vector<Tensor2D*> params;
  model.visit_backbone([&params](std::string_view, Tensor2D& t) { params.push_back(&t); });
  std::vector<AdamSlot> slots(params.size());

  RngStream rng = RngStream(spec.seed).fork(kPretrainStream).fork(static_cast<std::uint64_t>(SampleSplit::Pretrain));
  EncodeSettings is = image_settings(model, AttentionMode::VanillaConcat);
  EncodeSettings ts = text_settings(model, AttentionMode::VanillaConcat);
  is.backbone_trainable = ts.backbone_trainable = true;
  for (std::size_t step = 1; step <= pc.steps; ++step) {
    ad::Tape tape;
    ad::Binder binder(tape);
    const ad::Var text = encode_class_texts(binder, model, names, tmpl, none.textual, ts);
    std::vector<ad::Var> imgs;
    std::vector<std::size_t> labels;
    for (std::size_t b = 0; b < pc.batch_size; ++b) {
      const Sample s = task.draw(classes[rng.below(classes.size())], rng, false);
      imgs.push_back(encode_image(binder, model, s.patches, none.visual, is));
      labels.push_back(s.label);
    }
    const ad::Var loss = ad::cross_entropy(classify(ad::concat_rows(imgs), text, model.config.logit_scale), labels);
    const double value = loss.value()(0, 0);
    if (!std::isfinite(value)) fail(ErrorKind::Divergence, "pretraining loss is non-finite at step " + std::to_string(step));
    if (losses != nullptr) losses->push_back(value);
    tape.backward(loss);
    const auto& bound = binder.trainable();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto it = bound.find(params[i]);
      if (it == bound.end()) continue;
      adam_update(*params[i], tape.grad(it->second), slots[i], pc.lr, step);
    }
  }
  return model;
}

PromptBanks build_banks(const ExperimentSpec& spec, const DualEncoder& model) {
  const PromptConfig& pc = spec.prompts;
  RngStream rng = RngStream(spec.seed).fork(kBankStream);
  PromptBanks banks{PromptBank::empty(Modality::Visual, model.config.visual.model_dim, pc.flow),
                    PromptBank::empty(Modality::Textual, model.config.text.model_dim, pc.flow)};
  if (pc.visual_length > 0) {
    BankSpec vs{Modality::Visual, pc.visual_depth, pc.visual_length, model.config.visual.model_dim,
                model.config.visual.num_layers, pc.flow};
    banks.visual = build_bank(vs, InitScheme{}, rng);
  }
  if (pc.text_length > 0) {
    BankSpec ts{Modality::Textual, pc.text_depth, pc.text_length, model.config.text.model_dim,
                model.config.text.num_layers, pc.flow};
    InitScheme init;
    init.text_std = pc.text_std;
    if (!pc.init_phrase.empty()) init.textual_first_layer = model.embed_words(tokenize(pc.init_phrase));
    banks.textual = build_bank(ts, init, rng);
  }
  return banks;
}

PromptBanks empty_banks(const DualEncoder& model) {
  return {PromptBank::empty(Modality::Visual, model.config.visual.model_dim),
          PromptBank::empty(Modality::Textual, model.config.text.model_dim)};
}

TokenSeq training_template(const ExperimentSpec& spec) {
  return tokenize(spec.lctp ? spec.lctp_template : spec.plain_template);
}

Accuracy evaluate(const DualEncoder& model, const SyntheticTask& task, const PromptBanks& banks, AttentionMode mode,
                  const TokenSeq& template_tokens, std::span<const Sample> base_test,
                  std::span<const Sample> new_test) {
  return {accuracy_among(model, task, banks, mode, template_tokens, base_test, task.base_classes()),
          accuracy_among(model, task, banks, mode, template_tokens, new_test, task.new_classes())};
}

RunMetrics train_prompts(const DualEncoder& model, const SyntheticTask& task, PromptBanks& banks,
                         const ExperimentSpec& spec) {
  spec.validate();
  const TrainConfig& tc = spec.train;
  const std::uint64_t checksum = model.backbone_checksum();
  const auto train = task.train_set();
  const auto base_test = task.base_test_set();
  const auto new_test = task.new_test_set();
  const auto base_names = task.class_names(task.base_classes());
  const auto labels_all = local_labels(train, task.base_classes());
  const TokenSeq tmpl = training_template(spec);

  RunMetrics m;
  m.seed = spec.seed;
  m.mode = spec.mode;
  m.lctp = spec.lctp;
  m.parameter_count = banks.parameter_count();
  for (const PromptBank* b : {&banks.visual, &banks.textual}) {
    for (const Tensor2D& t : b->layers()) {
      if (!t.all_finite()) fail(ErrorKind::Divergence, "prompt bank holds non-finite values");
    }
  }
  const Accuracy zs = evaluate(model, task, empty_banks(model), spec.mode, tokenize(spec.pretrain.template_text),
                               base_test, new_test);
  m.zero_shot_base = zs.base;
  m.zero_shot_new = zs.novel;
  const Accuracy init = evaluate(model, task, banks, spec.mode, tmpl, base_test, new_test);
  m.initial_base = m.base_acc = init.base;
  m.initial_new = m.new_acc = init.novel;

  std::vector<Tensor2D*> visual_params;
  std::vector<Tensor2D*> text_params;
  if (!banks.visual.is_empty()) {
    for (Tensor2D& t : banks.visual.layers()) visual_params.push_back(&t);
  }
  if (!banks.textual.is_empty()) {
    for (Tensor2D& t : banks.textual.layers()) text_params.push_back(&t);
  }
  std::unordered_set<const Tensor2D*> allowed(visual_params.begin(), visual_params.end());
  allowed.insert(text_params.begin(), text_params.end());

  const LrSchedule sched_v = make_schedule(tc, tc.lr_visual, train.size());
  const LrSchedule sched_t = make_schedule(tc, tc.lr_textual, train.size());
  SgdState state_v{tc.momentum, {}};
  SgdState state_t{tc.momentum, {}};
  EncodeSettings is = image_settings(model, spec.mode);
  EncodeSettings ts = text_settings(model, spec.mode);
  is.prompts_trainable = ts.prompts_trainable = true;

  const RngStream shuffle_root = RngStream(spec.seed).fork(kShuffleStream);
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    RngStream rng = shuffle_root.fork(epoch);
    const auto order = permutation(train.size(), rng);
    double loss_total = 0.0;
    std::size_t batches = 0;
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size, ++step) {
      rec.lr_visual = lr_at(step, sched_v);
      rec.lr_textual = lr_at(step, sched_t);
      ad::Tape tape;
      ad::Binder binder(tape);
      const ad::Var text = encode_class_texts(binder, model, base_names, tmpl, banks.textual, ts);
      std::vector<ad::Var> imgs;
      std::vector<std::size_t> labels;
      for (std::size_t k = start; k < std::min(start + tc.batch_size, order.size()); ++k) {
        imgs.push_back(encode_image(binder, model, train[order[k]].patches, banks.visual, is));
        labels.push_back(labels_all[order[k]]);
      }
      const ad::Var loss = ad::cross_entropy(classify(ad::concat_rows(imgs), text, model.config.logit_scale), labels);
      const double value = loss.value()(0, 0);
      if (!std::isfinite(value)) {
        fail(ErrorKind::Divergence, "loss is non-finite at epoch " + std::to_string(epoch) + ", step " +
                                        std::to_string(step));
      }
      loss_total += value;
      ++batches;
      tape.backward(loss);
      for (const auto& [ptr, var] : binder.trainable_in_order()) {
        if (!allowed.contains(ptr)) fail(ErrorKind::State, "parameter audit: a non-prompt tensor is trainable");
      }
      const auto grads_for = [&](const std::vector<Tensor2D*>& ps) {
        std::vector<Tensor2D> gs;
        for (Tensor2D* p : ps) {
          const auto it = binder.trainable().find(p);
          gs.push_back(it == binder.trainable().end() ? Tensor2D(p->rows(), p->cols()) : tape.grad(it->second));
        }
        return gs;
      };
      const auto gv = grads_for(visual_params);
      const auto gt = grads_for(text_params);
      sgd_step(visual_params, gv, rec.lr_visual, &state_v);
      sgd_step(text_params, gt, rec.lr_textual, &state_t);
    }
    rec.train_loss = batches == 0 ? 0.0 : loss_total / static_cast<double>(batches);
    const Accuracy acc = evaluate(model, task, banks, spec.mode, tmpl, base_test, new_test);
    rec.base_acc = acc.base;
    rec.new_acc = acc.novel;
    m.base_acc = acc.base;
    m.new_acc = acc.novel;
    m.epochs.push_back(rec);
  }
  m.harmonic_mean = harmonic_mean(m.base_acc, m.new_acc);
  m.backbone_checksum = model.backbone_checksum();
  if (m.backbone_checksum != checksum) fail(ErrorKind::State, "backbone changed during prompt training");
  return m;
}

RunMetrics run_experiment(const ExperimentSpec& spec, PromptBanks* banks_out) {
  const SyntheticTask task = make_task(spec);
  const DualEncoder model = pretrain_backbone(spec, task);
  PromptBanks banks = build_banks(spec, model);
  RunMetrics m = train_prompts(model, task, banks, spec);
  if (banks_out != nullptr) *banks_out = std::move(banks);
  return m;
}

std::vector<GridCell> ladder_cells() {
  return {{AttentionMode::VanillaConcat, false, "MPL"},
          {AttentionMode::DA, false, "+DA"},
          {AttentionMode::DASR, false, "+SR"},
          {AttentionMode::DASR, true, "+LC"}};
}

std::vector<GridRow> run_ablation_grid(std::span<const GridCell> cells, const ExperimentSpec& spec) {
  const SyntheticTask task = make_task(spec);
  const DualEncoder model = pretrain_backbone(spec, task);
  const PromptBanks initial = build_banks(spec, model);
  std::vector<GridRow> rows;
  for (const GridCell& cell : cells) {
    ExperimentSpec s = spec;
    s.mode = cell.mode;
    s.lctp = cell.lctp;
    PromptBanks banks = initial;
    RunMetrics m = train_prompts(model, task, banks, s);
    rows.push_back({cell, std::move(m), std::move(banks)});
  }
  return rows;
}

std::vector<nlohmann::json> metrics_records(const RunMetrics& m, std::string_view label) {
  std::vector<nlohmann::json> out;
  const auto header = [&](std::string_view type) {
    return nlohmann::json{{"schema", "dpl.metrics"}, {"version", kMetricsSchemaVersion}, {"type", type},
                          {"cell", label}, {"seed", m.seed}, {"mode", to_string(m.mode)}, {"lctp", m.lctp}};
  };
  for (const EpochRecord& e : m.epochs) {
    auto j = header("epoch");
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    j["lr_visual"] = e.lr_visual;
    j["lr_textual"] = e.lr_textual;
    j["base_acc"] = e.base_acc;
    j["new_acc"] = e.new_acc;
    out.push_back(std::move(j));
  }
  auto s = header("summary");
  s["zero_shot_base"] = m.zero_shot_base;
  s["zero_shot_new"] = m.zero_shot_new;
  s["initial_base"] = m.initial_base;
  s["initial_new"] = m.initial_new;
  s["base_acc"] = m.base_acc;
  s["new_acc"] = m.new_acc;
  s["harmonic_mean"] = m.harmonic_mean;
  s["parameter_count"] = m.parameter_count;
  s["backbone_checksum"] = hex64(m.backbone_checksum);
  out.push_back(std::move(s));
  return out;
}

}  // namespace dpl
