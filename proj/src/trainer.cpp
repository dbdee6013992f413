#include "sviqa/trainer.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "sviqa/error.hpp"
#include "sviqa/serialize.hpp"

namespace sviqa {

FreezePolicy FreezePolicy::freeze_all() {
  FreezePolicy p;
  p.frozen = {nn::ParamGroup::speech_encoder, nn::ParamGroup::vision_encoder,   nn::ParamGroup::lm_base,
              nn::ParamGroup::speech_adapter, nn::ParamGroup::vision_projector, nn::ParamGroup::lora};
  p.trainable.clear();
  return p;
}

namespace {
std::string human_count(double n) {
  char buf[48];
  if (n >= 1e9) std::snprintf(buf, sizeof buf, "%.2fB", n / 1e9);
  else if (n >= 1e6) std::snprintf(buf, sizeof buf, "%.1fM", n / 1e6);
  else if (n >= 1e3) std::snprintf(buf, sizeof buf, "%.1fK", n / 1e3);
  else std::snprintf(buf, sizeof buf, "%.0f", n);
  return buf;
}
}  // namespace

std::string RatioReport::str() const {
  char pct[32];
  std::snprintf(pct, sizeof pct, "%.2f%%", percent());
  return "trainable " + human_count(trainable) + " / total " + human_count(total) + " (" + pct + ")";
}

RatioReport ratio_from_counts(double trainable, double total) {
  if (trainable < 0 || total <= 0 || trainable > total)
    throw ConfigError("parameter counts must satisfy 0 <= trainable <= total and total > 0");
  return {trainable, total - trainable, total};
}

std::vector<Tensor> Partition::trainable_tensors() const {
  std::vector<Tensor> out;
  for (const auto& p : trainable) out.push_back(p.tensor);
  return out;
}

Partition partition_parameters(const std::vector<nn::NamedParam>& params, const FreezePolicy& policy) {
  Partition out;
  std::string unassigned;
  for (const auto& p : params) {
    const bool f = policy.frozen.count(p.group) != 0, t = policy.trainable.count(p.group) != 0;
    if (f == t) {
      unassigned += (unassigned.empty() ? "" : ", ") + p.name + " (" + nn::to_string(p.group) + ")";
      continue;
    }
    auto tensor = p.tensor;
    tensor.set_requires_grad(t);
    tensor.set_name(p.name);
    (t ? out.trainable : out.frozen).push_back(p);
    (t ? out.report.trainable : out.report.frozen) += static_cast<double>(p.tensor.numel());
  }
  if (!unassigned.empty()) throw CoverageError("freeze policy does not assign exactly one side to: " + unassigned);
  out.report.total = out.report.trainable + out.report.frozen;
  return out;
}

bool TrainConfig::set(const std::string& key, const std::string& v) {
  try {
    if (key == "train.steps") steps = std::stoll(v);
    else if (key == "train.lr_max") lr_max = std::stod(v);
    else if (key == "train.lr_min") lr_min = std::stod(v);
    else if (key == "train.warmup") warmup = std::stoll(v);
    else if (key == "train.batch_size") batch_size = static_cast<std::size_t>(std::stoull(v));
    else if (key == "train.seed") seed = std::stoull(v);
    else if (key == "train.optimizer") optimizer.kind = parse_optimizer_kind(v);
    else if (key == "train.momentum") optimizer.momentum = std::stod(v);
    else if (key == "train.grad_clip") grad_clip = std::stod(v);
    else if (key == "train.both_renderings") {
      if (v == "true" || v == "1") both_renderings = true;
      else if (v == "false" || v == "0") both_renderings = false;
      else throw ConfigError("config key 'train.both_renderings': expected true or false, got '" + v + "'");
    } else return false;
  } catch (const std::invalid_argument&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
  } catch (const std::out_of_range&) {
    throw ConfigError("config key '" + key + "': value out of range '" + v + "'");
  }
  return true;
}

void TrainConfig::validate() const {
  if (steps < 1) throw ConfigError("train.steps must be >= 1");
  if (!(lr_max >= lr_min && lr_min >= 0)) throw ConfigError("learning rates must satisfy lr_max >= lr_min >= 0");
  if (warmup < 0 || warmup > steps) throw ConfigError("train.warmup must lie in [0, steps]");
  if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (grad_clip < 0) throw ConfigError("train.grad_clip must be >= 0");
}

std::string TrainConfig::canonical() const {
  std::ostringstream os;
  os.precision(17);
  os << "train.batch_size = " << batch_size << "\ntrain.both_renderings = " << (both_renderings ? "true" : "false")
     << "\ntrain.grad_clip = " << grad_clip << "\ntrain.lr_max = " << lr_max
     << "\ntrain.lr_min = " << lr_min << "\ntrain.momentum = " << optimizer.momentum
     << "\ntrain.optimizer = " << to_string(optimizer.kind) << "\ntrain.seed = " << seed
     << "\ntrain.steps = " << steps << "\ntrain.warmup = " << warmup << "\n";
  return os.str();
}

std::vector<data::DatasetRecord> training_records(const data::Manifest& m, const TrainConfig& cfg) {
  std::vector<data::DatasetRecord> out;
  for (const auto& r : m.records) {
    out.push_back(r);
    if (!cfg.both_renderings) continue;
    const auto other = r.modality == data::Modality::text ? InputMode::force_speech : InputMode::force_text;
    try {
      out.push_back(apply_mode(r, m, other));
    } catch (const ModeError&) {
    }
  }
  return out;
}

double cosine_lr(long long t, const TrainConfig& cfg) {
  if (t < 0) t = 0;
  if (t >= cfg.steps) return cfg.lr_min;
  if (t < cfg.warmup) return cfg.lr_max * static_cast<double>(t) / static_cast<double>(cfg.warmup);
  const double progress = static_cast<double>(t - cfg.warmup) / static_cast<double>(cfg.steps - cfg.warmup);
  return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

std::pair<std::vector<std::size_t>, std::vector<int>> answer_targets(const lm::TokenSequence& seq) {
  const lm::Span* a = seq.span(lm::SpanKind::text_answer);
  if (!a || a->begin == a->end) throw EmptyLossError("sequence has no answer tokens");
  if (a->begin == 0) throw EmptyLossError("answer span starts the sequence; nothing predicts it");
  std::pair<std::vector<std::size_t>, std::vector<int>> out;
  for (std::size_t p = a->begin; p < a->end; ++p) {
    out.first.push_back(p - 1);
    out.second.push_back(seq.ids[p]);
  }
  return out;
}

Tensor compute_loss(const Tensor& logits, const lm::TokenSequence& seq) {
  const auto [rows, targets] = answer_targets(seq);
  if (logits.rows() != seq.length())
    throw DimensionError("logits have " + std::to_string(logits.rows()) + " rows for a sequence of length " +
                         std::to_string(seq.length()));
  std::vector<int> all(seq.length(), 0);
  std::vector<bool> mask(seq.length(), false);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    all[rows[i]] = targets[i];
    mask[rows[i]] = true;
  }
  return cross_entropy(logits, all, mask);
}

Tensor example_loss(const SviqaModel& model, const Example& ex) {
  const auto seq = model.sequence(ex, true);
  const auto [rows, targets] = answer_targets(seq);
  const Tensor logits = model.lm().forward_logits_rows(seq, rows);
  return cross_entropy(logits, targets, std::vector<bool>(targets.size(), true));
}

StepMetrics train_step(const std::vector<const Example*>& batch, SviqaModel& model, Optimizer& opt,
                       const TrainConfig& cfg, long long t) {
  if (batch.empty()) throw EmptyInputError("train_step on an empty batch");
  if (opt.params().empty()) throw ConfigError("train_step: the freeze policy leaves nothing trainable");
  std::vector<Tensor> losses;
  std::string bad;
  for (const Example* ex : batch) {
    bool ok = true;
    try {
      losses.push_back(example_loss(model, *ex));
      ok = std::isfinite(losses.back().item());
    } catch (const NumericError&) {
      ok = false;
    }
    if (!ok) bad += (bad.empty() ? "" : ", ") + ex->id;
  }
  if (!bad.empty()) throw NumericError("non-finite loss at step " + std::to_string(t) + " for records: " + bad);
  Tensor total = losses[0];
  for (std::size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
  const Tensor loss = scale(total, 1.0 / static_cast<double>(batch.size()));

  opt.zero_grad();
  backward(loss);
  double sq = 0;
  for (const auto& p : opt.params())
    for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm at step " + std::to_string(t));
  if (cfg.grad_clip > 0 && norm > cfg.grad_clip) {
    const double f = cfg.grad_clip / norm;
    for (const auto& p : opt.params())
      for (double& g : *p.node()->grad) g *= f;
  }
  const double lr = cosine_lr(t, cfg);
  opt.step(lr);
  return {t, loss.item(), lr, norm};
}

std::vector<StepMetrics> train_loop(SviqaModel& model, Optimizer& opt, const std::vector<Example>& examples,
                                    const TrainConfig& cfg, TrainState& state, long long until,
                                    const std::filesystem::path& metrics_csv,
                                    const std::function<void(const StepMetrics&)>& on_step) {
  cfg.validate();
  if (examples.empty()) throw EmptyInputError("training set is empty");
  const std::size_t batch = std::min(cfg.batch_size, examples.size());
  const data::BatchIterator it(examples.size(), batch, cfg.seed, true);
  std::ofstream csv;
  if (!metrics_csv.empty()) {
    const bool fresh = !std::filesystem::exists(metrics_csv);
    csv.open(metrics_csv, std::ios::app);
    if (!csv) throw IoError("cannot open metrics file " + metrics_csv.string());
    if (fresh) csv << "step,loss,lr,grad_norm\n";
    csv.precision(17);
  }
  std::vector<StepMetrics> out;
  for (; state.step < until; ++state.step) {
    std::vector<const Example*> b;
    for (std::size_t i : it.batch_at(static_cast<std::size_t>(state.step))) b.push_back(&examples[i]);
    const auto m = train_step(b, model, opt, cfg, state.step);
    out.push_back(m);
    if (csv) csv << m.step << ',' << m.loss << ',' << m.lr << ',' << m.grad_norm << '\n';
    if (on_step) on_step(m);
  }
  return out;
}

std::string tensor_sha256(const Tensor& t) {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw Error("sha256: cannot allocate digest context");
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  for (std::size_t d : t.shape()) {
    const std::uint64_t v = d;
    EVP_DigestUpdate(ctx, &v, sizeof v);
  }
  const auto data = t.data();
  EVP_DigestUpdate(ctx, data.data(), data.size() * sizeof(double));
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

std::map<std::string, std::string> hash_parameters(const std::vector<nn::NamedParam>& params) {
  std::map<std::string, std::string> out;
  for (const auto& p : params) out[p.name] = tensor_sha256(p.tensor);
  return out;
}

namespace {
constexpr char kMagic[4] = {'S', 'V', 'Q', 'C'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

Checkpoint make_checkpoint(const SviqaModel& model, const Optimizer* opt, const TrainConfig& cfg, long long step) {
  Checkpoint ck;
  ck.model_config = model.config().canonical();
  ck.config_hash = model.config().hash();
  ck.template_hash = lm::template_hash();
  ck.vocab_size = static_cast<std::uint32_t>(model.vocab().size());
  ck.train_config = cfg.canonical();
  for (const auto& p : model.parameters()) ck.params.emplace_back(p.name, p.tensor.clone());
  if (opt) {
    ck.optimizer_kind = static_cast<std::uint32_t>(opt->config().kind);
    ck.optimizer_state = opt->state();
    ck.optimizer_steps = opt->steps_taken();
  } else {
    ck.optimizer_kind = static_cast<std::uint32_t>(cfg.optimizer.kind);
  }
  ck.step = step;
  return ck;
}

void checkpoint_save(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint " + tmp.string());
    os.write(kMagic, 4);
    io::write_u32(os, kVersion);
    io::write_u64(os, ck.config_hash);
    io::write_string(os, ck.model_config);
    io::write_u64(os, ck.template_hash);
    io::write_u32(os, ck.vocab_size);
    io::write_string(os, ck.train_config);
    io::write_u32(os, static_cast<std::uint32_t>(ck.params.size()));
    for (const auto& [name, t] : ck.params) {
      io::write_string(os, name);
      io::write_tensor(os, t);
    }
    io::write_u32(os, ck.optimizer_kind);
    io::write_u64(os, static_cast<std::uint64_t>(ck.optimizer_steps));
    io::write_u32(os, static_cast<std::uint32_t>(ck.optimizer_state.size()));
    for (const auto& t : ck.optimizer_state) io::write_tensor(os, t);
    io::write_u64(os, static_cast<std::uint64_t>(ck.step));
    os.write(kMagic, 4);
    if (!os) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint checkpoint_load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  Checkpoint ck;
  io::expect_magic(is, kMagic, "checkpoint");
  const auto version = io::read_u32(is);
  if (version != kVersion)
    throw CompatibilityError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                             std::to_string(kVersion) + ")");
  ck.config_hash = io::read_u64(is);
  ck.model_config = io::read_string(is);
  ck.template_hash = io::read_u64(is);
  ck.vocab_size = io::read_u32(is);
  ck.train_config = io::read_string(is);
  const auto n = io::read_u32(is);
  for (std::uint32_t i = 0; i < n; ++i) {
    auto name = io::read_string(is);
    ck.params.emplace_back(std::move(name), io::read_tensor(is));
  }
  ck.optimizer_kind = io::read_u32(is);
  ck.optimizer_steps = static_cast<long long>(io::read_u64(is));
  const auto ns = io::read_u32(is);
  for (std::uint32_t i = 0; i < ns; ++i) ck.optimizer_state.push_back(io::read_tensor(is));
  ck.step = static_cast<long long>(io::read_u64(is));
  io::expect_magic(is, kMagic, "checkpoint trailer");
  if (ModelConfig::from_canonical(ck.model_config).hash() != ck.config_hash)
    throw CompatibilityError("checkpoint config hash does not match its stored config");
  return ck;
}

void restore_model(SviqaModel& model, const Checkpoint& ck) {
  if (ck.config_hash != model.config().hash())
    throw CompatibilityError("checkpoint config hash differs from the model's configuration");
  if (ck.template_hash != lm::template_hash()) throw CompatibilityError("checkpoint prompt template differs");
  if (ck.vocab_size != static_cast<std::uint32_t>(model.vocab().size()))
    throw CompatibilityError("checkpoint vocabulary size " + std::to_string(ck.vocab_size) + " differs from " +
                             std::to_string(model.vocab().size()));
  auto params = model.parameters();
  if (params.size() != ck.params.size())
    throw CompatibilityError("checkpoint holds " + std::to_string(ck.params.size()) + " tensors, model has " +
                             std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = ck.params[i];
    if (name != params[i].name || t.shape() != params[i].tensor.shape())
      throw CompatibilityError("checkpoint tensor " + name + " does not match model tensor " + params[i].name);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto src = ck.params[i].second.data();
    auto dst = params[i].tensor.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

void restore_optimizer(Optimizer& opt, const Checkpoint& ck) {
  if (ck.optimizer_kind != static_cast<std::uint32_t>(opt.config().kind))
    throw CompatibilityError("checkpoint optimizer kind differs from the configured optimizer");
  opt.load_state(ck.optimizer_state, ck.optimizer_steps);
}

}  // namespace sviqa
