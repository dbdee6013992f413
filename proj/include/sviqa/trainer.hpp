#pragma once

// Joint training: freeze policy, answer-masked loss, cosine schedule, the
// step and loop drivers, and checkpoints.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "sviqa/model.hpp"
#include "sviqa/optim.hpp"

namespace sviqa {

struct FreezePolicy {
  std::set<nn::ParamGroup> frozen{nn::ParamGroup::speech_encoder, nn::ParamGroup::vision_encoder,
                                  nn::ParamGroup::lm_base};
  std::set<nn::ParamGroup> trainable{nn::ParamGroup::speech_adapter, nn::ParamGroup::vision_projector,
                                     nn::ParamGroup::lora};

  static FreezePolicy standard() { return {}; }
  static FreezePolicy freeze_all();
};

struct RatioReport {
  double trainable = 0, frozen = 0, total = 0;
  double ratio() const { return total > 0 ? trainable / total : 0.0; }
  double percent() const { return 100.0 * ratio(); }
  // "trainable 1.234M / total 5.678M (21.73%)"
  std::string str() const;
};

RatioReport ratio_from_counts(double trainable, double total);

struct Partition {
  std::vector<nn::NamedParam> frozen, trainable;
  RatioReport report;
  std::vector<Tensor> trainable_tensors() const;
};

// Flags trainable tensors with requires_grad and clears it on frozen ones.
// Throws CoverageError naming any parameter whose group the policy omits
// (or lists on both sides).
Partition partition_parameters(const std::vector<nn::NamedParam>& params, const FreezePolicy& policy);

struct TrainConfig {
  long long steps = 500;
  double lr_max = 1e-2;
  double lr_min = 1e-4;
  long long warmup = 0;
  std::size_t batch_size = 8;
  std::uint64_t seed = 7;
  OptimizerConfig optimizer;
  double grad_clip = 0.0;  // global-norm clip, 0 disables
  bool both_renderings = false;

  bool set(const std::string& key, const std::string& value);
  void validate() const;
  std::string canonical() const;
};

// The manifest's records; with both_renderings, each is followed by its
// alternate rendering when the sidecar has one.
std::vector<data::DatasetRecord> training_records(const data::Manifest& m, const TrainConfig& cfg);

// Linear warmup to lr_max, then cosine decay to lr_min at t = steps.
// Steps beyond the schedule return lr_min.
double cosine_lr(long long t, const TrainConfig& cfg);

// Rows of the sequence whose next-token targets lie in the answer span, and
// those targets. Throws EmptyLossError without an answer span.
std::pair<std::vector<std::size_t>, std::vector<int>> answer_targets(const lm::TokenSequence& seq);

// Cross-entropy over the answer targets, from full L×V logits.
Tensor compute_loss(const Tensor& logits, const lm::TokenSequence& seq);
// Same value, computing logits only at the answer rows.
Tensor example_loss(const SviqaModel& model, const Example& ex);

struct StepMetrics {
  long long step = 0;
  double loss = 0, lr = 0, grad_norm = 0;
};

// Mean loss over the batch, one backward pass and one optimizer update.
// Throws NumericError listing the records whose loss is not finite, and
// ConfigError when nothing is trainable.
StepMetrics train_step(const std::vector<const Example*>& batch, SviqaModel& model, Optimizer& opt,
                       const TrainConfig& cfg, long long t);

struct TrainState {
  long long step = 0;  // next step to run
};

// Runs steps [state.step, until) over examples, appending CSV rows
// (step,loss,lr,grad_norm) to metrics_csv when it is non-empty.
std::vector<StepMetrics> train_loop(SviqaModel& model, Optimizer& opt, const std::vector<Example>& examples,
                                    const TrainConfig& cfg, TrainState& state, long long until,
                                    const std::filesystem::path& metrics_csv = {},
                                    const std::function<void(const StepMetrics&)>& on_step = {});

// Hex SHA-256 of a tensor's shape and data.
std::string tensor_sha256(const Tensor& t);
std::map<std::string, std::string> hash_parameters(const std::vector<nn::NamedParam>& params);

struct Checkpoint {
  std::string model_config;  // canonical text
  std::uint64_t config_hash = 0;
  std::uint64_t template_hash = 0;
  std::uint32_t vocab_size = 0;
  std::string train_config;  // canonical text
  std::vector<std::pair<std::string, Tensor>> params;
  std::uint32_t optimizer_kind = 0;
  std::vector<Tensor> optimizer_state;
  long long optimizer_steps = 0;
  long long step = 0;
};

Checkpoint make_checkpoint(const SviqaModel& model, const Optimizer* opt, const TrainConfig& cfg, long long step);
// Written to a temporary file and renamed into place.
void checkpoint_save(const std::filesystem::path& path, const Checkpoint& ck);
// Reads the whole file before returning; ParseError on truncation or a bad
// magic, CompatibilityError on a stored hash that disagrees with its config.
Checkpoint checkpoint_load(const std::filesystem::path& path);
// Copies parameters into a model built from the same config; throws
// CompatibilityError on a config, template or vocabulary mismatch.
void restore_model(SviqaModel& model, const Checkpoint& ck);
void restore_optimizer(Optimizer& opt, const Checkpoint& ck);

}  // namespace sviqa
