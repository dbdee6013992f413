#pragma once

// Character-level tokenizer, prompt template, [V; S; T] sequence assembly,
// and the small causal decoder with LoRA on the query/value projections.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sviqa/data.hpp"
#include "sviqa/nn.hpp"
#include "sviqa/speech_adapter.hpp"
#include "sviqa/vision.hpp"

namespace sviqa::lm {

// ids 0..5 are specials; ASCII code point c maps to id 6 + c.
class Vocabulary {
 public:
  static constexpr int kPad = 0, kBos = 1, kEos = 2, kImageSlot = 3, kSpeechSlot = 4, kUnk = 5;
  static constexpr int kFirstChar = 6;
  static constexpr int kSize = kFirstChar + 128;
  static constexpr const char* kUnkGlyph = "\xE2\x90\xA6";  // U+2426

  int size() const { return kSize; }
  // Each non-ASCII UTF-8 code point (or invalid byte) becomes one UNK.
  std::vector<int> tokenize(const std::string& text) const;
  // Characters verbatim, UNK as U+2426, other specials dropped.
  std::string detokenize(const std::vector<int>& ids) const;
  static int char_id(char c) { return kFirstChar + static_cast<unsigned char>(c); }
  static bool is_char(int id) { return id >= kFirstChar && id < kSize; }
};

// Template bytes. {QUESTION_SPEECH|QUESTION_TEXT} is filled by exactly one
// of the two question renderings.
inline constexpr const char* kPromptTemplate =
    "You are given an image and a question.\nImage: {IMAGE}\nQuestion: {QUESTION_SPEECH|QUESTION_TEXT}\n"
    "Answer with a single word or short phrase: {ANSWER}";
std::uint64_t template_hash();

struct PromptIds {
  std::vector<int> ids;  // BOS, template text, IMG_SLOT, SPC_SLOT or question text
  std::size_t image_slot = 0;
  std::optional<std::size_t> speech_slot;
};

// Renders everything up to {ANSWER}. ProtocolError if the record carries
// both question modalities or neither.
PromptIds apply_template(const data::DatasetRecord& rec, const Vocabulary& vocab = {});

// answer characters followed by EOS
std::vector<int> answer_ids(const std::string& answer, const Vocabulary& vocab = {});

enum class SpanKind { vision, speech, text_prompt, text_answer };

struct Span {
  SpanKind kind;
  std::size_t begin, end;  // [begin, end)
};

struct TokenSequence {
  Tensor embeddings;     // L×d
  std::vector<int> ids;  // -1 on vision/speech rows
  std::vector<Span> spans;

  std::size_t length() const { return ids.size(); }
  const Span* span(SpanKind k) const;
};

class FusionLM;

// [V; S; T]: vision rows, then speech rows, then the prompt ids with slot
// markers removed, then the answer ids. L = g² + M + |text ids|.
TokenSequence assemble_sequence(const vision::VisionTokens& v, const SpeechTokens* s, const PromptIds& prompt,
                                const std::vector<int>& answer, const FusionLM& lm);

struct LmConfig {
  int vocab_size = Vocabulary::kSize;
  std::size_t d_model = 64;
  int layers = 2;
  int heads = 4;
  std::size_t mlp_mult = 4;
  std::size_t max_context = 512;
  int lora_rank = 4;
  double lora_alpha = 8.0;
  double embed_std = 1.0;
  double pos_scale = 0.5;
  // Standard deviation of the logits at initialization for unit-norm rows.
  double logit_std = 0.9;
  double residual_scale = 0.5;
};

class FusionLM {
 public:
  FusionLM() = default;
  FusionLM(const LmConfig& cfg, std::uint64_t seed);

  const LmConfig& config() const { return cfg_; }
  Tensor embed(const std::vector<int>& ids) const;

  // L×vocab; logits at row i depend only on rows <= i.
  Tensor forward_logits(const TokenSequence& seq) const;
  // Logits for the requested rows only (same values as forward_logits).
  Tensor forward_logits_rows(const TokenSequence& seq, const std::vector<std::size_t>& rows) const;

  // Base weights frozen; only LoRA A/B are trainable.
  std::vector<nn::NamedParam> parameters() const;

  // Folds every adapter into its base weight; adapters are left zeroed.
  void merge_all_lora();
  // Applies the adapters inside forward (true by default).
  void set_lora_enabled(bool on) { lora_enabled_ = on; }

  struct Block {
    nn::AttentionBlock attn;
    Tensor ln2_gain, ln2_bias;
    Tensor w_up, b_up, w_down, b_down;
    nn::LoraAdapter lora_q, lora_v;
  };
  std::vector<Block>& blocks() { return blocks_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  Tensor& head() { return head_; }
  Tensor& final_ln_gain() { return lnf_gain_; }
  Tensor& final_ln_bias() { return lnf_bias_; }
  const Tensor& token_embedding() const { return tok_emb_; }

 private:
  Tensor hidden(const TokenSequence& seq) const;

  LmConfig cfg_;
  Tensor tok_emb_;
  Tensor positions_;
  std::vector<Block> blocks_;
  Tensor lnf_gain_, lnf_bias_, head_;
  bool lora_enabled_ = true;
};

// Greedy argmax decoding (ties to the lowest id) until EOS or max_new tokens.
std::string generate_greedy(const TokenSequence& prefix, const FusionLM& lm, int max_new,
                            const Vocabulary& vocab = {});

}  // namespace sviqa::lm
