#include "sviqa/fusion_lm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "sviqa/error.hpp"

namespace sviqa::lm {

std::vector<int> Vocabulary::tokenize(const std::string& text) const {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (c < 0x80) {
      ids.push_back(char_id(static_cast<char>(c)));
      ++i;
      continue;
    }
    std::size_t len = 1;
    if ((c & 0xE0) == 0xC0) len = 2;
    else if ((c & 0xF0) == 0xE0) len = 3;
    else if ((c & 0xF8) == 0xF0) len = 4;
    std::size_t j = 1;
    while (j < len && i + j < text.size() && (static_cast<unsigned char>(text[i + j]) & 0xC0) == 0x80) ++j;
    ids.push_back(kUnk);
    i += (j == len) ? len : 1;
  }
  return ids;
}

std::string Vocabulary::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (is_char(id)) out.push_back(static_cast<char>(id - kFirstChar));
    else if (id == kUnk) out += kUnkGlyph;
  }
  return out;
}

std::uint64_t template_hash() {
  std::uint64_t h = 1469598103934665603ull;
  for (const char* p = kPromptTemplate; *p; ++p) {
    h ^= static_cast<unsigned char>(*p);
    h *= 1099511628211ull;
  }
  return h;
}

namespace {
void append_text(std::vector<int>& ids, const std::string& s, const Vocabulary& vocab) {
  auto t = vocab.tokenize(s);
  ids.insert(ids.end(), t.begin(), t.end());
}
}  // namespace

PromptIds apply_template(const data::DatasetRecord& rec, const Vocabulary& vocab) {
  data::validate_record(rec);
  static const std::string tmpl = kPromptTemplate;
  static const std::string kImage = "{IMAGE}", kQuestion = "{QUESTION_SPEECH|QUESTION_TEXT}", kAnswer = "{ANSWER}";
  const auto pi = tmpl.find(kImage), pq = tmpl.find(kQuestion), pa = tmpl.find(kAnswer);
  PromptIds out;
  out.ids.push_back(Vocabulary::kBos);
  append_text(out.ids, tmpl.substr(0, pi), vocab);
  out.image_slot = out.ids.size();
  out.ids.push_back(Vocabulary::kImageSlot);
  append_text(out.ids, tmpl.substr(pi + kImage.size(), pq - pi - kImage.size()), vocab);
  if (rec.modality == data::Modality::speech) {
    out.speech_slot = out.ids.size();
    out.ids.push_back(Vocabulary::kSpeechSlot);
  } else {
    append_text(out.ids, *rec.text, vocab);
  }
  append_text(out.ids, tmpl.substr(pq + kQuestion.size(), pa - pq - kQuestion.size()), vocab);
  return out;
}

std::vector<int> answer_ids(const std::string& answer, const Vocabulary& vocab) {
  auto ids = vocab.tokenize(answer);
  ids.push_back(Vocabulary::kEos);
  return ids;
}

const Span* TokenSequence::span(SpanKind k) const {
  for (const auto& s : spans)
    if (s.kind == k) return &s;
  return nullptr;
}

TokenSequence assemble_sequence(const vision::VisionTokens& v, const SpeechTokens* s, const PromptIds& prompt,
                                const std::vector<int>& answer, const FusionLM& lm) {
  const auto img = std::count(prompt.ids.begin(), prompt.ids.end(), Vocabulary::kImageSlot);
  const auto spc = std::count(prompt.ids.begin(), prompt.ids.end(), Vocabulary::kSpeechSlot);
  if (img != 1) throw AssemblyError("prompt has " + std::to_string(img) + " image slots, expected 1");
  if (spc != (s ? 1 : 0))
    throw AssemblyError("prompt has " + std::to_string(spc) + " speech slots but " + (s ? "1" : "0") +
                        " speech tensor supplied");
  const std::size_t d = lm.config().d_model;
  if (v.tokens.cols() != d) throw DimensionError("vision tokens width " + std::to_string(v.tokens.cols()) +
                                                 " does not match d_model " + std::to_string(d));
  if (s && s->tokens.cols() != d) throw DimensionError("speech tokens width " + std::to_string(s->tokens.cols()) +
                                                       " does not match d_model " + std::to_string(d));
  if (std::any_of(answer.begin(), answer.end(),
                  [](int id) { return id == Vocabulary::kImageSlot || id == Vocabulary::kSpeechSlot; }))
    throw AssemblyError("answer ids contain a slot marker");

  std::vector<int> text;
  for (int id : prompt.ids)
    if (id != Vocabulary::kImageSlot && id != Vocabulary::kSpeechSlot) text.push_back(id);
  const std::size_t prompt_len = text.size();
  text.insert(text.end(), answer.begin(), answer.end());

  TokenSequence seq;
  const std::size_t g2 = v.tokens.rows();
  const std::size_t m = s ? s->tokens.rows() : 0;
  std::vector<Tensor> parts{v.tokens};
  if (s) parts.push_back(s->tokens);
  if (!text.empty()) parts.push_back(lm.embed(text));
  seq.embeddings = concat_rows(parts);
  seq.ids.assign(g2 + m, -1);
  seq.ids.insert(seq.ids.end(), text.begin(), text.end());
  seq.spans.push_back({SpanKind::vision, 0, g2});
  if (s) seq.spans.push_back({SpanKind::speech, g2, g2 + m});
  if (prompt_len) seq.spans.push_back({SpanKind::text_prompt, g2 + m, g2 + m + prompt_len});
  if (!answer.empty()) seq.spans.push_back({SpanKind::text_answer, g2 + m + prompt_len, seq.ids.size()});
  return seq;
}

FusionLM::FusionLM(const LmConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.d_model == 0 || cfg.layers < 0 || cfg.max_context == 0 || cfg.vocab_size <= 0)
    throw ConfigError("language model: invalid dimensions");
  if (cfg.lora_rank <= 0) throw ConfigError("LoRA rank must be positive, got " + std::to_string(cfg.lora_rank));
  Rng rng(seed);
  const std::size_t d = cfg.d_model, v = static_cast<std::size_t>(cfg.vocab_size);
  tok_emb_ = nn::normal({v, d}, cfg.embed_std, rng);
  positions_ = nn::sinusoidal_positions(cfg.max_context, d, cfg.pos_scale);
  const std::size_t hidden = cfg.mlp_mult * d;
  for (int l = 0; l < cfg.layers; ++l) {
    Block b;
    b.attn = nn::make_attention_block(d, cfg.heads, true, rng, cfg.residual_scale);
    b.ln2_gain = nn::constant({d}, 1.0);
    b.ln2_bias = nn::constant({d}, 0.0);
    b.w_up = nn::uniform({hidden, d}, std::sqrt(3.0 / static_cast<double>(d)), rng);
    b.b_up = nn::constant({hidden}, 0.0);
    b.w_down = nn::uniform({d, hidden}, cfg.residual_scale * std::sqrt(3.0 / static_cast<double>(hidden)), rng);
    b.b_down = nn::constant({d}, 0.0);
    const std::string p = "lm.block" + std::to_string(l);
    b.lora_q = nn::make_lora(d, d, cfg.lora_rank, cfg.lora_alpha, rng, p + ".wq");
    b.lora_v = nn::make_lora(d, d, cfg.lora_rank, cfg.lora_alpha, rng, p + ".wv");
    blocks_.push_back(std::move(b));
  }
  lnf_gain_ = nn::constant({d}, 1.0);
  lnf_bias_ = nn::constant({d}, 0.0);
  head_ = nn::normal({v, d}, cfg.logit_std / std::sqrt(static_cast<double>(d)), rng);
}

Tensor FusionLM::embed(const std::vector<int>& ids) const { return embedding(tok_emb_, ids); }

Tensor FusionLM::hidden(const TokenSequence& seq) const {
  const std::size_t len = seq.embeddings.rows();
  if (len == 0) throw EmptyInputError("forward on an empty sequence");
  if (len > cfg_.max_context)
    throw ContextLengthError("sequence length " + std::to_string(len) + " exceeds max context " +
                             std::to_string(cfg_.max_context));
  if (seq.embeddings.cols() != cfg_.d_model)
    throw DimensionError("sequence width " + std::to_string(seq.embeddings.cols()) + " does not match d_model " +
                         std::to_string(cfg_.d_model));
  Tensor x = add(seq.embeddings, slice_rows(positions_, 0, len));
  for (const auto& b : blocks_) {
    Tensor xn = layer_norm(x, b.attn.ln_gain, b.attn.ln_bias);
    x = add(x, nn::multi_head_attention(xn, b.attn, lora_enabled_ ? &b.lora_q : nullptr,
                                        lora_enabled_ ? &b.lora_v : nullptr));
    Tensor xn2 = layer_norm(x, b.ln2_gain, b.ln2_bias);
    x = add(x, nn::linear_nt(gelu(nn::linear_nt(xn2, b.w_up, b.b_up)), b.w_down, b.b_down));
  }
  return x;
}

Tensor FusionLM::forward_logits(const TokenSequence& seq) const {
  return matmul_nt(layer_norm(hidden(seq), lnf_gain_, lnf_bias_), head_);
}

Tensor FusionLM::forward_logits_rows(const TokenSequence& seq, const std::vector<std::size_t>& rows) const {
  Tensor h = gather_rows(hidden(seq), rows);
  return matmul_nt(layer_norm(h, lnf_gain_, lnf_bias_), head_);
}

std::vector<nn::NamedParam> FusionLM::parameters() const {
  std::vector<nn::NamedParam> out;
  const auto g = nn::ParamGroup::lm_base;
  out.push_back({"lm.tok_emb", tok_emb_, g});
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& b = blocks_[i];
    const std::string p = "lm.block" + std::to_string(i);
    nn::append_params(b.attn, p + ".attn", g, out);
    out.push_back({p + ".ln2_gain", b.ln2_gain, g});
    out.push_back({p + ".ln2_bias", b.ln2_bias, g});
    out.push_back({p + ".w_up", b.w_up, g});
    out.push_back({p + ".b_up", b.b_up, g});
    out.push_back({p + ".w_down", b.w_down, g});
    out.push_back({p + ".b_down", b.b_down, g});
    out.push_back({p + ".lora_q.a", b.lora_q.a, nn::ParamGroup::lora});
    out.push_back({p + ".lora_q.b", b.lora_q.b, nn::ParamGroup::lora});
    out.push_back({p + ".lora_v.a", b.lora_v.a, nn::ParamGroup::lora});
    out.push_back({p + ".lora_v.b", b.lora_v.b, nn::ParamGroup::lora});
  }
  out.push_back({"lm.lnf_gain", lnf_gain_, g});
  out.push_back({"lm.lnf_bias", lnf_bias_, g});
  out.push_back({"lm.head", head_, g});
  return out;
}

void FusionLM::merge_all_lora() {
  for (auto& b : blocks_) {
    b.attn.wq = nn::merge_lora(b.attn.wq, b.lora_q);
    b.attn.wv = nn::merge_lora(b.attn.wv, b.lora_v);
  }
}

std::string generate_greedy(const TokenSequence& prefix, const FusionLM& lm, int max_new, const Vocabulary& vocab) {
  if (max_new < 1) throw ConfigError("max_new must be >= 1");
  NoGradGuard guard;
  TokenSequence seq = prefix;
  std::vector<int> out;
  for (int step = 0; step < max_new; ++step) {
    const std::size_t last = seq.embeddings.rows() - 1;
    Tensor logits = lm.forward_logits_rows(seq, {last});
    const auto row = logits.data();
    int best = 0;
    for (std::size_t j = 1; j < row.size(); ++j)
      if (row[j] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
    if (best == Vocabulary::kEos) break;
    out.push_back(best);
    seq.embeddings = concat_rows({seq.embeddings, lm.embed({best})});
    seq.ids.push_back(best);
  }
  return vocab.detokenize(out);
}

}  // namespace sviqa::lm
