#include <doctest.h>

#include <cmath>

#include "sviqa/error.hpp"
#include "sviqa/fusion_lm.hpp"
#include "sviqa/rng.hpp"

using namespace sviqa;
using namespace sviqa::lm;

namespace {

LmConfig small_config() {
  LmConfig c;
  c.d_model = 16;
  c.layers = 2;
  c.heads = 2;
  c.max_context = 64;
  return c;
}

Tensor rand_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  return nn::normal({n, d}, 1.0, rng);
}

void randomize_lora(FusionLM& lm, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& b : lm.blocks())
    for (auto* t : {&b.lora_q.b, &b.lora_v.b})
      for (auto& v : t->mutable_data()) v = 0.3 * rng.normal();
}

TokenSequence text_sequence(const FusionLM& lm, const std::vector<int>& ids) {
  TokenSequence s;
  s.embeddings = lm.embed(ids);
  s.ids = ids;
  s.spans.push_back({SpanKind::text_prompt, 0, ids.size()});
  return s;
}

data::DatasetRecord text_record(const std::string& q) {
  data::DatasetRecord r;
  r.id = "t1";
  r.image = "i.ppm";
  r.modality = data::Modality::text;
  r.text = q;
  r.answer = "yes";
  return r;
}

data::DatasetRecord speech_record() {
  data::DatasetRecord r;
  r.id = "s1";
  r.image = "i.ppm";
  r.modality = data::Modality::speech;
  r.audio = "a.wav";
  r.answer = "no";
  return r;
}

}  // namespace

TEST_CASE("tokenizer") {
  const Vocabulary v;
  CHECK(v.size() == 134);
  CHECK(v.tokenize("").empty());
  CHECK(v.detokenize({}).empty());
  const auto cat = v.tokenize("cat");
  CHECK(cat.size() == 3);
  CHECK(v.detokenize(cat) == "cat");
  const auto odd = v.tokenize("a\xC3\xA9z");  // "aéz"
  REQUIRE(odd.size() == 3);
  CHECK(odd[1] == Vocabulary::kUnk);
  CHECK(v.detokenize(odd) == "a\xE2\x90\xA6z");
  for (int c = 0; c < 128; ++c) {
    const int id = Vocabulary::char_id(static_cast<char>(c));
    CHECK(Vocabulary::is_char(id));
    CHECK(id > Vocabulary::kUnk);
  }
  const std::string printable = " !\"#$%&'()*+,-./0123456789:;<=>?@ABCXYZ[\\]^_`abcxyz{|}~";
  CHECK(v.detokenize(v.tokenize(printable)) == printable);
}

TEST_CASE("prompt template") {
  const Vocabulary v;
  SUBCASE("text record carries the question inline") {
    const auto p = apply_template(text_record("is it red?"), v);
    CHECK(std::count(p.ids.begin(), p.ids.end(), Vocabulary::kImageSlot) == 1);
    CHECK(std::count(p.ids.begin(), p.ids.end(), Vocabulary::kSpeechSlot) == 0);
    CHECK_FALSE(p.speech_slot.has_value());
    CHECK(p.ids.front() == Vocabulary::kBos);
    CHECK(p.ids[p.image_slot] == Vocabulary::kImageSlot);
    std::vector<int> text;
    for (int id : p.ids)
      if (Vocabulary::is_char(id)) text.push_back(id);
    CHECK(v.detokenize(text) ==
          "You are given an image and a question.\nImage: \nQuestion: is it red?\n"
          "Answer with a single word or short phrase: ");
  }
  SUBCASE("speech record gets one speech slot and no question characters") {
    const auto p = apply_template(speech_record(), v);
    CHECK(std::count(p.ids.begin(), p.ids.end(), Vocabulary::kImageSlot) == 1);
    CHECK(std::count(p.ids.begin(), p.ids.end(), Vocabulary::kSpeechSlot) == 1);
    REQUIRE(p.speech_slot.has_value());
    CHECK(p.ids[*p.speech_slot] == Vocabulary::kSpeechSlot);
    std::vector<int> text;
    for (int id : p.ids)
      if (Vocabulary::is_char(id)) text.push_back(id);
    CHECK(v.detokenize(text) ==
          "You are given an image and a question.\nImage: \nQuestion: \n"
          "Answer with a single word or short phrase: ");
  }
  SUBCASE("protocol violations") {
    auto both = speech_record();
    both.text = "hi";
    CHECK_THROWS_AS((void)apply_template(both, v), ProtocolError);
    auto neither = text_record("x");
    neither.text.reset();
    CHECK_THROWS_AS((void)apply_template(neither, v), ProtocolError);
  }
  SUBCASE("answer ids end with EOS") {
    const auto a = answer_ids("red", v);
    CHECK(a.size() == 4);
    CHECK(a.back() == Vocabulary::kEos);
  }
  SUBCASE("template hash is stable") { CHECK(template_hash() == template_hash()); }
}

TEST_CASE("sequence assembly") {
  const FusionLM lm(small_config(), 3);
  const Vocabulary v;
  vision::VisionTokens vt{rand_rows(16, 16, 1)};
  SpeechTokens st{rand_rows(3, 16, 2)};
  SUBCASE("length law with speech") {
    PromptIds p;
    p.ids.push_back(Vocabulary::kImageSlot);
    p.image_slot = 0;
    for (int i = 0; i < 10; ++i) p.ids.push_back(Vocabulary::char_id('a'));
    p.speech_slot = p.ids.size();
    p.ids.push_back(Vocabulary::kSpeechSlot);
    for (int i = 0; i < 10; ++i) p.ids.push_back(Vocabulary::char_id('b'));
    const auto ans = v.tokenize("abcde");
    const auto seq = assemble_sequence(vt, &st, p, ans, lm);
    CHECK(seq.length() == 44);
    CHECK(seq.embeddings.rows() == 44);
    const auto* vs = seq.span(SpanKind::vision);
    const auto* ss = seq.span(SpanKind::speech);
    const auto* ps = seq.span(SpanKind::text_prompt);
    const auto* as = seq.span(SpanKind::text_answer);
    REQUIRE((vs && ss && ps && as));
    CHECK(vs->begin == 0);
    CHECK(vs->end == ss->begin);
    CHECK(ss->end == ps->begin);
    CHECK(ps->end == as->begin);
    CHECK(as->end == 44);
    CHECK(ss->end - ss->begin == 3);
    for (std::size_t c = 0; c < 16; ++c) {
      CHECK(seq.embeddings.at(0, c) == vt.tokens.at(0, c));
      CHECK(seq.embeddings.at(16, c) == st.tokens.at(0, c));
    }
  }
  SUBCASE("text record has no speech span") {
    const auto p = apply_template(text_record("is it red?"), v);
    const auto seq = assemble_sequence(vt, nullptr, p, {}, lm);
    CHECK(seq.length() == 16 + p.ids.size() - 1);
    CHECK(seq.span(SpanKind::speech) == nullptr);
    CHECK(seq.span(SpanKind::text_answer) == nullptr);
    CHECK(seq.span(SpanKind::text_prompt)->end == seq.length());
  }
  SUBCASE("slot and tensor mismatches") {
    const auto sp = apply_template(speech_record(), v);
    CHECK_THROWS_AS((void)assemble_sequence(vt, nullptr, sp, {}, lm), AssemblyError);
    const auto tp = apply_template(text_record("q"), v);
    CHECK_THROWS_AS((void)assemble_sequence(vt, &st, tp, {}, lm), AssemblyError);
    PromptIds two = tp;
    two.ids.push_back(Vocabulary::kImageSlot);
    CHECK_THROWS_AS((void)assemble_sequence(vt, nullptr, two, {}, lm), AssemblyError);
  }
}

TEST_CASE("lora forward and merge") {
  Rng rng(1);
  SUBCASE("hand computed rank-one delta") {
    nn::LoraAdapter l = nn::make_lora(2, 2, 1, 1.0, rng, "w");
    l.a = Tensor({1, 2}, {1, 0}, true);
    l.b = Tensor({2, 1}, {0, 1}, true);
    const Tensor eye({2, 2}, {1, 0, 0, 1});
    const auto h = nn::lora_forward(Tensor({1, 2}, {3, 5}), eye, l);
    CHECK(h.at(0, 0) == 3.0);
    CHECK(h.at(0, 1) == 8.0);
  }
  SUBCASE("zero B reproduces the base projection exactly") {
    const auto l = nn::make_lora(5, 4, 2, 4.0, rng, "w");
    const auto w = nn::normal({4, 5}, 1.0, rng);
    const auto x = nn::normal({3, 5}, 1.0, rng);
    const auto a = nn::lora_forward(x, w, l), b = matmul_nt(x, w);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);
  }
  SUBCASE("alpha = 2r doubles the delta") {
    auto l = nn::make_lora(3, 3, 2, 2.0, rng, "w");
    for (auto& v : l.b.mutable_data()) v = rng.normal();
    auto l2 = l;
    l2.alpha = 4.0;
    const auto w = Tensor::zeros({3, 3});
    const auto x = nn::normal({2, 3}, 1.0, rng);
    const auto d1 = nn::lora_forward(x, w, l), d2 = nn::lora_forward(x, w, l2);
    for (std::size_t i = 0; i < d1.numel(); ++i) CHECK(d2.data()[i] == doctest::Approx(2.0 * d1.data()[i]));
  }
  SUBCASE("rank must be positive") { CHECK_THROWS_AS((void)nn::make_lora(3, 3, 0, 1.0, rng, "w"), ConfigError); }
  SUBCASE("merge equals the unmerged forward and consumes the adapter") {
    auto l = nn::make_lora(6, 4, 3, 6.0, rng, "w");
    for (auto& v : l.b.mutable_data()) v = rng.normal();
    const auto w = nn::normal({4, 6}, 1.0, rng);
    const auto x = nn::normal({5, 6}, 1.0, rng);
    const auto unmerged = nn::lora_forward(x, w, l);
    const auto merged_w = nn::merge_lora(w, l);
    const auto merged = matmul_nt(x, merged_w);
    for (std::size_t i = 0; i < merged.numel(); ++i) CHECK(std::fabs(merged.data()[i] - unmerged.data()[i]) < 1e-10);
    for (double v : l.b.data()) CHECK(v == 0.0);
    const auto again = nn::merge_lora(merged_w, l);
    for (std::size_t i = 0; i < again.numel(); ++i) CHECK(again.data()[i] == merged_w.data()[i]);
  }
  SUBCASE("B = 0 merge leaves W unchanged") {
    auto l = nn::make_lora(3, 3, 1, 2.0, rng, "w");
    const auto w = nn::normal({3, 3}, 1.0, rng);
    const auto m = nn::merge_lora(w, l);
    for (std::size_t i = 0; i < w.numel(); ++i) CHECK(m.data()[i] == w.data()[i]);
  }
}

TEST_CASE("forward logits") {
  FusionLM lm(small_config(), 5);
  randomize_lora(lm, 6);
  const Vocabulary v;
  SUBCASE("single token") {
    const auto l = lm.forward_logits(text_sequence(lm, {Vocabulary::kBos}));
    CHECK(l.shape() == Shape{1, 134});
  }
  SUBCASE("causality under random perturbation") {
    const auto ids = v.tokenize("what color is it");
    auto seq = text_sequence(lm, ids);
    const auto base = lm.forward_logits(seq);
    Rng rng(9);
    for (int trial = 0; trial < 5; ++trial) {
      const std::size_t j = 1 + rng.below(ids.size() - 1);
      auto pert = seq;
      pert.embeddings = seq.embeddings.clone();
      for (std::size_t r = j; r < ids.size(); ++r)
        for (std::size_t c = 0; c < 16; ++c) pert.embeddings.mutable_data()[r * 16 + c] += rng.normal();
      const auto out = lm.forward_logits(pert);
      for (std::size_t i = 0; i < j; ++i)
        for (std::size_t c = 0; c < 134; ++c) CHECK(out.at(i, c) == base.at(i, c));
      bool changed = false;
      for (std::size_t c = 0; c < 134; ++c) changed |= out.at(j, c) != base.at(j, c);
      CHECK(changed);
    }
  }
  SUBCASE("row subset equals the full forward") {
    const auto seq = text_sequence(lm, v.tokenize("abcdefg"));
    const auto full = lm.forward_logits(seq);
    const auto some = lm.forward_logits_rows(seq, {6, 2});
    for (std::size_t c = 0; c < 134; ++c) {
      CHECK(some.at(0, c) == full.at(6, c));
      CHECK(some.at(1, c) == full.at(2, c));
    }
  }
  SUBCASE("context limit") {
    std::vector<int> ids(65, Vocabulary::char_id('a'));
    CHECK_THROWS_AS((void)lm.forward_logits(text_sequence(lm, ids)), ContextLengthError);
  }
  SUBCASE("merged and unmerged agree") {
    const auto seq = text_sequence(lm, v.tokenize("is there a red square?"));
    const auto before = lm.forward_logits(seq);
    lm.merge_all_lora();
    const auto after = lm.forward_logits(seq);
    for (std::size_t i = 0; i < before.numel(); ++i) CHECK(std::fabs(before.data()[i] - after.data()[i]) < 1e-10);
  }
}

TEST_CASE("fresh adapters leave the base model unchanged") {
  FusionLM lm(small_config(), 8);
  const auto seq = text_sequence(lm, Vocabulary().tokenize("how many circles?"));
  const auto with = lm.forward_logits(seq);
  lm.set_lora_enabled(false);
  const auto base = lm.forward_logits(seq);
  for (std::size_t i = 0; i < with.numel(); ++i) CHECK(with.data()[i] == base.data()[i]);
}

TEST_CASE("only lora tensors are trainable in the language model") {
  const FusionLM lm(small_config(), 8);
  for (const auto& p : lm.parameters()) {
    const bool lora = p.group == nn::ParamGroup::lora;
    CHECK(p.tensor.requires_grad() == lora);
    CHECK((lora || p.group == nn::ParamGroup::lm_base));
  }
}

TEST_CASE("greedy generation") {
  FusionLM lm(small_config(), 10);
  const Vocabulary v;
  // Final layer-norm emits a constant unit vector, so logits equal the first head column.
  for (auto& g : lm.final_ln_gain().mutable_data()) g = 0.0;
  for (auto& b : lm.final_ln_bias().mutable_data()) b = 0.0;
  lm.final_ln_bias().mutable_data()[0] = 1.0;
  auto set_col0 = [&](int id, double val) { lm.head().mutable_data()[static_cast<std::size_t>(id) * 16] = val; };
  for (int id = 0; id < 134; ++id) set_col0(id, 0.0);
  const auto prefix = text_sequence(lm, v.tokenize("q?"));
  SUBCASE("immediate EOS") {
    set_col0(Vocabulary::kEos, 5.0);
    CHECK(generate_greedy(prefix, lm, 8, v).empty());
  }
  SUBCASE("cap without EOS") {
    set_col0(Vocabulary::char_id('z'), 5.0);
    CHECK(generate_greedy(prefix, lm, 3, v) == "zzz");
  }
  SUBCASE("ties go to the lowest id") {
    set_col0(Vocabulary::char_id('m'), 5.0);
    set_col0(Vocabulary::char_id('k'), 5.0);
    CHECK(generate_greedy(prefix, lm, 2, v) == "kk");
  }
  SUBCASE("deterministic") {
    FusionLM a(small_config(), 12), b(small_config(), 12);
    CHECK(generate_greedy(text_sequence(a, v.tokenize("abc")), a, 6, v) ==
          generate_greedy(text_sequence(b, v.tokenize("abc")), b, 6, v));
  }
  SUBCASE("max_new must be positive") { CHECK_THROWS_AS((void)generate_greedy(prefix, lm, 0, v), ConfigError); }
}
