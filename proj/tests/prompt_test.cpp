#include <gtest/gtest.h>

#include <random>

#include "mpco/prompt.hpp"
#include "test_util.hpp"

namespace mpco {
namespace {

using nlohmann::json;
using testing::fixture_dir;
using testing::source_dir;

ContextBundle minimal_bundle(AblationMask mask = {}) {
  ContextDb db = ContextDb::load(fixture_dir() / "contexts/minimal.json");
  return assemble(db, "bitmap", "runtime", "gpt4o", mask);
}

// Distinct sentinel per field, so leaks of masked values are detectable.
ContextBundle sentinel_bundle(AblationMask mask) {
  ContextBundle b;
  b.project = {"PNAME_S", "PDESC_S", {"PLANG_S"}};
  b.task = {"OBJ_S", "TDESC_S", {"TCONS_S"}};
  b.llm = {"TLLM_S", {"LCONS_S"}};
  b.ablation = mask;
  return b;
}

std::vector<AblationMask> all_masks() {
  std::vector<AblationMask> out;
  for (int m = 0; m < 8; ++m) out.push_back({bool(m & 1), bool(m & 2), bool(m & 4)});
  return out;
}

TEST(MetaPrompt, FullBundleMatchesGolden) {
  std::string text = render_meta_prompt(minimal_bundle());
  EXPECT_EQ(text, read_file(source_dir() / "tests/golden/meta_prompt_full.txt"));
  EXPECT_TRUE(starts_with(text, "You are an expert in code optimization."));
  for (const char* h : {"## Project Context", "## Task Context", "## Target LLM Context"}) {
    EXPECT_NE(text.find(h), std::string::npos) << h;
  }
}

TEST(MetaPrompt, NoLlmMaskDropsWholeSection) {
  std::string text = render_meta_prompt(minimal_bundle({false, false, true}));
  EXPECT_EQ(text, read_file(source_dir() / "tests/golden/meta_prompt_nl.txt"));
  EXPECT_EQ(text.find("Target LLM Context"), std::string::npos);
  EXPECT_EQ(text.find("Target Model:"), std::string::npos);
}

TEST(MetaPrompt, SubstitutesVerbatim) {
  ContextBundle b = minimal_bundle();
  b.project.project_name = "X";
  EXPECT_NE(render_meta_prompt(b).find("Project Name: X\n"), std::string::npos);
}

TEST(MetaPrompt, DeterministicForIdenticalBundles) {
  EXPECT_EQ(render_meta_prompt(minimal_bundle()), render_meta_prompt(minimal_bundle()));
}

TEST(MetaPrompt, EveryMaskKeepsExactlyUnmaskedHeadersAndNoMaskedValues) {
  const std::vector<std::pair<const char*, bool AblationMask::*>> headers = {
      {"## Project Context", &AblationMask::project},
      {"## Task Context", &AblationMask::task},
      {"## Target LLM Context", &AblationMask::llm}};
  const std::vector<std::pair<const char*, bool AblationMask::*>> exclusive = {
      {"PNAME_S", &AblationMask::project}, {"PDESC_S", &AblationMask::project},
      {"PLANG_S", &AblationMask::project}, {"TDESC_S", &AblationMask::task},
      {"TCONS_S", &AblationMask::task},    {"LCONS_S", &AblationMask::llm}};
  for (const AblationMask& mask : all_masks()) {
    for (StrategyKind kind : {StrategyKind::mpco, StrategyKind::contextual}) {
      ContextBundle b = sentinel_bundle(mask);
      std::string text = kind == StrategyKind::mpco
                             ? render_meta_prompt(b)
                             : render_strategy_prompt(PromptStrategy::builtin(kind), b, "int f();");
      for (auto [h, flag] : headers) {
        EXPECT_EQ(text.find(h) == std::string::npos, mask.*flag) << mask.suffix() << " " << h;
      }
      for (auto [v, flag] : exclusive) {
        EXPECT_EQ(text.find(v) == std::string::npos, mask.*flag) << mask.suffix() << " " << v;
      }
      // Separators stay single blank lines.
      EXPECT_EQ(text.find("\n\n\n"), std::string::npos) << mask.suffix();
    }
  }
}

TEST(Template, UnknownPlaceholderHasNoValue) {
  EXPECT_THROW(render_template("hi {who}", {}), RenderError);
  EXPECT_EQ(render_template("hi {who}", {{"who", "there"}}), "hi there");
}

TEST(Template, MaskedPlaceholderOutsideSectionIsRenderError) {
  ContextBundle b = minimal_bundle({true, false, false});
  EXPECT_THROW(render_meta_prompt(b, "Build {project_name}\n"), RenderError);
}

TEST(Template, BracesAndEscapes) {
  EXPECT_EQ(render_template("{{x}} {x} { y } {}", {{"x", "1"}}), "{x} 1 { y } {}");
  EXPECT_EQ(template_placeholders("{{a}} {b} {c} {b}"), (std::vector<std::string>{"b", "c"}));
  // Values are not re-expanded.
  EXPECT_EQ(render_template("{a}", {{"a", "{b}"}}), "{b}");
}

TEST(Template, DeferredPlaceholdersSurviveTwoPhaseRendering) {
  std::string phase1 =
      render_template("{{lit}} {a} {code}", {{"a", "v{1}"}}, {}, {"code"});
  EXPECT_EQ(phase1, "{{lit}} v{{1}} {code}");
  EXPECT_EQ(render_template(phase1, {{"code", "int main() { }"}}), "{lit} v{1} int main() { }");
}

TEST(Strategy, BuiltinsSatisfyPlaceholderInvariant) {
  for (StrategyKind k : all_strategies()) {
    PromptStrategy s = PromptStrategy::builtin(k);
    EXPECT_NO_THROW(s.check()) << to_string(k);
    for (const std::string& name : template_placeholders(s.template_text)) {
      bool allowed = context_placeholders().count(name) > 0 ||
                     (k == StrategyKind::few_shot && name == "examples");
      EXPECT_TRUE(allowed) << to_string(k) << " {" << name << "}";
    }
  }
}

TEST(Strategy, ShippedFilesMatchBuiltins) {
  fs::path dir = source_dir() / "strategies";
  for (StrategyKind k : all_strategies()) {
    EXPECT_EQ(read_file(dir / (to_string(k) + ".tmpl")), builtin_template(k)) << to_string(k);
  }
  EXPECT_EQ(parse_examples(read_file(dir / "few_shot_examples.json")), builtin_examples());
  EXPECT_EQ(PromptStrategy::load(StrategyKind::cot, dir).template_text,
            builtin_template(StrategyKind::cot));
}

TEST(Strategy, CheckRejectsBadTemplates) {
  PromptStrategy s{StrategyKind::cot, "Optimize {code} using {tricks}", {}};
  EXPECT_THROW(s.check(), ValidationError);
  s.template_text = "Optimize for {objective}";
  EXPECT_THROW(s.check(), ValidationError);  // no {code}
  s = {StrategyKind::mpco, "Meta {code}", {}};
  EXPECT_THROW(s.check(), ValidationError);
  s = {StrategyKind::cot, "{examples} {code}", {}};
  EXPECT_THROW(s.check(), ValidationError);
}

TEST(Strategy, ContextualCarriesAllSectionsAndCode) {
  std::string text =
      render_strategy_prompt(PromptStrategy::builtin(StrategyKind::contextual), minimal_bundle(),
                             "int area(int w, int h) { return w * h; }", Language::cpp);
  for (const char* h : {"## Project Context", "## Task Context", "## Target LLM Context"}) {
    EXPECT_NE(text.find(h), std::string::npos) << h;
  }
  EXPECT_NE(text.find("```cpp\nint area(int w, int h) { return w * h; }\n```\n"), std::string::npos);
}

TEST(Strategy, CotHasStepScaffold) {
  std::string text =
      render_strategy_prompt(PromptStrategy::builtin(StrategyKind::cot), minimal_bundle(), "x = 1");
  EXPECT_NE(text.find("step by step"), std::string::npos);
  EXPECT_NE(text.find("1. "), std::string::npos);
  EXPECT_NE(text.find("4. "), std::string::npos);
  EXPECT_NE(text.find("x = 1"), std::string::npos);
}

TEST(Strategy, FewShotPlacesBothExamplesBeforeCode) {
  PromptStrategy s = PromptStrategy::builtin(StrategyKind::few_shot);
  s.examples = {{"ORIG_ONE", "OPT_ONE"}, {"ORIG_TWO {x}", "OPT_TWO"}};
  std::string text = render_strategy_prompt(s, minimal_bundle(), "CODE_HERE");
  std::size_t code = text.find("CODE_HERE");
  ASSERT_NE(code, std::string::npos);
  for (const char* part : {"ORIG_ONE", "OPT_ONE", "ORIG_TWO {x}", "OPT_TWO"}) {
    std::size_t at = text.find(part);
    ASSERT_NE(at, std::string::npos) << part;
    EXPECT_LT(at, code) << part;
  }
  EXPECT_LT(text.find("ORIG_ONE"), text.find("OPT_ONE"));
  EXPECT_LT(text.find("OPT_ONE"), text.find("ORIG_TWO"));
}

TEST(Strategy, MpcoCannotBeRenderedStatically) {
  EXPECT_THROW(render_strategy_prompt(PromptStrategy::builtin(StrategyKind::mpco), minimal_bundle(),
                                      "x"),
               ValidationError);
}

TEST(Fence, GrowsPastBackticksInCode) {
  EXPECT_EQ(fence_code("a\n"), "```\na\n```\n");
  EXPECT_EQ(fence_code("a", Language::python), "```python\na\n```\n");
  EXPECT_EQ(fence_code("s = '````'\n"), "`````\ns = '````'\n`````\n");
}

TEST(Compose, MpcoIsPromptBlankLineFencedCode) {
  GeneratedPrompt p;
  p.strategy = StrategyKind::mpco;
  p.text = "Optimize this function for speed.\n";
  EXPECT_EQ(compose_request(p, "int f();", Language::cpp),
            "Optimize this function for speed.\n\n```cpp\nint f();\n```\n");
}

TEST(Compose, StaticPromptMatchesDirectRendering) {
  for (StrategyKind k : {StrategyKind::cot, StrategyKind::few_shot, StrategyKind::contextual,
                         StrategyKind::fixed}) {
    PromptStrategy s = PromptStrategy::builtin(k);
    GeneratedPrompt p = static_prompt(s, minimal_bundle());
    EXPECT_EQ(p.provenance.meta_prompter, "static");
    EXPECT_EQ(compose_request(p, "void g() {}", Language::cpp),
              render_strategy_prompt(s, minimal_bundle(), "void g() {}", Language::cpp))
        << to_string(k);
  }
}

TEST(ReplyValidation, ReferenceExamples) {
  ReplyVerdict one = validate_prompt_reply("```\nOptimize the loop.\n```\n");
  ASSERT_TRUE(one);
  EXPECT_EQ(one.text, "Optimize the loop.");

  ReplyVerdict two = validate_prompt_reply("```\na\n```\n```\nb\n```\n");
  EXPECT_FALSE(two);
  EXPECT_EQ(two.reason, "multiple blocks");

  std::string plain = "Optimize the following C++ code for runtime.\nFocus on the inner loop.";
  ReplyVerdict p = validate_prompt_reply(plain);
  ASSERT_TRUE(p);
  EXPECT_EQ(p.text, plain);
}

TEST(ReplyValidation, Rejections) {
  EXPECT_FALSE(validate_prompt_reply("Sure! Here's a prompt:\nOptimize it."));
  EXPECT_FALSE(validate_prompt_reply("Optimize it.\nNote: this is fast."));
  EXPECT_FALSE(validate_prompt_reply("Here is the code:\n```\nx\n```\n"));
  EXPECT_FALSE(validate_prompt_reply("```\nx\n```\nHope this helps"));
  EXPECT_FALSE(validate_prompt_reply("```\nx\n"));
  EXPECT_FALSE(validate_prompt_reply("```\n\n```\n"));
  EXPECT_FALSE(validate_prompt_reply("  \n"));
  EXPECT_FALSE(validate_prompt_reply("```\nSure, optimize.\n```"));
  // Prefix list is configurable.
  EXPECT_TRUE(validate_prompt_reply("Note: keep the API.", {"Sure"}));
  EXPECT_FALSE(validate_prompt_reply("Okay, optimize.", {"Okay"}));
}

TEST(ReplyValidation, IdempotentOnRandomReplies) {
  const std::vector<std::string> pieces = {
      "Optimize the loop.", "```", "```cpp", "Sure thing", "Here is it:", "", "  ",
      "int x = 1;",         "Note: fast", "for i in range(3):", "    pass", "~~~"};
  std::mt19937 rng(11);
  int accepted = 0;
  for (int trial = 0; trial < 3000; ++trial) {
    std::string raw;
    int n = 1 + rng() % 6;
    for (int i = 0; i < n; ++i) raw += pieces[rng() % pieces.size()] + "\n";
    ReplyVerdict v = validate_prompt_reply(raw);
    if (!v) continue;
    ++accepted;
    ReplyVerdict again = validate_prompt_reply(v.text);
    ASSERT_TRUE(again) << raw;
    EXPECT_EQ(again.text, v.text) << raw;
  }
  EXPECT_GT(accepted, 100);
}

class GenerateFixture : public ::testing::Test {
 protected:
  ModelConfig meta() {
    ModelConfig m;
    m.model_id = "meta-model";
    m.provider = "mock";
    m.endpoint_url = "inline";
    m.max_retries = 0;
    return m;
  }
  ChatClient client_;
};

TEST_F(GenerateFixture, PassesThroughValidReply) {
  client_.set_provider(meta(), parse_mock(R"([{"match": "expert in code optimization",
      "reply": "Optimize the following C++ code for runtime..."}])"));
  ContextBundle b = minimal_bundle();
  GeneratedPrompt p = generate_prompt(client_, meta(), b);
  EXPECT_EQ(p.text, "Optimize the following C++ code for runtime...");
  EXPECT_EQ(p.strategy, StrategyKind::mpco);
  EXPECT_EQ(p.target_llm, "gpt-4o");
  EXPECT_EQ(p.provenance.meta_prompter, "meta-model");
  EXPECT_EQ(p.provenance.bundle_fingerprint, b.fingerprint());
  EXPECT_FALSE(p.provenance.timestamp.empty());
  EXPECT_FALSE(p.provenance.temperature.has_value());
}

TEST_F(GenerateFixture, SendsTheRenderedMetaPromptExactly) {
  ContextBundle b = minimal_bundle();
  std::string digest = sha256_hex(render_meta_prompt(b));
  client_.set_provider(meta(), parse_mock(R"([{"match": {"sha256": ")" + digest +
                                          R"("}, "reply": "ok prompt"}])"));
  EXPECT_EQ(generate_prompt(client_, meta(), b).text, "ok prompt");
}

TEST_F(GenerateFixture, CommentaryReplyIsRejectedWithRawText) {
  const std::string raw = "Sure! Here's a prompt:\nOptimize the code.";
  client_.set_provider(meta(), parse_mock(json::array({{{"match", ""}, {"reply", raw}}}).dump()));
  try {
    generate_prompt(client_, meta(), minimal_bundle());
    FAIL();
  } catch (const RejectedResponseError& e) {
    EXPECT_EQ(e.raw(), raw);
  }
}

TEST_F(GenerateFixture, UnreachableMetaPrompterIsTransportError) {
  ModelConfig m;
  m.model_id = "down";
  m.endpoint_url = "http://127.0.0.1:1/v1/chat/completions";
  m.request_timeout = std::chrono::milliseconds(300);
  m.max_retries = 1;
  ChatClient::Options opt;
  opt.sleep = [](std::chrono::milliseconds) {};
  ChatClient client(opt);
  EXPECT_THROW(generate_prompt(client, m, minimal_bundle()), TransportError);
}

TEST(GeneratedPromptJson, RoundTripAndFingerprintIgnoresTimestamp) {
  GeneratedPrompt p;
  p.strategy = StrategyKind::mpco;
  p.target_llm = "gpt-4o";
  p.text = "t";
  p.provenance = {"meta", "2024-01-01T00:00:00Z", "abc", 0.5, std::nullopt};
  GeneratedPrompt back = json(p).get<GeneratedPrompt>();
  EXPECT_EQ(json(back), json(p));
  back.provenance.timestamp = "later";
  EXPECT_EQ(back.fingerprint(), p.fingerprint());
  back.text = "u";
  EXPECT_NE(back.fingerprint(), p.fingerprint());
}

}  // namespace
}  // namespace mpco
