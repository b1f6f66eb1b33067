// Built-in strategy templates. The files under strategies/ carry the same text
// and are what users edit; a test keeps the two in sync.

#include "mpco/prompt.hpp"

namespace mpco {

namespace {

constexpr std::string_view kMpco =
    R"(You are an expert in code optimization. Please generate a prompt that will instruct the target LLM {target_llm} to optimize code for {objective}.
Consider the project context, task context, and adapt the prompt complexity and style based on the target LLM's capabilities.

## Project Context
Project Name: {project_name}
Project Description: {project_description}
Primary Languages: {project_languages}

## Task Context
- Description: {task_description}
- Considerations: {task_considerations}

## Target LLM Context
- Target Model: {target_llm}
- Considerations: {llm_considerations}
)";

constexpr std::string_view kCot =
    R"(You are an expert in code optimization. Optimize the following code for {objective}.

Work through the optimization step by step:
1. Work out what the code computes and which inputs it must handle.
2. Identify the operations that dominate its cost.
3. Choose optimizations (algorithm, data structures, memory access, redundant work) that keep the behavior identical.
4. Rewrite the code applying those optimizations.

Do the reasoning internally. Reply with only the complete optimized code in a single fenced code block, without additional commentary. Keep the same function signature so the result is a drop-in replacement.

{code}
)";

constexpr std::string_view kFewShot =
    R"(You are an expert in code optimization. Optimize code for {objective}. The examples below show original code followed by an optimized version.

{examples}

Now optimize the following code in the same way. Reply with only the complete optimized code in a single fenced code block, without additional commentary. Keep the same function signature so the result is a drop-in replacement.

{code}
)";

constexpr std::string_view kContextual =
    R"(You are an expert in code optimization. Optimize the following code for {objective}.

## Project Context
Project Name: {project_name}
Project Description: {project_description}
Primary Languages: {project_languages}

## Task Context
- Description: {task_description}
- Considerations: {task_considerations}

## Target LLM Context
- Target Model: {target_llm}
- Considerations: {llm_considerations}

Reply with only the complete optimized code in a single fenced code block, without additional commentary. Keep the same function signature so the result is a drop-in replacement.

{code}
)";

constexpr std::string_view kFixed =
    R"(Optimize the following code for {objective}. Reply with only the complete optimized code in a single fenced code block, without additional commentary.

{code}
)";

}  // namespace

std::string_view builtin_template(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::mpco: return kMpco;
    case StrategyKind::cot: return kCot;
    case StrategyKind::few_shot: return kFewShot;
    case StrategyKind::contextual: return kContextual;
    case StrategyKind::fixed: return kFixed;
  }
  return {};
}

const std::vector<FewShotExample>& builtin_examples() {
  static const std::vector<FewShotExample> examples = {
      {R"(def has_duplicates(items):
    seen = []
    for item in items:
        if item in seen:
            return True
        seen.append(item)
    return False
)",
       R"(def has_duplicates(items):
    seen = set()
    for item in items:
        if item in seen:
            return True
        seen.add(item)
    return False
)"},
      {R"(std::vector<int> squares(std::vector<int> values) {
    std::vector<int> out;
    for (size_t i = 0; i < values.size(); ++i) {
        out.push_back(values[i] * values[i]);
    }
    return out;
}
)",
       R"(std::vector<int> squares(const std::vector<int>& values) {
    std::vector<int> out;
    out.reserve(values.size());
    for (int v : values) {
        out.push_back(v * v);
    }
    return out;
}
)"},
  };
  return examples;
}

}  // namespace mpco
