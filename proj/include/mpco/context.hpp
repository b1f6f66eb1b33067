#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mpco/common.hpp"

namespace mpco {

struct ProjectContext {
  std::string project_name;
  std::string project_description;
  std::vector<std::string> project_languages;

  bool operator==(const ProjectContext&) const = default;
};

struct TaskContext {
  std::string objective;
  std::string task_description;
  std::vector<std::string> task_considerations;

  bool operator==(const TaskContext&) const = default;
};

struct LlmContext {
  std::string target_llm;
  std::vector<std::string> llm_considerations;

  bool operator==(const LlmContext&) const = default;
};

// Which context sections to leave out of a rendering.
struct AblationMask {
  bool project = false;
  bool task = false;
  bool llm = false;

  bool empty() const { return !project && !task && !llm; }
  // "", "np", "nt", "nl", "np_nt", ... in fixed project/task/llm order.
  std::string suffix() const;
  // Accepts a list of "project" | "task" | "llm".
  static AblationMask from_names(const std::vector<std::string>& names);
  std::vector<std::string> names() const;

  bool operator==(const AblationMask&) const = default;
};

struct ContextBundle {
  ProjectContext project;
  TaskContext task;
  LlmContext llm;
  AblationMask ablation;

  // Stable hash over the unmasked contexts and the mask.
  std::string fingerprint() const;
};

// In-memory, read-only view of the JSON context database. Safe to share
// across threads once constructed.
class ContextDb {
 public:
  ContextDb() = default;

  // Validates every entry; throws ParseError on malformed JSON and
  // ValidationError naming `<collection>.<id>.<field>` otherwise.
  static ContextDb from_json(const nlohmann::json& doc);
  static ContextDb parse(std::string_view text);
  static ContextDb load(const fs::path& path);

  nlohmann::json to_json() const;
  void save(const fs::path& path) const;

  const std::map<std::string, ProjectContext>& projects() const { return projects_; }
  const std::map<std::string, TaskContext>& tasks() const { return tasks_; }
  const std::map<std::string, LlmContext>& llms() const { return llms_; }
  std::size_t size() const { return projects_.size() + tasks_.size() + llms_.size(); }

  std::string fingerprint() const;

  bool operator==(const ContextDb&) const = default;

 private:
  std::map<std::string, ProjectContext> projects_;
  std::map<std::string, TaskContext> tasks_;
  std::map<std::string, LlmContext> llms_;
};

// Throws LookupError naming the collection and id.
ContextBundle assemble(const ContextDb& db, const std::string& project_id,
                       const std::string& task_id, const std::string& llm_id,
                       AblationMask mask = {});

}  // namespace mpco
