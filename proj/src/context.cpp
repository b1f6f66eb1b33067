#include "mpco/context.hpp"

#include <fmt/format.h>

namespace mpco {

namespace {

using nlohmann::json;

std::string field_path(std::string_view collection, const std::string& id,
                       std::string_view field) {
  return fmt::format("{}.{}.{}", collection, id, field);
}

std::string require_string(const json& entry, std::string_view collection, const std::string& id,
                           const char* field, bool non_empty) {
  if (!entry.contains(field) || !entry[field].is_string()) {
    throw ValidationError(field_path(collection, id, field) + ": missing or not a string");
  }
  std::string value = entry[field].get<std::string>();
  if (non_empty && trim(value).empty()) {
    throw ValidationError(field_path(collection, id, field) + ": must not be empty");
  }
  return value;
}

std::vector<std::string> require_strings(const json& entry, std::string_view collection,
                                         const std::string& id, const char* field,
                                         bool non_empty) {
  if (!entry.contains(field) || !entry[field].is_array()) {
    throw ValidationError(field_path(collection, id, field) + ": missing or not a list");
  }
  std::vector<std::string> out;
  for (const json& v : entry[field]) {
    if (!v.is_string()) {
      throw ValidationError(field_path(collection, id, field) + ": entries must be strings");
    }
    out.push_back(v.get<std::string>());
  }
  if (non_empty && out.empty()) {
    throw ValidationError(field_path(collection, id, field) + ": must not be empty");
  }
  return out;
}

const json& require_collection(const json& doc, const char* key) {
  if (!doc.contains(key)) throw ValidationError(std::string("missing top-level key '") + key + "'");
  if (!doc[key].is_object()) throw ValidationError(std::string(key) + ": must be an object");
  return doc[key];
}

const json& require_entry(const json& value, std::string_view collection, const std::string& id) {
  if (!value.is_object()) {
    throw ValidationError(fmt::format("{}.{}: must be an object", collection, id));
  }
  return value;
}

json to_json_value(const ProjectContext& p) {
  return {{"project_name", p.project_name},
          {"project_description", p.project_description},
          {"project_languages", p.project_languages}};
}

json to_json_value(const TaskContext& t) {
  return {{"objective", t.objective},
          {"task_description", t.task_description},
          {"task_considerations", t.task_considerations}};
}

json to_json_value(const LlmContext& l) {
  return {{"target_llm", l.target_llm}, {"llm_considerations", l.llm_considerations}};
}

}  // namespace

std::string AblationMask::suffix() const {
  std::vector<std::string> parts;
  if (project) parts.push_back("np");
  if (task) parts.push_back("nt");
  if (llm) parts.push_back("nl");
  return join(parts, "_");
}

AblationMask AblationMask::from_names(const std::vector<std::string>& names) {
  AblationMask mask;
  for (const std::string& n : names) {
    if (n == "project" || n == "np") {
      mask.project = true;
    } else if (n == "task" || n == "nt") {
      mask.task = true;
    } else if (n == "llm" || n == "nl") {
      mask.llm = true;
    } else {
      throw ValidationError("unknown ablation component '" + n + "'");
    }
  }
  return mask;
}

std::vector<std::string> AblationMask::names() const {
  std::vector<std::string> out;
  if (project) out.push_back("project");
  if (task) out.push_back("task");
  if (llm) out.push_back("llm");
  return out;
}

std::string ContextBundle::fingerprint() const {
  json j = {{"mask", ablation.names()}};
  if (!ablation.project) j["project"] = to_json_value(project);
  if (!ablation.task) j["task"] = to_json_value(task);
  if (!ablation.llm) j["llm"] = to_json_value(llm);
  // target_llm and objective are rendered even when their sections are masked.
  j["target_llm"] = llm.target_llm;
  j["objective"] = task.objective;
  return sha256_hex(j.dump()).substr(0, 16);
}

ContextDb ContextDb::from_json(const json& doc) {
  if (!doc.is_object()) throw ValidationError("context database must be a JSON object");
  ContextDb db;
  for (const auto& [id, raw] : require_collection(doc, "projects").items()) {
    const json& e = require_entry(raw, "projects", id);
    ProjectContext p;
    p.project_name = require_string(e, "projects", id, "project_name", true);
    p.project_description = require_string(e, "projects", id, "project_description", false);
    p.project_languages = require_strings(e, "projects", id, "project_languages", true);
    db.projects_.emplace(id, std::move(p));
  }
  for (const auto& [id, raw] : require_collection(doc, "tasks").items()) {
    const json& e = require_entry(raw, "tasks", id);
    TaskContext t;
    t.objective = require_string(e, "tasks", id, "objective", true);
    t.task_description = require_string(e, "tasks", id, "task_description", false);
    t.task_considerations = require_strings(e, "tasks", id, "task_considerations", false);
    db.tasks_.emplace(id, std::move(t));
  }
  for (const auto& [id, raw] : require_collection(doc, "llms").items()) {
    const json& e = require_entry(raw, "llms", id);
    LlmContext l;
    l.target_llm = require_string(e, "llms", id, "target_llm", true);
    l.llm_considerations = require_strings(e, "llms", id, "llm_considerations", false);
    db.llms_.emplace(id, std::move(l));
  }
  return db;
}

ContextDb ContextDb::parse(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("context database: ") + e.what());
  }
  return from_json(doc);
}

ContextDb ContextDb::load(const fs::path& path) { return parse(read_file(path)); }

json ContextDb::to_json() const {
  json doc = {{"projects", json::object()}, {"tasks", json::object()}, {"llms", json::object()}};
  for (const auto& [id, p] : projects_) doc["projects"][id] = to_json_value(p);
  for (const auto& [id, t] : tasks_) doc["tasks"][id] = to_json_value(t);
  for (const auto& [id, l] : llms_) doc["llms"][id] = to_json_value(l);
  return doc;
}

void ContextDb::save(const fs::path& path) const { write_file_atomic(path, to_json().dump(2) + "\n"); }

std::string ContextDb::fingerprint() const { return sha256_hex(to_json().dump()).substr(0, 16); }

ContextBundle assemble(const ContextDb& db, const std::string& project_id,
                       const std::string& task_id, const std::string& llm_id, AblationMask mask) {
  auto p = db.projects().find(project_id);
  if (p == db.projects().end()) throw LookupError("unknown id '" + project_id + "' in projects");
  auto t = db.tasks().find(task_id);
  if (t == db.tasks().end()) throw LookupError("unknown id '" + task_id + "' in tasks");
  auto l = db.llms().find(llm_id);
  if (l == db.llms().end()) throw LookupError("unknown id '" + llm_id + "' in llms");
  return ContextBundle{p->second, t->second, l->second, mask};
}

}  // namespace mpco
