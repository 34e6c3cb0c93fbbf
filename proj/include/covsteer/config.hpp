#pragma once

#include <memory>
#include <string>

#include <json.hpp>

#include "covsteer/monte_carlo.hpp"
#include "covsteer/scp.hpp"

namespace covsteer {

// Output file names, resolved against the CLI's --out directory.
struct OutputSpec {
  std::string policy = "policy.json";
  std::string iterations = "iterations.jsonl";
  std::string report = "report.json";
  bool trajectories = false;   // embed per-trial knot rows in the report
};

// A fully parsed scenario: the config owns the model and field, and
// `problem` points at them.
struct ScenarioConfig {
  std::shared_ptr<SystemModel> model;
  std::shared_ptr<GaussianRandomField> field;
  ScpProblem problem;
  McConfig mc;
  OutputSpec outputs;
};

// Strict parser for the scenario JSON schema (schema_version 1).  Unknown
// keys are rejected so typos fail loudly; a "notes" string is allowed in any
// object.  `base_dir` resolves relative paths (density tables).
// Throws ConfigError on schema or value problems.
ScenarioConfig parse_scenario(const nlohmann::json& j, const std::string& base_dir);
ScenarioConfig load_scenario(const std::string& path);

// ---- Policy files --------------------------------------------------------

nlohmann::json policy_to_json(const FeedbackPolicy& policy,
                              const std::string& model_name);
FeedbackPolicy policy_from_json(const nlohmann::json& j,
                                std::string* model_name = nullptr);
void save_policy(const std::string& path, const FeedbackPolicy& policy,
                 const std::string& model_name);
FeedbackPolicy load_policy(const std::string& path,
                           std::string* model_name = nullptr);

// ---- Simulation reports --------------------------------------------------

nlohmann::json report_to_json(const McReport& mc, const LinearPrediction* pred,
                              const FeedbackPolicy* policy,
                              const std::string& model_name);

// ---- Iteration log -------------------------------------------------------

// One JSON object per line, one line per iteration.
void write_iterations_jsonl(const std::string& path,
                            const std::vector<ScpIterationRecord>& records);

// ---- Small JSON file helpers ---------------------------------------------

nlohmann::json load_json_file(const std::string& path);   // IoError / ConfigError
void save_json_file(const std::string& path, const nlohmann::json& j);

}  // namespace covsteer
