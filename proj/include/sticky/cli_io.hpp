#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sticky/process_sim.hpp"

namespace sticky {

/// Experiment description. `doc` is the canonical JSON form; every section is
/// validated on construction and unknown keys are rejected.
struct ExperimentConfig {
    nlohmann::json doc;

    static ExperimentConfig from_json(const nlohmann::json& j);
    /// `[section]` headers with `key = value` lines. Dotted headers nest
    /// (`[model.params]`). Values parse as JSON literals, otherwise as strings;
    /// ` #` starts a trailing comment.
    static ExperimentConfig from_ini(const std::string& text);
    /// Picks the format from the extension: .json, otherwise ini.
    static ExperimentConfig load(const std::filesystem::path& file);

    std::vector<std::string> stages() const;
    bool has(const std::string& section) const { return doc.contains(section); }
};

/// Throws InvalidArgument on the first problem.
void validate_config(const nlohmann::json& doc);

std::vector<std::string> fixture_names();
/// Pinned acceptance configs: alma, brownian, skew, levy, fbm, inverse_bessel.
ExperimentConfig fixtures(const std::string& name);

struct RunOptions {
    std::filesystem::path out;
    SimOptions sim;
    // Replaces model.seed (and tree.seed) when set.
    std::optional<std::uint64_t> seed;
    // Restricts the run to these stages (and whatever they depend on).
    std::vector<std::string> only;
};

struct Artifact {
    std::string name;
    std::string sha256;
    std::size_t bytes = 0;
};

struct ExperimentBundle {
    nlohmann::json reports = nlohmann::json::object();
    std::vector<Artifact> artifacts;
    nlohmann::json manifest;
    // Set when a construction succeeded but a checked invariant failed.
    std::vector<std::string> violations;
};

/// Stage errors are rethrown with the stage name prefixed. Artifacts written
/// before the failure stay on disk.
ExperimentBundle run(const ExperimentConfig& config, const RunOptions& options);

std::string sha256_hex(const std::string& bytes);

/// 0 success, 2 config error, 3 geometry or infeasibility, 4 bound violation, 1 anything else.
int exit_code_for(const std::exception& e) noexcept;

}  // namespace sticky
