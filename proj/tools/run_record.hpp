#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace fprobe::cli {

namespace fs = std::filesystem;

// Bad flag values and similar; reported with kind "usage" and exit code 2.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// What one command read, decided and wrote. Serialized as manifest.json in the
/// output directory once every output exists.
class RunRecord {
public:
    RunRecord(std::string command, std::vector<std::string> argv);

    const std::string& command() const { return command_; }

    void input(const fs::path& path);
    void seed(const std::string& name, uint64_t value);
    void option(const std::string& name, nlohmann::ordered_json value);
    // Paths relative to the output directory.
    void output(const fs::path& out_dir, const std::string& name);

    void write(const fs::path& out_dir) const;

private:
    std::string command_;
    std::vector<std::string> argv_;
    nlohmann::ordered_json inputs_ = nlohmann::ordered_json::object();
    nlohmann::ordered_json seeds_ = nlohmann::ordered_json::object();
    nlohmann::ordered_json options_ = nlohmann::ordered_json::object();
    std::vector<std::string> outputs_;
};

/// argv with every path-valued flag made absolute, so a manifest can be replayed
/// from any working directory.
std::vector<std::string> normalize_argv(const std::vector<std::string>& argv);

/// Stored argv with the --out value swapped for `out` (kept when empty).
std::vector<std::string> replay_argv(const nlohmann::json& manifest, const std::string& out);

/// Input files whose current hash differs from the manifest.
std::vector<std::string> changed_inputs(const nlohmann::json& manifest);

/// CSV outputs under `out_dir` whose hash differs from the manifest's.
std::vector<std::string> changed_csv_outputs(const nlohmann::json& manifest, const fs::path& out_dir);

}  // namespace fprobe::cli
