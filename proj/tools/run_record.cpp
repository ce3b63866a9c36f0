#include "run_record.hpp"

#include "fprobe/common.hpp"
#include "fprobe/report.hpp"

#include <array>
#include <fstream>
#include <string_view>

namespace fprobe::cli {

namespace {

constexpr std::array kPathFlags = {"--data", "--ckpt", "--config", "--run-file", "--out", "--manifest"};

std::string absolute(const std::string& p) { return fs::absolute(p).lexically_normal().string(); }

std::string normalize_value(std::string_view flag, const std::string& value) {
    if (flag == "--embedding" && value.starts_with("file:")) {
        return "file:" + absolute(value.substr(5));
    }
    for (const char* f : kPathFlags) {
        if (flag == f) {
            return absolute(value);
        }
    }
    return value;
}

}  // namespace

RunRecord::RunRecord(std::string command, std::vector<std::string> argv)
    : command_(std::move(command)), argv_(std::move(argv)) {}

void RunRecord::input(const fs::path& path) {
    const auto key = fs::absolute(path).lexically_normal().string();
    inputs_[key] = hash_file(key);
}

void RunRecord::seed(const std::string& name, uint64_t value) { seeds_[name] = value; }

void RunRecord::option(const std::string& name, nlohmann::ordered_json value) { options_[name] = std::move(value); }

void RunRecord::output(const fs::path& out_dir, const std::string& name) {
    if (!fs::exists(out_dir / name)) {
        throw std::runtime_error("output '" + (out_dir / name).string() + "' was not written");
    }
    outputs_.push_back(name);
}

void RunRecord::write(const fs::path& out_dir) const {
    nlohmann::ordered_json j;
    j["tool"] = "fprobe";
    j["version"] = std::string(kToolVersion);
    j["command"] = command_;
    j["argv"] = argv_;
    j["options"] = options_;
    j["seeds"] = seeds_;
    j["threads"] = thread_cap();
    j["inputs"] = inputs_;
    nlohmann::ordered_json outs = nlohmann::ordered_json::object();
    for (const auto& name : outputs_) {
        outs[name] = hash_file((out_dir / name).string());
    }
    j["outputs"] = outs;
    const auto path = out_dir / "manifest.json";
    std::ofstream os(path, std::ios::binary);
    os << j.dump(2) << '\n';
    if (!os) {
        throw std::runtime_error("cannot write '" + path.string() + "'");
    }
}

std::vector<std::string> normalize_argv(const std::vector<std::string>& argv) {
    std::vector<std::string> out;
    for (size_t i = 0; i < argv.size(); ++i) {
        const auto& a = argv[i];
        if (const auto eq = a.find('='); a.starts_with("--") && eq != std::string::npos) {
            const auto flag = a.substr(0, eq);
            out.push_back(flag + "=" + normalize_value(flag, a.substr(eq + 1)));
        } else if (a.starts_with("--") && i + 1 < argv.size()) {
            out.push_back(a);
            const auto normalized = normalize_value(a, argv[i + 1]);
            if (normalized != argv[i + 1] || a == "--embedding") {
                out.push_back(normalized);
                ++i;
            }
        } else {
            out.push_back(a);
        }
    }
    return out;
}

std::vector<std::string> replay_argv(const nlohmann::json& manifest, const std::string& out) {
    auto argv = manifest.at("argv").get<std::vector<std::string>>();
    if (out.empty()) {
        return argv;
    }
    const auto target = absolute(out);
    bool found = false;
    for (size_t i = 0; i < argv.size(); ++i) {
        if (argv[i] == "--out" && i + 1 < argv.size()) {
            argv[i + 1] = target;
            found = true;
        } else if (argv[i].starts_with("--out=")) {
            argv[i] = "--out=" + target;
            found = true;
        }
    }
    if (!found) {
        throw std::runtime_error("manifest argv has no --out to replace");
    }
    return argv;
}

std::vector<std::string> changed_inputs(const nlohmann::json& manifest) {
    std::vector<std::string> changed;
    for (const auto& [path, hash] : manifest.at("inputs").items()) {
        if (!fs::exists(path) || hash_file(path) != hash.get<std::string>()) {
            changed.push_back(path);
        }
    }
    return changed;
}

std::vector<std::string> changed_csv_outputs(const nlohmann::json& manifest, const fs::path& out_dir) {
    std::vector<std::string> changed;
    for (const auto& [name, hash] : manifest.at("outputs").items()) {
        if (!name.ends_with(".csv")) {
            continue;
        }
        const auto path = out_dir / name;
        if (!fs::exists(path) || hash_file(path.string()) != hash.get<std::string>()) {
            changed.push_back(name);
        }
    }
    return changed;
}

}  // namespace fprobe::cli
