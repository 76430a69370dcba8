#pragma once

// Shared helpers for the workbench, service and CLI tests.

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fixtures {

namespace fs = std::filesystem;

/// A config small enough for a full pipeline to run in a few seconds.
inline nlohmann::json small_config() {
    return nlohmann::json::parse(R"({
      "synthetic": {"image_size": 20, "n_train": 200, "n_test": 100},
      "baseline": {"hidden_dim": 12, "epochs": 3, "pretrain_epochs": 1},
      "gccd": {"subsample": 60, "downscale_factor": 2, "tsne_iterations": 50},
      "bank": {"n_exemplars": 20, "probe_size": 120},
      "train": {"epochs": 20}
    })");
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = fs::temp_directory_path() / ("xilbench-" + tag + "-" + std::to_string(::getpid()));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace fixtures
