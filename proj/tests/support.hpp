#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "codeicl/dataset_io.hpp"
#include "codeicl/task_model.hpp"

namespace testing {

namespace fs = std::filesystem;

inline std::string data_path(const std::string& relative) {
    return std::string(CODEICL_DATA_DIR) + "/" + relative;
}

inline codeicl::TaskSpec task(const std::string& name) {
    return codeicl::load_task_spec(data_path("tasks/" + name + ".toml"));
}

inline const std::vector<std::string>& task_names() {
    static const std::vector<std::string> names = {"sst2", "qqp", "mnli", "qnli", "rte", "restaurant"};
    return names;
}

/// Fresh directory removed on scope exit.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("codeicl-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter.fetch_add(1)));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }

    const fs::path& path() const { return path_; }
    std::string operator/(const std::string& name) const { return (path_ / name).string(); }

private:
    fs::path path_;
};

inline void write_file(const std::string& path, const std::string& text) {
    std::ofstream(path, std::ios::binary) << text;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

/// A sample with one value per spec field, derived from `text`.
inline codeicl::Sample make_sample(const codeicl::TaskSpec& spec, const std::string& id, const std::string& label,
                                   const std::string& text) {
    codeicl::Sample s;
    s.id = id;
    s.label = codeicl::Label(label);
    for (const auto& f : spec.fields) {
        s.field_values[f.name] = text + " (" + f.name + ")";
    }
    return s;
}

/// `n` pairs cycling through the label set; adversarial text is prefixed
/// with "adv".
inline codeicl::EvalSet synthetic_set(const codeicl::TaskSpec& spec, std::size_t n, const std::string& prefix = "s") {
    codeicl::EvalSet set;
    set.task_name = spec.task_name;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& label = spec.label_set.labels[i % spec.label_set.size()].str();
        const auto id = prefix + std::to_string(i);
        codeicl::AdvPair pair;
        pair.clean = make_sample(spec, id, label, "clean " + id);
        pair.adversarial = make_sample(spec, id, label, "adv " + id);
        pair.transformation = codeicl::Transformation::AdvGlue;
        set.pairs.push_back(std::move(pair));
    }
    return set;
}

} // namespace testing
