#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "codeicl/errors.hpp"
#include "codeicl/runner.hpp"

namespace codeicl {

namespace {

constexpr std::string_view kMissing = "–";

std::string percent(double value) {
    char buffer[32];
    std::snprintf(buffer, sizeof(buffer), "%.2f", value * 100.0);
    return buffer;
}

std::string method_name(const RunReport& r) {
    std::string name(to_string(r.style));
    if (r.adversarial_context) {
        name += "+adv";
    }
    return name;
}

struct Cell {
    std::optional<double> asr;
    double adv_accuracy = 0.0;
};

std::string csv_escape(const std::string& text) {
    if (text.find_first_of(",\"\n") == std::string::npos) {
        return text;
    }
    std::string out = "\"";
    for (char c : text) {
        if (c == '"') {
            out += '"';
        }
        out += c;
    }
    return out + "\"";
}

} // namespace

std::string render_report_table(const std::vector<RunReport>& reports, TableFormat format) {
    std::vector<std::string> tasks;
    std::vector<std::string> methods;
    std::map<std::pair<std::string, std::string>, Cell> cells;
    for (const auto& r : reports) {
        const auto method = method_name(r);
        if (std::find(tasks.begin(), tasks.end(), r.task_name) == tasks.end()) {
            tasks.push_back(r.task_name);
        }
        if (std::find(methods.begin(), methods.end(), method) == methods.end()) {
            methods.push_back(method);
        }
        auto [it, inserted] =
            cells.emplace(std::make_pair(method, r.task_name),
                          Cell{r.asr ? std::optional<double>(r.asr->mean) : std::nullopt, r.adv_accuracy.mean});
        if (!inserted) {
            fail(ErrorCode::Usage, "two reports for method " + method + " on task " + r.task_name);
        }
    }

    std::vector<std::string> header = {"Method"};
    header.insert(header.end(), tasks.begin(), tasks.end());
    header.push_back("Avg(ASR)");
    header.push_back("Avg(Acc)");

    std::vector<std::vector<std::string>> rows;
    for (const auto& method : methods) {
        std::vector<std::string> row = {method};
        double asr_sum = 0.0;
        std::size_t asr_n = 0;
        double acc_sum = 0.0;
        std::size_t acc_n = 0;
        for (const auto& task : tasks) {
            auto it = cells.find({method, task});
            if (it == cells.end()) {
                row.emplace_back(kMissing);
                continue;
            }
            acc_sum += it->second.adv_accuracy;
            ++acc_n;
            if (it->second.asr) {
                asr_sum += *it->second.asr;
                ++asr_n;
                row.push_back(percent(*it->second.asr));
            } else {
                row.emplace_back("undef");
            }
        }
        row.push_back(asr_n ? percent(asr_sum / static_cast<double>(asr_n)) : std::string(kMissing));
        row.push_back(acc_n ? percent(acc_sum / static_cast<double>(acc_n)) : std::string(kMissing));
        rows.push_back(std::move(row));
    }

    std::ostringstream out;
    if (format == TableFormat::Csv) {
        auto emit = [&](const std::vector<std::string>& cols) {
            for (std::size_t i = 0; i < cols.size(); ++i) {
                out << (i ? "," : "") << csv_escape(cols[i]);
            }
            out << '\n';
        };
        emit(header);
        for (const auto& row : rows) {
            emit(row);
        }
        return out.str();
    }

    auto emit = [&](const std::vector<std::string>& cols) {
        out << '|';
        for (const auto& c : cols) {
            out << ' ' << c << " |";
        }
        out << '\n';
    };
    emit(header);
    out << '|';
    for (std::size_t i = 0; i < header.size(); ++i) {
        out << (i == 0 ? " --- |" : " ---: |");
    }
    out << '\n';
    for (const auto& row : rows) {
        emit(row);
    }
    return out.str();
}

RunReport read_report(const std::string& results_dir) {
    const auto path = std::filesystem::path(results_dir) / "report.json";
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorCode::Io, "no report.json in " + results_dir);
    }
    try {
        return json::parse(in).get<RunReport>();
    } catch (const json::exception& e) {
        fail(ErrorCode::Schema, path.string() + ": " + e.what());
    }
}

std::string report(const std::vector<std::string>& results_dirs, TableFormat format) {
    if (results_dirs.empty()) {
        fail(ErrorCode::Usage, "no result directories given");
    }
    std::vector<RunReport> reports;
    for (const auto& dir : results_dirs) {
        reports.push_back(read_report(dir));
    }
    return render_report_table(reports, format);
}

} // namespace codeicl
