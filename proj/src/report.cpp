// Copyright 2025 the clearlab authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "clearlab/report.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "clearlab/common.hpp"

namespace clearlab {

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    CLEARLAB_CHECK(ec == std::errc(), "to_chars failed");
    return std::string(buf, ptr);
}

void Report::add_row(std::vector<std::string> cells) {
    CLEARLAB_CHECK(cells.size() == columns.size(), "row arity must match declared columns");
    rows.push_back(std::move(cells));
}

void Report::sort_rows() {
    if (key_columns == 0) return;
    std::stable_sort(rows.begin(), rows.end(),
                     [this](const std::vector<std::string> &a, const std::vector<std::string> &b) {
                         for (size_t c = 0; c < key_columns; ++c) {
                             if (a[c] != b[c]) return a[c] < b[c];
                         }
                         return false;
                     });
}

std::string Report::to_csv() const {
    std::ostringstream os;
    if (!config_json.empty()) os << "# config: " << config_json << "\n";
    for (size_t c = 0; c < columns.size(); ++c) os << columns[c] << (c + 1 < columns.size() ? "," : "");
    os << "\n";
    for (const auto &row : rows) {
        for (size_t c = 0; c < row.size(); ++c) os << row[c] << (c + 1 < row.size() ? "," : "");
        os << "\n";
    }
    return os.str();
}

std::string Report::to_json() const {
    nlohmann::json j;
    if (!config_json.empty()) j["config"] = nlohmann::json::parse(config_json);
    j["columns"] = columns;
    j["rows"] = rows;
    return j.dump(2) + "\n";
}

void Report::write(const std::string &path, const std::string &format) {
    sort_rows();
    CLEARLAB_CHECK(format == "csv" || format == "json", "format must be csv or json");
    std::ofstream f(path, std::ios::binary);
    CLEARLAB_CHECK(f.good(), "cannot open output file: " + path);
    f << (format == "csv" ? to_csv() : to_json());
    CLEARLAB_CHECK(f.good(), "write failed: " + path);
}

std::vector<std::vector<std::string>> parse_report_csv(const std::string &text) {
    std::vector<std::vector<std::string>> out;
    std::istringstream is(text);
    std::string line;
    bool header_skipped = false;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header_skipped) { // column header
            header_skipped = true;
            continue;
        }
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        out.push_back(std::move(cells));
    }
    return out;
}

} // namespace clearlab
