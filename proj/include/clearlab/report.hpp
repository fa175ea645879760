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

#pragma once

#include <string>
#include <vector>

namespace clearlab {

/// Shortest decimal representation that round-trips the double exactly.
std::string format_double(double v);

/// Tabular report with the resolved run configuration echoed into the
/// header of every artifact. Cells are pre-formatted strings; rows sort
/// lexicographically by the first `key_columns` cells so equal inputs give
/// byte-identical files.
struct Report {
    std::string config_json; // empty -> no header comment
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
    size_t key_columns = 0; // 0 -> keep caller order

    void add_row(std::vector<std::string> cells);
    void sort_rows();
    std::string to_csv() const;
    std::string to_json() const;
    void write(const std::string &path, const std::string &format); // "csv" or "json"
};

/// Parse the rows back out of a CSV produced by Report::to_csv (header
/// comment skipped). Used by the round-trip checks.
std::vector<std::vector<std::string>> parse_report_csv(const std::string &text);

} // namespace clearlab
