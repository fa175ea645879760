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

#include <doctest.h>
#include <json.hpp>

#include "clearlab/common.hpp"
#include "clearlab/report.hpp"

using namespace clearlab;

TEST_CASE("format_double is shortest round-trip") {
    CHECK(format_double(0.5) == "0.5");
    CHECK(format_double(1.0) == "1");
    CHECK(format_double(0.1) == "0.1");
    double v = 1.0 / 3.0;
    CHECK(std::stod(format_double(v)) == v);
}

TEST_CASE("empty report emits a header-only file") {
    Report r;
    r.columns = {"a", "b"};
    CHECK(r.to_csv() == "a,b\n");
}

TEST_CASE("reports are deterministic and sorted by key columns") {
    auto make = [] {
        Report r;
        r.columns = {"k", "v"};
        r.key_columns = 1;
        r.add_row({"b", "2"});
        r.add_row({"a", "1"});
        r.sort_rows();
        return r.to_csv();
    };
    CHECK(make() == make());
    CHECK(make() == "k,v\na,1\nb,2\n");
}

TEST_CASE("config header appears in both formats") {
    Report r;
    r.config_json = R"({"cmd":"x"})";
    r.columns = {"a"};
    r.add_row({"1"});
    CHECK(r.to_csv().substr(0, 1) == "#");
    auto j = nlohmann::json::parse(r.to_json());
    CHECK(j["config"]["cmd"] == "x");
}

TEST_CASE("csv and json of one report parse to equal value sets") {
    Report r;
    r.columns = {"m", "x"};
    r.add_row({"full", format_double(2.5)});
    r.add_row({"clear", format_double(0.125)});
    auto csv_rows = parse_report_csv(r.to_csv());
    auto j = nlohmann::json::parse(r.to_json());
    REQUIRE(csv_rows.size() == j["rows"].size());
    for (size_t i = 0; i < csv_rows.size(); ++i)
        for (size_t c = 0; c < csv_rows[i].size(); ++c)
            CHECK(csv_rows[i][c] == j["rows"][i][c].get<std::string>());
}

TEST_CASE("row arity is enforced") {
    Report r;
    r.columns = {"a", "b"};
    CHECK_THROWS_AS(r.add_row({"only-one"}), CheckError);
}
