#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "geesub/panel.hpp"
#include "geesub/simulate.hpp"

using namespace geesub;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

} // namespace

TEST_CASE("read_panel parses a small long-format file", "[panel_io]") {
    const auto path = temp_path("geesub_small.csv");
    write_text(path,
               "id,time,y,x1\n"
               "a,1,1.5,0.25\n"
               "a,2,2.5,0.5\n"
               "b,1,-1,1\n"
               "b,2,-2,2\n");
    const Panel p = read_panel(path);
    CHECK(p.m() == 2);
    CHECK(p.n == 2);
    CHECK(p.p == 1);
    CHECK(p.subjects[0].id == "a");
    CHECK(p.subjects[0].y[1] == 2.5);
    CHECK(p.subjects[1].X(1, 0) == 2.0);
    std::remove(path.c_str());
}

TEST_CASE("rows are sorted by time within subject, subject order preserved", "[panel_io]") {
    const auto path = temp_path("geesub_unsorted.csv");
    write_text(path,
               "id,time,y,x1\n"
               "z,2,20,0\n"
               "z,1,10,0\n"
               "a,1,1,0\n"
               "a,2,2,0\n");
    const Panel p = read_panel(path);
    REQUIRE(p.m() == 2);
    CHECK(p.subjects[0].id == "z");
    CHECK(p.subjects[0].y[0] == 10.0);
    CHECK(p.subjects[0].y[1] == 20.0);
    std::remove(path.c_str());
}

TEST_CASE("unbalanced subject is named in the error", "[panel_io]") {
    const auto path = temp_path("geesub_unbalanced.csv");
    std::string text = "id,time,y,x1\n";
    for (int id = 1; id <= 3; ++id) {
        const int rows = id == 2 ? 3 : 4; // subject "7" analogue
        for (int j = 0; j < rows; ++j) {
            text += (id == 2 ? std::string("7") : std::to_string(id)) + "," +
                    std::to_string(j) + ",0,0\n";
        }
    }
    write_text(path, text);
    try {
        read_panel(path);
        FAIL("expected BalanceError");
    } catch (const BalanceError& e) {
        CHECK(std::string(e.what()).find("\"7\"") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("header-only file is an empty-panel error", "[panel_io]") {
    const auto path = temp_path("geesub_empty.csv");
    write_text(path, "id,time,y,x1\n");
    CHECK_THROWS_AS(read_panel(path), EmptyPanelError);
    std::remove(path.c_str());
}

TEST_CASE("missing column is a schema error", "[panel_io]") {
    const auto path = temp_path("geesub_noschema.csv");
    write_text(path, "id,time,response,x1\n1,1,0,0\n");
    CHECK_THROWS_AS(read_panel(path), SchemaError);
    std::remove(path.c_str());
}

TEST_CASE("non-numeric cell is a parse error with the line number", "[panel_io]") {
    const auto path = temp_path("geesub_badcell.csv");
    write_text(path, "id,time,y,x1\n1,1,0,0\n1,2,oops,0\n");
    try {
        read_panel(path);
        FAIL("expected ParseError");
    } catch (const geesub::ParseError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("missing and non-finite values are rejected", "[panel_io]") {
    const auto path = temp_path("geesub_missing.csv");
    write_text(path, "id,time,y,x1\n1,1,,0\n");
    CHECK_THROWS_AS(read_panel(path), geesub::ParseError);
    write_text(path, "id,time,y,x1\n1,1,nan,0\n");
    CHECK_THROWS_AS(read_panel(path), geesub::ParseError);
    std::remove(path.c_str());
}

TEST_CASE("CRLF line endings are accepted", "[panel_io]") {
    const auto path = temp_path("geesub_crlf.csv");
    write_text(path, "id,time,y,x1\r\n1,1,3,4\r\n");
    const Panel p = read_panel(path);
    CHECK(p.m() == 1);
    CHECK(p.subjects[0].y[0] == 3.0);
    CHECK(p.subjects[0].X(0, 0) == 4.0);
    std::remove(path.c_str());
}

TEST_CASE("write_panel emits one data row for the minimal panel", "[panel_io]") {
    Panel p;
    p.p = 1;
    p.n = 1;
    p.subjects.push_back({"s", Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXd::Zero(1)});
    const auto path = temp_path("geesub_minimal.csv");
    write_panel(p, path);
    std::ifstream in(path);
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 2); // header + one observation
    std::remove(path.c_str());
}

TEST_CASE("round-trip of a generated panel is exact", "[panel_io]") {
    SimConfig cfg;
    cfg.kase = SimCase::linear;
    cfg.m = 25;
    cfg.n = 5;
    cfg.seed = 99;
    const Panel p = gen_case1(cfg);
    const auto path = temp_path("geesub_roundtrip.csv");
    write_panel(p, path);
    const Panel q = read_panel(path);
    CHECK(p == q);
    std::remove(path.c_str());
}

TEST_CASE("writing to a directory is an I/O error", "[panel_io]") {
    Panel p;
    p.p = 1;
    p.n = 1;
    p.subjects.push_back({"s", Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXd::Zero(1)});
    CHECK_THROWS_AS(write_panel(p, std::filesystem::temp_directory_path().string()), IoError);
}

TEST_CASE("reading a missing file is an I/O error", "[panel_io]") {
    CHECK_THROWS_AS(read_panel(temp_path("geesub_does_not_exist.csv")), IoError);
}
