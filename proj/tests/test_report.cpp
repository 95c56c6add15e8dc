#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>

#include "doctest.h"
#include "smartlab/report.hpp"

using namespace smartlab;

TEST_CASE("config hashing is stable and sensitive") {
    // Classical FNV-1a 64 reference values.
    CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
    CHECK(fnv1a64("ab") != fnv1a64("ba"));
    CHECK(hex64(0) == "0000000000000000");
    CHECK(hex64(0xdeadbeefull) == "00000000deadbeef");
    CHECK(hex64(fnv1a64("a")) == "af63dc4c8601ec8c");
}

TEST_CASE("doubles render with full round-trip precision") {
    CHECK(fmt_g17(1.0) == "1");
    CHECK(fmt_g17(0.1) == "0.10000000000000001");
    for (double v : {1.0 / 3.0, 2730.0 / 1024.0, 1e-300, 3.5e17, -7.25}) {
        CHECK(std::stod(fmt_g17(v)) == v);
    }
    CHECK(fmt_g17(std::numeric_limits<double>::quiet_NaN()) == "nan");
}

TEST_CASE("summaries render checks, constants, and notes in order") {
    Summary s("demo", 0xabcull);
    s.check("alpha", true, "1", "<= 2");
    s.check("beta", false, "3", "<= 2");
    s.constant("gamma", 0.5);
    s.note("context");
    CHECK(!s.all_pass());
    CHECK(s.failures() == 1);
    CHECK(s.config_hash() == 0xabcull);
    CHECK(s.str() == "# summary demo\n# config-hash 0000000000000abc\n"
                     "check alpha pass observed 1 expected <= 2\n"
                     "check beta FAIL observed 3 expected <= 2\n"
                     "const gamma 0.5\n"
                     "note context\n");

    Summary clean("empty", 1);
    CHECK(clean.all_pass());
    CHECK(clean.str() == "# summary empty\n# config-hash 0000000000000001\n");
}

TEST_CASE("file writing creates parent directories") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "smartlab_report_test";
    fs::remove_all(dir);
    const std::string path = (dir / "a" / "b" / "out.txt").string();
    write_file(path, "payload\n");
    std::ifstream in(path);
    std::string line;
    REQUIRE(static_cast<bool>(std::getline(in, line)));
    CHECK(line == "payload");
    fs::remove_all(dir);
}
