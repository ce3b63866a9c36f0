#include "doctest.h"

#include "fprobe/config.hpp"

using namespace fprobe;

TEST_CASE("scalars, tables and arrays") {
    const auto j = parse_toml(R"(
title = "run"   # trailing comment
epochs = 1_000
lr = 3e-4
neg = -2
on = true

[model]
n_layers = 4
periods = [2, 2.5,
           5, 10]

[[run]]
name = "a"
[[run]]
name = "b"
opts = { kind = "x", n = 1 }
)");
    CHECK(j["title"] == "run");
    CHECK(j["epochs"] == 1000);
    CHECK(j["lr"].get<double>() == doctest::Approx(3e-4));
    CHECK(j["neg"] == -2);
    CHECK(j["on"] == true);
    CHECK(j["model"]["n_layers"] == 4);
    CHECK(j["model"]["periods"].size() == 4);
    CHECK(j["model"]["periods"][1].get<double>() == 2.5);
    CHECK(j["run"].size() == 2);
    CHECK(j["run"][1]["opts"]["kind"] == "x");
}

TEST_CASE("errors carry the line number") {
    CHECK_THROWS_WITH(parse_toml("a = 1\nb = \n"), doctest::Contains(":2:"));
    CHECK_THROWS(parse_toml("a = 1\na = 2\n"));
    CHECK_THROWS(parse_toml("[t]\n[t]\n"));
    CHECK_THROWS(parse_toml("a = \"open\n"));
    CHECK_THROWS(parse_toml("a = 1 2\n"));
    CHECK_THROWS(parse_toml("a = [1, 2\n"));
}
