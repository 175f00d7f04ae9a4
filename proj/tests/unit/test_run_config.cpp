#include <doctest.h>

#include <sstream>

#include "purple/errors.hpp"
#include "purple/run_config.hpp"
#include "support.hpp"

using namespace purple;

TEST_SUITE("run_config") {

TEST_CASE("key value parsing") {
    std::istringstream in("# comment\n[train]\nM = 8\nreward_endpoint = \"http://h:1/x # y\"  # trailing\n\nlr=0.5\n");
    auto kv = parse_key_values(in);
    CHECK(kv.at("M") == "8");
    CHECK(kv.at("reward_endpoint") == "http://h:1/x # y");
    CHECK(kv.at("lr") == "0.5");
    std::istringstream bad("no equals sign\n");
    CHECK_THROWS_AS(parse_key_values(bad), ParseError);
}

TEST_CASE("settings map onto the run") {
    RunConfig c;
    c.set("seed", "9");
    c.set("k", "3");
    c.set("samples_per_example", "8");
    c.set("pooling", "max");
    c.set("reward", "table");
    c.set("length_normalize", "true");
    CHECK(c.train.seed == 9);
    CHECK(c.world.seed == 9);
    CHECK(c.train.k == 3);
    CHECK(c.world.k == 3);
    CHECK(c.train.samples_per_example == 8);
    CHECK(c.scorer.pooling == Pooling::max);
    CHECK(c.reward == "table");
    CHECK(c.length_normalize);
    CHECK_THROWS_AS(c.set("bogus", "1"), ParseError);
    CHECK_THROWS_AS(c.set("epochs", "ten"), ParseError);
    CHECK_THROWS_AS(c.set("reward", "magic"), ParseError);
}

TEST_CASE("files load and later settings win") {
    test::TempDir dir;
    test::write_text(dir / "run.toml", "epochs = 4\nlr = 0.01\n");
    auto c = load_run_config(dir / "run.toml");
    CHECK(c.train.epochs == 4);
    CHECK(c.train.learning_rate == 0.01);
    c.set("epochs", "7");
    CHECK(c.train.epochs == 7);
    test::write_text(dir / "bad.toml", "unknown_key = 1\n");
    CHECK_THROWS_AS(load_run_config(dir / "bad.toml"), ParseError);
    CHECK_THROWS_AS(load_run_config(dir / "absent.toml"), ParseError);
}

}  // TEST_SUITE
