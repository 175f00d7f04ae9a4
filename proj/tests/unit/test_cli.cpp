#include <doctest.h>

#include <cstdio>
#include <set>
#include <sstream>
#include <sys/wait.h>
#include <thread>

#include <nlohmann/json.hpp>

#include "support.hpp"

namespace {

struct Output {
    int code = -1;
    std::string out;
};

Output run(const std::string& args) {
    const std::string cmd = std::string(PURPLE_CLI) + " " + args + " 2>/dev/null";
    Output o;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) o.out.append(buf, n);
    const int status = ::pclose(pipe);
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return o;
}

std::size_t line_count(const std::string& s) {
    std::size_t n = 0;
    for (char c : s) n += c == '\n';
    return n;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("gen-data") {
    test::TempDir dir;
    REQUIRE(run("gen-data --users 50 --seed 3 --out " + q(dir / "a.jsonl")).code == 0);
    REQUIRE(run("gen-data --users 50 --seed 3 --out " + q(dir / "b.jsonl")).code == 0);
    const auto a = test::read_text(dir / "a.jsonl");
    CHECK(line_count(a) == 50);
    CHECK(a == test::read_text(dir / "b.jsonl"));
    CHECK(std::filesystem::exists(dir / "a.jsonl.world.json"));
    auto summary = nlohmann::json::parse(run("gen-data --users 5 --seed 4 --out " + q(dir / "c.jsonl")).out);
    CHECK(summary["seed"] == 4);
    CHECK(run("gen-data --users 0 --out " + q(dir / "d.jsonl")).code == 2);
    CHECK(run("no-such-command").code != 0);
}

TEST_CASE("train, rank and oracle") {
    test::TempDir dir;
    REQUIRE(run("gen-data --users 6 --seed 1 --records 6 --k 2 --out " + q(dir / "d.jsonl")).code == 0);
    const std::string small = " --k 2 --d-model 8 --layers 1 --batch-size 2 --samples 4 --quiet";
    auto t = run("train --data " + q(dir / "d.jsonl") + " --out " + q(dir / "run") + small);
    REQUIRE(t.code == 0);
    CHECK(line_count(test::read_text(dir / "run" / "train_log.jsonl")) == 10);
    CHECK(std::filesystem::exists(dir / "run" / "best.prpl"));

    test::write_text(dir / "m8.toml", "samples_per_example = 8\nepochs = 2\n");
    REQUIRE(run("train --config " + q(dir / "m8.toml") + " --data " + q(dir / "d.jsonl") + " --out " + q(dir / "m8") +
                " --k 2 --d-model 8 --layers 1 --batch-size 2 --quiet")
                .code == 0);
    const auto log = test::read_text(dir / "m8" / "train_log.jsonl");
    CHECK(line_count(log) == 2);
    CHECK(nlohmann::json::parse(log.substr(0, log.find('\n')))["samples_per_example"] == 8);

    auto r = run("rank --checkpoint " + q(dir / "run" / "best.prpl") + " --data " + q(dir / "d.jsonl") + " --k 2 --seed 5");
    REQUIRE(r.code == 0);
    std::istringstream lines(r.out);
    std::string line;
    std::size_t users = 0;
    while (std::getline(lines, line)) {
        auto j = nlohmann::json::parse(line);
        CHECK(j["profile"].size() == 2);
        CHECK(j["seed"] == 5);
        ++users;
    }
    CHECK(users == 6);
    CHECK(run("oracle --suite pl --seed 2").code == 0);
}

TEST_CASE("rank picks distinct records") {
    test::TempDir dir;
    REQUIRE(run("gen-data --users 3 --seed 2 --out " + q(dir / "d.jsonl")).code == 0);
    REQUIRE(run("train --data " + q(dir / "d.jsonl") + " --out " + q(dir / "run") +
                " --epochs 1 --d-model 8 --layers 1 --batch-size 2 --samples 2 --quiet")
                .code == 0);
    auto r = run("rank --checkpoint " + q(dir / "run" / "best.prpl") + " --data " + q(dir / "d.jsonl") + " --k 5");
    REQUIRE(r.code == 0);
    auto j = nlohmann::json::parse(r.out.substr(0, r.out.find('\n')));
    std::set<std::string> ids;
    for (const auto& id : j["profile"]) ids.insert(id.get<std::string>());
    CHECK(ids.size() == 5);

    REQUIRE(run("embed --data " + q(dir / "d.jsonl") + " --out " + q(dir / "e16.jsonl") + " --width 16").code == 0);
    CHECK(run("rank --checkpoint " + q(dir / "run" / "best.prpl") + " --data " + q(dir / "d.jsonl") +
              " --embeddings " + q(dir / "e16.jsonl"))
              .code == 5);
    CHECK(run("rank --checkpoint " + q(dir / "missing.prpl") + " --data " + q(dir / "d.jsonl")).code == 2);
}

TEST_CASE("eval") {
    test::TempDir dir;
    test::write_text(dir / "p.txt", "the cat sat\nblue\n");
    auto same = run("eval --predictions " + q(dir / "p.txt") + " --references " + q(dir / "p.txt") + " --seed 8");
    REQUIRE(same.code == 0);
    auto j = nlohmann::json::parse(same.out);
    CHECK(j["rouge1"] == 1.0);
    CHECK(j["seed"] == 8);
    auto tsv = run("eval --format tsv --predictions " + q(dir / "p.txt") + " --references " + q(dir / "p.txt"));
    CHECK(tsv.out.rfind("# seed\t", 0) == 0);
}

TEST_CASE("remote reward matches the in-process table") {
    test::TempDir dir;
    REQUIRE(run("gen-data --users 4 --seed 7 --records 5 --k 2 --out " + q(dir / "d.jsonl") + " --reward-table-out " +
                q(dir / "t.jsonl"))
                .code == 0);
    const std::string common = " --data " + q(dir / "d.jsonl") + " --k 2 --d-model 8 --layers 1 --batch-size 2 --samples 4 --epochs 2 --quiet";
    REQUIRE(run("train --reward table --reward-table " + q(dir / "t.jsonl") + " --out " + q(dir / "local") + common).code == 0);

    const auto endpoint_file = dir / "endpoint.txt";
    const std::string server = std::string(PURPLE_MOCK_SERVER) + " --table " + q(dir / "t.jsonl") + " > " + q(endpoint_file) +
                               " 2>/dev/null & echo $!";
    FILE* pipe = ::popen(server.c_str(), "r");
    REQUIRE(pipe != nullptr);
    int pid = 0;
    REQUIRE(std::fscanf(pipe, "%d", &pid) == 1);
    ::pclose(pipe);
    std::string endpoint;
    for (int i = 0; i < 100 && endpoint.empty(); ++i) {
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
        auto text = test::read_text(endpoint_file);
        const auto pos = text.find("http://");
        if (pos != std::string::npos && text.find('\n', pos) != std::string::npos)
            endpoint = text.substr(pos, text.find_first_of(" \n", pos) - pos);
    }
    REQUIRE(!endpoint.empty());
    const int code = run("train --reward http --endpoint " + endpoint + " --out " + q(dir / "remote") + common).code;
    CHECK(std::system(("kill " + std::to_string(pid)).c_str()) == 0);
    REQUIRE(code == 0);
    CHECK(test::read_text(dir / "local" / "best.prpl") == test::read_text(dir / "remote" / "best.prpl"));
    CHECK(run("train --reward http --endpoint http://127.0.0.1:1 --out " + q(dir / "dead") + common).code == 3);
}

}  // TEST_SUITE
