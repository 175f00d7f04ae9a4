// Serves a scripted scoring table over HTTP for offline training runs.

#include <csignal>
#include <iostream>
#include <memory>

#include <CLI11.hpp>

#include "purple/errors.hpp"
#include "purple/reward.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Mock log-likelihood reward service"};
    std::string table, host = "127.0.0.1";
    int port = 0;
    std::optional<double> default_logprob;
    app.add_option("--table", table, "Score table JSONL (prompt, reference, reference_logprobs)")
        ->required()
        ->check(CLI::ExistingFile);
    app.add_option("--host", host, "Bind address")->capture_default_str();
    app.add_option("--port", port, "Port; 0 picks a free one")->capture_default_str();
    app.add_option("--default-logprob", default_logprob, "Per-token logprob for unscripted pairs");
    CLI11_PARSE(app, argc, argv);

    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    try {
        auto script = purple::load_reward_script(table);
        if (default_logprob) script.default_logprob = *default_logprob;
        purple::MockRewardServer server(std::make_shared<const purple::RewardScript>(std::move(script)));
        server.start(host, port);
        std::cout << server.endpoint() << std::endl;
        int sig = 0;
        sigwait(&signals, &sig);
        server.stop();
    } catch (const std::exception& e) {
        std::cerr << "purple_mock_reward: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
