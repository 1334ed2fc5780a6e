// gauntlet: spam-filter robustness pipeline driver.
// Stages: preprocess -> train (builtin filter) -> baseline -> attack -> evaluate -> report.
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "gauntlet/config.hpp"
#include "gauntlet/pipeline.hpp"

namespace {

struct CliOverrides {
    std::map<std::string, std::string> values;
    bool force = false;
};

// Every config key doubles as a flag so runs are scriptable without a file.
void add_override_flags(CLI::App* cmd, CliOverrides& ov) {
    static const char* keys[] = {
        "corpus_root", "dataset",          "filter",        "spamd_addr",       "smtp_addr",
        "api_base",    "api_list_path",    "api_message_path", "envelope_from", "envelope_to",
        "timeout_ms",  "max_message_bytes", "check_inflight", "attack",         "dictionary_path",
        "prompts_path", "provider",        "provider_endpoint", "model_name",   "temperature",
        "max_inflight", "key_env",         "price_in",      "price_out",        "output_dir",
        "model_file",  "seed",             "now",           "ham_dir",          "spam_dir",
        "holdout"};
    for (const char* key : keys) {
        cmd->add_option_function<std::string>(
            "--" + std::string(key),
            [&ov, key](const std::string& v) { ov.values[key] = v; });
    }
    cmd->add_flag("--force", ov.force, "redo a stage whose outputs already exist");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"spam-filter robustness testbed"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "key = value configuration file")
        ->configurable(false);

    struct Cmd {
        CLI::App* sub;
        CliOverrides overrides;
        int (*run)(const gauntlet::RunConfig&, std::ostream&);
    };
    std::vector<Cmd> commands;
    commands.reserve(8);  // flag lambdas hold references into the elements
    auto register_cmd = [&](const char* name, const char* help,
                            int (*run)(const gauntlet::RunConfig&, std::ostream&)) {
        commands.push_back({app.add_subcommand(name, help), {}, run});
        commands.back().sub->add_option("--config", config_path,
                                        "key = value configuration file");
        add_override_flags(commands.back().sub, commands.back().overrides);
    };
    register_cmd("preprocess", "apply the dataset variant transforms and write .eml files",
                 gauntlet::cmd_preprocess);
    register_cmd("train", "train the builtin Bayes filter from ham/spam directories",
                 gauntlet::cmd_train);
    register_cmd("baseline", "classify the preprocessed dataset and build the ground truth",
                 gauntlet::cmd_baseline);
    register_cmd("attack", "modify ground-truth bodies via dictionary or LLM rephrasing",
                 gauntlet::cmd_attack);
    register_cmd("evaluate", "classify modified emails and write the run report",
                 gauntlet::cmd_evaluate);
    register_cmd("report", "recount the ledgers and rebuild the report files",
                 gauntlet::cmd_report);

    CLI11_PARSE(app, argc, argv);

    try {
        gauntlet::RunConfig cfg;
        if (!config_path.empty()) cfg = gauntlet::load_config(config_path);
        for (auto& cmd : commands) {
            if (!cmd.sub->parsed()) continue;
            gauntlet::apply_config(cfg, cmd.overrides.values);
            if (cmd.overrides.force) cfg.force = true;
            return cmd.run(cfg, std::cout);
        }
        std::cerr << "no subcommand given\n";
        return gauntlet::kExitConfig;
    } catch (const gauntlet::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return gauntlet::kExitConfig;
    } catch (const gauntlet::TransportError& e) {
        std::cerr << "transport error: " << e.what() << "\n";
        return gauntlet::kExitTransport;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return gauntlet::kExitFailure;
    }
}
