#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "gauntlet/config.hpp"
#include "gauntlet/pipeline.hpp"
#include "helpers/fake_servers.hpp"
#include "helpers/synthetic.hpp"

using namespace gauntlet;
namespace fs = std::filesystem;

namespace {

struct PipelineFixture {
    testing::TempDir root{"pipeline"};
    RunConfig cfg;

    explicit PipelineFixture(size_t train_count = 60, size_t eval_count = 30) {
        testing::SyntheticOptions spam_opts;
        spam_opts.count = train_count;
        spam_opts.label = Label::spam;
        testing::SyntheticOptions ham_opts;
        ham_opts.count = train_count;
        ham_opts.label = Label::ham;
        testing::write_corpus_dir(testing::synthetic_messages(spam_opts), root.path / "train_spam");
        testing::write_corpus_dir(testing::synthetic_messages(ham_opts), root.path / "train_ham");

        testing::SyntheticOptions eval_opts;
        eval_opts.count = eval_count;
        eval_opts.label = Label::spam;
        eval_opts.seed = 777;
        testing::write_corpus_dir(testing::synthetic_messages(eval_opts), root.path / "corpus");

        cfg.corpus_root = (root.path / "corpus").string();
        cfg.ham_dir = (root.path / "train_ham").string();
        cfg.spam_dir = (root.path / "train_spam").string();
        cfg.output_dir = (root.path / "out").string();
        cfg.dataset = DatasetVariant::minimal;
        cfg.seed = 42;
        cfg.now = parse_iso8601("2024-06-01T12:00:00Z");
        cfg.provider.spec = "mock:identity";
    }
};

int run_all_stages(const RunConfig& cfg, std::ostream& log) {
    if (int rc = cmd_train(cfg, log)) return rc;
    if (int rc = cmd_preprocess(cfg, log)) return rc;
    if (int rc = cmd_baseline(cfg, log)) return rc;
    if (int rc = cmd_attack(cfg, log)) return rc;
    return cmd_evaluate(cfg, log);
}

}  // namespace

TEST_CASE("full pipeline with the identity mock leaves the verdicts unchanged") {
    PipelineFixture fx;
    std::ostringstream log;
    REQUIRE(run_all_stages(fx.cfg, log) == kExitOk);

    StageLedger pre = detail::read_stage_ledger(fx.cfg.out() / "stage_preprocess.json");
    StageLedger base = detail::read_stage_ledger(fx.cfg.out() / "stage_baseline.json");
    StageLedger att = detail::read_stage_ledger(fx.cfg.out() / "stage_attack.json");
    StageLedger ev = detail::read_stage_ledger(fx.cfg.out() / "stage_evaluate.json");

    CHECK(pre.raw == 30);
    CHECK(pre.post_mod == 30);
    CHECK(detail::list_eml_ids(fx.cfg.preprocessed_dir()).size() == pre.post_mod);
    CHECK(base.ham + base.spam == base.sent);
    CHECK(base.sent == pre.post_mod);

    // identity mock: nothing rejected, bodies unchanged, same filter -> no flips
    CHECK(att.pre_llm == att.raw);
    CHECK(att.rejected == 0);
    CHECK(att.failed == 0);
    CHECK(att.post_llm == att.pre_llm);
    CHECK(ev.ham == 0);
    CHECK(ev.sent == att.post_llm);

    nlohmann::json report = nlohmann::json::parse(read_file(fx.cfg.out() / "report.json"));
    CHECK(report["rates"]["success_rate"] == 0.0);
    // identity bodies embed identically
    CHECK(report["similarity"]["mean"].get<double>() > 0.999);
    CHECK(report["links"]["pre"] == report["links"]["post"]);

    SECTION("pipeline monotonicity") {
        nlohmann::json gt = nlohmann::json::parse(read_file(fx.cfg.out() / "ground_truth.json"));
        CHECK(pre.raw >= pre.post_mod);
        CHECK(pre.post_mod >= base.sent);
        CHECK(base.sent >= gt["entries"].size());
        CHECK(gt["entries"].size() >= att.pre_llm);
        CHECK(att.pre_llm >= att.post_llm);
        CHECK(att.post_llm >= ev.sent);
    }
    SECTION("report recount agrees with the per-email ledger") {
        std::ostringstream rlog;
        CHECK(cmd_report(fx.cfg, rlog) == kExitOk);
    }
    SECTION("rerun without force refuses to clobber the dataset") {
        std::ostringstream relog;
        CHECK(cmd_preprocess(fx.cfg, relog) == kExitConfig);
        CHECK(relog.str().find("--force") != std::string::npos);
    }
    SECTION("baseline rerun resumes from the persisted verdicts") {
        size_t lines_before = read_jsonl(fx.cfg.out() / "verdicts.jsonl").size();
        std::ostringstream relog;
        CHECK(cmd_baseline(fx.cfg, relog) == kExitOk);
        CHECK(read_jsonl(fx.cfg.out() / "verdicts.jsonl").size() == lines_before);
    }
}

TEST_CASE("reject-all mock rejects every ground-truth entry") {
    PipelineFixture fx(40, 12);
    fx.cfg.provider.spec = "mock:reject-all";
    std::ostringstream log;
    REQUIRE(cmd_train(fx.cfg, log) == kExitOk);
    REQUIRE(cmd_preprocess(fx.cfg, log) == kExitOk);
    REQUIRE(cmd_baseline(fx.cfg, log) == kExitOk);
    CHECK(cmd_attack(fx.cfg, log) == kExitFailure);  // nothing modified

    StageLedger att = detail::read_stage_ledger(fx.cfg.out() / "stage_attack.json");
    CHECK(att.post_llm == 0);
    CHECK(att.rejected == att.pre_llm);
    CHECK(att.pre_llm > 0);

    std::string csv = read_file(fx.cfg.out() / "rejections.csv");
    CHECK(csv.find("keyword,count") == 0);
    CHECK(csv.size() > std::string("keyword,count\n").size());
}

TEST_CASE("seeded 25 percent rejection lands in the expected band on 200 entries") {
    PipelineFixture fx(60, 200);
    fx.cfg.provider.spec = "mock:identity,reject=0.25";
    fx.cfg.seed = 11;
    std::ostringstream log;
    REQUIRE(cmd_train(fx.cfg, log) == kExitOk);
    REQUIRE(cmd_preprocess(fx.cfg, log) == kExitOk);
    REQUIRE(cmd_baseline(fx.cfg, log) == kExitOk);
    REQUIRE(cmd_attack(fx.cfg, log) == kExitOk);

    StageLedger att = detail::read_stage_ledger(fx.cfg.out() / "stage_attack.json");
    REQUIRE(att.pre_llm >= 150);  // nearly all synthetic spam passes the baseline
    double rate = static_cast<double>(att.rejected) / static_cast<double>(att.pre_llm);
    CHECK(rate >= 0.20);
    CHECK(rate <= 0.30);
    CHECK(att.rejected + att.post_llm + att.failed == att.pre_llm);
}

TEST_CASE("dictionary attack pipeline stays loss-free") {
    PipelineFixture fx(40, 20);
    fx.cfg.attack = "dictionary";
    std::string dict_path = (fx.root.path / "words.csv").string();
    write_file(dict_path,
               "# test dictionary\nfree,complimentary\ncash,funds\nprize,reward\nwinner,recipient\n"
               "urgent,timely\nclick,visit\n");
    fx.cfg.dictionary_path = dict_path;

    std::ostringstream log;
    REQUIRE(run_all_stages(fx.cfg, log) == kExitOk);
    StageLedger att = detail::read_stage_ledger(fx.cfg.out() / "stage_attack.json");
    CHECK(att.rejected == 0);
    CHECK(att.post_llm == att.pre_llm);

    nlohmann::json report = nlohmann::json::parse(read_file(fx.cfg.out() / "report.json"));
    CHECK(report["similarity"]["mean"].get<double>() > 0.8);
    CHECK(report["cost"]["requests"] == 0);
}

TEST_CASE("a corpus the filter never flags aborts with the empty-ground-truth code") {
    PipelineFixture fx(40, 0);
    testing::SyntheticOptions hammy;
    hammy.count = 10;
    hammy.label = Label::ham;  // ham-vocabulary bodies handed over as "spam"
    hammy.seed = 31337;
    testing::write_corpus_dir(testing::synthetic_messages(hammy), fx.root.path / "corpus");

    std::ostringstream log;
    REQUIRE(cmd_train(fx.cfg, log) == kExitOk);
    REQUIRE(cmd_preprocess(fx.cfg, log) == kExitOk);
    CHECK(cmd_baseline(fx.cfg, log) == kExitEmptyGroundTruth);
    CHECK(cmd_attack(fx.cfg, log) == kExitEmptyGroundTruth);
}

TEST_CASE("train reports totals and holdout accuracy") {
    PipelineFixture fx(50, 0);
    fx.cfg.holdout = 0.2;
    std::ostringstream log;
    REQUIRE(cmd_train(fx.cfg, log) == kExitOk);
    CHECK(log.str().find("totals spam=40 ham=40") != std::string::npos);
    CHECK(log.str().find("holdout accuracy") != std::string::npos);

    BayesModel model = load_model(fx.cfg.model_path());
    CHECK(model.total_spam == 40);
    CHECK(model.total_ham == 40);

    SECTION("retraining produces byte-identical model files") {
        std::string bytes = read_file(fx.cfg.model_path());
        std::ostringstream relog;
        REQUIRE(cmd_train(fx.cfg, relog) == kExitOk);
        CHECK(read_file(fx.cfg.model_path()) == bytes);
    }
    SECTION("missing class directory is a config error") {
        RunConfig bad = fx.cfg;
        bad.ham_dir.clear();
        std::ostringstream blog;
        CHECK(cmd_train(bad, blog) == kExitConfig);
    }
}

TEST_CASE("a spamd endpoint answers the whole baseline stage") {
    PipelineFixture fx(0, 8);
    fx.cfg.filter.kind = Adapter::spamd;
    fx.cfg.filter.timeout_ms = 2000;
    fx.cfg.filter.max_inflight = 2;

    std::ostringstream log;
    REQUIRE(cmd_preprocess(fx.cfg, log) == kExitOk);

    testing::FakeSpamd spamd("SPAMD/1.1 0 EX_OK\r\nSpam: True ; 9.1 / 5.0\r\n\r\n", 8);
    fx.cfg.filter.spamd_addr = spamd.addr();
    REQUIRE(cmd_baseline(fx.cfg, log) == kExitOk);

    StageLedger base = detail::read_stage_ledger(fx.cfg.out() / "stage_baseline.json");
    CHECK(base.sent == 8);
    CHECK(base.spam == 8);
    nlohmann::json gt = nlohmann::json::parse(read_file(fx.cfg.out() / "ground_truth.json"));
    CHECK(gt["entries"].size() == 8);
    CHECK(gt["entries"][0]["adapter"] == "spamd");
    CHECK(gt["entries"][0]["score"] == 9.1);
}

TEST_CASE("an unreachable spamd exhausts transport and exits 4") {
    PipelineFixture fx(0, 4);
    fx.cfg.filter.kind = Adapter::spamd;
    fx.cfg.filter.spamd_addr = testing::TcpTestServer::dead_addr();
    fx.cfg.filter.timeout_ms = 300;

    std::ostringstream log;
    REQUIRE(cmd_preprocess(fx.cfg, log) == kExitOk);
    CHECK(cmd_baseline(fx.cfg, log) == kExitTransport);
    // every entry is on record as unsent, so a later rerun can resume
    size_t unsent = 0;
    for (const auto& line : read_jsonl(fx.cfg.out() / "ledger.jsonl"))
        if (line.value("stage", "") == "baseline" && line.value("outcome", "") == "unsent")
            ++unsent;
    CHECK(unsent == 4);
}

TEST_CASE("the live adapter drives baseline over SMTP plus REST") {
    PipelineFixture fx(0, 5);
    std::ostringstream log;
    REQUIRE(cmd_preprocess(fx.cfg, log) == kExitOk);

    std::vector<std::string> ids = detail::list_eml_ids(fx.cfg.preprocessed_dir());
    REQUIRE(ids.size() == 5);
    std::vector<testing::FakeRest::Message> listed;
    for (size_t i = 0; i < ids.size(); ++i)
        listed.push_back({"srv-" + std::to_string(i), ids[i], i % 2 == 0, 6.0, 5.0});

    testing::FakeSmtp smtp(5);
    testing::FakeRest rest(listed);
    fx.cfg.filter.kind = Adapter::live;
    fx.cfg.filter.smtp_addr = smtp.addr();
    fx.cfg.filter.api_base = rest.base();
    fx.cfg.filter.timeout_ms = 3000;
    fx.cfg.filter.max_inflight = 1;  // the fake accepts connections serially

    REQUIRE(cmd_baseline(fx.cfg, log) == kExitOk);
    StageLedger base = detail::read_stage_ledger(fx.cfg.out() / "stage_baseline.json");
    CHECK(base.sent == 5);
    CHECK(base.spam == 3);
    CHECK(base.ham == 2);
    CHECK(smtp.data_payloads().size() == 5);
}

TEST_CASE("fixed clock, seed, and mock provider reproduce every output byte") {
    testing::TempDir shared("pipeline-det");
    testing::SyntheticOptions spam_opts;
    spam_opts.count = 25;
    spam_opts.label = Label::spam;
    testing::SyntheticOptions ham_opts;
    ham_opts.count = 25;
    ham_opts.label = Label::ham;
    testing::write_corpus_dir(testing::synthetic_messages(spam_opts), shared.path / "spam");
    testing::write_corpus_dir(testing::synthetic_messages(ham_opts), shared.path / "ham");

    auto run_into = [&](const fs::path& out) {
        RunConfig cfg;
        cfg.corpus_root = (shared.path / "spam").string();
        cfg.ham_dir = (shared.path / "ham").string();
        cfg.spam_dir = (shared.path / "spam").string();
        cfg.output_dir = out.string();
        cfg.dataset = DatasetVariant::original;
        cfg.seed = 5;
        cfg.now = parse_iso8601("2024-06-01T12:00:00Z");
        cfg.provider.spec = "mock:shuffle-synonyms";
        std::ostringstream log;
        REQUIRE(run_all_stages(cfg, log) == kExitOk);
    };
    run_into(shared.path / "out_a");
    run_into(shared.path / "out_b");

    size_t compared = 0;
    for (const auto& de : fs::recursive_directory_iterator(shared.path / "out_a")) {
        if (!de.is_regular_file()) continue;
        fs::path rel = fs::relative(de.path(), shared.path / "out_a");
        INFO(rel.string());
        REQUIRE(fs::exists(shared.path / "out_b" / rel));
        CHECK(read_file(de.path()) == read_file(shared.path / "out_b" / rel));
        ++compared;
    }
    CHECK(compared > 60);  // model, datasets, ledgers, reports, cache entries

    // formula monotonicity surfaced in the report
    nlohmann::json report = nlohmann::json::parse(read_file(shared.path / "out_a" / "report.json"));
    CHECK(report["rates"]["end_to_end_rate"].get<double>() >=
          report["rates"]["misclassification_rate"].get<double>());
}

TEST_CASE("config file parsing and overrides") {
    std::map<std::string, std::string> kv = parse_config_text(
        "# run settings\n"
        "corpus_root = /data/spam\n"
        "dataset = minimal\n"
        "seed = 99\n"
        "temperature = 0.5\n"
        "provider = \"mock:shuffle-synonyms\"\n"
        "now = 2024-06-01T12:00:00Z\n");
    RunConfig cfg;
    apply_config(cfg, kv);
    CHECK(cfg.corpus_root == "/data/spam");
    CHECK(cfg.dataset == DatasetVariant::minimal);
    CHECK(cfg.seed == 99);
    CHECK(cfg.provider.temperature == 0.5);
    CHECK(cfg.provider.spec == "mock:shuffle-synonyms");
    REQUIRE(cfg.now.has_value());
    CHECK(*cfg.now == parse_iso8601("2024-06-01T12:00:00Z"));

    CHECK_THROWS_AS(apply_config(cfg, {{"no_such_key", "1"}}), ConfigError);
    CHECK_THROWS_AS(apply_config(cfg, {{"seed", "abc"}}), ConfigError);
    CHECK_THROWS_AS(apply_config(cfg, {{"dataset", "huge"}}), ConfigError);
    CHECK_THROWS_AS(parse_config_text("line without equals\n"), ConfigError);

    SECTION("provider spec parsing") {
        RunConfig c;
        c.provider.spec = "mock:identity,reject=0.25";
        CHECK(make_provider(c) != nullptr);
        c.provider.spec = "replay";
        CHECK(make_provider(c) != nullptr);
        c.provider.spec = "mock:nonsense";
        CHECK_THROWS_AS(make_provider(c), ConfigError);
        c.provider.spec = "teapot";
        CHECK_THROWS_AS(make_provider(c), ConfigError);
    }
}

#ifdef GAUNTLET_BIN
TEST_CASE("the CLI binary wires flags, config files, and exit codes together") {
    PipelineFixture fx(30, 10);
    std::string config_path = (fx.root.path / "run.conf").string();
    std::ofstream conf(config_path);
    conf << "corpus_root = " << fx.cfg.corpus_root << "\n"
         << "ham_dir = " << fx.cfg.ham_dir << "\n"
         << "spam_dir = " << fx.cfg.spam_dir << "\n"
         << "output_dir = " << fx.cfg.output_dir << "\n"
         << "dataset = minimal\n"
         << "provider = mock:identity\n"
         << "seed = 42\n"
         << "now = 2024-06-01T12:00:00Z\n";
    conf.close();

    auto run = [&](const std::string& args) {
        std::string cmd = std::string(GAUNTLET_BIN) + " " + args + " >/dev/null 2>&1";
        int status = std::system(cmd.c_str());
        return WEXITSTATUS(status);
    };
    CHECK(run("train --config " + config_path) == kExitOk);
    CHECK(run("preprocess --config " + config_path) == kExitOk);
    CHECK(run("preprocess --config " + config_path) == kExitConfig);  // no --force
    CHECK(run("preprocess --config " + config_path + " --force") == kExitOk);
    CHECK(run("baseline --config " + config_path) == kExitOk);
    CHECK(run("attack --config " + config_path) == kExitOk);
    CHECK(run("evaluate --config " + config_path) == kExitOk);
    CHECK(run("report --config " + config_path) == kExitOk);
    CHECK(fs::exists(fx.cfg.out() / "report.json"));

    CHECK(run("baseline --config " + config_path + " --filter nonsense") == kExitConfig);
    CHECK(run("preprocess --corpus_root /definitely/not/there --output_dir " +
              (fx.root.path / "other").string()) == kExitConfig);
}
#endif
