#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "emosde/workbench.hpp"
#include "test_util.hpp"

using namespace emosde;

namespace {

// A config small enough for seconds-long end-to-end runs.
RunConfig tiny_config(const std::filesystem::path& run_dir) {
    RunConfig cfg = RunConfig::defaults();
    cfg.run_dir = run_dir.string();
    cfg.seed = 20240817;
    cfg.threads = 2;
    cfg.corpus.vocab_size = 6;
    cfg.corpus.dim = 3;
    cfg.corpus.num_emotions = 3;
    cfg.corpus.num_utterances = 36;
    cfg.corpus.min_tokens = 3;
    cfg.corpus.max_tokens = 5;
    cfg.corpus.max_duration = 2;
    cfg.acoustic_arch.vocab_size = 6;
    cfg.acoustic_arch.dim = 3;
    cfg.acoustic_arch.token_embed = 8;
    cfg.acoustic_arch.encoder_hidden = 12;
    cfg.acoustic_arch.score_hidden = 10;
    cfg.acoustic_arch.score_conv_layers = 1;
    cfg.acoustic_arch.time_embed = 8;
    cfg.classifier_arch.dim = 3;
    cfg.classifier_arch.num_emotions = 3;
    cfg.classifier_arch.channels = 8;
    cfg.classifier_arch.blocks = 2;
    cfg.classifier_arch.time_embed = 8;
    cfg.acoustic_train.steps = 120;
    cfg.acoustic_train.batch_size = 4;
    cfg.acoustic_train.ema_decay = 0.98;
    cfg.acoustic_train.log_every = 20;
    cfg.classifier_train.steps = 120;
    cfg.classifier_train.batch_size = 4;
    cfg.classifier_train.ema_decay = 0.98;
    cfg.classifier_train.log_every = 20;
    cfg.guidance.gamma = 5.0;
    cfg.guidance.n_steps = 16;
    cfg.guidance.eval_samples_per_cell = 3;
    return cfg;
}

std::vector<std::string> read_lines(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) out.push_back(field);
    return out;
}

// Trains both stages once per test binary run.
const RunConfig& pipeline_config() {
    static testutil::TempDir dir("workbench_pipeline");
    static RunConfig cfg = [] {
        RunConfig c = tiny_config(dir.path / "run");
        cmd_gen_corpus(c);
        cmd_train(c, TrainStage::acoustic);
        cmd_train(c, TrainStage::classifier);
        return c;
    }();
    return cfg;
}

}  // namespace

TEST_CASE("gen-corpus is idempotent for a fixed seed") {
    testutil::TempDir dir("gen_idempotent");
    RunConfig a = tiny_config(dir.path / "a");
    RunConfig b = tiny_config(dir.path / "b");
    b.run_dir = (dir.path / "b").string();
    cmd_gen_corpus(a);
    cmd_gen_corpus(b);
    CHECK(testutil::dirs_equal(a.corpus_dir(), b.corpus_dir()));
    // regenerating in place leaves identical bytes
    cmd_gen_corpus(a);
    CHECK(testutil::dirs_equal(a.corpus_dir(), b.corpus_dir()));
}

TEST_CASE("training artifacts and logs") {
    const RunConfig& cfg = pipeline_config();

    SUBCASE("acoustic log has the loss-term columns") {
        const auto lines = read_lines(cfg.log_path("train_acoustic.csv"));
        REQUIRE(!lines.empty());
        CHECK(lines[0] == "step,dur_loss,diff_loss,prior_loss,total,config_hash");
        CHECK(lines.size() > 2);
        for (const auto& field : split_csv(lines[1])) CHECK(!field.empty());
    }
    SUBCASE("classifier eval CSV has t, CE, accuracy rows") {
        const auto lines = read_lines(cfg.log_path("classifier_eval.csv"));
        REQUIRE(!lines.empty());
        CHECK(lines[0] == "t,ce,accuracy,config_hash");
        CHECK(lines.size() >= 3);
    }
    SUBCASE("classifier training leaves the acoustic checkpoint unchanged") {
        const std::string before = testutil::file_bytes(cfg.acoustic_ckpt_path());
        RunConfig c = cfg;
        cmd_train(c, TrainStage::classifier);
        CHECK(testutil::file_bytes(cfg.acoustic_ckpt_path()) == before);
    }
    SUBCASE("resume continues the step counter and matches a one-shot run") {
        testutil::TempDir dir("resume");
        RunConfig c = tiny_config(dir.path / "runA");
        c.acoustic_train.steps = 60;
        cmd_gen_corpus(c);
        cmd_train(c, TrainStage::acoustic);
        CHECK(load_checkpoint(c.acoustic_ckpt_path()).meta.at("train_step").get<int64_t>() == 60);

        // extend the run: the hash changes, resume loads the old artifacts in
        // force mode and continues toward the new target
        c.acoustic_train.steps = 120;
        cmd_train(c, TrainStage::acoustic, /*resume=*/true);
        CHECK(load_checkpoint(c.acoustic_ckpt_path()).meta.at("train_step").get<int64_t>() == 120);

        RunConfig full = tiny_config(dir.path / "runB");
        full.acoustic_train.steps = 120;
        cmd_gen_corpus(full);
        cmd_train(full, TrainStage::acoustic);
        CHECK(testutil::files_equal(c.acoustic_ckpt_path(), full.acoustic_ckpt_path()));
    }
}

TEST_CASE("resume reproduces the longer run when only the step target grows") {
    // Same config but trained in one 120-step run vs 60 + resume to 120 via
    // the library call (the CLI guards hash mismatches; the library contract
    // is exact continuation).
    testutil::TempDir dir("resume_lib");
    RunConfig c = tiny_config(dir.path / "run");
    cmd_gen_corpus(c);
    const Corpus corpus = load_corpus(c.corpus_dir());

    TrainParams full = c.acoustic_train;
    TrainParams half = c.acoustic_train;
    half.steps = 60;
    const auto one_shot =
        train_acoustic(corpus, c.schedule(), c.acoustic_arch, full, c.seed, "h", nullptr, 2);
    const auto part =
        train_acoustic(corpus, c.schedule(), c.acoustic_arch, half, c.seed, "h", nullptr, 2);
    const auto resumed =
        train_acoustic(corpus, c.schedule(), c.acoustic_arch, full, c.seed, "h", &part.bundle, 2);
    CHECK(resumed.bundle.train_step == 120);
    CHECK(resumed.bundle.live.at("mu.w").data == one_shot.bundle.live.at("mu.w").data);
    CHECK(resumed.bundle.ema.at("enc.w1").data == one_shot.bundle.ema.at("enc.w1").data);
}

TEST_CASE("sampling outputs") {
    const RunConfig& cfg = pipeline_config();
    testutil::TempDir out("samples");

    SUBCASE("n samples are distinct, reruns are identical") {
        cmd_sample(cfg, 1, 1.0, 3, out.path / "a");
        cmd_sample(cfg, 1, 1.0, 3, out.path / "b");
        CHECK(testutil::dirs_equal(out.path / "a", out.path / "b"));
        const Utterance s0 = load_utterance_record(out.path / "a" / "sample_0000.bin", 3);
        const Utterance s1 = load_utterance_record(out.path / "a" / "sample_0001.bin", 3);
        const Utterance s2 = load_utterance_record(out.path / "a" / "sample_0002.bin", 3);
        CHECK(s0.frames.data != s1.frames.data);
        CHECK(s1.frames.data != s2.frames.data);
        // one invocation shares the token sequence
        CHECK(s0.tokens == s1.tokens);
    }
    SUBCASE("alpha = 0 records an effective Neutral one-hot label") {
        cmd_sample(cfg, 2, 0.0, 1, out.path / "n");
        std::ifstream in(out.path / "n" / "sample_0000.json");
        const nlohmann::json sidecar = nlohmann::json::parse(in);
        const auto w = sidecar.at("soft_label").get<std::vector<double>>();
        CHECK(w[0] == 1.0);
        for (size_t i = 1; i < w.size(); ++i) CHECK(w[i] == 0.0);
        CHECK(sidecar.at("gamma").get<double>() == cfg.guidance.gamma);
        CHECK(sidecar.at("n_steps").get<int>() == cfg.guidance.n_steps);
        CHECK(sidecar.at("config_hash").get<std::string>() == cfg.hash());
        CHECK(sidecar.contains("seed"));
    }
    SUBCASE("sample variance across a batch is nonzero") {
        cmd_sample(cfg, 1, 1.0, 8, out.path / "v");
        std::vector<Utterance> samples;
        for (int i = 0; i < 8; ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "sample_%04d.bin", i);
            samples.push_back(load_utterance_record(out.path / "v" / name, 3));
        }
        double var = 0.0;
        for (size_t i = 0; i < samples[0].frames.data.size(); ++i) {
            double mean = 0.0;
            for (const auto& s : samples) mean += s.frames.data[i] / 8.0;
            for (const auto& s : samples) var += (s.frames.data[i] - mean) * (s.frames.data[i] - mean);
        }
        CHECK(var > 0.0);
    }
}

TEST_CASE("eval-intensity schema and hash guard") {
    const RunConfig& cfg = pipeline_config();

    const auto cells = eval_intensity(cfg);
    const size_t expected =
        static_cast<size_t>(cfg.corpus.num_emotions - 1) * cfg.guidance.alpha_grid.size() * 2;
    CHECK(cells.size() == expected);
    for (const auto& c : cells) {
        CHECK(c.target_prob_mean >= 0.0);
        CHECK(c.target_prob_mean <= 1.0);
        CHECK(c.neutral_prob_mean >= 0.0);
        CHECK(c.neutral_prob_mean <= 1.0);
        CHECK((c.judge == "classifier" || c.judge == "oracle"));
        CHECK(c.n == cfg.guidance.eval_samples_per_cell);
    }

    testutil::TempDir out("evalcsv");
    cmd_eval_intensity(cfg, out.path / "eval.csv");
    const auto lines = read_lines(out.path / "eval.csv");
    REQUIRE(!lines.empty());
    CHECK(lines[0] ==
          "emotion,alpha,judge,target_prob_mean,target_prob_std,neutral_prob_mean,"
          "neutral_prob_std,n,config_hash");
    CHECK(lines.size() == expected + 1);

    // a mismatched config hash is refused unless forced
    RunConfig tampered = cfg;
    tampered.guidance.gamma += 1.0;
    CHECK_THROWS(eval_intensity(tampered));
    CHECK_NOTHROW(eval_intensity(tampered, /*force=*/true));
}

TEST_CASE("reports and samples are independent of the thread count and rerun-stable") {
    const RunConfig& cfg = pipeline_config();
    testutil::TempDir out("determinism");

    RunConfig serial = cfg;
    serial.threads = 1;
    cmd_sample(cfg, 2, 0.6, 4, out.path / "mt");
    cmd_sample(serial, 2, 0.6, 4, out.path / "st");
    CHECK(testutil::dirs_equal(out.path / "mt", out.path / "st"));

    cmd_eval_intensity(cfg, out.path / "a.csv");
    cmd_eval_intensity(serial, out.path / "b.csv");
    CHECK(testutil::files_equal(out.path / "a.csv", out.path / "b.csv"));
}

TEST_CASE("eval-forward writes per-coordinate rows") {
    testutil::TempDir dir("evalforward");
    RunConfig cfg = tiny_config(dir.path / "run");
    cmd_eval_forward(cfg, dir.path / "fwd.csv");
    const auto lines = read_lines(dir.path / "fwd.csv");
    REQUIRE(!lines.empty());
    CHECK(lines[0] == "t,coord,empirical_mean,exact_mean,mean_se,empirical_var,exact_var,config_hash");
    CHECK(lines.size() == static_cast<size_t>(4 * cfg.corpus.dim) + 1);
    // moments must already be close at this scale
    for (size_t i = 1; i < lines.size(); ++i) {
        const auto f = split_csv(lines[i]);
        const double emp_mean = std::stod(f[2]), exact_mean = std::stod(f[3]);
        const double se = std::stod(f[4]);
        const double emp_var = std::stod(f[5]), exact_var = std::stod(f[6]);
        CHECK(std::abs(emp_mean - exact_mean) < 4.0 * se + 1e-3);
        CHECK(std::abs(emp_var - exact_var) / exact_var < 0.1);
    }
}

TEST_CASE("missing prerequisites are runtime errors") {
    testutil::TempDir dir("missing");
    RunConfig cfg = tiny_config(dir.path / "run");
    CHECK_THROWS(cmd_train(cfg, TrainStage::acoustic));  // no corpus yet
    cmd_gen_corpus(cfg);
    CHECK_THROWS(cmd_train(cfg, TrainStage::classifier));  // no acoustic checkpoint
    CHECK_THROWS(cmd_sample(cfg, 1, 1.0, 1, dir.path / "s"));
    CHECK_THROWS(eval_intensity(cfg));
}

TEST_CASE("cli exit codes") {
    const std::string cli = EMOSDE_CLI_PATH;
    testutil::TempDir dir("cli");
    auto run = [&](const std::string& args) {
        const std::string cmd = cli + " " + args + " >/dev/null 2>&1";
        const int status = std::system(cmd.c_str());
        return WEXITSTATUS(status);
    };

    CHECK(run("") == 2);                                   // no subcommand
    CHECK(run("--help") == 0);                             // help is success
    CHECK(run("bogus-subcommand --config x.json") == 2);   // unknown subcommand
    CHECK(run("gen-corpus") == 2);                         // missing --config
    CHECK(run("gen-corpus --config /nonexistent.json") == 2);
    CHECK(run("train --config /nonexistent.json --stage bogus") == 2);

    // usage error: alpha outside [0, 1]
    const RunConfig cfg = tiny_config(dir.path / "run");
    const auto cfg_path = dir.path / "config.json";
    {
        std::ofstream out(cfg_path);
        out << cfg.to_json().dump(2);
    }
    CHECK(run("sample --config " + cfg_path.string() + " --emotion 1 --alpha 1.5 --n 1 --out " +
              (dir.path / "s").string()) == 2);

    // runtime failure: eval without checkpoints
    CHECK(run("eval-intensity --config " + cfg_path.string()) == 1);

    // happy path: gen-corpus through the binary, byte-identical to the library
    CHECK(run("gen-corpus --config " + cfg_path.string()) == 0);
    RunConfig lib_cfg = cfg;
    lib_cfg.run_dir = (dir.path / "librun").string();
    cmd_gen_corpus(lib_cfg);
    CHECK(testutil::dirs_equal(cfg.corpus_dir(), lib_cfg.corpus_dir()));

    // config with an unknown key is a usage error
    {
        nlohmann::json j = cfg.to_json();
        j["corpus"]["typo_key"] = 1;
        std::ofstream out(dir.path / "bad.json");
        out << j.dump(2);
    }
    CHECK(run("gen-corpus --config " + (dir.path / "bad.json").string()) == 2);
}
