#include "emosde/workbench.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "emosde/checkpoint.hpp"
#include "emosde/corpus.hpp"
#include "emosde/gmm_oracle.hpp"
#include "emosde/guidance.hpp"
#include "emosde/parallel.hpp"

namespace emosde {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::string(buf);
}

void write_csv(const fs::path& path, const std::string& header,
               const std::vector<std::string>& rows) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("csv: cannot open '" + path.string() + "' for writing");
    out << header << "\n";
    for (const auto& row : rows) out << row << "\n";
    if (!out) throw std::runtime_error("csv: write failed for '" + path.string() + "'");
}

namespace {

void require_hash(const std::string& artifact, const std::string& artifact_hash,
                  const std::string& config_hash, bool force) {
    if (artifact_hash == config_hash) return;
    const std::string msg = artifact + " was produced by config " + artifact_hash +
                            " but the current config hashes to " + config_hash;
    if (force) {
        std::fprintf(stderr, "warning: %s (continuing, --force)\n", msg.c_str());
        return;
    }
    throw std::runtime_error(msg + " (pass --force to override)");
}

Corpus load_corpus_checked(const RunConfig& cfg, bool force) {
    Corpus corpus = load_corpus(cfg.corpus_dir());
    require_hash("corpus", corpus.manifest.config_hash, cfg.hash(), force);
    return corpus;
}

AcousticCheckpointBundle load_acoustic_checked(const RunConfig& cfg, bool force) {
    if (!fs::exists(cfg.acoustic_ckpt_path()))
        throw std::runtime_error("missing acoustic checkpoint '" +
                                 cfg.acoustic_ckpt_path().string() + "'; run train --stage acoustic");
    AcousticCheckpointBundle b = unpack_acoustic(load_checkpoint(cfg.acoustic_ckpt_path()));
    require_hash("acoustic checkpoint", b.config_hash, cfg.hash(), force);
    return b;
}

ClassifierCheckpointBundle load_classifier_checked(const RunConfig& cfg, bool force) {
    if (!fs::exists(cfg.classifier_ckpt_path()))
        throw std::runtime_error("missing classifier checkpoint '" +
                                 cfg.classifier_ckpt_path().string() +
                                 "'; run train --stage classifier");
    ClassifierCheckpointBundle b = unpack_classifier(load_checkpoint(cfg.classifier_ckpt_path()));
    require_hash("classifier checkpoint", b.config_hash, cfg.hash(), force);
    return b;
}

// Token sequence for sampling runs, derived from the config seed so an
// invocation is reproducible without extra arguments.
std::vector<int> sample_tokens(const RunConfig& cfg) {
    Rng rng = Rng::stream(cfg.seed, "sample-tokens");
    const int n = rng.uniform_int(cfg.corpus.min_tokens, cfg.corpus.max_tokens);
    std::vector<int> tokens(static_cast<size_t>(n));
    for (auto& t : tokens) t = rng.uniform_int(0, cfg.corpus.vocab_size - 1);
    return tokens;
}

std::vector<int> expand_frame_tokens(const std::vector<int>& tokens,
                                     const std::vector<int>& durations) {
    std::vector<int> out;
    for (size_t i = 0; i < tokens.size(); ++i)
        for (int r = 0; r < durations[i]; ++r) out.push_back(tokens[i]);
    return out;
}

}  // namespace

void cmd_gen_corpus(const RunConfig& cfg) {
    Corpus corpus = generate_corpus(cfg.corpus, cfg.seed);
    corpus.manifest.config_hash = cfg.hash();
    save_corpus(cfg.corpus_dir(), corpus);
}

void cmd_train(const RunConfig& cfg, TrainStage stage, bool resume) {
    if (!fs::exists(cfg.corpus_dir() / "manifest.json"))
        throw std::runtime_error("missing corpus in '" + cfg.corpus_dir().string() +
                                 "'; run gen-corpus first");
    // Extending a run changes the step target and with it the config hash, so
    // resume loads prior artifacts in force mode.
    const Corpus corpus = load_corpus_checked(cfg, /*force=*/resume);
    const int threads = cfg.effective_threads();

    if (stage == TrainStage::acoustic) {
        AcousticCheckpointBundle prev;
        const AcousticCheckpointBundle* resume_from = nullptr;
        if (resume) {
            prev = load_acoustic_checked(cfg, /*force=*/true);
            resume_from = &prev;
        }
        AcousticTrainResult res = train_acoustic(corpus, cfg.schedule(), cfg.acoustic_arch,
                                                 cfg.acoustic_train, cfg.seed, cfg.hash(),
                                                 resume_from, threads);
        save_checkpoint(cfg.acoustic_ckpt_path(), pack_acoustic(res.bundle));
        std::vector<std::string> rows;
        for (const auto& r : res.log) {
            std::ostringstream os;
            os << r.step << ',' << format_double(r.dur_loss) << ',' << format_double(r.diff_loss)
               << ',' << format_double(r.prior_loss) << ',' << format_double(r.total) << ','
               << cfg.hash();
            rows.push_back(os.str());
        }
        write_csv(cfg.log_path("train_acoustic.csv"),
                  "step,dur_loss,diff_loss,prior_loss,total,config_hash", rows);
        return;
    }

    const AcousticCheckpointBundle acoustic = load_acoustic_checked(cfg, /*force=*/false);
    ClassifierTrainResult res = train_classifier(corpus, acoustic, cfg.classifier_arch,
                                                 cfg.classifier_train, cfg.seed, cfg.hash(), threads);
    save_checkpoint(cfg.classifier_ckpt_path(), pack_classifier(res.bundle));
    {
        std::vector<std::string> rows;
        for (const auto& r : res.log) {
            std::ostringstream os;
            os << r.step << ',' << format_double(r.ce_loss) << ',' << cfg.hash();
            rows.push_back(os.str());
        }
        write_csv(cfg.log_path("train_classifier.csv"), "step,ce_loss,config_hash", rows);
    }
    {
        const ClassifierModel model = res.bundle.inference_model();
        const std::vector<double> t_grid = {0.0, 0.1, 0.25, 0.5, 0.75, 0.9};
        const auto eval = evaluate_classifier(corpus, acoustic, model, t_grid, cfg.seed, threads);
        std::vector<std::string> rows;
        for (const auto& r : eval) {
            std::ostringstream os;
            os << format_double(r.t) << ',' << format_double(r.ce) << ','
               << format_double(r.accuracy) << ',' << cfg.hash();
            rows.push_back(os.str());
        }
        write_csv(cfg.log_path("classifier_eval.csv"), "t,ce,accuracy,config_hash", rows);
    }
}

void cmd_sample(const RunConfig& cfg, int emotion, double alpha, int n, const fs::path& out_dir,
                bool force) {
    if (n < 1) throw std::domain_error("sample: n must be >= 1");
    const AcousticCheckpointBundle acoustic = load_acoustic_checked(cfg, force);
    const ClassifierCheckpointBundle classifier = load_classifier_checked(cfg, force);
    const AcousticModel am = acoustic.inference_model();
    const ClassifierModel cm = classifier.inference_model();
    const NoiseSchedule sched = cfg.schedule();
    const SoftLabel d =
        SoftLabel::intensity(EmotionLabel(emotion, cfg.corpus.num_emotions), alpha,
                             cfg.corpus.num_emotions);
    const std::vector<int> tokens = sample_tokens(cfg);

    fs::create_directories(out_dir);
    std::vector<SampleOutput<float>> outputs(static_cast<size_t>(n));
    std::vector<uint64_t> seeds(static_cast<size_t>(n));
    parallel_for_jobs(n, cfg.effective_threads(), [&](int i) {
        GuidanceConfig gc;
        gc.gamma = cfg.guidance.gamma;
        gc.solver.n_steps = cfg.guidance.n_steps;
        gc.solver.seed = Rng::stream(cfg.seed, "sample-stream", static_cast<uint64_t>(i)).next_u64();
        seeds[static_cast<size_t>(i)] = gc.solver.seed;
        outputs[static_cast<size_t>(i)] = sample(am, cm, tokens, d, gc, sched);
    });

    for (int i = 0; i < n; ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "sample_%04d", i);
        const SampleOutput<float>& s = outputs[static_cast<size_t>(i)];
        Utterance u;
        u.tokens = s.tokens;
        u.durations = s.durations;
        u.emotion_id = d.argmax();
        u.frames = s.frames;
        save_utterance_record(out_dir / (std::string(name) + ".bin"), u);
        const json sidecar = {{"soft_label", d.weights},
                              {"emotion", emotion},
                              {"alpha", alpha},
                              {"gamma", cfg.guidance.gamma},
                              {"seed", seeds[static_cast<size_t>(i)]},
                              {"n_steps", cfg.guidance.n_steps},
                              {"config_hash", cfg.hash()}};
        std::ofstream out(out_dir / (std::string(name) + ".json"), std::ios::trunc);
        out << sidecar.dump(2) << "\n";
        if (!out) throw std::runtime_error("sample: sidecar write failed");
    }
}

std::vector<IntensityCell> eval_intensity(const RunConfig& cfg, bool force) {
    const Corpus corpus = load_corpus_checked(cfg, force);
    const AcousticCheckpointBundle acoustic = load_acoustic_checked(cfg, force);
    const ClassifierCheckpointBundle classifier = load_classifier_checked(cfg, force);
    require_hash("classifier/acoustic pairing", classifier.acoustic_config_hash,
                 acoustic.config_hash, force);
    const AcousticModel am = acoustic.inference_model();
    const ClassifierModel cm = classifier.inference_model();
    const NoiseSchedule sched = cfg.schedule();
    const GmmOracle oracle = GmmOracle::from_manifest(corpus.manifest, sched);

    const int m = cfg.corpus.num_emotions;
    const int k = cfg.guidance.eval_samples_per_cell;
    const auto& alphas = cfg.guidance.alpha_grid;
    const int n_cells = (m - 1) * static_cast<int>(alphas.size());
    const std::vector<int>& val_ids = corpus.manifest.val_ids;
    if (val_ids.empty()) throw std::runtime_error("eval: empty validation split");

    struct JobResult {
        double cls_target = 0.0, cls_neutral = 0.0;
        double orc_target = 0.0, orc_neutral = 0.0;
    };
    std::vector<JobResult> results(static_cast<size_t>(n_cells) * static_cast<size_t>(k));

    parallel_for_jobs(n_cells * k, cfg.effective_threads(), [&](int job) {
        const int cell = job / k;
        const int rep = job % k;
        const int emotion = 1 + cell / static_cast<int>(alphas.size());
        const double alpha = alphas[static_cast<size_t>(cell) % alphas.size()];
        const SoftLabel d =
            SoftLabel::intensity(EmotionLabel(emotion, m), alpha, m);
        // Texts cycle through the validation split per repetition.
        const Utterance& text = corpus.at(val_ids[static_cast<size_t>(rep) % val_ids.size()]);

        GuidanceConfig gc;
        gc.gamma = cfg.guidance.gamma;
        gc.solver.n_steps = cfg.guidance.n_steps;
        gc.solver.seed =
            Rng::stream(cfg.seed, "eval-intensity", static_cast<uint64_t>(job)).next_u64();
        const SampleOutput<float> s = sample(am, cm, text.tokens, d, gc, sched);

        const Tensor mu = am.predict_mu(s.tokens, s.durations);
        const ClassifierOutput cls = cm.classify(s.frames, mu, 0.0);
        const std::vector<double> cls_probs = cls.probs();
        const std::vector<double> orc_probs =
            oracle.posterior(s.frames.cast<double>(), mu.cast<double>(),
                             expand_frame_tokens(s.tokens, s.durations), 0.0);

        JobResult& r = results[static_cast<size_t>(job)];
        r.cls_target = cls_probs[static_cast<size_t>(emotion)];
        r.cls_neutral = cls_probs[0];
        r.orc_target = orc_probs[static_cast<size_t>(emotion)];
        r.orc_neutral = orc_probs[0];
    });

    auto mean_std = [](const std::vector<double>& xs) {
        double mean = 0.0;
        for (double x : xs) mean += x / static_cast<double>(xs.size());
        double var = 0.0;
        for (double x : xs) var += (x - mean) * (x - mean);
        var = xs.size() > 1 ? var / static_cast<double>(xs.size() - 1) : 0.0;
        return std::pair<double, double>(mean, std::sqrt(var));
    };

    std::vector<IntensityCell> cells;
    for (int cell = 0; cell < n_cells; ++cell) {
        const int emotion = 1 + cell / static_cast<int>(alphas.size());
        const double alpha = alphas[static_cast<size_t>(cell) % alphas.size()];
        for (const std::string judge : {"classifier", "oracle"}) {
            std::vector<double> target(static_cast<size_t>(k)), neutral(static_cast<size_t>(k));
            for (int rep = 0; rep < k; ++rep) {
                const JobResult& r = results[static_cast<size_t>(cell) * k + rep];
                target[static_cast<size_t>(rep)] = judge == "classifier" ? r.cls_target : r.orc_target;
                neutral[static_cast<size_t>(rep)] = judge == "classifier" ? r.cls_neutral : r.orc_neutral;
            }
            IntensityCell c;
            c.emotion = emotion;
            c.alpha = alpha;
            c.judge = judge;
            std::tie(c.target_prob_mean, c.target_prob_std) = mean_std(target);
            std::tie(c.neutral_prob_mean, c.neutral_prob_std) = mean_std(neutral);
            c.n = k;
            cells.push_back(std::move(c));
        }
    }
    return cells;
}

void cmd_eval_intensity(const RunConfig& cfg, const fs::path& out_csv, bool force) {
    const std::vector<IntensityCell> cells = eval_intensity(cfg, force);
    std::vector<std::string> rows;
    for (const auto& c : cells) {
        std::ostringstream os;
        os << c.emotion << ',' << format_double(c.alpha) << ',' << c.judge << ','
           << format_double(c.target_prob_mean) << ',' << format_double(c.target_prob_std) << ','
           << format_double(c.neutral_prob_mean) << ',' << format_double(c.neutral_prob_std) << ','
           << c.n << ',' << cfg.hash();
        rows.push_back(os.str());
    }
    write_csv(out_csv,
              "emotion,alpha,judge,target_prob_mean,target_prob_std,neutral_prob_mean,"
              "neutral_prob_std,n,config_hash",
              rows);
}

void cmd_eval_forward(const RunConfig& cfg, const fs::path& out_csv) {
    const NoiseSchedule sched = cfg.schedule();
    const int dim = cfg.corpus.dim;
    Rng rng = Rng::stream(cfg.seed, "eval-forward-state");
    std::vector<double> x0(static_cast<size_t>(dim)), mu(static_cast<size_t>(dim));
    for (auto& v : x0) v = 1.5 * rng.normal();
    for (auto& v : mu) v = 1.5 * rng.normal();

    const std::vector<double> times = {0.25, 0.5, 0.75, 1.0};
    const auto rows_data = forward_moments(x0, mu, sched, /*n_steps=*/1000, /*n_paths=*/10000,
                                           times, cfg.seed, cfg.effective_threads());

    std::vector<std::string> rows;
    for (const auto& r : rows_data) {
        for (int d = 0; d < dim; ++d) {
            const size_t di = static_cast<size_t>(d);
            std::ostringstream os;
            os << format_double(r.t) << ',' << d << ',' << format_double(r.empirical_mean[di])
               << ',' << format_double(r.exact_mean[di]) << ',' << format_double(r.mean_se) << ','
               << format_double(r.empirical_var[di]) << ',' << format_double(r.exact_var) << ','
               << cfg.hash();
            rows.push_back(os.str());
        }
    }
    write_csv(out_csv, "t,coord,empirical_mean,exact_mean,mean_se,empirical_var,exact_var,config_hash",
              rows);
}

}  // namespace emosde
