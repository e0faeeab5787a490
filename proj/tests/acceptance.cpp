// Acceptance suite: runs every top-level criterion at its stated tolerance and
// prints one pass/fail line per criterion, followed by supplementary checks on
// the trained pipeline. Exit code 0 iff everything passed.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "emosde/checkpoint.hpp"
#include "emosde/gmm_oracle.hpp"
#include "emosde/guidance.hpp"
#include "emosde/parallel.hpp"
#include "emosde/runconfig.hpp"
#include "emosde/workbench.hpp"

using namespace emosde;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

int g_failures = 0;

void report(const std::string& label, const Outcome& o) {
    std::printf("[%s] %s%s%s\n", o.pass ? "PASS" : "FAIL", label.c_str(),
                o.detail.empty() ? "" : ": ", o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++g_failures;
}

double elapsed_s(const std::chrono::steady_clock::time_point& start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return std::string(buf);
}

// ---- criterion 1: closed-form marginal validation ----

Outcome criterion_forward_marginals(const RunConfig& cfg) {
    const auto start = std::chrono::steady_clock::now();
    Rng rng = Rng::stream(cfg.seed, "acceptance-forward");
    const int dim = 8;
    std::vector<double> x0(dim), mu(dim);
    for (auto& v : x0) v = 1.5 * rng.normal();
    for (auto& v : mu) v = 1.5 * rng.normal();
    const auto rows = forward_moments(x0, mu, cfg.schedule(), 1000, 10000,
                                      {0.25, 0.5, 0.75, 1.0}, cfg.seed, cfg.effective_threads());
    Outcome o;
    double worst_mean_z = 0.0, worst_var_rel = 0.0;
    for (const auto& r : rows)
        for (int d = 0; d < dim; ++d) {
            const double z = std::abs(r.empirical_mean[d] - r.exact_mean[d]) / r.mean_se;
            const double vr = std::abs(r.empirical_var[d] - r.exact_var) / r.exact_var;
            worst_mean_z = std::max(worst_mean_z, z);
            worst_var_rel = std::max(worst_var_rel, vr);
        }
    const double secs = elapsed_s(start);
    o.pass = worst_mean_z <= 3.0 && worst_var_rel <= 0.05 && secs < 60.0;
    o.detail = "worst mean z = " + fmt(worst_mean_z) + " (<= 3), worst var rel = " +
               fmt(worst_var_rel) + " (<= 0.05), " + fmt(secs) + " s";
    return o;
}

// ---- criterion 2: Bayes/guidance oracle identity ----

Outcome criterion_oracle_identity(const RunConfig& cfg) {
    Rng setup = Rng::stream(cfg.seed, "acceptance-oracle-setup");
    const int dim = 8, m = 5;
    std::vector<std::vector<double>> base(3, std::vector<double>(dim));
    for (auto& b : base)
        for (auto& v : b) v = setup.normal();
    std::vector<EmotionProfile> profiles(m);
    for (auto& p : profiles) {
        p.offset.resize(dim);
        double norm2 = 0.0;
        for (auto& v : p.offset) {
            v = setup.normal();
            norm2 += v * v;
        }
        for (auto& v : p.offset) v *= 1.5 / std::sqrt(norm2);
        p.noise_std = 0.3;
    }
    const GmmOracle oracle(base, profiles, std::vector<double>(m, 1.0 / m), cfg.schedule());
    const std::vector<int> ftoks = {0, 1, 2, 1};

    Rng rng = Rng::stream(cfg.seed, "acceptance-oracle");
    double worst = 0.0;
    for (int rep = 0; rep < 1000; ++rep) {
        const double t = 0.005 + 0.99 * rng.uniform();
        DTensor x = DTensor::zeros({4, dim});
        DTensor mup = DTensor::zeros({4, dim});
        for (auto& v : x.data) v = 2.0 * rng.normal();
        for (auto& v : mup.data) v = rng.normal();
        const int e = rep % m;
        const DTensor uncond = oracle.score(x, mup, ftoks, t, std::nullopt);
        const DTensor guide = oracle.posterior_log_grad(x, mup, ftoks, t, e);
        const DTensor cond = oracle.score(x, mup, ftoks, t, e);
        double num = 0.0, den = 0.0;
        for (size_t i = 0; i < cond.data.size(); ++i) {
            num = std::max(num, std::abs(uncond.data[i] + guide.data[i] - cond.data[i]));
            den = std::max(den, std::abs(cond.data[i]));
        }
        worst = std::max(worst, num / (den + 1e-12));
    }
    Outcome o;
    o.pass = worst < 1e-8;
    o.detail = "worst relative error = " + fmt(worst) + " (< 1e-8, 1000 points)";
    return o;
}

// ---- criterion 3: weighted-sum vs cross-entropy gradient equivalence ----

Outcome criterion_ce_equivalence(const RunConfig& cfg) {
    Rng init = Rng::stream(cfg.seed, "acceptance-ce-init");
    ClassifierModel cls = ClassifierModel::init(cfg.classifier_arch, init);
    Rng rng = Rng::stream(cfg.seed, "acceptance-ce");
    double worst = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        const int frames = rng.uniform_int(4, 24);
        Tensor x = Tensor::zeros({frames, cfg.classifier_arch.dim});
        Tensor mu = Tensor::zeros({frames, cfg.classifier_arch.dim});
        for (auto& v : x.data) v = static_cast<float>(1.5 * rng.normal());
        for (auto& v : mu.data) v = static_cast<float>(rng.normal());
        std::vector<double> raw(static_cast<size_t>(cfg.classifier_arch.num_emotions));
        for (auto& w : raw) w = rng.uniform() + 1e-3;
        const SoftLabel d = SoftLabel::mixture(raw);
        const double t = 0.002 + 0.996 * rng.uniform();
        const Tensor ce_form = soft_label_grad(cls, x, mu, t, d);
        const Tensor sum_form = soft_label_grad_explicit(cls, x, mu, t, d);
        worst = std::max(worst, max_abs_diff(ce_form, sum_form));
    }
    Outcome o;
    o.pass = worst < 1e-6;
    o.detail = "worst max-abs difference = " + fmt(worst) + " (< 1e-6, 100 inputs)";
    return o;
}

// ---- criterion 4: bit-identical reduction to one-hot guidance ----

Outcome criterion_reduction(const RunConfig& cfg) {
    Rng ar = Rng::stream(cfg.seed, "acceptance-red-am");
    AcousticModel am = AcousticModel::init(cfg.acoustic_arch, ar);
    for (auto& v : am.params.at("score.out_w").data) v = static_cast<float>(0.2 * ar.normal());
    Rng cr = Rng::stream(cfg.seed, "acceptance-red-cm");
    ClassifierModel cm = ClassifierModel::init(cfg.classifier_arch, cr);
    const NoiseSchedule sched = cfg.schedule();
    const std::vector<int> tokens = {1, 5, 2, 9, 0, 3};
    const int m = cfg.classifier_arch.num_emotions;

    int mismatches = 0;
    for (uint64_t s = 0; s < 10; ++s) {
        GuidanceConfig gc;
        gc.gamma = cfg.guidance.gamma;
        gc.solver.n_steps = cfg.guidance.n_steps;
        gc.solver.seed = Rng::stream(cfg.seed, "acceptance-red-seed", s).next_u64();
        const int target = 1 + static_cast<int>(s) % (m - 1);

        std::vector<Tensor> soft1, hard1, soft0, hard0;
        sample(am, cm, tokens, SoftLabel::intensity(EmotionLabel(target, m), 1.0, m), gc, sched,
               &soft1);
        sample_hard(am, cm, tokens, target, gc, sched, &hard1);
        sample(am, cm, tokens, SoftLabel::intensity(EmotionLabel(target, m), 0.0, m), gc, sched,
               &soft0);
        sample_hard(am, cm, tokens, 0, gc, sched, &hard0);
        for (size_t k = 0; k < soft1.size(); ++k) {
            if (soft1[k].data != hard1[k].data) ++mismatches;
            if (soft0[k].data != hard0[k].data) ++mismatches;
        }
    }
    Outcome o;
    o.pass = mismatches == 0;
    o.detail = std::to_string(mismatches) + " mismatching trajectory steps (10 seeds, alpha in {0,1})";
    return o;
}

// ---- criterion 5: finite-difference gradient checks ----

Outcome criterion_gradients(const RunConfig& cfg) {
    Rng rng = Rng::stream(cfg.seed, "acceptance-fd");
    double worst = 0.0;
    const NoiseSchedule sched = cfg.schedule();
    for (int rep = 0; rep < 20; ++rep) {
        // randomized small shapes keep the full-entry sweep fast
        AcousticArch aa;
        aa.vocab_size = rng.uniform_int(4, 8);
        aa.dim = rng.uniform_int(2, 4);
        aa.token_embed = rng.uniform_int(4, 8);
        aa.encoder_hidden = rng.uniform_int(4, 9);
        aa.score_hidden = rng.uniform_int(4, 9);
        aa.score_conv_layers = rng.uniform_int(1, 2);
        aa.time_embed = 2 * rng.uniform_int(2, 4);
        ClassifierArch ca;
        ca.dim = aa.dim;
        ca.num_emotions = rng.uniform_int(2, 5);
        ca.channels = rng.uniform_int(4, 8);
        ca.blocks = rng.uniform_int(1, 3);
        ca.time_embed = 2 * rng.uniform_int(2, 4);
        ca.dropout = 0.0;
        const int frames = rng.uniform_int(3, 7);
        const int n_tokens = rng.uniform_int(1, 3);

        AcousticModelT<double> am = AcousticModelT<double>::init(aa, rng);
        for (auto& v : am.params.at("score.out_w").data) v = 0.3 * rng.normal();
        ClassifierModelT<double> cm = ClassifierModelT<double>::init(ca, rng);

        std::vector<int> tokens(static_cast<size_t>(n_tokens));
        for (auto& t : tokens) t = rng.uniform_int(0, aa.vocab_size - 1);
        std::vector<int> durations(static_cast<size_t>(n_tokens), 1);
        durations[0] = frames - n_tokens + 1;
        DTensor x0 = DTensor::zeros({frames, aa.dim});
        for (auto& v : x0.data) v = rng.normal();
        const double t_diff = 0.05 + 0.9 * rng.uniform();
        Rng fwd = Rng::stream(cfg.seed, "acceptance-fd-fwd", static_cast<uint64_t>(rep));

        // acoustic parameter gradients through the full training loss
        {
            DTensor eps = DTensor::zeros(x0.shape);
            for (auto& v : eps.data) v = fwd.normal();
            const MarginalParams mp = sched.marginal_params(t_diff);
            auto eval = [&](ParamSetT<double>& ps, ParamSetT<double>* grads) {
                GraphT<double> g;
                BoundParams<double> bp(g, ps, grads != nullptr);
                auto feats = am.build_token_feats(g, bp, tokens);
                auto mu_frames = g.repeat_rows(am.build_mu_tokens(g, bp, feats), durations);
                auto dur_l = build_duration_loss(g, am.build_log_dur(g, bp, feats), durations);
                auto prior_l = build_prior_loss(g, mu_frames, g.constant(x0));
                DTensor const_part = DTensor::zeros(x0.shape);
                DTensor target = DTensor::zeros(x0.shape);
                const double sd = std::sqrt(mp.variance);
                for (size_t i = 0; i < x0.data.size(); ++i) {
                    const_part.data[i] = mp.mean_coeff_x0 * x0.data[i] + sd * eps.data[i];
                    target.data[i] = -eps.data[i] / sd;
                }
                auto x_t = g.add(g.scale(mu_frames, mp.mean_coeff_mu), g.constant(const_part));
                auto score = am.build_score(g, bp, x_t, mu_frames, t_diff, sched);
                auto diff_l = build_diffusion_loss(g, score, target, mp.variance);
                auto loss = g.add(g.add(dur_l, diff_l), prior_l);
                const double v = g.val(loss).data[0];
                if (grads) {
                    g.backward(loss);
                    bp.add_grads_to(*grads);
                }
                return v;
            };
            ParamSetT<double> grads = am.params.zeros_like();
            eval(am.params, &grads);
            for (auto& [name, tensor] : am.params.tensors) {
                for (size_t i = 0; i < tensor.data.size(); ++i) {
                    const double saved = tensor.data[i];
                    const double h = 1e-3;
                    tensor.data[i] = saved + h;
                    const double up = eval(am.params, nullptr);
                    tensor.data[i] = saved - h;
                    const double down = eval(am.params, nullptr);
                    tensor.data[i] = saved;
                    const double fd = (up - down) / (2.0 * h);
                    const double a = grads.at(name).data[i];
                    worst = std::max(worst, std::abs(a - fd) / (std::abs(a) + 1e-8));
                }
            }
        }

        // classifier parameter gradients (cross-entropy) and input gradients
        {
            DTensor x = DTensor::zeros({frames, ca.dim});
            DTensor mu = DTensor::zeros({frames, ca.dim});
            for (auto& v : x.data) v = rng.normal();
            for (auto& v : mu.data) v = rng.normal();
            const int label = rng.uniform_int(0, ca.num_emotions - 1);
            auto eval = [&](ParamSetT<double>& ps, ParamSetT<double>* grads) {
                GraphT<double> g;
                BoundParams<double> bp(g, ps, grads != nullptr);
                auto lp = cm.build_log_probs(g, bp, g.constant(x), g.constant(mu), t_diff, false,
                                             nullptr, nullptr);
                auto loss = g.scale(g.pick(lp, label), -1.0);
                const double v = g.val(loss).data[0];
                if (grads) {
                    g.backward(loss);
                    bp.add_grads_to(*grads);
                }
                return v;
            };
            ParamSetT<double> grads = cm.params.zeros_like();
            eval(cm.params, &grads);
            for (auto& [name, tensor] : cm.params.tensors) {
                for (size_t i = 0; i < tensor.data.size(); ++i) {
                    const double saved = tensor.data[i];
                    const double h = 1e-3;
                    tensor.data[i] = saved + h;
                    const double up = eval(cm.params, nullptr);
                    tensor.data[i] = saved - h;
                    const double down = eval(cm.params, nullptr);
                    tensor.data[i] = saved;
                    const double fd = (up - down) / (2.0 * h);
                    const double a = grads.at(name).data[i];
                    worst = std::max(worst, std::abs(a - fd) / (std::abs(a) + 1e-8));
                }
            }

            const DTensor input_grad = cm.class_log_prob_grad(x, mu, t_diff, label);
            for (size_t i = 0; i < x.data.size(); ++i) {
                const double saved = x.data[i];
                const double h = 1e-4;
                x.data[i] = saved + h;
                const double up = cm.classify(x, mu, t_diff).log_probs[static_cast<size_t>(label)];
                x.data[i] = saved - h;
                const double down = cm.classify(x, mu, t_diff).log_probs[static_cast<size_t>(label)];
                x.data[i] = saved;
                const double fd = (up - down) / (2.0 * h);
                const double a = input_grad.data[i];
                worst = std::max(worst, std::abs(a - fd) / (std::abs(a) + 1e-8));
            }
        }
    }
    Outcome o;
    o.pass = worst < 1e-3;
    o.detail = "worst relative error = " + fmt(worst) + " (< 1e-3, 20 repetitions)";
    return o;
}

// ---- criterion 7: unconditionality ----

Outcome criterion_unconditional(const RunConfig& cfg, const fs::path& work) {
    CorpusParams cp = cfg.corpus;
    cp.num_utterances = 60;
    Corpus corpus = generate_corpus(cp, cfg.seed + 17);
    corpus.manifest.config_hash = "acceptance-uncond";
    TrainParams tp = cfg.acoustic_train;
    tp.steps = 300;
    tp.batch_size = 4;

    const auto r1 = train_acoustic(corpus, cfg.schedule(), cfg.acoustic_arch, tp, cfg.seed,
                                   "acceptance-uncond", nullptr, cfg.effective_threads());
    Corpus permuted = corpus;
    for (auto& u : permuted.utterances) u.emotion_id = (u.emotion_id + 2) % cp.num_emotions;
    const auto r2 = train_acoustic(permuted, cfg.schedule(), cfg.acoustic_arch, tp, cfg.seed,
                                   "acceptance-uncond", nullptr, cfg.effective_threads());
    save_checkpoint(work / "uncond_a.ckpt", pack_acoustic(r1.bundle));
    save_checkpoint(work / "uncond_b.ckpt", pack_acoustic(r2.bundle));

    std::ifstream fa(work / "uncond_a.ckpt", std::ios::binary);
    std::ifstream fb(work / "uncond_b.ckpt", std::ios::binary);
    std::stringstream sa, sb;
    sa << fa.rdbuf();
    sb << fb.rdbuf();
    Outcome o;
    o.pass = sa.str() == sb.str() && !sa.str().empty();
    o.detail = o.pass ? "checkpoints byte-identical under permuted emotion labels"
                      : "checkpoints differ under permuted labels";
    return o;
}

// ---- criterion 6 helper: curve checks on the oracle judge ----

struct CurveCheck {
    bool pass = true;
    std::string detail;
};

CurveCheck check_curves(const std::vector<IntensityCell>& cells, const RunConfig& cfg) {
    CurveCheck out;
    const int m = cfg.corpus.num_emotions;
    const int k = cfg.guidance.eval_samples_per_cell;
    std::string notes;
    // both judges must rank alpha = 1 at or above alpha = 0 for every emotion
    for (int e = 1; e < m; ++e)
        for (const std::string judge : {"classifier", "oracle"}) {
            double first = -1.0, last = -1.0;
            for (const auto& c : cells)
                if (c.emotion == e && c.judge == judge) {
                    if (first < 0.0) first = c.target_prob_mean;
                    last = c.target_prob_mean;
                }
            if (last < first) {
                out.pass = false;
                notes += " e" + std::to_string(e) + "/" + judge + ": alpha=1 mean below alpha=0;";
            }
        }
    for (int e = 1; e < m; ++e) {
        std::vector<const IntensityCell*> curve;
        for (const auto& c : cells)
            if (c.emotion == e && c.judge == "oracle") curve.push_back(&c);
        // cells arrive in alpha order per emotion
        const double lo = curve.front()->target_prob_mean;
        const double hi = curve.back()->target_prob_mean;
        if (hi - lo < 0.5) {
            out.pass = false;
            notes += " e" + std::to_string(e) + ": range " + fmt(hi - lo) + " < 0.5;";
        }
        if (curve.front()->neutral_prob_mean < 0.7) {
            out.pass = false;
            notes += " e" + std::to_string(e) + ": alpha=0 neutral " +
                     fmt(curve.front()->neutral_prob_mean) + " < 0.7;";
        }
        int inversions = 0;
        for (size_t i = 0; i + 1 < curve.size(); ++i) {
            const double drop = curve[i]->target_prob_mean - curve[i + 1]->target_prob_mean;
            if (drop <= 0.0) continue;
            ++inversions;
            const double se_i = curve[i]->target_prob_std / std::sqrt(static_cast<double>(k));
            const double se_j = curve[i + 1]->target_prob_std / std::sqrt(static_cast<double>(k));
            const double allowed = 0.5 * std::max(se_i, se_j);
            if (drop > allowed) {
                out.pass = false;
                notes += " e" + std::to_string(e) + ": inversion " + fmt(drop) + " > " +
                         fmt(allowed) + " at alpha " + fmt(curve[i]->alpha) + ";";
            }
        }
        if (inversions > 1) {
            out.pass = false;
            notes += " e" + std::to_string(e) + ": " + std::to_string(inversions) + " inversions;";
        }
        notes += " e" + std::to_string(e) + " range " + fmt(hi - lo) + ";";
    }
    out.detail = notes;
    return out;
}

std::vector<std::vector<std::string>> read_csv_rows(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        rows.push_back(std::move(fields));
    }
    return rows;
}

}  // namespace

int main() {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path work = fs::current_path() / "acceptance_work";
    fs::remove_all(work);
    fs::create_directories(work);

    RunConfig cfg = RunConfig::defaults();
    cfg.run_dir = (work / "run").string();
    cfg.threads = 0;  // use all cores

    report("1 forward-marginal validation", criterion_forward_marginals(cfg));
    report("2 Bayes/guidance oracle identity", criterion_oracle_identity(cfg));
    report("3 weighted-sum vs cross-entropy gradient", criterion_ce_equivalence(cfg));
    report("4 soft-label reduction to one-hot guidance", criterion_reduction(cfg));
    report("5 finite-difference gradient checks", criterion_gradients(cfg));
    report("7 unconditional acoustic training", criterion_unconditional(cfg, work));

    // ---- trained pipeline for criteria 6, 8, 9 ----
    std::printf("-- training both stages on the default corpus --\n");
    std::fflush(stdout);
    const auto train_start = std::chrono::steady_clock::now();
    cmd_gen_corpus(cfg);
    cmd_train(cfg, TrainStage::acoustic);
    std::printf("   acoustic stage done (%.0f s)\n", elapsed_s(train_start));
    std::fflush(stdout);
    cmd_train(cfg, TrainStage::classifier);
    const double train_secs = elapsed_s(train_start);
    std::printf("-- training done in %.0f s --\n", train_secs);
    std::fflush(stdout);
    {
        Outcome o;
        o.pass = train_secs < 1800.0;
        o.detail = fmt(train_secs) + " s (< 1800 s)";
        report("6a training budget", o);
    }

    const auto eval_start = std::chrono::steady_clock::now();
    const std::vector<IntensityCell> cells = eval_intensity(cfg);
    cmd_eval_intensity(cfg, work / "eval_intensity.csv");
    std::printf("-- intensity evaluation done in %.0f s --\n", elapsed_s(eval_start));
    std::fflush(stdout);
    {
        const CurveCheck cc = check_curves(cells, cfg);
        Outcome o;
        o.pass = cc.pass;
        o.detail = cc.detail;
        report("6 intensity curves (oracle judge)", o);
    }

    {
        const Corpus corpus = load_corpus(cfg.corpus_dir());
        const auto acoustic = unpack_acoustic(load_checkpoint(cfg.acoustic_ckpt_path()));
        const auto classifier = unpack_classifier(load_checkpoint(cfg.classifier_ckpt_path()));
        const auto rows = evaluate_classifier(corpus, acoustic, classifier.inference_model(),
                                              {0.0}, cfg.seed, cfg.effective_threads());
        Outcome o;
        o.pass = rows[0].accuracy >= 0.90;
        o.detail = "clean validation accuracy = " + fmt(rows[0].accuracy) + " (>= 0.9)";
        report("8 classifier sanity", o);
    }

    {
        cmd_sample(cfg, 1, 1.0, 50, work / "diversity");
        std::vector<Utterance> samples;
        for (int i = 0; i < 50; ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "sample_%04d.bin", i);
            samples.push_back(load_utterance_record(work / "diversity" / name, cfg.corpus.dim));
        }
        const int frames = samples[0].n_frames();
        const int dim = cfg.corpus.dim;
        double min_std = 1e9;
        for (int d = 0; d < dim; ++d) {
            // per-dimension spread around the per-frame mean, pooled over frames
            double acc = 0.0;
            for (int f = 0; f < frames; ++f) {
                double mean = 0.0;
                for (const auto& s : samples) mean += s.frames.at(f, d) / 50.0;
                for (const auto& s : samples)
                    acc += (s.frames.at(f, d) - mean) * (s.frames.at(f, d) - mean);
            }
            min_std = std::min(min_std, std::sqrt(acc / (frames * 49.0)));
        }
        const double floor = 0.1 * cfg.corpus.noise_std;
        Outcome o;
        o.pass = min_std > floor;
        o.detail = "min per-dimension std = " + fmt(min_std) + " (> " + fmt(floor) + ")";
        report("9 sample diversity at alpha = 1", o);
    }

    // ---- supplementary checks on the trained artifacts ----

    {
        const auto rows = read_csv_rows(fs::path(cfg.run_dir) / "train_acoustic.csv");
        const double first = std::stod(rows[1][4]);
        const double last = std::stod(rows.back()[4]);
        Outcome o;
        o.pass = last < 0.5 * first;
        o.detail = "total loss " + fmt(first) + " -> " + fmt(last);
        report("extra: acoustic loss halves", o);
    }
    {
        const auto rows = read_csv_rows(fs::path(cfg.run_dir) / "train_classifier.csv");
        const double first = std::stod(rows[1][1]);
        const double last = std::stod(rows.back()[1]);
        Outcome o;
        o.pass = last < 0.5 * first;
        o.detail = "ce " + fmt(first) + " -> " + fmt(last);
        report("extra: classifier loss halves", o);
    }
    {
        const auto rows = read_csv_rows(fs::path(cfg.run_dir) / "classifier_eval.csv");
        // header, then t ascending with t=0 first and t=0.9 last
        const double ce0 = std::stod(rows[1][1]);
        const double ce9 = std::stod(rows.back()[1]);
        Outcome o;
        o.pass = ce0 < ce9;
        o.detail = "ce(0) = " + fmt(ce0) + " < ce(0.9) = " + fmt(ce9);
        report("extra: clean inputs easier than heavy noise", o);
    }
    {
        // trained score field vs the analytic mixture score
        const Corpus corpus = load_corpus(cfg.corpus_dir());
        const auto acoustic = unpack_acoustic(load_checkpoint(cfg.acoustic_ckpt_path()));
        const AcousticModel am = acoustic.inference_model();
        const GmmOracle oracle = GmmOracle::from_manifest(corpus.manifest, cfg.schedule());
        Rng rng = Rng::stream(cfg.seed, "acceptance-cos");
        double cos_acc = 0.0;
        int n = 0;
        for (int rep = 0; rep < 60; ++rep) {
            const auto& u = corpus.at(
                corpus.manifest.val_ids[rng.below(corpus.manifest.val_ids.size())]);
            const Tensor mu = am.predict_mu(u.tokens, u.durations);
            const double t = 0.05 + 0.9 * rng.uniform();
            const auto fs2 = sample_forward(u.frames, mu, t, cfg.schedule(), rng);
            const Tensor learned = am.score_eval(fs2.x_t, mu, t, cfg.schedule());
            const DTensor exact = oracle.score(fs2.x_t.cast<double>(), mu.cast<double>(),
                                               u.frame_tokens(), t, std::nullopt);
            double dot = 0.0, nl = 0.0, ne = 0.0;
            for (size_t i = 0; i < exact.data.size(); ++i) {
                dot += learned.data[i] * exact.data[i];
                nl += static_cast<double>(learned.data[i]) * learned.data[i];
                ne += exact.data[i] * exact.data[i];
            }
            cos_acc += dot / std::sqrt(nl * ne + 1e-30);
            ++n;
        }
        Outcome o;
        const double mean_cos = cos_acc / n;
        o.pass = mean_cos > 0.9;
        o.detail = "mean cosine similarity = " + fmt(mean_cos) + " (> 0.9)";
        report("extra: trained score tracks the oracle", o);
    }
    {
        // alpha = 1 cells under the oracle judge stay above the pilot floor
        double worst = 1.0;
        for (const auto& c : cells)
            if (c.judge == "oracle" && c.alpha == 1.0) worst = std::min(worst, c.target_prob_mean);
        Outcome o;
        o.pass = worst > 0.8;
        o.detail = "min alpha=1 oracle posterior = " + fmt(worst) + " (> 0.8)";
        report("extra: full-intensity samples judged on-target", o);
    }

    std::printf("%s: %d failure(s), total %.0f s\n", g_failures == 0 ? "ALL PASS" : "FAILED",
                g_failures, elapsed_s(t0));
    return g_failures == 0 ? 0 : 1;
}
