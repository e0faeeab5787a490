#include "emosde/acoustic.hpp"

#include <cmath>
#include <stdexcept>

#include "emosde/parallel.hpp"

namespace emosde {

using json = nlohmann::json;

json AcousticArch::to_json() const {
    return json{{"vocab_size", vocab_size},
                {"dim", dim},
                {"token_embed", token_embed},
                {"encoder_hidden", encoder_hidden},
                {"score_hidden", score_hidden},
                {"score_conv_layers", score_conv_layers},
                {"score_kernel", score_kernel},
                {"time_embed", time_embed}};
}

AcousticArch AcousticArch::from_json(const json& j) {
    AcousticArch a;
    a.vocab_size = j.at("vocab_size").get<int>();
    a.dim = j.at("dim").get<int>();
    a.token_embed = j.at("token_embed").get<int>();
    a.encoder_hidden = j.at("encoder_hidden").get<int>();
    a.score_hidden = j.at("score_hidden").get<int>();
    a.score_conv_layers = j.at("score_conv_layers").get<int>();
    a.score_kernel = j.at("score_kernel").get<int>();
    a.time_embed = j.at("time_embed").get<int>();
    return a;
}

void TrainParams::validate() const {
    if (steps < 1) throw std::domain_error("training: steps must be >= 1");
    if (batch_size < 1) throw std::domain_error("training: batch_size must be >= 1");
    if (!(lr >= 0.0)) throw std::domain_error("training: bad learning rate");
    if (!(ema_decay >= 0.0) || !(ema_decay <= 1.0))
        throw std::domain_error("training: ema_decay outside [0, 1]");
    if (!(t_min > 0.0) || !(t_min < 1.0)) throw std::domain_error("training: t_min outside (0, 1)");
}

double duration_loss(const std::vector<double>& pred_log_dur, const std::vector<int>& true_dur) {
    if (pred_log_dur.size() != true_dur.size() || true_dur.empty())
        throw std::invalid_argument("duration loss: length mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < true_dur.size(); ++i) {
        if (true_dur[i] < 1) throw std::domain_error("duration loss: durations must be >= 1");
        const double d = pred_log_dur[i] - std::log(static_cast<double>(true_dur[i]));
        acc += d * d;
    }
    return acc / static_cast<double>(true_dur.size());
}

namespace {

struct UttLosses {
    double dur = 0.0, diff = 0.0, prior = 0.0;
    double total() const { return dur + diff + prior; }
};

// Forward/backward for one utterance; gradients are accumulated into
// grads_out. x_t is built in-graph from the predicted mu, so the diffusion
// loss trains the encoder both through the score input and through the
// forward-marginal blend.
UttLosses acoustic_utt_backward(const AcousticModel& model, const Utterance& u,
                                const NoiseSchedule& sched, double t_min, Rng& rng,
                                ParamSet& grads_out) {
    Graph g;
    BoundParams<float> p(g, model.params, /*requires_grad=*/true);
    auto feats = model.build_token_feats(g, p, u.tokens);
    auto mu_tokens = model.build_mu_tokens(g, p, feats);
    auto log_dur = model.build_log_dur(g, p, feats);
    auto mu_frames = g.repeat_rows(mu_tokens, u.durations);
    auto x0 = g.constant(u.frames);

    auto dur_l = build_duration_loss(g, log_dur, u.durations);
    auto prior_l = build_prior_loss(g, mu_frames, x0);

    const double t = t_min + (1.0 - t_min) * rng.uniform();
    const MarginalParams mp = sched.marginal_params(t);
    const double sd = std::sqrt(mp.variance);
    Tensor eps = Tensor::zeros(u.frames.shape);
    for (auto& e : eps.data) e = static_cast<float>(rng.normal());

    // x_t = a*x0 + (1-a)*mu_hat + sd*eps; the x0 and noise parts fold into one
    // constant, the mu part stays differentiable.
    Tensor const_part = Tensor::zeros(u.frames.shape);
    Tensor target = Tensor::zeros(u.frames.shape);
    for (size_t i = 0; i < eps.data.size(); ++i) {
        const double e = static_cast<double>(eps.data[i]);
        const_part.data[i] = static_cast<float>(
            mp.mean_coeff_x0 * static_cast<double>(u.frames.data[i]) + sd * e);
        target.data[i] = static_cast<float>(-e / sd);
    }
    auto x_t = g.add(g.scale(mu_frames, mp.mean_coeff_mu), g.constant(const_part));

    // Score-target identity: lambda*target + (x_t - rho) must vanish.
    {
        const Tensor& xt_val = g.val(x_t);
        const Tensor& mu_val = g.val(mu_frames);
        double worst = 0.0;
        for (size_t i = 0; i < xt_val.data.size(); ++i) {
            const double rho = mp.mean_coeff_x0 * static_cast<double>(u.frames.data[i]) +
                               mp.mean_coeff_mu * static_cast<double>(mu_val.data[i]);
            worst = std::max(worst, std::abs(mp.variance * static_cast<double>(target.data[i]) +
                                             (static_cast<double>(xt_val.data[i]) - rho)));
        }
        if (worst > 1e-3)
            throw std::runtime_error("acoustic: score-target identity violated in training loop");
    }

    auto score = model.build_score(g, p, x_t, mu_frames, t, sched);
    auto diff_l = build_diffusion_loss(g, score, target, mp.variance);

    auto total = g.add(g.add(dur_l, diff_l), prior_l);
    UttLosses out;
    out.dur = static_cast<double>(g.val(dur_l).data[0]);
    out.diff = static_cast<double>(g.val(diff_l).data[0]);
    out.prior = static_cast<double>(g.val(prior_l).data[0]);
    if (!std::isfinite(out.total()))
        throw std::runtime_error("acoustic: non-finite loss, training diverged");
    g.backward(total);
    p.add_grads_to(grads_out);
    return out;
}

}  // namespace

AcousticTrainResult train_acoustic(const Corpus& corpus, const NoiseSchedule& sched,
                                   const AcousticArch& arch, const TrainParams& tp, uint64_t seed,
                                   const std::string& config_hash,
                                   const AcousticCheckpointBundle* resume_from, int threads) {
    tp.validate();
    if (corpus.utterances.empty() || corpus.manifest.train_ids.empty())
        throw std::invalid_argument("acoustic: empty corpus");
    if (corpus.manifest.dim != arch.dim || corpus.manifest.vocab_size != arch.vocab_size)
        throw std::invalid_argument("acoustic: arch does not match corpus dims");

    AcousticModel model;
    Adam adam(tp.lr, tp.adam_beta1, tp.adam_beta2, tp.adam_eps);
    Ema ema;
    ema.decay = tp.ema_decay;
    int64_t start_step = 0;
    if (resume_from) {
        model.arch = resume_from->arch;
        model.params = resume_from->live;
        ema.shadow = resume_from->ema;
        adam.restore(resume_from->adam_m, resume_from->adam_v, resume_from->train_step);
        start_step = resume_from->train_step;
        if (start_step >= tp.steps)
            throw std::invalid_argument("acoustic: checkpoint is already at or past the target step");
    } else {
        Rng init_rng = Rng::stream(seed, "acoustic-init");
        model = AcousticModel::init(arch, init_rng);
        ema.init_from(model.params);
    }

    const std::vector<int>& train_ids = corpus.manifest.train_ids;
    AcousticTrainResult result;

    std::vector<ParamSet> local_grads(static_cast<size_t>(tp.batch_size));
    std::vector<UttLosses> local_losses(static_cast<size_t>(tp.batch_size));

    for (int64_t step = start_step; step < tp.steps; ++step) {
        Rng batch_rng = Rng::stream(seed, "acoustic-batch", static_cast<uint64_t>(step));
        std::vector<int> batch(static_cast<size_t>(tp.batch_size));
        for (auto& id : batch)
            id = train_ids[batch_rng.below(train_ids.size())];

        parallel_for_jobs(tp.batch_size, threads, [&](int j) {
            local_grads[static_cast<size_t>(j)] = model.params.zeros_like();
            Rng utt_rng = Rng::stream(seed, "acoustic-utt",
                                      static_cast<uint64_t>(step) * static_cast<uint64_t>(tp.batch_size) +
                                          static_cast<uint64_t>(j));
            local_losses[static_cast<size_t>(j)] =
                acoustic_utt_backward(model, corpus.at(batch[static_cast<size_t>(j)]), sched,
                                      tp.t_min, utt_rng, local_grads[static_cast<size_t>(j)]);
        });

        ParamSet grads = model.params.zeros_like();
        UttLosses mean_losses;
        for (int j = 0; j < tp.batch_size; ++j) {
            axpy_params(grads, local_grads[static_cast<size_t>(j)], 1.0 / tp.batch_size);
            mean_losses.dur += local_losses[static_cast<size_t>(j)].dur / tp.batch_size;
            mean_losses.diff += local_losses[static_cast<size_t>(j)].diff / tp.batch_size;
            mean_losses.prior += local_losses[static_cast<size_t>(j)].prior / tp.batch_size;
        }
        adam.step(model.params, grads);
        ema.update(model.params);

        if (step % tp.log_every == 0 || step + 1 == tp.steps) {
            TrainLogRow row;
            row.step = step;
            row.dur_loss = mean_losses.dur;
            row.diff_loss = mean_losses.diff;
            row.prior_loss = mean_losses.prior;
            row.total = mean_losses.total();
            result.log.push_back(row);
        }
    }

    result.bundle.arch = model.arch;
    result.bundle.schedule = sched;
    result.bundle.train_step = tp.steps;
    result.bundle.config_hash = config_hash;
    result.bundle.live = std::move(model.params);
    result.bundle.ema = ema.shadow;
    result.bundle.adam_m = adam.moment1();
    result.bundle.adam_v = adam.moment2();
    return result;
}

Checkpoint pack_acoustic(const AcousticCheckpointBundle& b) {
    Checkpoint ckpt;
    ckpt.kind = "acoustic";
    ckpt.meta = json{{"arch", b.arch.to_json()},
                     {"schedule", {{"beta0", b.schedule.beta0()}, {"beta1", b.schedule.beta1()}}},
                     {"train_step", b.train_step},
                     {"config_hash", b.config_hash}};
    for (const auto& [name, t] : b.live.tensors) ckpt.tensors.emplace("param/" + name, t);
    for (const auto& [name, t] : b.ema.tensors) ckpt.tensors.emplace("ema/" + name, t);
    for (const auto& [name, t] : b.adam_m.tensors) ckpt.tensors.emplace("adam_m/" + name, t);
    for (const auto& [name, t] : b.adam_v.tensors) ckpt.tensors.emplace("adam_v/" + name, t);
    return ckpt;
}

AcousticCheckpointBundle unpack_acoustic(const Checkpoint& ckpt) {
    if (ckpt.kind != "acoustic") throw std::runtime_error("checkpoint: expected an acoustic model");
    AcousticCheckpointBundle b;
    b.arch = AcousticArch::from_json(ckpt.meta.at("arch"));
    b.schedule = NoiseSchedule(ckpt.meta.at("schedule").at("beta0").get<double>(),
                               ckpt.meta.at("schedule").at("beta1").get<double>());
    b.train_step = ckpt.meta.at("train_step").get<int64_t>();
    b.config_hash = ckpt.meta.at("config_hash").get<std::string>();
    for (const auto& [name, t] : ckpt.tensors) {
        if (name.rfind("param/", 0) == 0) b.live.add(name.substr(6), t);
        else if (name.rfind("ema/", 0) == 0) b.ema.add(name.substr(4), t);
        else if (name.rfind("adam_m/", 0) == 0) b.adam_m.add(name.substr(7), t);
        else if (name.rfind("adam_v/", 0) == 0) b.adam_v.add(name.substr(7), t);
        else throw std::runtime_error("checkpoint: unexpected tensor '" + name + "'");
    }
    return b;
}

}  // namespace emosde
