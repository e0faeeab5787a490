#include "emosde/classifier.hpp"

#include "emosde/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace emosde {

using json = nlohmann::json;

json ClassifierArch::to_json() const {
    return json{{"dim", dim},           {"num_emotions", num_emotions},
                {"channels", channels}, {"blocks", blocks},
                {"kernel", kernel},     {"time_embed", time_embed},
                {"dropout", dropout},   {"bn_eps", bn_eps},
                {"bn_momentum", bn_momentum}};
}

ClassifierArch ClassifierArch::from_json(const json& j) {
    ClassifierArch a;
    a.dim = j.at("dim").get<int>();
    a.num_emotions = j.at("num_emotions").get<int>();
    a.channels = j.at("channels").get<int>();
    a.blocks = j.at("blocks").get<int>();
    a.kernel = j.at("kernel").get<int>();
    a.time_embed = j.at("time_embed").get<int>();
    a.dropout = j.at("dropout").get<double>();
    a.bn_eps = j.at("bn_eps").get<double>();
    a.bn_momentum = j.at("bn_momentum").get<double>();
    return a;
}

namespace {

// Precompute the frozen model's aligned means once per utterance; they are
// constants for the whole classifier stage.
std::vector<Tensor> precompute_mu(const Corpus& corpus, const AcousticModel& frozen) {
    std::vector<Tensor> mu(corpus.utterances.size());
    for (size_t i = 0; i < corpus.utterances.size(); ++i) {
        const Utterance& u = corpus.utterances[i];
        mu[i] = frozen.predict_mu(u.tokens, u.durations);
    }
    return mu;
}

}  // namespace

ClassifierTrainResult train_classifier(const Corpus& corpus,
                                       const AcousticCheckpointBundle& acoustic,
                                       const ClassifierArch& arch, const TrainParams& tp,
                                       uint64_t seed, const std::string& config_hash, int threads) {
    tp.validate();
    if (corpus.utterances.empty() || corpus.manifest.train_ids.empty())
        throw std::invalid_argument("classifier: empty corpus");
    if (corpus.manifest.dim != arch.dim || corpus.manifest.num_emotions != arch.num_emotions)
        throw std::invalid_argument("classifier: arch does not match corpus");

    const AcousticModel frozen = acoustic.inference_model();
    const std::vector<Tensor> mu_cache = precompute_mu(corpus, frozen);

    Rng init_rng = Rng::stream(seed, "classifier-init");
    ClassifierModel model = ClassifierModel::init(arch, init_rng);
    Adam adam(tp.lr, tp.adam_beta1, tp.adam_beta2, tp.adam_eps);
    Ema ema;
    ema.decay = tp.ema_decay;
    ema.init_from(model.params);

    const NoiseSchedule& sched = acoustic.schedule;
    const std::vector<int>& train_ids = corpus.manifest.train_ids;

    ClassifierTrainResult result;
    std::vector<ParamSet> local_grads(static_cast<size_t>(tp.batch_size));
    std::vector<double> local_ce(static_cast<size_t>(tp.batch_size));
    std::vector<ClassifierModel::BatchStats> local_stats(static_cast<size_t>(tp.batch_size));

    for (int64_t step = 0; step < tp.steps; ++step) {
        Rng batch_rng = Rng::stream(seed, "classifier-batch", static_cast<uint64_t>(step));
        std::vector<int> batch(static_cast<size_t>(tp.batch_size));
        for (auto& id : batch)
            id = train_ids[batch_rng.below(train_ids.size())];

        parallel_for_jobs(tp.batch_size, threads, [&](int j) {
            const size_t sj = static_cast<size_t>(j);
            const Utterance& u = corpus.at(batch[sj]);
            const Tensor& mu = mu_cache[static_cast<size_t>(batch[sj])];
            const uint64_t draw_idx =
                static_cast<uint64_t>(step) * static_cast<uint64_t>(tp.batch_size) +
                static_cast<uint64_t>(j);
            Rng diffuse_rng = Rng::stream(seed, "classifier-diffuse", draw_idx);
            const double t = tp.t_min + (1.0 - tp.t_min) * diffuse_rng.uniform();
            const ForwardSample<float> fs = sample_forward(u.frames, mu, t, sched, diffuse_rng);

            Rng dropout_rng = Rng::stream(seed, "classifier-dropout", draw_idx);
            Graph g;
            BoundParams<float> p(g, model.params, /*requires_grad=*/true);
            auto lp = model.build_log_probs(g, p, g.constant(fs.x_t), g.constant(mu), t,
                                            /*training=*/true, &dropout_rng, &local_stats[sj]);
            auto ce = g.scale(g.pick(lp, u.emotion_id), -1.0);
            const double ce_val = static_cast<double>(g.val(ce).data[0]);
            if (!std::isfinite(ce_val))
                throw std::runtime_error("classifier: non-finite loss, training diverged");
            local_ce[sj] = ce_val;
            g.backward(ce);
            local_grads[sj] = model.params.zeros_like();
            p.add_grads_to(local_grads[sj]);
        });

        // Reduce gradients and fold batchnorm running statistics in batch
        // order; both are independent of the worker schedule.
        ParamSet grads = model.params.zeros_like();
        double mean_ce = 0.0;
        for (int j = 0; j < tp.batch_size; ++j) {
            const size_t sj = static_cast<size_t>(j);
            axpy_params(grads, local_grads[sj], 1.0 / tp.batch_size);
            mean_ce += local_ce[sj] / tp.batch_size;
            const auto& stats = local_stats[sj];
            for (int b = 0; b < arch.blocks; ++b) {
                const std::string prefix = "block" + std::to_string(b);
                Tensor& rm = model.buffers.at(prefix + ".bn.run_mean");
                Tensor& rv = model.buffers.at(prefix + ".bn.run_var");
                const Tensor& bm = stats.mean[static_cast<size_t>(b)];
                const Tensor& bv = stats.var[static_cast<size_t>(b)];
                const double unbias =
                    stats.frames > 1 ? static_cast<double>(stats.frames) / (stats.frames - 1) : 1.0;
                for (size_t c = 0; c < rm.data.size(); ++c) {
                    rm.data[c] = static_cast<float>((1.0 - arch.bn_momentum) * rm.data[c] +
                                                    arch.bn_momentum * bm.data[c]);
                    rv.data[c] = static_cast<float>((1.0 - arch.bn_momentum) * rv.data[c] +
                                                    arch.bn_momentum * unbias * bv.data[c]);
                }
            }
        }
        adam.step(model.params, grads);
        ema.update(model.params);

        if (step % tp.log_every == 0 || step + 1 == tp.steps)
            result.log.push_back({step, mean_ce});
    }

    result.bundle.arch = arch;
    result.bundle.schedule = sched;
    result.bundle.train_step = tp.steps;
    result.bundle.config_hash = config_hash;
    result.bundle.acoustic_config_hash = acoustic.config_hash;
    result.bundle.live = std::move(model.params);
    result.bundle.buffers = std::move(model.buffers);
    result.bundle.ema = ema.shadow;
    result.bundle.adam_m = adam.moment1();
    result.bundle.adam_v = adam.moment2();
    return result;
}

std::vector<ClassifierEvalRow> evaluate_classifier(const Corpus& corpus,
                                                   const AcousticCheckpointBundle& acoustic,
                                                   const ClassifierModel& classifier,
                                                   const std::vector<double>& t_grid, uint64_t seed,
                                                   int threads) {
    if (corpus.manifest.val_ids.empty())
        throw std::invalid_argument("classifier eval: empty validation split");
    const AcousticModel frozen = acoustic.inference_model();
    const NoiseSchedule& sched = acoustic.schedule;
    const std::vector<int>& val_ids = corpus.manifest.val_ids;

    std::vector<ClassifierEvalRow> rows(t_grid.size());
    for (size_t ti = 0; ti < t_grid.size(); ++ti) {
        const double t = t_grid[ti];
        std::vector<double> ce(val_ids.size());
        std::vector<int> correct(val_ids.size());
        parallel_for_jobs(static_cast<int>(val_ids.size()), threads, [&](int i) {
            const Utterance& u = corpus.at(val_ids[static_cast<size_t>(i)]);
            const Tensor mu = frozen.predict_mu(u.tokens, u.durations);
            Tensor x_t = u.frames;
            if (t > 0.0) {
                Rng rng = Rng::stream(seed, "classifier-eval",
                                      static_cast<uint64_t>(ti) * val_ids.size() +
                                          static_cast<uint64_t>(i));
                x_t = sample_forward(u.frames, mu, t, sched, rng).x_t;
            }
            const ClassifierOutput out = classifier.classify(x_t, mu, t);
            ce[static_cast<size_t>(i)] = -out.log_probs[static_cast<size_t>(u.emotion_id)];
            const auto it = std::max_element(out.log_probs.begin(), out.log_probs.end());
            correct[static_cast<size_t>(i)] =
                static_cast<int>(it - out.log_probs.begin()) == u.emotion_id ? 1 : 0;
        });
        ClassifierEvalRow row;
        row.t = t;
        for (size_t i = 0; i < val_ids.size(); ++i) {
            row.ce += ce[i] / static_cast<double>(val_ids.size());
            row.accuracy += static_cast<double>(correct[i]) / static_cast<double>(val_ids.size());
        }
        rows[ti] = row;
    }
    return rows;
}

Checkpoint pack_classifier(const ClassifierCheckpointBundle& b) {
    Checkpoint ckpt;
    ckpt.kind = "classifier";
    ckpt.meta = json{{"arch", b.arch.to_json()},
                     {"schedule", {{"beta0", b.schedule.beta0()}, {"beta1", b.schedule.beta1()}}},
                     {"train_step", b.train_step},
                     {"config_hash", b.config_hash},
                     {"acoustic_config_hash", b.acoustic_config_hash}};
    for (const auto& [name, t] : b.live.tensors) ckpt.tensors.emplace("param/" + name, t);
    for (const auto& [name, t] : b.buffers.tensors) ckpt.tensors.emplace("buffer/" + name, t);
    for (const auto& [name, t] : b.ema.tensors) ckpt.tensors.emplace("ema/" + name, t);
    for (const auto& [name, t] : b.adam_m.tensors) ckpt.tensors.emplace("adam_m/" + name, t);
    for (const auto& [name, t] : b.adam_v.tensors) ckpt.tensors.emplace("adam_v/" + name, t);
    return ckpt;
}

ClassifierCheckpointBundle unpack_classifier(const Checkpoint& ckpt) {
    if (ckpt.kind != "classifier") throw std::runtime_error("checkpoint: expected a classifier");
    ClassifierCheckpointBundle b;
    b.arch = ClassifierArch::from_json(ckpt.meta.at("arch"));
    b.schedule = NoiseSchedule(ckpt.meta.at("schedule").at("beta0").get<double>(),
                               ckpt.meta.at("schedule").at("beta1").get<double>());
    b.train_step = ckpt.meta.at("train_step").get<int64_t>();
    b.config_hash = ckpt.meta.at("config_hash").get<std::string>();
    b.acoustic_config_hash = ckpt.meta.at("acoustic_config_hash").get<std::string>();
    for (const auto& [name, t] : ckpt.tensors) {
        if (name.rfind("param/", 0) == 0) b.live.add(name.substr(6), t);
        else if (name.rfind("buffer/", 0) == 0) b.buffers.add(name.substr(7), t);
        else if (name.rfind("ema/", 0) == 0) b.ema.add(name.substr(4), t);
        else if (name.rfind("adam_m/", 0) == 0) b.adam_m.add(name.substr(7), t);
        else if (name.rfind("adam_v/", 0) == 0) b.adam_v.add(name.substr(7), t);
        else throw std::runtime_error("checkpoint: unexpected tensor '" + name + "'");
    }
    return b;
}

}  // namespace emosde
