#include "emosde/runconfig.hpp"

#include <fstream>
#include <set>
#include <thread>

#include "emosde/rng.hpp"

namespace emosde {

using json = nlohmann::json;

namespace {

// Field access that records what it reads and rejects unknown keys, so config
// typos never pass silently.
class StrictSection {
public:
    StrictSection(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("config: section '" + path_ + "' must be an object");
    }

    template <typename T>
    T get(const char* key) const {
        auto it = j_.find(key);
        if (it == j_.end()) throw ConfigError("config: missing field '" + join(key) + "'");
        used_.insert(key);
        try {
            return it->get<T>();
        } catch (const json::exception&) {
            throw ConfigError("config: field '" + join(key) + "' has the wrong type");
        }
    }

    const json& raw(const char* key) const {
        auto it = j_.find(key);
        if (it == j_.end()) throw ConfigError("config: missing field '" + join(key) + "'");
        used_.insert(key);
        return *it;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!used_.count(it.key()))
                throw ConfigError("config: unknown key '" + join(it.key().c_str()) + "'");
    }

private:
    std::string join(const char* key) const {
        return path_.empty() ? std::string(key) : path_ + "." + key;
    }

    const json& j_;
    std::string path_;
    mutable std::set<std::string> used_;
};

TrainParams parse_train(const json& j, const std::string& path) {
    StrictSection s(j, path);
    TrainParams tp;
    tp.steps = s.get<int64_t>("steps");
    tp.batch_size = s.get<int>("batch_size");
    tp.lr = s.get<double>("lr");
    tp.adam_beta1 = s.get<double>("adam_beta1");
    tp.adam_beta2 = s.get<double>("adam_beta2");
    tp.adam_eps = s.get<double>("adam_eps");
    tp.ema_decay = s.get<double>("ema_decay");
    tp.t_min = s.get<double>("t_min");
    tp.log_every = s.get<int>("log_every");
    s.finish();
    return tp;
}

json train_to_json(const TrainParams& tp) {
    return json{{"steps", tp.steps},
                {"batch_size", tp.batch_size},
                {"lr", tp.lr},
                {"adam_beta1", tp.adam_beta1},
                {"adam_beta2", tp.adam_beta2},
                {"adam_eps", tp.adam_eps},
                {"ema_decay", tp.ema_decay},
                {"t_min", tp.t_min},
                {"log_every", tp.log_every}};
}

}  // namespace

void GuidanceEvalParams::validate() const {
    if (gamma < 0.0) throw ConfigError("config: guidance.gamma must be >= 0");
    if (n_steps < 1) throw ConfigError("config: guidance.n_steps must be >= 1");
    if (alpha_grid.empty()) throw ConfigError("config: guidance.alpha_grid must be nonempty");
    for (double a : alpha_grid)
        if (!(a >= 0.0) || !(a <= 1.0))
            throw ConfigError("config: guidance.alpha_grid entries must lie in [0, 1]");
    if (eval_samples_per_cell < 2)
        throw ConfigError("config: guidance.eval_samples_per_cell must be >= 2");
}

RunConfig RunConfig::defaults() { return RunConfig{}; }

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config: parse error in '" + path.string() + "': " + e.what());
    }
    return from_json(j);
}

RunConfig RunConfig::from_json(const json& j) {
    StrictSection root(j, "");
    RunConfig cfg;
    cfg.format_version = root.get<int>("format_version");
    if (cfg.format_version != 1) throw ConfigError("config: unsupported format_version");
    cfg.seed = root.get<uint64_t>("seed");
    cfg.threads = root.get<int>("threads");
    cfg.run_dir = root.get<std::string>("run_dir");

    {
        StrictSection s(root.raw("corpus"), "corpus");
        cfg.corpus.vocab_size = s.get<int>("vocab_size");
        cfg.corpus.dim = s.get<int>("dim");
        cfg.corpus.num_emotions = s.get<int>("num_emotions");
        cfg.corpus.num_utterances = s.get<int>("num_utterances");
        cfg.corpus.min_tokens = s.get<int>("min_tokens");
        cfg.corpus.max_tokens = s.get<int>("max_tokens");
        cfg.corpus.min_duration = s.get<int>("min_duration");
        cfg.corpus.max_duration = s.get<int>("max_duration");
        cfg.corpus.noise_std = s.get<double>("noise_std");
        cfg.corpus.offset_radius = s.get<double>("offset_radius");
        cfg.corpus.min_offset_distance = s.get<double>("min_offset_distance");
        cfg.corpus.val_fraction = s.get<double>("val_fraction");
        s.finish();
    }
    {
        StrictSection s(root.raw("schedule"), "schedule");
        cfg.beta0 = s.get<double>("beta0");
        cfg.beta1 = s.get<double>("beta1");
        s.finish();
    }
    {
        StrictSection s(root.raw("model"), "model");
        cfg.acoustic_arch.vocab_size = cfg.corpus.vocab_size;
        cfg.acoustic_arch.dim = cfg.corpus.dim;
        cfg.acoustic_arch.token_embed = s.get<int>("token_embed_dim");
        cfg.acoustic_arch.encoder_hidden = s.get<int>("encoder_hidden");
        cfg.acoustic_arch.score_hidden = s.get<int>("score_hidden");
        cfg.acoustic_arch.score_conv_layers = s.get<int>("score_conv_layers");
        cfg.acoustic_arch.score_kernel = s.get<int>("score_kernel");
        cfg.acoustic_arch.time_embed = s.get<int>("score_time_embed_dim");
        cfg.classifier_arch.dim = cfg.corpus.dim;
        cfg.classifier_arch.num_emotions = cfg.corpus.num_emotions;
        cfg.classifier_arch.channels = s.get<int>("classifier_channels");
        cfg.classifier_arch.blocks = s.get<int>("classifier_blocks");
        cfg.classifier_arch.kernel = s.get<int>("classifier_kernel");
        cfg.classifier_arch.time_embed = s.get<int>("classifier_time_embed_dim");
        cfg.classifier_arch.dropout = s.get<double>("classifier_dropout");
        s.finish();
    }
    cfg.acoustic_train = parse_train(root.raw("acoustic_training"), "acoustic_training");
    cfg.classifier_train = parse_train(root.raw("classifier_training"), "classifier_training");
    {
        StrictSection s(root.raw("guidance"), "guidance");
        cfg.guidance.gamma = s.get<double>("gamma");
        cfg.guidance.n_steps = s.get<int>("n_steps");
        cfg.guidance.alpha_grid = s.get<std::vector<double>>("alpha_grid");
        cfg.guidance.eval_samples_per_cell = s.get<int>("eval_samples_per_cell");
        s.finish();
    }
    root.finish();
    cfg.validate();
    return cfg;
}

json RunConfig::to_json() const {
    return json{
        {"format_version", format_version},
        {"seed", seed},
        {"threads", threads},
        {"run_dir", run_dir},
        {"corpus",
         {{"vocab_size", corpus.vocab_size},
          {"dim", corpus.dim},
          {"num_emotions", corpus.num_emotions},
          {"num_utterances", corpus.num_utterances},
          {"min_tokens", corpus.min_tokens},
          {"max_tokens", corpus.max_tokens},
          {"min_duration", corpus.min_duration},
          {"max_duration", corpus.max_duration},
          {"noise_std", corpus.noise_std},
          {"offset_radius", corpus.offset_radius},
          {"min_offset_distance", corpus.min_offset_distance},
          {"val_fraction", corpus.val_fraction}}},
        {"schedule", {{"beta0", beta0}, {"beta1", beta1}}},
        {"model",
         {{"token_embed_dim", acoustic_arch.token_embed},
          {"encoder_hidden", acoustic_arch.encoder_hidden},
          {"score_hidden", acoustic_arch.score_hidden},
          {"score_conv_layers", acoustic_arch.score_conv_layers},
          {"score_kernel", acoustic_arch.score_kernel},
          {"score_time_embed_dim", acoustic_arch.time_embed},
          {"classifier_channels", classifier_arch.channels},
          {"classifier_blocks", classifier_arch.blocks},
          {"classifier_kernel", classifier_arch.kernel},
          {"classifier_time_embed_dim", classifier_arch.time_embed},
          {"classifier_dropout", classifier_arch.dropout}}},
        {"acoustic_training", train_to_json(acoustic_train)},
        {"classifier_training", train_to_json(classifier_train)},
        {"guidance",
         {{"gamma", guidance.gamma},
          {"n_steps", guidance.n_steps},
          {"alpha_grid", guidance.alpha_grid},
          {"eval_samples_per_cell", guidance.eval_samples_per_cell}}}};
}

std::string RunConfig::hash() const {
    // run_dir and threads are execution context: they change where artifacts
    // live and how fast they are produced, never their bytes.
    json j = to_json();
    j.erase("run_dir");
    j.erase("threads");
    const uint64_t h = fnv1a64(j.dump());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

int RunConfig::effective_threads() const {
    if (threads > 0) return threads;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

void RunConfig::validate() const {
    try {
        corpus.validate();
        (void)schedule();
        acoustic_train.validate();
        classifier_train.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    guidance.validate();
    if (threads < 0) throw ConfigError("config: threads must be >= 0");
    if (run_dir.empty()) throw ConfigError("config: run_dir must be nonempty");
    if (acoustic_arch.time_embed % 2 != 0 || classifier_arch.time_embed % 2 != 0)
        throw ConfigError("config: time embedding dims must be even");
    if (acoustic_arch.score_kernel % 2 == 0 || classifier_arch.kernel % 2 == 0)
        throw ConfigError("config: conv kernels must be odd");
}

}  // namespace emosde
