#include "emosde/corpus.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace emosde {

static_assert(std::endian::native == std::endian::little,
              "corpus records are little-endian; big-endian hosts are unsupported");

using nlohmann::json;

void Utterance::validate(int dim) const {
    if (tokens.empty() || tokens.size() != durations.size())
        throw std::invalid_argument("utterance: token/duration length mismatch");
    int total = 0;
    for (int d : durations) {
        if (d < 1) throw std::invalid_argument("utterance: durations must be positive");
        total += d;
    }
    if (frames.shape.size() != 2 || frames.rows() != total || frames.cols() != dim)
        throw std::invalid_argument("utterance: frame matrix does not match sum(durations) x dim");
}

namespace {

void write_u32(std::ostream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw std::runtime_error("corpus: truncated records file");
    return v;
}

void write_record(std::ostream& out, const Utterance& u) {
    write_u32(out, static_cast<uint32_t>(u.tokens.size()));
    write_u32(out, static_cast<uint32_t>(u.frames.rows()));
    write_u32(out, static_cast<uint32_t>(u.emotion_id));
    for (int t : u.tokens) write_u32(out, static_cast<uint32_t>(t));
    for (int d : u.durations) write_u32(out, static_cast<uint32_t>(d));
    out.write(reinterpret_cast<const char*>(u.frames.data.data()),
              static_cast<std::streamsize>(u.frames.data.size() * sizeof(float)));
}

Utterance read_record(std::istream& in, int dim) {
    Utterance u;
    const uint32_t n_tokens = read_u32(in);
    const uint32_t n_frames = read_u32(in);
    u.emotion_id = static_cast<int>(read_u32(in));
    u.tokens.resize(n_tokens);
    u.durations.resize(n_tokens);
    for (auto& t : u.tokens) t = static_cast<int>(read_u32(in));
    for (auto& d : u.durations) d = static_cast<int>(read_u32(in));
    u.frames = Tensor::zeros({static_cast<int>(n_frames), dim});
    in.read(reinterpret_cast<char*>(u.frames.data.data()),
            static_cast<std::streamsize>(u.frames.data.size() * sizeof(float)));
    if (!in) throw std::runtime_error("corpus: truncated frame payload");
    u.validate(dim);
    return u;
}

json manifest_to_json(const CorpusManifest& m, size_t num_utterances) {
    json profiles = json::array();
    for (const auto& p : m.profiles)
        profiles.push_back({{"offset", p.offset}, {"noise_std", p.noise_std}});
    return json{{"format_version", m.format_version},
                {"config_hash", m.config_hash},
                {"seed", m.seed},
                {"vocab_size", m.vocab_size},
                {"dim", m.dim},
                {"num_emotions", m.num_emotions},
                {"priors", m.priors},
                {"profiles", profiles},
                {"token_base", m.token_base},
                {"train_ids", m.train_ids},
                {"val_ids", m.val_ids},
                {"records_file", m.records_file},
                {"num_utterances", num_utterances}};
}

}  // namespace

void save_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "manifest.json", std::ios::trunc);
        if (!out) throw std::runtime_error("corpus: cannot write manifest in '" + dir.string() + "'");
        out << manifest_to_json(corpus.manifest, corpus.utterances.size()).dump(2) << "\n";
    }
    std::ofstream out(dir / corpus.manifest.records_file, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("corpus: cannot write records in '" + dir.string() + "'");
    for (const auto& u : corpus.utterances) write_record(out, u);
    if (!out) throw std::runtime_error("corpus: record write failed");
}

Corpus load_corpus(const std::filesystem::path& dir) {
    std::ifstream min(dir / "manifest.json");
    if (!min) throw std::runtime_error("corpus: cannot open manifest in '" + dir.string() + "'");
    const json j = json::parse(min);

    Corpus corpus;
    CorpusManifest& m = corpus.manifest;
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != 1) throw std::runtime_error("corpus: unsupported manifest version");
    m.config_hash = j.at("config_hash").get<std::string>();
    m.seed = j.at("seed").get<uint64_t>();
    m.vocab_size = j.at("vocab_size").get<int>();
    m.dim = j.at("dim").get<int>();
    m.num_emotions = j.at("num_emotions").get<int>();
    m.priors = j.at("priors").get<std::vector<double>>();
    for (const auto& pj : j.at("profiles")) {
        EmotionProfile p;
        p.offset = pj.at("offset").get<std::vector<double>>();
        p.noise_std = pj.at("noise_std").get<double>();
        m.profiles.push_back(std::move(p));
    }
    m.token_base = j.at("token_base").get<std::vector<std::vector<double>>>();
    m.train_ids = j.at("train_ids").get<std::vector<int>>();
    m.val_ids = j.at("val_ids").get<std::vector<int>>();
    m.records_file = j.at("records_file").get<std::string>();
    const size_t num_utterances = j.at("num_utterances").get<size_t>();

    std::ifstream in(dir / m.records_file, std::ios::binary);
    if (!in) throw std::runtime_error("corpus: cannot open records in '" + dir.string() + "'");
    corpus.utterances.reserve(num_utterances);
    for (size_t i = 0; i < num_utterances; ++i) corpus.utterances.push_back(read_record(in, m.dim));
    return corpus;
}

void save_utterance_record(const std::filesystem::path& path, const Utterance& utt) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("corpus: cannot write record '" + path.string() + "'");
    write_record(out, utt);
    if (!out) throw std::runtime_error("corpus: record write failed");
}

Utterance load_utterance_record(const std::filesystem::path& path, int dim) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("corpus: cannot open record '" + path.string() + "'");
    return read_record(in, dim);
}

}  // namespace emosde
