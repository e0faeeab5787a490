#include "emosde/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace emosde {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian; big-endian hosts are unsupported");

namespace {

constexpr char kMagic[8] = {'E', 'M', 'S', 'D', 'N', 'E', 'T', '1'};

void write_u32(std::ostream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    nlohmann::json index = nlohmann::json::array();
    uint64_t offset = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        index.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}});
        offset += static_cast<uint64_t>(t.numel()) * sizeof(float);
    }
    nlohmann::json header = {
        {"format_version", 1}, {"kind", ckpt.kind}, {"meta", ckpt.meta}, {"tensors", index}};
    const std::string header_str = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open '" + path.string() + "' for writing");
    out.write(kMagic, sizeof(kMagic));
    write_u32(out, static_cast<uint32_t>(header_str.size()));
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& [name, t] : ckpt.tensors)
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!out) throw std::runtime_error("checkpoint: write failed for '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open '" + path.string() + "'");
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("checkpoint: bad magic in '" + path.string() + "'");
    const uint32_t header_len = read_u32(in);
    std::string header_str(header_len, '\0');
    in.read(header_str.data(), header_len);
    if (!in) throw std::runtime_error("checkpoint: truncated header");
    const nlohmann::json header = nlohmann::json::parse(header_str);
    if (header.at("format_version").get<int>() != 1)
        throw std::runtime_error("checkpoint: unsupported format version");

    Checkpoint ckpt;
    ckpt.kind = header.at("kind").get<std::string>();
    ckpt.meta = header.at("meta");
    for (const auto& entry : header.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
        Tensor t = Tensor::zeros(shape);
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        if (!in) throw std::runtime_error("checkpoint: truncated payload for tensor '" + name + "'");
        ckpt.tensors.emplace(name, std::move(t));
    }
    return ckpt;
}

}  // namespace emosde
