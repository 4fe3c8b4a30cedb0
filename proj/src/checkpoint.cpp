#include "mdir/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mdir {

namespace {

constexpr char kMagic[8] = {'M', 'D', 'I', 'R', 'C', 'K', 'P', '1'};

void put_u64le(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64le(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

void put_f32le(std::vector<std::uint8_t>& out, const float* data, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, &data[i], 4);
        for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>((bits >> (8 * b)) & 0xff));
    }
}

}  // namespace

void Checkpoint::add_blob(const std::string& name, const Shape& shape, const float* data,
                          std::int64_t n) {
    if (shape_numel(shape) != n) throw std::invalid_argument("checkpoint: blob shape/size mismatch for " + name);
    blobs.push_back({name, shape, std::vector<float>(data, data + n)});
}

const CheckpointBlob* Checkpoint::find(const std::string& name) const {
    for (const auto& b : blobs)
        if (b.name == name) return &b;
    return nullptr;
}

void Checkpoint::save(const std::string& path) const {
    nlohmann::json dir = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& b : blobs) {
        const std::uint64_t bytes = static_cast<std::uint64_t>(b.data.size()) * 4;
        dir.push_back({{"name", b.name}, {"shape", b.shape}, {"offset", offset}, {"length", bytes}});
        offset += bytes;
    }
    nlohmann::json doc;
    doc["meta"] = meta;
    doc["blobs"] = dir;
    const std::string js = doc.dump();

    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 8);
    put_u64le(out, js.size());
    out.insert(out.end(), js.begin(), js.end());
    for (const auto& b : blobs) put_f32le(out, b.data.data(), static_cast<std::int64_t>(b.data.size()));

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::invalid_argument("checkpoint: cannot write " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::invalid_argument("checkpoint: cannot read " + path);
    std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (raw.size() < 16 || std::memcmp(raw.data(), kMagic, 8) != 0)
        throw std::invalid_argument("checkpoint: " + path + " is not a checkpoint container");
    const std::uint64_t jlen = get_u64le(raw.data() + 8);
    if (16 + jlen > raw.size()) throw std::invalid_argument("checkpoint: truncated header in " + path);
    const nlohmann::json doc =
        nlohmann::json::parse(raw.begin() + 16, raw.begin() + 16 + static_cast<std::ptrdiff_t>(jlen));
    Checkpoint ck;
    ck.meta = doc.at("meta");
    const std::uint8_t* base = raw.data() + 16 + jlen;
    const std::uint64_t avail = raw.size() - 16 - jlen;
    for (const auto& d : doc.at("blobs")) {
        CheckpointBlob b;
        b.name = d.at("name").get<std::string>();
        b.shape = d.at("shape").get<Shape>();
        const std::uint64_t off = d.at("offset").get<std::uint64_t>();
        const std::uint64_t len = d.at("length").get<std::uint64_t>();
        if (off + len > avail || len % 4 != 0)
            throw std::invalid_argument("checkpoint: blob '" + b.name + "' out of bounds");
        b.data.resize(len / 4);
        for (std::size_t i = 0; i < b.data.size(); ++i) {
            std::uint32_t bits = 0;
            for (int j = 0; j < 4; ++j)
                bits |= static_cast<std::uint32_t>(base[off + i * 4 + static_cast<std::size_t>(j)]) << (8 * j);
            std::memcpy(&b.data[i], &bits, 4);
        }
        ck.blobs.push_back(std::move(b));
    }
    return ck;
}

void Checkpoint::store_params(const ParamRefs<float>& refs, const std::string& prefix) {
    for (const auto* p : refs.trainable)
        add_blob(prefix + p->name, p->value.shape(), p->value.data(), p->value.numel());
    for (const auto* p : refs.buffers)
        add_blob(prefix + p->name, p->value.shape(), p->value.data(), p->value.numel());
}

void Checkpoint::load_params(ParamRefs<float>& refs, const std::string& prefix) const {
    auto restore = [&](Parameter<float>* p) {
        const CheckpointBlob* b = find(prefix + p->name);
        if (!b) throw std::invalid_argument("checkpoint: missing blob '" + prefix + p->name + "'");
        if (b->shape != p->value.shape())
            throw std::invalid_argument("checkpoint: shape mismatch for '" + p->name + "': stored " +
                                        shape_str(b->shape) + ", model " + shape_str(p->value.shape()));
        std::copy(b->data.begin(), b->data.end(), p->value.data());
    };
    for (auto* p : refs.trainable) restore(p);
    for (auto* p : refs.buffers) restore(p);
}

}  // namespace mdir
