#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mdir/nn.hpp"
#include "mdir/tensor.hpp"

namespace mdir {

// Container layout: 8-byte magic, u64le JSON length, JSON document (metadata
// plus blob directory with name/offset/length/shape), then raw little-endian
// f32 blob data. Offsets are relative to the end of the header. save->load->
// save is byte-identical.
struct CheckpointBlob {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

struct Checkpoint {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<CheckpointBlob> blobs;

    void add_blob(const std::string& name, const Shape& shape, const float* data, std::int64_t n);
    const CheckpointBlob* find(const std::string& name) const;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

    // snapshot / restore named parameters and buffers
    void store_params(const ParamRefs<float>& refs, const std::string& prefix = "");
    void load_params(ParamRefs<float>& refs, const std::string& prefix = "") const;
};

}  // namespace mdir
