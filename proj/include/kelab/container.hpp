#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "kelab/tensor.hpp"

namespace kelab {

// KELAB1 binary container: 8-byte magic "KELAB1\0\0", a little-endian u64
// header length, a UTF-8 JSON header (metadata plus an ordered tensor
// directory of name/shape/offset), then contiguous little-endian float32
// blobs in directory order. Offsets are relative to the blob-section start.
struct ContainerEntry {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

struct Container {
    std::string kind;      // "model", "coeff_stats", "optimizer"
    nlohmann::json meta;   // free-form header fields
    std::vector<ContainerEntry> tensors;

    const ContainerEntry* find(const std::string& name) const;
};

void write_container(const std::string& path, const Container& c);
Container read_container(const std::string& path);

// float32 storage conversion helpers
ContainerEntry entry_from_tensor(const std::string& name, const Tensor& t);
Tensor tensor_from_entry(const ContainerEntry& e);

}  // namespace kelab
