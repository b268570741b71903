#include "kelab/container.hpp"

#include <cstring>
#include <fstream>

namespace kelab {

namespace {
constexpr char kMagic[8] = {'K', 'E', 'L', 'A', 'B', '1', '\0', '\0'};
}

const ContainerEntry* Container::find(const std::string& name) const {
    for (const auto& e : tensors) {
        if (e.name == name) return &e;
    }
    return nullptr;
}

void write_container(const std::string& path, const Container& c) {
    nlohmann::json header;
    header["kind"] = c.kind;
    header["meta"] = c.meta;
    nlohmann::json dir = nlohmann::json::array();
    uint64_t offset = 0;
    for (const auto& e : c.tensors) {
        int64_t n = 1;
        for (int64_t d : e.shape) n *= d;
        if (n != static_cast<int64_t>(e.data.size())) {
            throw ShapeError("write_container: tensor '" + e.name + "' shape does not match data size");
        }
        dir.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", offset}});
        offset += e.data.size() * sizeof(float);
    }
    header["tensors"] = dir;
    const std::string htext = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(kMagic, sizeof(kMagic));
    const uint64_t hlen = htext.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& e : c.tensors) {
        out.write(reinterpret_cast<const char*>(e.data.data()),
                  static_cast<std::streamsize>(e.data.size() * sizeof(float)));
    }
    if (!out) throw IoError("write failed for '" + path + "'");
}

Container read_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    in.seekg(0, std::ios::end);
    const uint64_t fsize = static_cast<uint64_t>(in.tellg());
    in.seekg(0);

    char magic[8];
    uint64_t hlen = 0;
    if (fsize < sizeof(magic) + sizeof(hlen)) {
        throw CorruptHeaderError("'" + path + "': file too small to hold a KELAB1 header");
    }
    in.read(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw CorruptHeaderError("'" + path + "': bad magic, not a KELAB1 container");
    }
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (sizeof(magic) + sizeof(hlen) + hlen > fsize) {
        throw CorruptHeaderError("'" + path + "': header length exceeds file size");
    }
    std::string htext(hlen, '\0');
    in.read(htext.data(), static_cast<std::streamsize>(hlen));

    nlohmann::json header = nlohmann::json::parse(htext, nullptr, false);
    if (header.is_discarded() || !header.contains("tensors")) {
        throw CorruptHeaderError("'" + path + "': header is not valid JSON");
    }

    Container c;
    c.kind = header.value("kind", "");
    c.meta = header.value("meta", nlohmann::json::object());

    uint64_t expect_offset = 0;
    for (const auto& d : header["tensors"]) {
        ContainerEntry e;
        e.name = d.at("name").get<std::string>();
        e.shape = d.at("shape").get<Shape>();
        const uint64_t off = d.at("offset").get<uint64_t>();
        if (off != expect_offset) {
            throw CorruptHeaderError("'" + path + "': tensor '" + e.name + "' offset " +
                                     std::to_string(off) + " breaks directory order");
        }
        int64_t n = 1;
        for (int64_t dim : e.shape) {
            if (dim <= 0) throw CorruptHeaderError("'" + path + "': tensor '" + e.name + "' has bad shape");
            n *= dim;
        }
        e.data.resize(static_cast<size_t>(n));
        expect_offset += static_cast<uint64_t>(n) * sizeof(float);
        c.tensors.push_back(std::move(e));
    }

    const uint64_t blob_size = fsize - sizeof(magic) - sizeof(hlen) - hlen;
    if (blob_size != expect_offset) {
        throw TruncatedFileError("'" + path + "': blob section holds " + std::to_string(blob_size) +
                                 " bytes, directory expects " + std::to_string(expect_offset));
    }
    for (auto& e : c.tensors) {
        in.read(reinterpret_cast<char*>(e.data.data()),
                static_cast<std::streamsize>(e.data.size() * sizeof(float)));
    }
    if (!in) throw TruncatedFileError("'" + path + "': blob read failed");
    return c;
}

ContainerEntry entry_from_tensor(const std::string& name, const Tensor& t) {
    ContainerEntry e;
    e.name = name;
    e.shape = t.shape();
    e.data.resize(static_cast<size_t>(t.numel()));
    for (int64_t i = 0; i < t.numel(); ++i) {
        e.data[static_cast<size_t>(i)] = static_cast<float>(t.data()[i]);
    }
    return e;
}

Tensor tensor_from_entry(const ContainerEntry& e) {
    std::vector<double> vals(e.data.size());
    for (size_t i = 0; i < e.data.size(); ++i) vals[i] = static_cast<double>(e.data[i]);
    return Tensor::from_values(e.shape, std::move(vals));
}

}  // namespace kelab
