#pragma once

#include <fstream>
#include <map>
#include <string>

#include "a3fpn/tensor.hpp"

namespace a3fpn {

// Incompatible checkpoint: the key set on disk does not match the config.
struct CheckpointError : IoError {
    using IoError::IoError;
};

// Every learnable parameter, keyed by a stable hierarchical name
// (column/level/submodule/parameter). Ordered map => deterministic file layout.
struct ModelWeights {
    std::map<std::string, Tensor> tensors;

    const Tensor& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw CheckpointError("missing parameter: " + name);
        return it->second;
    }

    bool operator==(const ModelWeights& o) const {
        if (tensors.size() != o.tensors.size()) return false;
        auto a = tensors.begin();
        auto b = o.tensors.begin();
        for (; a != tensors.end(); ++a, ++b)
            if (a->first != b->first || !bitwise_equal(a->second, b->second)) return false;
        return true;
    }
};

// A3W1 weight file: magic "A3W1", then a sequence of records
// (u32 name length, UTF-8 name, A3T tensor) until end of file.

inline void save_weights(const ModelWeights& w, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write("A3W1", 4);
    for (const auto& [name, tensor] : w.tensors) {
        detail::write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_a3t(os, tensor);
    }
    if (!os) throw IoError("failed to write weights: " + path);
}

inline ModelWeights load_weights(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "A3W1", 4) != 0) throw IoError("bad A3W1 magic in " + path);
    ModelWeights w;
    while (true) {
        if (is.peek() == std::char_traits<char>::eof()) break;
        const std::uint32_t len = detail::read_u32(is);
        if (len > 4096) throw IoError("weight name length out of range");
        std::string name(len, '\0');
        is.read(name.data(), len);
        if (!is) throw IoError("truncated weight record in " + path);
        Tensor t = read_a3t(is);
        if (!w.tensors.emplace(std::move(name), std::move(t)).second)
            throw IoError("duplicate weight name in " + path);
    }
    return w;
}

} // namespace a3fpn
