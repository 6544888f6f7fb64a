#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "lgen/tensor.hpp"

namespace lgen {

// Checkpoint file layout (little-endian throughout):
//   "LLLF" | version u32 | tensor count u32
//   per tensor: name_len u32 | name bytes | rank u32 | dims u64[] | f64 data
inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path,
                            const std::map<std::string, Tensor>& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for write");
    os.write("LLLF", 4);
    detail::write_pod<uint32_t>(os, kCheckpointVersion);
    detail::write_pod<uint32_t>(os, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        detail::write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_pod<uint32_t>(os, static_cast<uint32_t>(t.shape().size()));
        for (int64_t d : t.shape()) detail::write_pod<uint64_t>(os, static_cast<uint64_t>(d));
        os.write(reinterpret_cast<const char*>(t.data().data()),
                 static_cast<std::streamsize>(t.data().size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "LLLF", 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    uint32_t version = detail::read_pod<uint32_t>(is);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " +
                                 std::to_string(version));
    uint32_t count = detail::read_pod<uint32_t>(is);
    std::map<std::string, Tensor> out;
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t nlen = detail::read_pod<uint32_t>(is);
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        uint32_t rank = detail::read_pod<uint32_t>(is);
        Shape shape(rank);
        for (uint32_t d = 0; d < rank; ++d)
            shape[d] = static_cast<int64_t>(detail::read_pod<uint64_t>(is));
        std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
        is.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!is) throw std::runtime_error("checkpoint: truncated tensor " + name);
        out.emplace(name, Tensor::from_data(std::move(shape), std::move(data)));
    }
    return out;
}

// Copies checkpoint values into existing parameter tensors (shape-checked).
inline void restore_params(const std::map<std::string, Tensor>& ckpt,
                           const std::vector<std::pair<std::string, Tensor>>& params) {
    for (const auto& [name, p] : params) {
        auto it = ckpt.find(name);
        if (it == ckpt.end())
            throw std::runtime_error("checkpoint: missing tensor " + name);
        if (it->second.shape() != p.shape())
            throw std::runtime_error("checkpoint: shape mismatch for " + name + ": " +
                                     shape_str(it->second.shape()) + " vs " +
                                     shape_str(p.shape()));
        const_cast<Tensor&>(p).data() = it->second.data();
    }
}

}  // namespace lgen
