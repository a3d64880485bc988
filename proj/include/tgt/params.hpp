#pragma once

#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "tgt/tape.hpp"

namespace tgt {

// Named parameter tensors in a stable creation order. Shared layer groups are
// stored once; forward passes bind every entry onto a tape as a leaf.
template <typename Real>
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor<Real> value;
    };

    int add(const std::string& name, Tensor<Real> value) {
        if (index_.count(name)) throw ValueError("duplicate parameter name: " + name);
        index_[name] = static_cast<int>(entries_.size());
        entries_.push_back(Entry{name, std::move(value)});
        return static_cast<int>(entries_.size()) - 1;
    }

    int find(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ValueError("unknown parameter: " + name);
        return it->second;
    }

    std::size_t size() const { return entries_.size(); }
    const Entry& entry(int i) const { return entries_[static_cast<std::size_t>(i)]; }
    Tensor<Real>& value(int i) { return entries_[static_cast<std::size_t>(i)].value; }
    const Tensor<Real>& value(int i) const { return entries_[static_cast<std::size_t>(i)].value; }

    std::int64_t count_params(const std::string& prefix = "") const {
        std::int64_t total = 0;
        for (const auto& e : entries_) {
            if (e.name.rfind(prefix, 0) == 0) total += e.value.size();
        }
        return total;
    }

    // Bind all entries as tape leaves, in store order.
    std::vector<typename Tape<Real>::Var> bind(Tape<Real>& tape, bool needs_grad) const {
        std::vector<typename Tape<Real>::Var> vars;
        vars.reserve(entries_.size());
        for (const auto& e : entries_) vars.push_back(tape.leaf(e.value, needs_grad));
        return vars;
    }

    // ---- checkpoint container: (name, shape, values) triples ----
    //
    // Binary layout (little-endian):
    //   magic "TGTCKPT1" | u32 count | per tensor:
    //   u32 name_len | name bytes | u32 rank | i64 dims[rank] | u8 scalar_bytes | raw values
    // Round-trips bit-exactly for the stored precision.

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot open checkpoint for writing: " + path);
        out.write("TGTCKPT1", 8);
        const std::uint32_t count = static_cast<std::uint32_t>(entries_.size());
        out.write(reinterpret_cast<const char*>(&count), 4);
        for (const auto& e : entries_) {
            const std::uint32_t name_len = static_cast<std::uint32_t>(e.name.size());
            out.write(reinterpret_cast<const char*>(&name_len), 4);
            out.write(e.name.data(), name_len);
            const std::uint32_t rank = static_cast<std::uint32_t>(e.value.shape.size());
            out.write(reinterpret_cast<const char*>(&rank), 4);
            for (auto d : e.value.shape) out.write(reinterpret_cast<const char*>(&d), 8);
            const std::uint8_t scalar_bytes = sizeof(Real);
            out.write(reinterpret_cast<const char*>(&scalar_bytes), 1);
            out.write(reinterpret_cast<const char*>(e.value.data.data()),
                      static_cast<std::streamsize>(sizeof(Real) * e.value.data.size()));
        }
        if (!out) throw IoError("checkpoint write failed: " + path);
    }

    // Load values into this store. The file must contain exactly the same
    // tensor names with matching shapes and precision.
    void load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open checkpoint: " + path);
        char magic[8];
        in.read(magic, 8);
        if (!in || std::memcmp(magic, "TGTCKPT1", 8) != 0) {
            throw IoError("not a checkpoint file: " + path);
        }
        std::uint32_t count = 0;
        in.read(reinterpret_cast<char*>(&count), 4);
        if (count != entries_.size()) {
            throw IoError("checkpoint " + path + " holds " + std::to_string(count) +
                          " tensors, model expects " + std::to_string(entries_.size()));
        }
        std::vector<bool> seen(entries_.size(), false);
        for (std::uint32_t t = 0; t < count; ++t) {
            std::uint32_t name_len = 0;
            in.read(reinterpret_cast<char*>(&name_len), 4);
            std::string name(name_len, '\0');
            in.read(name.data(), name_len);
            std::uint32_t rank = 0;
            in.read(reinterpret_cast<char*>(&rank), 4);
            Shape shape(rank);
            for (auto& d : shape) in.read(reinterpret_cast<char*>(&d), 8);
            std::uint8_t scalar_bytes = 0;
            in.read(reinterpret_cast<char*>(&scalar_bytes), 1);
            if (!in) throw IoError("truncated checkpoint: " + path);
            auto it = index_.find(name);
            if (it == index_.end()) {
                throw IoError("checkpoint tensor '" + name + "' not present in model");
            }
            Entry& e = entries_[static_cast<std::size_t>(it->second)];
            if (e.value.shape != shape) {
                throw IoError("checkpoint tensor '" + name + "' has shape " + shape_str(shape) +
                              ", model expects " + shape_str(e.value.shape));
            }
            if (scalar_bytes != sizeof(Real)) {
                throw IoError("checkpoint tensor '" + name + "' stored with " +
                              std::to_string(scalar_bytes) + "-byte scalars, model uses " +
                              std::to_string(sizeof(Real)));
            }
            in.read(reinterpret_cast<char*>(e.value.data.data()),
                    static_cast<std::streamsize>(sizeof(Real) * e.value.data.size()));
            if (!in) throw IoError("truncated checkpoint: " + path);
            seen[static_cast<std::size_t>(it->second)] = true;
        }
        for (std::size_t i = 0; i < seen.size(); ++i) {
            if (!seen[i]) throw IoError("checkpoint missing tensor '" + entries_[i].name + "'");
        }
    }

    // FNV-1a over raw bytes; used to assert parameter frozenness.
    std::uint64_t content_hash() const {
        std::uint64_t h = 1469598103934665603ULL;
        for (const auto& e : entries_) {
            for (char c : e.name) {
                h = (h ^ static_cast<std::uint8_t>(c)) * 1099511628211ULL;
            }
            const auto* bytes = reinterpret_cast<const std::uint8_t*>(e.value.data.data());
            for (std::size_t i = 0; i < sizeof(Real) * e.value.data.size(); ++i) {
                h = (h ^ bytes[i]) * 1099511628211ULL;
            }
        }
        return h;
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, int> index_;
};

}  // namespace tgt
