#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "posebridge/common.hpp"
#include "posebridge/tensor.hpp"

namespace posebridge {

// Binary container of named tensors.
// Layout: magic "PBCK" | u32 version | u32 entry count | entries.
// Entry: u16 name length | name bytes | u8 dtype (0=f32, 1=f64) | u8 rank |
//        u32 dims... | row-major little-endian payload.
class CheckpointContainer {
public:
    static constexpr uint32_t kVersion = 1;

    void put(const std::string& name, Tensor t, bool as_f32 = false) {
        auto it = index_.find(name);
        if (it != index_.end()) fail("checkpoint: duplicate entry " + name);
        index_[name] = entries_.size();
        entries_.push_back({name, std::move(t), as_f32});
    }

    bool has(const std::string& name) const { return index_.count(name) > 0; }

    const Tensor& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) fail("checkpoint: missing entry " + name);
        return entries_[it->second].tensor;
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) out.push_back(e.name);
        return out;
    }

    // Names with a given prefix, in insertion order.
    std::vector<std::string> names_with_prefix(const std::string& pre) const {
        std::vector<std::string> out;
        for (const auto& e : entries_)
            if (e.name.rfind(pre, 0) == 0) out.push_back(e.name);
        return out;
    }

    size_t count() const { return entries_.size(); }

    void save(const std::filesystem::path& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) fail_io("cannot open checkpoint for writing: " + path.string());
        os.write("PBCK", 4);
        write_u32(os, kVersion);
        write_u32(os, static_cast<uint32_t>(entries_.size()));
        for (const auto& e : entries_) {
            require(e.name.size() <= 0xFFFF, "checkpoint: name too long");
            write_u16(os, static_cast<uint16_t>(e.name.size()));
            os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
            os.put(e.as_f32 ? 0 : 1);
            os.put(static_cast<char>(e.tensor.rank()));
            for (size_t d : e.tensor.shape)
                write_u32(os, static_cast<uint32_t>(d));
            if (e.as_f32) {
                for (double v : e.tensor.data) {
                    float f = static_cast<float>(v);
                    write_bytes(os, &f, sizeof(f));
                }
            } else {
                for (double v : e.tensor.data) write_bytes(os, &v, sizeof(v));
            }
        }
        if (!os) fail_io("checkpoint write failed: " + path.string());
    }

    static CheckpointContainer load(const std::filesystem::path& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) fail_io("cannot open checkpoint: " + path.string());
        char magic[4];
        is.read(magic, 4);
        if (!is || std::memcmp(magic, "PBCK", 4) != 0)
            fail_io("bad checkpoint magic in " + path.string());
        uint32_t version = read_u32(is);
        if (version != kVersion)
            fail_io("unsupported checkpoint version " + std::to_string(version));
        uint32_t n = read_u32(is);
        CheckpointContainer c;
        for (uint32_t i = 0; i < n; ++i) {
            uint16_t len = read_u16(is);
            std::string name(len, '\0');
            is.read(name.data(), len);
            int dtype = is.get();
            int rank = is.get();
            if (!is || (dtype != 0 && dtype != 1) || rank < 0)
                fail_io("corrupt checkpoint entry in " + path.string());
            std::vector<size_t> shape(static_cast<size_t>(rank));
            for (auto& d : shape) d = read_u32(is);
            Tensor t(shape);
            if (dtype == 0) {
                for (double& v : t.data) {
                    float f;
                    read_bytes(is, &f, sizeof(f));
                    v = static_cast<double>(f);
                }
            } else {
                for (double& v : t.data) read_bytes(is, &v, sizeof(v));
            }
            if (!is) fail_io("truncated checkpoint: " + path.string());
            c.put(name, std::move(t), dtype == 0);
        }
        return c;
    }

private:
    struct Entry {
        std::string name;
        Tensor tensor;
        bool as_f32;
    };

    static void write_bytes(std::ostream& os, const void* p, size_t n) {
        os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    }
    static void read_bytes(std::istream& is, void* p, size_t n) {
        is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    }
    static void write_u16(std::ostream& os, uint16_t v) {
        char b[2] = {static_cast<char>(v & 0xFF),
                     static_cast<char>((v >> 8) & 0xFF)};
        os.write(b, 2);
    }
    static void write_u32(std::ostream& os, uint32_t v) {
        char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
        os.write(b, 4);
    }
    static uint16_t read_u16(std::istream& is) {
        unsigned char b[2];
        is.read(reinterpret_cast<char*>(b), 2);
        return static_cast<uint16_t>(b[0] | (b[1] << 8));
    }
    static uint32_t read_u32(std::istream& is) {
        unsigned char b[4];
        is.read(reinterpret_cast<char*>(b), 4);
        return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
               (static_cast<uint32_t>(b[2]) << 16) |
               (static_cast<uint32_t>(b[3]) << 24);
    }

    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> index_;
};

}  // namespace posebridge
