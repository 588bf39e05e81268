#pragma once

// Weights file layout, all integers and reals little-endian:
//
//   "TKFW"  u32 version  u32 record_count
//   record: u32 name_len, name bytes, u32 rank (= 4), 4 x u32 dims,
//           dims-product x f32 payload
//
// A ".rt32" raw tensor file is the same layout with exactly one record.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tkfnet/errors.hpp"
#include "tkfnet/layers.hpp"
#include "tkfnet/tensor.hpp"

namespace tkfnet::io {

inline constexpr char kWeightsMagic[4] = {'T', 'K', 'F', 'W'};
inline constexpr std::uint32_t kWeightsVersion = 1;

struct Record {
    std::string name;
    Tensor tensor;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path.string());
    return bytes;
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::size_t offset() const noexcept { return pos_; }

    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) {
            throw FormatError("truncated weights data at byte " + std::to_string(pos_) + " reading " + what);
        }
    }

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::string string(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    bool done() const noexcept { return pos_ == bytes_.size(); }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_records(std::span<const Record> records) {
    std::vector<std::uint8_t> out(std::begin(kWeightsMagic), std::end(kWeightsMagic));
    detail::put_u32(out, kWeightsVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(records.size()));
    for (const Record& r : records) {
        detail::put_u32(out, static_cast<std::uint32_t>(r.name.size()));
        out.insert(out.end(), r.name.begin(), r.name.end());
        detail::put_u32(out, 4);
        const Shape s = r.tensor.shape();
        for (std::size_t d : {s.n, s.h, s.w, s.c}) detail::put_u32(out, static_cast<std::uint32_t>(d));
        for (const float v : r.tensor.data()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
    return out;
}

inline std::vector<Record> decode_records(std::span<const std::uint8_t> bytes) {
    detail::Reader in(bytes);
    if (in.string(4, "magic") != std::string(kWeightsMagic, 4)) throw FormatError("bad magic at byte 0, expected TKFW");
    const std::uint32_t version = in.u32("version");
    if (version != kWeightsVersion) {
        throw FormatError("unsupported weights version " + std::to_string(version) + " at byte 4");
    }
    const std::uint32_t count = in.u32("record count");
    std::vector<Record> records;
    for (std::uint32_t i = 0; i < count; ++i) {
        Record r;
        r.name = in.string(in.u32("name length"), "name");
        const std::size_t rank_at = in.offset();
        const std::uint32_t rank = in.u32("rank");
        if (rank != 4) throw FormatError("rank " + std::to_string(rank) + " at byte " + std::to_string(rank_at) + ", expected 4");
        Shape s;
        s.n = in.u32("dims");
        s.h = in.u32("dims");
        s.w = in.u32("dims");
        s.c = in.u32("dims");
        std::size_t elements = 1;
        for (std::size_t d : {s.n, s.h, s.w, s.c}) {
            if (d != 0 && elements > in.remaining() / 4 / d) in.need(in.remaining() + 1, "payload");
            elements *= d;
        }
        in.need(elements * 4, "payload");
        std::vector<float> values(s.size());
        for (float& v : values) v = std::bit_cast<float>(in.u32("payload"));
        r.tensor = Tensor(s, std::move(values));
        records.push_back(std::move(r));
    }
    if (!in.done()) throw FormatError("trailing bytes after last record at byte " + std::to_string(in.offset()));
    return records;
}

/// Serialises every parameter of a model, in its visit order.
template <typename Model>
std::vector<std::uint8_t> encode_weights(Model& model) {
    std::vector<Record> records;
    model.visit([&](const std::string& name, Tensor& t) { records.push_back({name, t}); });
    return encode_records(records);
}

/// Copies records into the model's parameters by name; every parameter must
/// be present with a matching shape.
template <typename Model>
void assign_weights(Model& model, std::span<const Record> records) {
    std::unordered_map<std::string, const Record*> by_name;
    for (const Record& r : records) by_name[r.name] = &r;
    if (by_name.size() != records.size()) throw FormatError("duplicate parameter names in weights data");
    std::size_t used = 0;
    model.visit([&](const std::string& name, Tensor& t) {
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw ShapeError("weights data lacks parameter " + name);
        if (!(it->second->tensor.shape() == t.shape())) {
            throw ShapeError("parameter " + name + " expects " + t.shape().str() + ", weights data has " +
                             it->second->tensor.shape().str());
        }
        std::copy(it->second->tensor.data().begin(), it->second->tensor.data().end(), t.data().begin());
        ++used;
    });
    if (used != records.size()) {
        throw ShapeError("weights data has " + std::to_string(records.size() - used) + " unknown parameters");
    }
}

inline Tensor decode_rt32(std::span<const std::uint8_t> bytes) {
    auto records = decode_records(bytes);
    if (records.size() != 1) throw FormatError("rt32 must hold exactly one record, found " + std::to_string(records.size()));
    return records.front().tensor;
}

inline std::vector<std::uint8_t> encode_rt32(const Tensor& t, const std::string& name = "tensor") {
    const Record r{name, t};
    return encode_records(std::span<const Record>(&r, 1));
}

}  // namespace tkfnet::io
