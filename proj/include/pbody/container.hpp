#pragma once

#include <cstdint>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

// Self-describing binary container shared by model, weight, prediction and
// dataset files.
//
//   bytes 0..7    magic (file kind)
//   bytes 8..15   u64 little-endian header length
//   header        UTF-8 JSON: {"format_version": "1", "meta": {...},
//                 "arrays": [{"name", "dtype", "shape", "offset", "nbytes",
//                 "checksum"}]}
//   padding       zeros up to a multiple of 8
//   data          raw little-endian array payloads, offsets relative to here
//
// dtype is one of "f64", "i64", "u8". checksum is FNV-1a 64 of the payload,
// written as a decimal string; an empty string means "not checksummed".

namespace pbody::io {

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr const char* kFormatVersion = "1";

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t h = 0xcbf29ce484222325ull);

struct ArrayInfo {
    std::string name;
    std::string dtype;
    std::vector<std::int64_t> shape;
    std::uint64_t offset = 0;
    std::uint64_t nbytes = 0;
    std::string checksum;
};

class ContainerWriter {
public:
    explicit ContainerWriter(std::string magic);

    nlohmann::json& meta() { return meta_; }

    void add_f64(const std::string& name, std::span<const double> data, std::vector<std::int64_t> shape);
    void add_i64(const std::string& name, std::span<const std::int64_t> data, std::vector<std::int64_t> shape);
    void add_u8(const std::string& name, std::span<const std::uint8_t> data, std::vector<std::int64_t> shape,
                bool checksum = true);

    void write(const std::string& path) const;

private:
    void add_raw(const std::string& name, const std::string& dtype, std::span<const std::uint8_t> bytes,
                 std::vector<std::int64_t> shape, bool checksum);

    std::string magic_;
    nlohmann::json meta_ = nlohmann::json::object();
    std::vector<ArrayInfo> arrays_;
    std::vector<std::uint8_t> data_;
};

class ContainerReader {
public:
    ContainerReader(const std::string& path, const std::string& expected_magic);

    const nlohmann::json& meta() const { return meta_; }
    bool has(const std::string& name) const;
    const ArrayInfo& info(const std::string& name) const;

    // Full-array reads verify the checksum when present.
    std::vector<double> f64(const std::string& name);
    std::vector<std::int64_t> i64(const std::string& name);
    std::vector<std::uint8_t> u8(const std::string& name);

    // Reads bytes [offset, offset+length) of an array payload without
    // checksum verification (random access into large arrays).
    std::vector<std::uint8_t> read_range(const std::string& name, std::uint64_t offset, std::uint64_t length);

private:
    std::vector<std::uint8_t> read_checked(const std::string& name, const std::string& dtype);

    std::string path_;
    std::ifstream in_;
    nlohmann::json meta_;
    std::vector<ArrayInfo> arrays_;
    std::uint64_t data_start_ = 0;
    std::uint64_t file_size_ = 0;
};

}  // namespace pbody::io
