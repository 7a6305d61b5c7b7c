#include "pbody/container.hpp"

#include <bit>
#include <cstring>
#include <filesystem>

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace pbody::io {

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t h)
{
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

namespace {

std::int64_t element_count(const std::vector<std::int64_t>& shape)
{
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::size_t dtype_size(const std::string& dtype)
{
    if (dtype == "f64" || dtype == "i64") return 8;
    if (dtype == "u8") return 1;
    throw FormatError("unknown dtype '" + dtype + "'");
}

}  // namespace

ContainerWriter::ContainerWriter(std::string magic) : magic_(std::move(magic))
{
    if (magic_.size() > 8) throw std::invalid_argument("container magic longer than 8 bytes");
    magic_.resize(8, '\0');
}

void ContainerWriter::add_raw(const std::string& name, const std::string& dtype, std::span<const std::uint8_t> bytes,
                              std::vector<std::int64_t> shape, bool checksum)
{
    if (static_cast<std::uint64_t>(element_count(shape)) * dtype_size(dtype) != bytes.size()) {
        throw std::invalid_argument("array '" + name + "': shape does not match payload size");
    }
    while (data_.size() % 8 != 0) data_.push_back(0);
    ArrayInfo a;
    a.name = name;
    a.dtype = dtype;
    a.shape = std::move(shape);
    a.offset = data_.size();
    a.nbytes = bytes.size();
    if (checksum) a.checksum = std::to_string(fnv1a64(bytes));
    data_.insert(data_.end(), bytes.begin(), bytes.end());
    arrays_.push_back(std::move(a));
}

void ContainerWriter::add_f64(const std::string& name, std::span<const double> data, std::vector<std::int64_t> shape)
{
    add_raw(name, "f64",
            std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(data.data()), data.size_bytes()),
            std::move(shape), true);
}

void ContainerWriter::add_i64(const std::string& name, std::span<const std::int64_t> data,
                              std::vector<std::int64_t> shape)
{
    add_raw(name, "i64", std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(data.data()),
                                                        data.size_bytes()),
            std::move(shape), true);
}

void ContainerWriter::add_u8(const std::string& name, std::span<const std::uint8_t> data,
                             std::vector<std::int64_t> shape, bool checksum)
{
    add_raw(name, "u8", data, std::move(shape), checksum);
}

void ContainerWriter::write(const std::string& path) const
{
    nlohmann::json header;
    header["format_version"] = kFormatVersion;
    header["meta"] = meta_;
    header["arrays"] = nlohmann::json::array();
    for (const auto& a : arrays_) {
        header["arrays"].push_back({{"name", a.name},
                                    {"dtype", a.dtype},
                                    {"shape", a.shape},
                                    {"offset", a.offset},
                                    {"nbytes", a.nbytes},
                                    {"checksum", a.checksum}});
    }
    const std::string text = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out.write(magic_.data(), 8);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    const std::size_t pad = (8 - (16 + text.size()) % 8) % 8;
    const char zeros[8] = {};
    out.write(zeros, static_cast<std::streamsize>(pad));
    out.write(reinterpret_cast<const char*>(data_.data()), static_cast<std::streamsize>(data_.size()));
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

ContainerReader::ContainerReader(const std::string& path, const std::string& expected_magic) : path_(path)
{
    in_.open(path, std::ios::binary);
    if (!in_) throw std::runtime_error("cannot open '" + path + "'");
    file_size_ = std::filesystem::file_size(path);
    std::string magic(8, '\0');
    std::string want = expected_magic;
    want.resize(8, '\0');
    if (!in_.read(magic.data(), 8) || magic != want) {
        throw FormatError("'" + path + "': bad magic bytes (expected " + expected_magic + ")");
    }
    std::uint64_t len = 0;
    if (!in_.read(reinterpret_cast<char*>(&len), 8) || 16 + len > file_size_) {
        throw FormatError("'" + path + "': truncated header");
    }
    std::string text(len, '\0');
    in_.read(text.data(), static_cast<std::streamsize>(len));
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("'" + path + "': malformed header: " + e.what());
    }
    if (header.value("format_version", std::string()) != kFormatVersion) {
        throw FormatError("'" + path + "': unsupported format version '" +
                          header.value("format_version", std::string("?")) + "'");
    }
    meta_ = header.value("meta", nlohmann::json::object());
    data_start_ = 16 + len + (8 - (16 + len) % 8) % 8;
    try {
        for (const auto& j : header.at("arrays")) {
            ArrayInfo a;
            a.name = j.at("name").get<std::string>();
            a.dtype = j.at("dtype").get<std::string>();
            a.shape = j.at("shape").get<std::vector<std::int64_t>>();
            a.offset = j.at("offset").get<std::uint64_t>();
            a.nbytes = j.at("nbytes").get<std::uint64_t>();
            a.checksum = j.value("checksum", std::string());
            if (static_cast<std::uint64_t>(element_count(a.shape)) * dtype_size(a.dtype) != a.nbytes) {
                throw FormatError("'" + path + "': array '" + a.name + "' shape/size mismatch");
            }
            if (data_start_ + a.offset + a.nbytes > file_size_) {
                throw FormatError("'" + path + "': truncated payload for array '" + a.name + "'");
            }
            arrays_.push_back(std::move(a));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("'" + path + "': malformed array table: " + e.what());
    }
}

bool ContainerReader::has(const std::string& name) const
{
    for (const auto& a : arrays_) {
        if (a.name == name) return true;
    }
    return false;
}

const ArrayInfo& ContainerReader::info(const std::string& name) const
{
    for (const auto& a : arrays_) {
        if (a.name == name) return a;
    }
    throw FormatError("'" + path_ + "': missing array '" + name + "'");
}

std::vector<std::uint8_t> ContainerReader::read_range(const std::string& name, std::uint64_t offset,
                                                      std::uint64_t length)
{
    const ArrayInfo& a = info(name);
    if (offset + length > a.nbytes) throw FormatError("'" + path_ + "': read past end of array '" + name + "'");
    std::vector<std::uint8_t> buf(length);
    in_.clear();
    in_.seekg(static_cast<std::streamoff>(data_start_ + a.offset + offset));
    if (!in_.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(length))) {
        throw FormatError("'" + path_ + "': short read in array '" + name + "'");
    }
    return buf;
}

std::vector<std::uint8_t> ContainerReader::read_checked(const std::string& name, const std::string& dtype)
{
    const ArrayInfo& a = info(name);
    if (a.dtype != dtype) throw FormatError("'" + path_ + "': array '" + name + "' is " + a.dtype + ", not " + dtype);
    auto buf = read_range(name, 0, a.nbytes);
    if (!a.checksum.empty() && std::to_string(fnv1a64(buf)) != a.checksum) {
        throw FormatError("'" + path_ + "': checksum mismatch in array '" + name + "'");
    }
    return buf;
}

std::vector<double> ContainerReader::f64(const std::string& name)
{
    const auto buf = read_checked(name, "f64");
    std::vector<double> out(buf.size() / 8);
    std::memcpy(out.data(), buf.data(), buf.size());
    return out;
}

std::vector<std::int64_t> ContainerReader::i64(const std::string& name)
{
    const auto buf = read_checked(name, "i64");
    std::vector<std::int64_t> out(buf.size() / 8);
    std::memcpy(out.data(), buf.data(), buf.size());
    return out;
}

std::vector<std::uint8_t> ContainerReader::u8(const std::string& name) { return read_checked(name, "u8"); }

}  // namespace pbody::io
