#include "demspec/params.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "demspec/error.hpp"

namespace demspec {

namespace {

constexpr char kMagic[4] = {'D', 'S', 'P', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_le(std::ostream& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
    unsigned char bytes[sizeof(T)];
    in.read(reinterpret_cast<char*>(bytes), sizeof(T));
    if (!in) fail(ErrorCode::parse_error, "truncated parameter archive");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

}  // namespace

std::size_t ParamSet::add(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                          bool decay) {
    if (contains(name)) fail(ErrorCode::invalid_argument, "duplicate parameter " + name);
    tensors_.push_back({name, Matrix::Zero(rows, cols), decay});
    index_.emplace(name, tensors_.size() - 1);
    return tensors_.size() - 1;
}

std::size_t ParamSet::index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorCode::resource_missing, "no parameter named " + name);
    return it->second;
}

void ParamSet::remove_prefix(const std::string& prefix) {
    std::erase_if(tensors_, [&](const Tensor& t) { return t.name.rfind(prefix, 0) == 0; });
    reindex();
}

void ParamSet::reindex() {
    index_.clear();
    for (std::size_t i = 0; i < tensors_.size(); ++i) index_.emplace(tensors_[i].name, i);
}

std::size_t ParamSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
    return n;
}

ParamSet ParamSet::zeros_like() const {
    ParamSet out = *this;
    out.set_zero();
    return out;
}

void ParamSet::set_zero() {
    for (auto& t : tensors_) t.value.setZero();
}

bool ParamSet::all_finite() const {
    for (const auto& t : tensors_)
        if (!t.value.allFinite()) return false;
    return true;
}

void ParamSet::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::io_error, "cannot write " + path.string());
    out.write(kMagic, 4);
    write_le<std::uint32_t>(out, kVersion);
    write_le<std::uint64_t>(out, tensors_.size());
    for (const auto& t : tensors_) {
        write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        write_le<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.rows()));
        write_le<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.cols()));
        write_le<std::uint8_t>(out, t.decay ? 1 : 0);
        for (Eigen::Index i = 0; i < t.value.size(); ++i) write_le<double>(out, t.value.data()[i]);
    }
    if (!out) fail(ErrorCode::io_error, "short write to " + path.string());
}

ParamSet ParamSet::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::resource_missing, "cannot read " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        fail(ErrorCode::parse_error, path.string() + " is not a parameter archive");
    const auto version = read_le<std::uint32_t>(in);
    if (version != kVersion)
        fail(ErrorCode::parse_error, "unsupported parameter archive version " + std::to_string(version));
    const auto count = read_le<std::uint64_t>(in);
    ParamSet set;
    for (std::uint64_t k = 0; k < count; ++k) {
        const auto len = read_le<std::uint32_t>(in);
        std::string name(len, '\0');
        in.read(name.data(), len);
        const auto rows = static_cast<Eigen::Index>(read_le<std::uint64_t>(in));
        const auto cols = static_cast<Eigen::Index>(read_le<std::uint64_t>(in));
        const bool decay = read_le<std::uint8_t>(in) != 0;
        const std::size_t i = set.add(name, rows, cols, decay);
        for (Eigen::Index e = 0; e < rows * cols; ++e) set[i].data()[e] = read_le<double>(in);
    }
    return set;
}

}  // namespace demspec
