#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace demspec {

// 64-bit FNV-1a content digest, rendered as 16 hex characters. Used to tie
// artifacts to the exact inputs they were built from; not a security hash.
class Digest {
public:
    Digest& update(std::string_view bytes);
    Digest& update(std::int64_t value);
    Digest& update(double value);
    std::uint64_t value() const noexcept { return state_; }
    std::string hex() const;

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string digest_of(std::string_view bytes);
std::string file_digest(const std::filesystem::path& path);

}  // namespace demspec
