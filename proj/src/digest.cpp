#include "demspec/digest.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <vector>

#include "demspec/error.hpp"

namespace demspec {

Digest& Digest::update(std::string_view bytes) {
    for (unsigned char c : bytes) {
        state_ ^= c;
        state_ *= 0x100000001b3ULL;
    }
    return *this;
}

Digest& Digest::update(std::int64_t value) {
    auto u = static_cast<std::uint64_t>(value);
    for (int i = 0; i < 8; ++i) {
        state_ ^= (u >> (8 * i)) & 0xffU;
        state_ *= 0x100000001b3ULL;
    }
    return *this;
}

Digest& Digest::update(double value) {
    return update(static_cast<std::int64_t>(std::bit_cast<std::uint64_t>(value)));
}

std::string Digest::hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
    return buf;
}

std::string digest_of(std::string_view bytes) { return Digest().update(bytes).hex(); }

std::string file_digest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::resource_missing, "cannot open " + path.string());
    Digest d;
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        d.update(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())));
    }
    return d.hex();
}

}  // namespace demspec
