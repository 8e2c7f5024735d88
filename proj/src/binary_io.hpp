#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>

#include "mmp/errors.hpp"

namespace mmp::detail {

template <class T>
void write_le(std::ostream& out, T value)
{
    using Bits = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    static_assert(sizeof(T) == sizeof(Bits));
    auto bits = std::bit_cast<Bits>(value);
    std::array<char, sizeof(T)> bytes{};
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        bytes[i] = static_cast<char>(bits & 0xFFu);
        bits >>= 8;
    }
    out.write(bytes.data(), bytes.size());
}

template <class T>
T read_le(std::istream& in)
{
    using Bits = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    std::array<unsigned char, sizeof(T)> bytes{};
    in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
    if (!in) throw DataError("unexpected end of binary file");
    Bits bits = 0;
    for (std::size_t i = sizeof(T); i-- > 0;) bits = (bits << 8) | bytes[i];
    return std::bit_cast<T>(bits);
}

} // namespace mmp::detail
