#pragma once

// Little-endian primitives for on-disk formats (.f32 images, checkpoints).

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>

namespace vlp::wire {

template <class T>
T byteswap_if_big(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        unsigned char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
        std::memcpy(&v, b, sizeof(T));
    }
    return v;
}

template <class T>
void write_le(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    v = byteswap_if_big(v);
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
bool read_le(std::istream& is, T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) return false;
    v = byteswap_if_big(v);
    return true;
}

}  // namespace vlp::wire
